//! Ground-truth fields for the built-in problems.
//!
//! The wave problem has the closed form `sin(πx)·(cos(πt/2) + sin(πt/2))`.
//! The heat problem is graded against a Crank–Nicolson solution computed on a
//! much finer mesh and restricted to the requested nodes.

use std::f64::consts::PI;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{mae, Axis, Field, GridSpec};
use crate::operator::BuiltinProblem;

/// Closed-form solution of the built-in wave problem.
pub fn wave_exact(x: f64, t: f64) -> f64 {
    (PI * x).sin() * ((PI * t / 2.0).cos() + (PI * t / 2.0).sin())
}

pub fn wave_field(spec: GridSpec) -> Result<Field> {
    Field::from_fn(spec, wave_exact)
}

const HEAT_X: (f64, f64) = (-8.0, 8.0);
const HEAT_T: (f64, f64) = (0.0, 10.0);

fn heat_initial(x: f64) -> f64 {
    (PI * x / 8.0).sin()
}

fn heat_edge(t: f64) -> f64 {
    (PI * t / 10.0).sin()
}

/// Largest refinement change accepted between successive oracle meshes.
pub const ORACLE_TOLERANCE: f64 = 1e-4;
const INITIAL_FACTOR: usize = 4;
const MAX_FACTOR: usize = 64;

/// Accepted heat reference for one grid.
#[derive(Debug, Clone)]
pub struct HeatOracle {
    pub field: Field,
    /// Reference mesh is `factor` times finer than the target grid on both axes.
    pub factor: usize,
    /// MAE between the restrictions at `factor / 2` and `factor`.
    pub refinement_mae: f64,
}

/// Crank–Nicolson solution of `u_t = u_xx` with the built-in heat data on a
/// mesh `factor` times finer than `spec`, sampled at `spec`'s nodes.
pub fn heat_crank_nicolson(spec: &GridSpec, factor: usize) -> Result<Field> {
    check_heat_domain(spec)?;
    if factor == 0 {
        return Err(Error::InvalidArgument(
            "refinement factor must be positive".into(),
        ));
    }
    let (n_x, n_t) = spec.shape();
    let nx_f = factor * (n_x - 1) + 1;
    let nt_f = factor * (n_t - 1) + 1;
    let dx = (HEAT_X.1 - HEAT_X.0) / (nx_f - 1) as f64;
    let dt = (HEAT_T.1 - HEAT_T.0) / (nt_f - 1) as f64;
    let r = dt / (dx * dx);
    let m = nx_f - 2;

    let x_at = |i: usize| {
        if i + 1 == nx_f {
            HEAT_X.1
        } else {
            HEAT_X.0 + i as f64 * dx
        }
    };
    let t_at = |k: usize| {
        if k + 1 == nt_f {
            HEAT_T.1
        } else {
            HEAT_T.0 + k as f64 * dt
        }
    };

    // Thomas factorization of (1 + r) on the diagonal, −r/2 off it.
    let off = -0.5 * r;
    let mut c_prime = vec![0.0; m];
    let mut denom = vec![0.0; m];
    denom[0] = 1.0 + r;
    c_prime[0] = off / denom[0];
    for i in 1..m {
        denom[i] = 1.0 + r - off * c_prime[i - 1];
        c_prime[i] = off / denom[i];
    }

    let mut out = Array2::zeros((n_x, n_t));
    let mut u: Vec<f64> = (0..nx_f).map(|i| heat_initial(x_at(i))).collect();
    for i in 0..n_x {
        out[[i, 0]] = u[i * factor];
    }
    let mut rhs = vec![0.0; m];
    for k in 1..nt_f {
        let b_old = heat_edge(t_at(k - 1));
        let b_new = heat_edge(t_at(k));
        u[0] = b_old;
        u[nx_f - 1] = b_old;
        for i in 0..m {
            let j = i + 1;
            rhs[i] = u[j] + 0.5 * r * (u[j - 1] - 2.0 * u[j] + u[j + 1]);
        }
        rhs[0] += 0.5 * r * b_new;
        rhs[m - 1] += 0.5 * r * b_new;
        // forward sweep, back substitution
        rhs[0] /= denom[0];
        for i in 1..m {
            rhs[i] = (rhs[i] - off * rhs[i - 1]) / denom[i];
        }
        for i in (0..m - 1).rev() {
            rhs[i] -= c_prime[i] * rhs[i + 1];
        }
        u[1..=m].copy_from_slice(&rhs);
        u[0] = b_new;
        u[nx_f - 1] = b_new;
        if k % factor == 0 {
            let j = k / factor;
            for i in 0..n_x {
                out[[i, j]] = u[i * factor];
            }
        }
    }
    // Boundary data sampled at the target grid's own coordinates.
    for i in 0..n_x {
        out[[i, 0]] = heat_initial(spec.coordinate(Axis::X, i));
    }
    for j in 1..n_t {
        let g = heat_edge(spec.coordinate(Axis::T, j));
        out[[0, j]] = g;
        out[[n_x - 1, j]] = g;
    }
    Field::new(*spec, out)
}

fn check_heat_domain(spec: &GridSpec) -> Result<()> {
    if spec.x_bounds() != HEAT_X || spec.t_bounds() != HEAT_T {
        return Err(Error::InvalidArgument(format!(
            "heat oracle needs [-8,8]×[0,10], got {:?}×{:?}",
            spec.x_bounds(),
            spec.t_bounds()
        )));
    }
    Ok(())
}

/// Heat reference that has passed the refinement gate: the restriction
/// changes by at most [`ORACLE_TOLERANCE`] MAE when the internal mesh doubles.
pub fn heat_oracle(spec: &GridSpec) -> Result<HeatOracle> {
    check_heat_domain(spec)?;
    let mut factor = INITIAL_FACTOR;
    let mut coarse = heat_crank_nicolson(spec, factor)?;
    let mut last = f64::INFINITY;
    while 2 * factor <= MAX_FACTOR {
        let fine = heat_crank_nicolson(spec, 2 * factor)?;
        last = mae(&coarse, &fine)?;
        if last <= ORACLE_TOLERANCE {
            return Ok(HeatOracle {
                field: fine,
                factor: 2 * factor,
                refinement_mae: last,
            });
        }
        coarse = fine;
        factor *= 2;
    }
    Err(Error::OracleRejected(format!(
        "refinement change {last:e} still above {ORACLE_TOLERANCE:e} at factor {factor}"
    )))
}

/// Reference field for a built-in problem on `spec`.
pub fn reference_field(problem: BuiltinProblem, spec: &GridSpec) -> Result<Field> {
    match problem {
        BuiltinProblem::Wave => wave_field(*spec),
        BuiltinProblem::Heat => Ok(heat_oracle(spec)?.field),
    }
}
