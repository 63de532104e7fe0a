//! Coarse-to-fine initial fields.
//!
//! A solution on a coarse grid is interpolated onto a finer grid of the same
//! domain and used to start the next solve. Two interpolators are provided:
//! tensor-grid bilinear, and radial basis functions with the linear kernel
//! `φ(r) = r` plus a constant term, solving
//!
//! ```text
//! [ Φ − s·I   1 ] [w]   [y]
//! [ 1ᵀ        0 ] [c] = [0]
//! ```
//!
//! densely, where `s` is the smoothing parameter.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_grid, random_field, Axis, Field, GridSpec};
use crate::operator::ProblemSpec;
use crate::optimizer::{minimize, OptimizerConfig, SolveResult};
use crate::stencil::SchemePolicy;

/// Smoothing used by the RBF warm start unless told otherwise.
pub const DEFAULT_RBF_SMOOTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Interpolator {
    Multilinear,
    Rbf { smooth: f64 },
}

impl Interpolator {
    pub fn interpolate(&self, coarse: &Field, fine: GridSpec) -> Result<Field> {
        match *self {
            Interpolator::Multilinear => interp_multilinear(coarse, fine),
            Interpolator::Rbf { smooth } => interp_rbf(coarse, fine, smooth),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Interpolator::Multilinear => "multilinear",
            Interpolator::Rbf { .. } => "rbf",
        }
    }
}

/// Cell index and local coordinate of `z` on a uniform axis. Nodes within
/// 1e-9 cells of `z` are hit exactly.
fn locate(spec: &GridSpec, axis: Axis, z: f64) -> (usize, f64) {
    let n = spec.points(axis);
    let (lo, _) = spec.bounds(axis);
    let s = (z - lo) / spec.step(axis);
    let nearest = s.round();
    if (s - nearest).abs() < 1e-9 {
        let k = (nearest.max(0.0) as usize).min(n - 1);
        return if k == n - 1 { (n - 2, 1.0) } else { (k, 0.0) };
    }
    let k = (s.floor().max(0.0) as usize).min(n - 2);
    (k, (s - k as f64).clamp(0.0, 1.0))
}

/// Bilinear interpolation of `coarse` onto `fine`.
pub fn interp_multilinear(coarse: &Field, fine: GridSpec) -> Result<Field> {
    let cs = coarse.spec();
    if !cs.same_domain(&fine) {
        return Err(Error::DomainMismatch);
    }
    let (xs, ts) = build_grid(&fine);
    let xi: Vec<_> = xs.iter().map(|&x| locate(cs, Axis::X, x)).collect();
    let ti: Vec<_> = ts.iter().map(|&t| locate(cs, Axis::T, t)).collect();
    let u = coarse.values();
    Field::new(
        fine,
        ndarray::Array2::from_shape_fn(fine.shape(), |(i, j)| {
            let (a, fx) = xi[i];
            let (b, ft) = ti[j];
            if fx == 0.0 && ft == 0.0 {
                return u[[a, b]];
            }
            let lo = (1.0 - ft) * u[[a, b]] + ft * u[[a, b + 1]];
            let hi = (1.0 - ft) * u[[a + 1, b]] + ft * u[[a + 1, b + 1]];
            (1.0 - fx) * lo + fx * hi
        }),
    )
}

/// RBF interpolation (linear kernel, constant augmentation) of `coarse` onto `fine`.
pub fn interp_rbf(coarse: &Field, fine: GridSpec, smooth: f64) -> Result<Field> {
    if !(smooth >= 0.0 && smooth.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rbf smoothing must be ≥ 0, got {smooth}"
        )));
    }
    let cs = coarse.spec();
    if !cs.same_domain(&fine) {
        return Err(Error::DomainMismatch);
    }
    let (cx, ct) = build_grid(cs);
    let nodes: Vec<(f64, f64)> = cx
        .iter()
        .flat_map(|&x| ct.iter().map(move |&t| (x, t)))
        .collect();
    let n = nodes.len();
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();

    let mut m = DMatrix::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = dist(nodes[i], nodes[j]);
        }
        m[(i, i)] -= smooth;
        m[(i, n)] = 1.0;
        m[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    for (k, v) in coarse.as_slice().iter().enumerate() {
        rhs[k] = *v;
    }
    let sol = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem(format!("{n} nodes, smooth {smooth}")))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem(format!("{n} nodes, smooth {smooth}")));
    }
    let weights = sol.rows(0, n);
    let constant = sol[n];
    Field::from_fn(fine, |x, t| {
        let s: f64 = nodes
            .iter()
            .zip(weights.iter())
            .map(|(&p, w)| w * dist((x, t), p))
            .sum();
        s + constant
    })
}

/// One level of a cascade.
#[derive(Debug, Clone)]
pub struct CascadeLevel {
    pub n_x: usize,
    pub n_t: usize,
    pub result: SolveResult,
    /// Wall time of this and all previous levels, seconds.
    pub cumulative_time: f64,
}

impl CascadeLevel {
    pub fn summary_json(&self) -> serde_json::Value {
        let mut v = self.result.summary_json();
        v["n_x"] = self.n_x.into();
        v["n_t"] = self.n_t.into();
        v["cumulative_time"] = self.cumulative_time.into();
        v
    }
}

/// Callback producing a reference field for a grid.
pub type ReferenceFn<'a> = &'a dyn Fn(&GridSpec) -> Result<Field>;

/// Solves `problem` at each resolution in turn. The first level starts from a
/// uniform `[0, 1]` random field drawn with `seed`; each later level starts
/// from the previous level's solution interpolated onto its grid.
pub fn cascade(
    problem: &ProblemSpec,
    resolutions: &[(usize, usize)],
    interp: Interpolator,
    policy: SchemePolicy,
    config: &OptimizerConfig,
    seed: u64,
    reference: Option<ReferenceFn>,
) -> Result<Vec<CascadeLevel>> {
    if resolutions.is_empty() {
        return Err(Error::InvalidArgument(
            "cascade needs at least one resolution".into(),
        ));
    }
    for w in resolutions.windows(2) {
        if !(w[1].0 > w[0].0 && w[1].1 > w[0].1) {
            return Err(Error::InvalidArgument(format!(
                "cascade resolutions must increase strictly: {:?} then {:?}",
                w[0], w[1]
            )));
        }
    }
    let mut levels: Vec<CascadeLevel> = Vec::with_capacity(resolutions.len());
    let mut elapsed = 0.0;
    for (k, &(n_x, n_t)) in resolutions.iter().enumerate() {
        let wrap = |e: Error| Error::CascadeLevel {
            level: k,
            cause: Box::new(e),
        };
        let level_problem = problem.with_resolution(n_x, n_t).map_err(wrap)?;
        let start = Instant::now();
        let init = match levels.last() {
            None => random_field(level_problem.grid, seed, 0.0, 1.0),
            Some(prev) => interp.interpolate(&prev.result.field, level_problem.grid),
        }
        .map_err(wrap)?;
        let interp_time = start.elapsed().as_secs_f64();
        let mut result = minimize(&level_problem, &init, policy, config).map_err(wrap)?;
        if let Some(r) = reference {
            let refield = r(&level_problem.grid).map_err(wrap)?;
            result = result.with_reference(&refield).map_err(wrap)?;
        }
        elapsed += interp_time + result.wall_time;
        levels.push(CascadeLevel {
            n_x,
            n_t,
            result,
            cumulative_time: elapsed,
        });
    }
    Ok(levels)
}

/// The warm-start ladder 10, 15, …, 50 (square grids).
pub fn default_ladder() -> Vec<(usize, usize)> {
    (10..=50).step_by(5).map(|n| (n, n)).collect()
}
