//! Self-checks run by `optpde validate`: analytic against finite-difference
//! gradients, empirical stencil order, and heat-oracle self-convergence.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{random_field, Axis, Field, GridSpec};
use crate::loss::{finite_difference_gradient, Objective};
use crate::operator::BuiltinProblem;
use crate::reference::{heat_oracle, ORACLE_TOLERANCE};
use crate::stencil::{
    derivative, first_derivative, ApproxOrder, Direction, SchemePolicy, StencilKind,
};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    /// Measured quantity, compared against `bound`.
    pub value: f64,
    pub bound: String,
    pub detail: String,
}

impl CheckReport {
    fn new(name: &str, passed: bool, value: f64, bound: String, detail: String) -> Self {
        CheckReport {
            name: name.to_string(),
            passed,
            value,
            bound,
            detail,
        }
    }
}

/// Per-coordinate error `|a − b| / (1 + |a|)`.
pub fn gradient_error(analytic: &Field, numeric: &Field) -> f64 {
    analytic
        .values()
        .iter()
        .zip(numeric.values().iter())
        .map(|(a, b)| (a - b).abs() / (1.0 + a.abs()))
        .fold(0.0, f64::max)
}

/// Worst per-coordinate gradient error over `cases` random problems: both
/// builtin problems, both mixed policies, grids 7×7 to 12×12, fields in [0, 1].
pub fn gradient_check(cases: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policies = [
        SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Second),
        SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Fourth),
    ];
    let problems = [BuiltinProblem::Wave, BuiltinProblem::Heat];
    let mut worst = 0.0f64;
    let mut worst_case = String::new();
    for k in 0..cases {
        let problem = problems[k % 2];
        let policy = policies[(k / 2) % 2];
        let n_x = rng.random_range(7..=12);
        let n_t = rng.random_range(7..=12);
        let p = problem.problem(n_x, n_t)?;
        let obj = Objective::new(&p, policy)?;
        let u = random_field(p.grid, rng.random(), 0.0, 1.0)?;
        let err = gradient_error(
            &obj.gradient(&u)?,
            &finite_difference_gradient(&obj, &u, 1e-6)?,
        );
        if err >= worst {
            worst = err;
            worst_case = format!("{} {n_x}x{n_t} scheme {policy}", problem.name());
        }
    }
    Ok(CheckReport::new(
        "gradient",
        worst <= 1e-5,
        worst,
        "<= 1e-5".into(),
        format!("{cases} cases, worst {worst_case}"),
    ))
}

fn sine_error(n: usize, policy: SchemePolicy) -> Result<f64> {
    let spec = GridSpec::new(0.0, 1.0, n, 0.0, 1.0, 3)?;
    let u = Field::from_fn(spec, |x, _| (PI * x).sin())?;
    let d2 = derivative(&u, Axis::X, 2, policy)?;
    // interior points away from the one-sided bands, where the composite is central
    let band = 2 * policy.band_width();
    let mut worst = 0.0f64;
    for i in band..n - band {
        let x = spec.coordinate(Axis::X, i);
        worst = worst.max((d2.get(i, 1) + PI * PI * (PI * x).sin()).abs());
    }
    Ok(worst)
}

/// Empirical order of the second-order central composite for `u_xx` on
/// `sin(πx)`, over four grids with halving step.
pub fn stencil_rates() -> Result<Vec<f64>> {
    let policy = SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Second);
    let sizes = [21, 41, 81, 161];
    let errors = sizes
        .iter()
        .map(|&n| sine_error(n, policy))
        .collect::<Result<Vec<_>>>()?;
    Ok(errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect())
}

pub fn stencil_order_check() -> Result<CheckReport> {
    let rates = stencil_rates()?;
    let passed = rates.iter().all(|r| (1.9..=2.1).contains(r));
    let value = rates.iter().copied().fold(f64::NAN, |a, b| {
        if (b - 2.0).abs() > (a - 2.0).abs() || a.is_nan() {
            b
        } else {
            a
        }
    });
    Ok(CheckReport::new(
        "stencil order",
        passed,
        value,
        "in [1.9, 2.1]".into(),
        format!("rates {rates:.4?}"),
    ))
}

/// Largest error of the order-4 one-sided first derivatives on a quadratic.
pub fn quadratic_exactness_check() -> Result<CheckReport> {
    let spec = GridSpec::new(-1.0, 2.0, 13, 0.0, 1.0, 3)?;
    let u = Field::from_fn(spec, |x, _| 0.7 - 1.3 * x + 2.1 * x * x)?;
    let mut worst = 0.0f64;
    for direction in [Direction::Forward, Direction::Backward] {
        let d = first_derivative(
            &u,
            Axis::X,
            StencilKind::new(direction, ApproxOrder::Fourth),
        )?;
        for i in 0..spec.n_x() {
            let x = spec.coordinate(Axis::X, i);
            worst = worst.max((d.get(i, 1) - (-1.3 + 4.2 * x)).abs());
        }
    }
    Ok(CheckReport::new(
        "quadratic exactness",
        worst <= 1e-10,
        worst,
        "<= 1e-10".into(),
        "order-4 one-sided".into(),
    ))
}

pub fn oracle_check(n: usize) -> Result<CheckReport> {
    let p = BuiltinProblem::Heat.problem(n, n)?;
    let o = heat_oracle(&p.grid)?;
    Ok(CheckReport::new(
        "heat oracle",
        o.refinement_mae <= ORACLE_TOLERANCE,
        o.refinement_mae,
        format!("<= {ORACLE_TOLERANCE:e}"),
        format!("{n}x{n}, internal mesh factor {}", o.factor),
    ))
}

/// Every check, in a fixed order.
pub fn run_all(seed: u64) -> Result<Vec<CheckReport>> {
    Ok(vec![
        gradient_check(20, seed)?,
        stencil_order_check()?,
        quadratic_exactness_check()?,
        oracle_check(50)?,
    ])
}
