//! Minimization of the penalized residual over the field values.
//!
//! The default method is limited-memory BFGS (two-loop recursion, memory 10)
//! on the flattened field with a backtracking Armijo line search. Plain
//! steepest descent is available for debugging.

use std::collections::VecDeque;
use std::time::Instant;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mae, Field};
use crate::loss::{LossBreakdown, Objective};
use crate::operator::ProblemSpec;
use crate::stencil::SchemePolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Lbfgs,
    GradientDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// `None` means 50 × number of grid nodes.
    pub max_iterations: Option<usize>,
    /// Stop when ‖∇‖∞ ≤ grad_tol.
    pub grad_tol: f64,
    /// Stop when |Δtotal| / max(1, total) ≤ rel_loss_tol across `plateau_window` iterations.
    pub rel_loss_tol: f64,
    pub plateau_window: usize,
    pub history_length: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub method: Method,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: None,
            grad_tol: 1e-6,
            rel_loss_tol: 1e-13,
            plateau_window: 10,
            history_length: 10,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            method: Method::Lbfgs,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("optimizer config: {what}")));
        if self.max_iterations == Some(0) {
            return bad("max_iterations must be at least 1");
        }
        if !(self.grad_tol > 0.0) || !(self.rel_loss_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.plateau_window == 0 || self.history_length == 0 || self.max_backtracks == 0 {
            return bad("window, history and backtrack counts must be positive");
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0)
            || !(self.backtrack > 0.0 && self.backtrack < 1.0)
        {
            return bad("line-search constants must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn iteration_budget(&self, n_points: usize) -> usize {
        self.max_iterations.unwrap_or(50 * n_points)
    }
}

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    Gradient,
    Plateau,
    Budget,
}

impl Convergence {
    pub fn as_str(self) -> &'static str {
        match self {
            Convergence::Gradient => "gradient",
            Convergence::Plateau => "plateau",
            Convergence::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub field: Field,
    /// Entry 0 is the initial field; entry k the k-th accepted iterate.
    pub loss_history: Vec<LossBreakdown>,
    pub iterations: usize,
    pub converged: Convergence,
    pub wall_time: f64,
    pub mae_vs_reference: Option<f64>,
}

impl SolveResult {
    pub fn final_loss(&self) -> LossBreakdown {
        *self
            .loss_history
            .last()
            .expect("history holds the initial loss")
    }

    /// Sets `mae_vs_reference` from a reference field on the same grid.
    pub fn with_reference(mut self, reference: &Field) -> Result<Self> {
        self.mae_vs_reference = Some(mae(&self.field, reference)?);
        Ok(self)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "grid": self.field.spec(),
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time": self.wall_time,
            "mae_vs_reference": self.mae_vs_reference,
            "final_loss": self.final_loss(),
            "history": self.loss_history,
            "field": self.field.to_rows(),
        })
    }

    /// Everything except the field and full history.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "grid": self.field.spec(),
            "iterations": self.iterations,
            "converged": self.converged,
            "wall_time": self.wall_time,
            "mae_vs_reference": self.mae_vs_reference,
            "final_loss": self.final_loss(),
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: returns `−H g`.
// Two-loop recursion with initial matrix `gamma·I`.
fn lbfgs_direction(history: &VecDeque<Pair>, g: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for p in history.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(q, y)| *q -= a * y);
        alphas.push(a);
    }
    q.iter_mut().for_each(|v| *v *= gamma);
    for (p, a) in history.iter().zip(alphas.iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        q.iter_mut().zip(&p.s).for_each(|(q, s)| *q += (a - b) * s);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Evaluator<'a> {
    objective: &'a Objective,
    shape: (usize, usize),
}

impl Evaluator<'_> {
    fn eval(&self, x: &[f64]) -> (LossBreakdown, Vec<f64>) {
        let u = ArrayView2::from_shape(self.shape, x).expect("flat length matches grid");
        let (l, g) = self.objective.breakdown_and_gradient(u);
        (l, g.into_raw_vec_and_offset().0)
    }
}

type Trial = (Vec<f64>, LossBreakdown, Vec<f64>);

fn trial_point(ev: &Evaluator, x: &[f64], d: &[f64], step: f64) -> Trial {
    let t: Vec<f64> = x.iter().zip(d).map(|(x, d)| x + step * d).collect();
    let (l, g) = ev.eval(&t);
    (t, l, g)
}

/// Backtracking Armijo search along `d`.
///
/// The first trial at `step` also serves as a secant probe: the directional
/// derivatives at 0 and `step` give a curvature estimate, and when it is
/// positive the search restarts from the secant minimizer of the line. On a
/// quadratic that minimizer is exact.
fn line_search(
    ev: &Evaluator,
    config: &OptimizerConfig,
    x: &[f64],
    d: &[f64],
    loss: &LossBreakdown,
    slope: f64,
    mut step: f64,
) -> Option<Trial> {
    let armijo_ok = |l: &LossBreakdown, step: f64| {
        l.total.is_finite()
            && l.total <= loss.total + config.armijo * step * slope
            && l.total < loss.total
    };
    let probe = trial_point(ev, x, d, step);
    let mut best = armijo_ok(&probe.1, step).then_some((step, probe.1.total));
    if probe.2.iter().all(|v| v.is_finite()) {
        let curvature = (dot(&probe.2, d) - slope) / step;
        if curvature > 0.0 {
            let secant = -slope / curvature;
            if secant.is_finite() && secant > 0.0 && (secant - step).abs() > 1e-12 * step {
                step = secant;
                let t = trial_point(ev, x, d, step);
                if armijo_ok(&t.1, step) && best.is_none_or(|(_, b)| t.1.total < b) {
                    return Some(t);
                }
                if best.is_some() {
                    return Some(probe);
                }
            }
        }
    }
    if best.take().is_some() {
        return Some(probe);
    }
    for _ in 0..config.max_backtracks {
        step *= config.backtrack;
        let t = trial_point(ev, x, d, step);
        if armijo_ok(&t.1, step) {
            return Some(t);
        }
    }
    None
}

/// Minimizes the objective from `init`.
pub fn minimize(
    problem: &ProblemSpec,
    init: &Field,
    policy: SchemePolicy,
    config: &OptimizerConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let objective = Objective::new(problem, policy)?;
    if init.shape() != problem.grid.shape() {
        return Err(Error::ShapeMismatch {
            expected: problem.grid.shape(),
            actual: init.shape(),
        });
    }
    minimize_objective(&objective, init, config)
}

pub fn minimize_objective(
    objective: &Objective,
    init: &Field,
    config: &OptimizerConfig,
) -> Result<SolveResult> {
    config.validate()?;
    let start = Instant::now();
    let spec = *objective.spec();
    let ev = Evaluator {
        objective,
        shape: spec.shape(),
    };
    let budget = config.iteration_budget(spec.len());

    let mut x = init.as_slice().to_vec();
    let (mut loss, mut g) = ev.eval(&x);
    if !loss.total.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss at initial field".into()));
    }
    let mut history_out = vec![loss];
    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(config.history_length);
    let mut iterations = 0;
    let mut failures = 0;
    let mut memory_reset_used = false;
    // Initial-matrix scale, taken from the first pair after each memory
    // reset and then held fixed.
    let mut gamma = 1.0;

    let converged = loop {
        let gnorm = inf_norm(&g);
        if gnorm <= config.grad_tol {
            break Convergence::Gradient;
        }
        if iterations >= budget {
            break Convergence::Budget;
        }

        // Quasi-Newton step of unit length unless this is a retry or there is
        // no curvature information yet.
        let use_qn = config.method == Method::Lbfgs && failures == 0 && !pairs.is_empty();
        let (mut d, mut step) = if use_qn {
            (lbfgs_direction(&pairs, &g, gamma), 1.0)
        } else {
            let scale = 10f64.powi(-3 * failures);
            (g.iter().map(|v| -v).collect(), scale / gnorm)
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            step = 1.0 / gnorm;
            slope = dot(&g, &d);
        }

        let accepted = line_search(&ev, config, &x, &d, &loss, slope, step);
        let Some((x_new, l_new, g_new)) = accepted else {
            failures += 1;
            if failures >= 3 {
                if memory_reset_used {
                    break Convergence::Plateau;
                }
                memory_reset_used = true;
                pairs.clear();
                failures = 0;
            }
            continue;
        };
        failures = 0;
        if g_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient at iteration {}",
                iterations + 1
            )));
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if pairs.is_empty() {
                gamma = sy / dot(&y, &y);
            }
            if pairs.len() == config.history_length {
                pairs.pop_front();
            }
            pairs.push_back(Pair {
                s,
                y,
                rho: 1.0 / sy,
            });
        }

        x = x_new;
        g = g_new;
        loss = l_new;
        history_out.push(loss);
        iterations += 1;

        let w = config.plateau_window;
        if iterations >= w {
            let earlier = history_out[iterations - w].total;
            if (earlier - loss.total).abs() / loss.total.max(1.0) <= config.rel_loss_tol {
                break Convergence::Plateau;
            }
        }
    };

    let field = Field::from_flat(spec, x)?;
    Ok(SolveResult {
        field,
        loss_history: history_out,
        iterations,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        mae_vs_reference: None,
    })
}
