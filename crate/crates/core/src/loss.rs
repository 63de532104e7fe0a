//! Penalized least-squares objective and its analytic gradient.
//!
//! ```text
//! total = Σ_{all nodes} (L̄ū − f)²  +  λ · Σ_{conditions} Σ_{points} (B̄ū − g)²
//! ```
//!
//! Sums run row-major over nodes, then in condition order. The gradient is the
//! exact derivative of this discrete sum, obtained by pushing `2·r` back
//! through the stencils with their adjoints.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Field, GridSpec};
use crate::operator::{FactorCache, ProblemSpec, TermSet};
use crate::stencil::{classify_points, SchemePolicy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub interior: f64,
    pub boundary: f64,
    pub total: f64,
}

/// Which nodes enter the operator-residual sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteriorRegion {
    #[default]
    AllPoints,
    /// Drop nodes lying in a one-sided band on either axis (ablation only).
    ExcludeBands,
}

struct Block {
    terms: TermSet,
    target: Array2<f64>,
    points: Vec<(usize, usize)>,
}

impl Block {
    fn residuals(&self, u: ArrayView2<f64>) -> (Vec<f64>, Option<FactorCache>) {
        if let Some(c) = self.terms.as_scaled_identity() {
            let r = self
                .points
                .iter()
                .map(|&p| c * u[p] - self.target[p])
                .collect();
            return (r, None);
        }
        let (values, cache) = self.terms.evaluate(u);
        let r = self
            .points
            .iter()
            .map(|&p| values[p] - self.target[p])
            .collect();
        (r, Some(cache))
    }

    /// Adds the gradient of `weight · Σ r²` into `grad`.
    fn add_gradient(
        &self,
        u: ArrayView2<f64>,
        r: &[f64],
        cache: Option<&FactorCache>,
        weight: f64,
        grad: &mut Array2<f64>,
    ) {
        if let Some(c) = self.terms.as_scaled_identity() {
            for (&p, &r) in self.points.iter().zip(r) {
                grad[p] += 2.0 * weight * r * c;
            }
            return;
        }
        let mut seed = Array2::zeros(u.dim());
        for (&p, &r) in self.points.iter().zip(r) {
            seed[p] = 2.0 * weight * r;
        }
        *grad += &self
            .terms
            .vjp(u, cache.expect("cache from residuals"), seed.view());
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// A problem compiled for one grid and scheme policy.
pub struct Objective {
    spec: GridSpec,
    lambda: f64,
    interior: Block,
    boundary: Vec<Block>,
}

impl Objective {
    pub fn new(problem: &ProblemSpec, policy: SchemePolicy) -> Result<Self> {
        Objective::with_region(problem, policy, InteriorRegion::AllPoints)
    }

    pub fn with_region(
        problem: &ProblemSpec,
        policy: SchemePolicy,
        region: InteriorRegion,
    ) -> Result<Self> {
        problem.validate()?;
        let spec = problem.grid;
        let (n_x, n_t) = spec.shape();
        let xc = classify_points(&spec, policy, Axis::X);
        let tc = classify_points(&spec, policy, Axis::T);
        let interior_points = (0..n_x)
            .flat_map(|i| (0..n_t).map(move |j| (i, j)))
            .filter(|&(i, j)| match region {
                InteriorRegion::AllPoints => true,
                InteriorRegion::ExcludeBands => !xc.in_band(i) && !tc.in_band(j),
            })
            .collect();
        let interior = Block {
            terms: TermSet::compile(&problem.operator.terms, &spec, policy)?,
            target: problem.operator.rhs.sample(spec)?.into_values(),
            points: interior_points,
        };
        let boundary = problem
            .boundary
            .iter()
            .map(|bc| {
                Ok(Block {
                    terms: TermSet::compile(&bc.terms, &spec, policy)?,
                    target: bc.target.sample(spec)?.into_values(),
                    points: bc.points.points(&spec)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Objective {
            spec,
            lambda: problem.lambda,
            interior,
            boundary,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn check(&self, field: &Field) -> Result<()> {
        if field.shape() != self.spec.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.spec.shape(),
                actual: field.shape(),
            });
        }
        Ok(())
    }

    pub fn breakdown(&self, u: ArrayView2<f64>) -> LossBreakdown {
        let interior = sum_sq(&self.interior.residuals(u).0);
        let boundary: f64 = self
            .boundary
            .iter()
            .map(|b| sum_sq(&b.residuals(u).0))
            .sum();
        LossBreakdown {
            interior,
            boundary,
            total: interior + self.lambda * boundary,
        }
    }

    /// Loss and the gradients of its interior and (λ-weighted) boundary parts.
    pub fn breakdown_and_gradient_parts(
        &self,
        u: ArrayView2<f64>,
    ) -> (LossBreakdown, Array2<f64>, Array2<f64>) {
        let (r, cache) = self.interior.residuals(u);
        let interior = sum_sq(&r);
        let mut g_int = Array2::zeros(u.dim());
        self.interior
            .add_gradient(u, &r, cache.as_ref(), 1.0, &mut g_int);
        let mut boundary = 0.0;
        let mut g_bnd = Array2::zeros(u.dim());
        for b in &self.boundary {
            let (r, cache) = b.residuals(u);
            boundary += sum_sq(&r);
            b.add_gradient(u, &r, cache.as_ref(), self.lambda, &mut g_bnd);
        }
        (
            LossBreakdown {
                interior,
                boundary,
                total: interior + self.lambda * boundary,
            },
            g_int,
            g_bnd,
        )
    }

    pub fn breakdown_and_gradient(&self, u: ArrayView2<f64>) -> (LossBreakdown, Array2<f64>) {
        let (l, mut g, gb) = self.breakdown_and_gradient_parts(u);
        g += &gb;
        (l, g)
    }

    pub fn loss(&self, field: &Field) -> Result<LossBreakdown> {
        self.check(field)?;
        Ok(self.breakdown(field.values().view()))
    }

    pub fn gradient(&self, field: &Field) -> Result<Field> {
        self.check(field)?;
        let (_, g) = self.breakdown_and_gradient(field.values().view());
        Field::new(self.spec, g).map_err(|_| Error::NonFinite("loss gradient".into()))
    }

    /// `(interior-part gradient, λ·boundary-part gradient)`.
    pub fn gradient_parts(&self, field: &Field) -> Result<(Field, Field)> {
        self.check(field)?;
        let (_, gi, gb) = self.breakdown_and_gradient_parts(field.values().view());
        Ok((Field::new(self.spec, gi)?, Field::new(self.spec, gb)?))
    }
}

pub fn loss(problem: &ProblemSpec, field: &Field, policy: SchemePolicy) -> Result<LossBreakdown> {
    Objective::new(problem, policy)?.loss(field)
}

pub fn gradient(problem: &ProblemSpec, field: &Field, policy: SchemePolicy) -> Result<Field> {
    Objective::new(problem, policy)?.gradient(field)
}

/// Central finite-difference gradient of the total loss, one coordinate at a time.
/// O(n) loss evaluations; used only to check [`Objective::gradient`].
pub fn finite_difference_gradient(objective: &Objective, field: &Field, eps: f64) -> Result<Field> {
    let mut u = field.values().clone();
    let mut g = Array2::zeros(u.dim());
    for idx in 0..u.len() {
        let p = (idx / u.ncols(), idx % u.ncols());
        let orig = u[p];
        u[p] = orig + eps;
        let plus = objective.breakdown(u.view()).total;
        u[p] = orig - eps;
        let minus = objective.breakdown(u.view()).total;
        u[p] = orig;
        g[p] = (plus - minus) / (2.0 * eps);
    }
    Field::new(*field.spec(), g)
}
