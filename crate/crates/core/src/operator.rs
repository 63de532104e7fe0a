//! Differential and boundary operators encoded as data.
//!
//! An operator is a sum of terms `c · (∏ Dᵢ u)^p`, where each factor `Dᵢ` is a
//! repeated first-derivative along x, t, or both (x passes first, then t).
//! A term with no factors is `c · u^p`. Coefficients, right-hand sides and
//! boundary targets are named grid functions, sampled once per grid.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Field, GridSpec};
use crate::stencil::{AxisOperator, SchemePolicy};

/// Closed set of functions of `(x, t)` usable as coefficients and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum GridFunction {
    Const {
        value: f64,
    },
    /// `amplitude · sin(scale · coord + phase)`
    SinScaled {
        axis: Axis,
        scale: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude · cos(scale · coord + phase)`
    CosScaled {
        axis: Axis,
        scale: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `c0 + cx · x + ct · t`
    Affine {
        #[serde(default)]
        c0: f64,
        #[serde(default)]
        cx: f64,
        #[serde(default)]
        ct: f64,
    },
    Product {
        factors: Vec<GridFunction>,
    },
    Sum {
        terms: Vec<GridFunction>,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for GridFunction {
    fn default() -> Self {
        GridFunction::zero()
    }
}

impl GridFunction {
    pub fn zero() -> Self {
        GridFunction::Const { value: 0.0 }
    }

    pub fn constant(value: f64) -> Self {
        GridFunction::Const { value }
    }

    pub fn sin(axis: Axis, scale: f64) -> Self {
        GridFunction::SinScaled {
            axis,
            scale,
            amplitude: 1.0,
            phase: 0.0,
        }
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let pick = |axis: Axis| match axis {
            Axis::X => x,
            Axis::T => t,
        };
        match self {
            GridFunction::Const { value } => *value,
            GridFunction::SinScaled {
                axis,
                scale,
                amplitude,
                phase,
            } => amplitude * (scale * pick(*axis) + phase).sin(),
            GridFunction::CosScaled {
                axis,
                scale,
                amplitude,
                phase,
            } => amplitude * (scale * pick(*axis) + phase).cos(),
            GridFunction::Affine { c0, cx, ct } => c0 + cx * x + ct * t,
            GridFunction::Product { factors } => factors.iter().map(|f| f.eval(x, t)).product(),
            GridFunction::Sum { terms } => terms.iter().map(|f| f.eval(x, t)).sum(),
        }
    }

    pub fn sample(&self, spec: GridSpec) -> Result<Field> {
        Field::from_fn(spec, |x, t| self.eval(x, t))
            .map_err(|_| Error::NonFinite(format!("grid function {self:?}")))
    }
}

/// Term coefficient: a constant or a grid function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Function(GridFunction),
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Constant(v)
    }
}

/// A derivative factor `∂^{x_order + t_order} / ∂x^{x_order} ∂t^{t_order}`.
///
/// JSON form is `["x", 2]` for pure derivatives and `{"x": 1, "t": 1}` for mixed ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "FactorRepr", into = "FactorRepr")]
pub struct Factor {
    x_order: u32,
    t_order: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FactorRepr {
    Pure(Axis, u32),
    Mixed {
        #[serde(default)]
        x: u32,
        #[serde(default)]
        t: u32,
    },
}

impl TryFrom<FactorRepr> for Factor {
    type Error = Error;

    fn try_from(r: FactorRepr) -> Result<Self> {
        match r {
            FactorRepr::Pure(axis, order) => Factor::pure(axis, order),
            FactorRepr::Mixed { x, t } => Factor::mixed(x, t),
        }
    }
}

impl From<Factor> for FactorRepr {
    fn from(f: Factor) -> Self {
        match (f.x_order, f.t_order) {
            (x, 0) => FactorRepr::Pure(Axis::X, x),
            (0, t) => FactorRepr::Pure(Axis::T, t),
            (x, t) => FactorRepr::Mixed { x, t },
        }
    }
}

impl Factor {
    pub fn pure(axis: Axis, order: u32) -> Result<Self> {
        match axis {
            Axis::X => Factor::mixed(order, 0),
            Axis::T => Factor::mixed(0, order),
        }
    }

    pub fn mixed(x_order: u32, t_order: u32) -> Result<Self> {
        if x_order == 0 && t_order == 0 {
            return Err(Error::InvalidArgument(
                "derivative factor of order 0".into(),
            ));
        }
        Ok(Factor { x_order, t_order })
    }

    pub fn x_order(&self) -> u32 {
        self.x_order
    }

    pub fn t_order(&self) -> u32 {
        self.t_order
    }
}

/// One summand `coeff · (∏ factors)^power`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffTerm {
    pub coeff: Coefficient,
    #[serde(default)]
    pub factors: Vec<Factor>,
    #[serde(default = "one_u32")]
    pub power: u32,
}

fn one_u32() -> u32 {
    1
}

impl DiffTerm {
    pub fn new(coeff: impl Into<Coefficient>, factors: Vec<Factor>, power: u32) -> Self {
        DiffTerm {
            coeff: coeff.into(),
            factors,
            power,
        }
    }

    /// `coeff · u`
    pub fn identity(coeff: f64) -> Self {
        DiffTerm::new(coeff, Vec::new(), 1)
    }

    /// `coeff · ∂^order u / ∂axis^order`
    pub fn derivative(coeff: f64, axis: Axis, order: u32) -> Result<Self> {
        Ok(DiffTerm::new(coeff, vec![Factor::pure(axis, order)?], 1))
    }

    fn validate(&self) -> Result<()> {
        if self.power == 0 {
            return Err(Error::InvalidArgument(
                "term power must be at least 1".into(),
            ));
        }
        if let Coefficient::Constant(c) = self.coeff {
            if !c.is_finite() {
                return Err(Error::NonFinite("term coefficient".into()));
            }
        }
        Ok(())
    }
}

/// `L u = f`: terms are summed pointwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub terms: Vec<DiffTerm>,
    #[serde(default)]
    pub rhs: GridFunction,
}

impl OperatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidArgument("operator has no terms".into()));
        }
        self.terms.iter().try_for_each(DiffTerm::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    XMin,
    XMax,
    TMin,
    TMax,
}

impl Edge {
    /// Axis normal to the edge.
    pub fn normal(self) -> Axis {
        match self {
            Edge::XMin | Edge::XMax => Axis::X,
            Edge::TMin | Edge::TMax => Axis::T,
        }
    }
}

/// Grid nodes on one edge, optionally restricted to an index range along it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointSet {
    pub edge: Edge,
    pub range: Option<(usize, usize)>,
}

impl PointSet {
    pub fn edge(edge: Edge) -> Self {
        PointSet { edge, range: None }
    }

    /// Node indices `(i, j)` in increasing order along the edge.
    pub fn points(&self, spec: &GridSpec) -> Result<Vec<(usize, usize)>> {
        let (n_x, n_t) = spec.shape();
        let along = match self.edge.normal() {
            Axis::X => n_t,
            Axis::T => n_x,
        };
        let (start, end) = self.range.unwrap_or((0, along));
        if start >= end || end > along {
            return Err(Error::PointSetOutsideGrid(format!(
                "range {start}..{end} on {:?} edge with {along} nodes",
                self.edge
            )));
        }
        Ok((start..end)
            .map(|k| match self.edge {
                Edge::XMin => (0, k),
                Edge::XMax => (n_x - 1, k),
                Edge::TMin => (k, 0),
                Edge::TMax => (k, n_t - 1),
            })
            .collect())
    }
}

/// `B u = g` on a set of boundary nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoundaryRepr", into = "BoundaryRepr")]
pub struct BoundaryCondition {
    pub points: PointSet,
    pub terms: Vec<DiffTerm>,
    pub target: GridFunction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BoundaryKind {
    Dirichlet,
    Neumann,
    Operator,
}

#[derive(Serialize, Deserialize)]
struct BoundaryRepr {
    edge: Edge,
    kind: BoundaryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    range: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terms: Option<Vec<DiffTerm>>,
    #[serde(default)]
    target: GridFunction,
}

impl TryFrom<BoundaryRepr> for BoundaryCondition {
    type Error = Error;

    fn try_from(r: BoundaryRepr) -> Result<Self> {
        let points = PointSet {
            edge: r.edge,
            range: r.range,
        };
        let terms = match (r.kind, r.terms) {
            (BoundaryKind::Dirichlet, None) => vec![DiffTerm::identity(1.0)],
            (BoundaryKind::Neumann, None) => vec![DiffTerm::derivative(1.0, r.edge.normal(), 1)?],
            (BoundaryKind::Operator, Some(terms)) if !terms.is_empty() => terms,
            (kind, _) => {
                return Err(Error::InvalidArgument(format!(
                    "boundary kind {kind:?} needs terms only for \"operator\""
                )))
            }
        };
        Ok(BoundaryCondition {
            points,
            terms,
            target: r.target,
        })
    }
}

impl From<BoundaryCondition> for BoundaryRepr {
    fn from(bc: BoundaryCondition) -> Self {
        let kind = if bc.terms == vec![DiffTerm::identity(1.0)] {
            BoundaryKind::Dirichlet
        } else if DiffTerm::derivative(1.0, bc.points.edge.normal(), 1)
            .is_ok_and(|t| bc.terms == vec![t])
        {
            BoundaryKind::Neumann
        } else {
            BoundaryKind::Operator
        };
        BoundaryRepr {
            edge: bc.points.edge,
            kind,
            range: bc.points.range,
            terms: (kind == BoundaryKind::Operator).then_some(bc.terms),
            target: bc.target,
        }
    }
}

impl BoundaryCondition {
    pub fn dirichlet(edge: Edge, target: GridFunction) -> Self {
        BoundaryCondition {
            points: PointSet::edge(edge),
            terms: vec![DiffTerm::identity(1.0)],
            target,
        }
    }

    /// Unit normal-direction first derivative prescribed on `edge`.
    pub fn neumann(edge: Edge, target: GridFunction) -> Self {
        let term = DiffTerm::derivative(1.0, edge.normal(), 1).expect("order 1 is valid");
        BoundaryCondition {
            points: PointSet::edge(edge),
            terms: vec![term],
            target,
        }
    }
}

pub const DEFAULT_LAMBDA: f64 = 10.0;

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

/// A full boundary-value problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub grid: GridSpec,
    pub operator: OperatorSpec,
    pub boundary: Vec<BoundaryCondition>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        self.operator.validate()?;
        for bc in &self.boundary {
            if bc.terms.is_empty() {
                return Err(Error::InvalidArgument(
                    "boundary condition has no terms".into(),
                ));
            }
            bc.terms.iter().try_for_each(DiffTerm::validate)?;
            bc.points.points(&self.grid)?;
        }
        Ok(())
    }

    /// Same problem on a grid with a different resolution.
    pub fn with_resolution(&self, n_x: usize, n_t: usize) -> Result<Self> {
        Ok(ProblemSpec {
            grid: self.grid.with_resolution(n_x, n_t)?,
            ..self.clone()
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        ProblemSpec {
            lambda,
            ..self.clone()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ProblemSpec = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The two problems with known reference solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinProblem {
    /// `u_tt − ¼ u_xx = 0` on `[0,1]²`, `u(0,t) = u(1,t) = 0`, `u(x,0) = u(x,1) = sin(πx)`.
    Wave,
    /// `u_t − u_xx = 0` on `[−8,8]×[0,10]`, `u(±8,t) = sin(πt/10)`, `u(x,0) = sin(πx/8)`.
    Heat,
}

impl BuiltinProblem {
    pub fn name(self) -> &'static str {
        match self {
            BuiltinProblem::Wave => "wave",
            BuiltinProblem::Heat => "heat",
        }
    }

    pub fn problem(self, n_x: usize, n_t: usize) -> Result<ProblemSpec> {
        let d = |axis, order| DiffTerm::derivative(1.0, axis, order).expect("valid order");
        let p = match self {
            BuiltinProblem::Wave => ProblemSpec {
                grid: GridSpec::new(0.0, 1.0, n_x, 0.0, 1.0, n_t)?,
                operator: OperatorSpec {
                    terms: vec![
                        d(Axis::T, 2),
                        DiffTerm::derivative(-0.25, Axis::X, 2).expect("valid order"),
                    ],
                    rhs: GridFunction::zero(),
                },
                boundary: vec![
                    BoundaryCondition::dirichlet(Edge::XMin, GridFunction::zero()),
                    BoundaryCondition::dirichlet(Edge::XMax, GridFunction::zero()),
                    BoundaryCondition::dirichlet(Edge::TMin, GridFunction::sin(Axis::X, PI)),
                    BoundaryCondition::dirichlet(Edge::TMax, GridFunction::sin(Axis::X, PI)),
                ],
                lambda: DEFAULT_LAMBDA,
            },
            BuiltinProblem::Heat => ProblemSpec {
                grid: GridSpec::new(-8.0, 8.0, n_x, 0.0, 10.0, n_t)?,
                operator: OperatorSpec {
                    terms: vec![
                        d(Axis::T, 1),
                        DiffTerm::derivative(-1.0, Axis::X, 2).expect("valid order"),
                    ],
                    rhs: GridFunction::zero(),
                },
                boundary: vec![
                    BoundaryCondition::dirichlet(Edge::XMin, GridFunction::sin(Axis::T, PI / 10.0)),
                    BoundaryCondition::dirichlet(Edge::XMax, GridFunction::sin(Axis::T, PI / 10.0)),
                    BoundaryCondition::dirichlet(Edge::TMin, GridFunction::sin(Axis::X, PI / 8.0)),
                ],
                lambda: DEFAULT_LAMBDA,
            },
        };
        Ok(p)
    }
}

impl FromStr for BuiltinProblem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wave" => Ok(BuiltinProblem::Wave),
            "heat" => Ok(BuiltinProblem::Heat),
            other => Err(Error::InvalidArgument(format!(
                "unknown builtin problem {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltinProblems {
    pub wave: ProblemSpec,
    pub heat: ProblemSpec,
}

/// Both built-in problems at 10×10.
pub fn builtin_problems() -> BuiltinProblems {
    BuiltinProblems {
        wave: BuiltinProblem::Wave.problem(10, 10).expect("valid builtin"),
        heat: BuiltinProblem::Heat.problem(10, 10).expect("valid builtin"),
    }
}

enum CoeffValues {
    Scalar(f64),
    Grid(Array2<f64>),
}

struct CompiledTerm {
    coeff: CoeffValues,
    factors: Vec<Factor>,
    power: u32,
}

/// Terms sampled on a grid, ready for repeated evaluation.
///
/// Terms are sorted on their JSON encoding and factors within a term on
/// `(x_order, t_order)`, so permuting the input changes nothing.
pub(crate) struct TermSet {
    terms: Vec<CompiledTerm>,
    x_op: Option<AxisOperator>,
    t_op: Option<AxisOperator>,
}

/// Factor values from the last evaluation, keyed by factor.
pub(crate) struct FactorCache {
    values: BTreeMap<Factor, Array2<f64>>,
}

impl TermSet {
    pub(crate) fn compile(
        terms: &[DiffTerm],
        spec: &GridSpec,
        policy: SchemePolicy,
    ) -> Result<Self> {
        let mut keyed: Vec<(String, &DiffTerm)> = terms
            .iter()
            .map(|t| Ok((serde_json::to_string(t)?, t)))
            .collect::<Result<_>>()?;
        keyed.sort_by(|a, b| a.0.cmp(&b.0));

        let mut needs_x = false;
        let mut needs_t = false;
        let mut compiled = Vec::with_capacity(keyed.len());
        for (_, term) in keyed {
            term.validate()?;
            let coeff = match &term.coeff {
                Coefficient::Constant(c) => CoeffValues::Scalar(*c),
                Coefficient::Function(f) => CoeffValues::Grid(f.sample(*spec)?.into_values()),
            };
            let mut factors = term.factors.clone();
            factors.sort();
            needs_x |= factors.iter().any(|f| f.x_order > 0);
            needs_t |= factors.iter().any(|f| f.t_order > 0);
            compiled.push(CompiledTerm {
                coeff,
                factors,
                power: term.power,
            });
        }
        let x_op = needs_x
            .then(|| AxisOperator::from_policy(spec, Axis::X, policy))
            .transpose()?;
        let t_op = needs_t
            .then(|| AxisOperator::from_policy(spec, Axis::T, policy))
            .transpose()?;
        Ok(TermSet {
            terms: compiled,
            x_op,
            t_op,
        })
    }

    fn apply_factor(&self, f: Factor, u: ArrayView2<f64>) -> Array2<f64> {
        let mut cur = u.to_owned();
        if f.x_order > 0 {
            cur = self
                .x_op
                .as_ref()
                .expect("compiled")
                .apply_repeated(cur.view(), f.x_order);
        }
        if f.t_order > 0 {
            cur = self
                .t_op
                .as_ref()
                .expect("compiled")
                .apply_repeated(cur.view(), f.t_order);
        }
        cur
    }

    fn apply_factor_adjoint(&self, f: Factor, v: Array2<f64>) -> Array2<f64> {
        let mut cur = v;
        if f.t_order > 0 {
            cur = self
                .t_op
                .as_ref()
                .expect("compiled")
                .apply_adjoint_repeated(cur.view(), f.t_order);
        }
        if f.x_order > 0 {
            cur = self
                .x_op
                .as_ref()
                .expect("compiled")
                .apply_adjoint_repeated(cur.view(), f.x_order);
        }
        cur
    }

    fn factor_cache(&self, u: ArrayView2<f64>) -> FactorCache {
        let mut values = BTreeMap::new();
        for term in &self.terms {
            for f in &term.factors {
                values.entry(*f).or_insert_with(|| self.apply_factor(*f, u));
            }
        }
        FactorCache { values }
    }

    fn product(
        &self,
        term: &CompiledTerm,
        u: ArrayView2<f64>,
        cache: &FactorCache,
        skip: Option<usize>,
    ) -> Array2<f64> {
        if term.factors.is_empty() {
            return u.to_owned();
        }
        let mut p = Array2::ones(u.dim());
        for (k, f) in term.factors.iter().enumerate() {
            if Some(k) != skip {
                p *= &cache.values[f];
            }
        }
        p
    }

    /// Pointwise operator value, plus the factor cache for a later [`TermSet::vjp`].
    pub(crate) fn evaluate(&self, u: ArrayView2<f64>) -> (Array2<f64>, FactorCache) {
        let cache = self.factor_cache(u);
        let mut out = Array2::zeros(u.dim());
        for term in &self.terms {
            let single = match term.factors.as_slice() {
                [] => Some(u),
                [f] => Some(cache.values[f].view()),
                _ => None,
            };
            match (single, term.power, &term.coeff) {
                (Some(v), 1, CoeffValues::Scalar(c)) => out.scaled_add(*c, &v),
                _ => {
                    let mut v = match single {
                        Some(v) => v.to_owned(),
                        None => self.product(term, u, &cache, None),
                    };
                    if term.power != 1 {
                        let p = term.power as i32;
                        v.mapv_inplace(|x| x.powi(p));
                    }
                    match &term.coeff {
                        CoeffValues::Scalar(c) => out.scaled_add(*c, &v),
                        CoeffValues::Grid(c) => Zip::from(&mut out)
                            .and(c)
                            .and(&v)
                            .for_each(|o, &c, &v| *o += c * v),
                    }
                }
            }
        }
        (out, cache)
    }

    /// `(∂ value / ∂u)ᵀ seed`.
    pub(crate) fn vjp(
        &self,
        u: ArrayView2<f64>,
        cache: &FactorCache,
        seed: ArrayView2<f64>,
    ) -> Array2<f64> {
        let mut grad = Array2::zeros(u.dim());
        let mut per_factor: BTreeMap<Factor, Array2<f64>> = BTreeMap::new();
        let mut accumulate = |f: Factor, w: Array2<f64>| match per_factor.get_mut(&f) {
            Some(acc) => *acc += &w,
            None => {
                per_factor.insert(f, w);
            }
        };
        for term in &self.terms {
            // q = seed · c · p · P^(p−1)
            let mut q = seed.to_owned();
            match &term.coeff {
                CoeffValues::Scalar(c) => q *= *c,
                CoeffValues::Grid(c) => q *= c,
            }
            if term.power != 1 {
                let full = self.product(term, u, cache, None);
                let p = term.power as i32;
                let pf = term.power as f64;
                Zip::from(&mut q)
                    .and(&full)
                    .for_each(|q, &v| *q *= pf * v.powi(p - 1));
            }
            match term.factors.as_slice() {
                [] => grad += &q,
                [f] => accumulate(*f, q),
                factors => {
                    for (k, f) in factors.iter().enumerate() {
                        let mut w = self.product(term, u, cache, Some(k));
                        w *= &q;
                        accumulate(*f, w);
                    }
                }
            }
        }
        for (f, acc) in per_factor {
            grad += &self.apply_factor_adjoint(f, acc);
        }
        grad
    }

    /// `Some(c)` when the set is the single term `c · u`.
    pub(crate) fn as_scaled_identity(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [CompiledTerm {
                coeff: CoeffValues::Scalar(c),
                factors,
                power: 1,
            }] if factors.is_empty() => Some(*c),
            _ => None,
        }
    }
}

/// Values of the discrete operator `L̄ū` at every node (right-hand side not subtracted).
pub fn evaluate_operator(op: &OperatorSpec, field: &Field, policy: SchemePolicy) -> Result<Field> {
    op.validate()?;
    let set = TermSet::compile(&op.terms, field.spec(), policy)?;
    let (values, _) = set.evaluate(field.values().view());
    Field::new(*field.spec(), values)
}

/// Residuals `B̄ū − g` on a boundary condition's point set.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryResidual {
    pub points: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

impl BoundaryResidual {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn evaluate_boundary(
    bc: &BoundaryCondition,
    field: &Field,
    policy: SchemePolicy,
) -> Result<BoundaryResidual> {
    let spec = field.spec();
    let points = bc.points.points(spec)?;
    let set = TermSet::compile(&bc.terms, spec, policy)?;
    let (values, _) = set.evaluate(field.values().view());
    let target = bc.target.sample(*spec)?;
    let values = points
        .iter()
        .map(|&p| values[p] - target.values()[p])
        .collect();
    Ok(BoundaryResidual { points, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_field;
    use crate::stencil::ApproxOrder;

    const P22: SchemePolicy = SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Second);
    const P24: SchemePolicy = SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Fourth);

    fn unit(n: usize) -> GridSpec {
        GridSpec::new(0.0, 1.0, n, 0.0, 1.0, n).unwrap()
    }

    fn wave_exact(x: f64, t: f64) -> f64 {
        (PI * x).sin() * ((PI * t / 2.0).cos() + (PI * t / 2.0).sin())
    }

    #[test]
    fn first_derivative_term_on_linear_field() {
        let g = unit(7);
        let u = Field::from_fn(g, |x, _| x).unwrap();
        let op = OperatorSpec {
            terms: vec![DiffTerm::derivative(1.0, Axis::X, 1).unwrap()],
            rhs: GridFunction::zero(),
        };
        let v = evaluate_operator(&op, &u, P22).unwrap();
        assert!(v.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let squared = OperatorSpec {
            terms: vec![DiffTerm::new(
                1.0,
                vec![Factor::pure(Axis::X, 1).unwrap()],
                2,
            )],
            rhs: GridFunction::zero(),
        };
        let v = evaluate_operator(&squared, &u, P24).unwrap();
        assert!(v.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn wave_residual_shrinks_quadratically() {
        let wave = BuiltinProblem::Wave.problem(3, 3).unwrap();
        let mut errs = Vec::new();
        for n in [41, 81] {
            let u = Field::from_fn(unit(n), wave_exact).unwrap();
            let r = evaluate_operator(&wave.operator, &u, P22).unwrap();
            let max = (2..n - 2)
                .flat_map(|i| (2..n - 2).map(move |j| (i, j)))
                .map(|p| r.values()[p].abs())
                .fold(0.0, f64::max);
            errs.push(max);
        }
        let ratio = errs[0] / errs[1];
        assert!((3.5..4.5).contains(&ratio), "{errs:?}");
        assert!(errs[0] < 0.05, "{errs:?}");
    }

    #[test]
    fn boundary_residual_examples() {
        let g = unit(9);
        let zero = Field::zeros(g);
        let bc = BoundaryCondition::dirichlet(Edge::XMin, GridFunction::zero());
        assert_eq!(evaluate_boundary(&bc, &zero, P22).unwrap().max_abs(), 0.0);

        let c = Field::constant(g, 3.5).unwrap();
        for edge in [Edge::XMin, Edge::XMax, Edge::TMin] {
            let bc = BoundaryCondition::neumann(edge, GridFunction::zero());
            assert_eq!(evaluate_boundary(&bc, &c, P24).unwrap().max_abs(), 0.0);
        }

        let wave = BuiltinProblem::Wave.problem(25, 25).unwrap();
        let exact = Field::from_fn(wave.grid, wave_exact).unwrap();
        for bc in &wave.boundary {
            let r = evaluate_boundary(bc, &exact, P22).unwrap();
            assert!(
                r.max_abs() <= 1e-12,
                "{:?}: {}",
                bc.points.edge,
                r.max_abs()
            );
            assert_eq!(r.points.len(), 25);
        }
    }

    #[test]
    fn point_set_outside_grid() {
        let g = unit(5);
        let bc = BoundaryCondition {
            points: PointSet {
                edge: Edge::TMax,
                range: Some((2, 9)),
            },
            terms: vec![DiffTerm::identity(1.0)],
            target: GridFunction::zero(),
        };
        assert!(matches!(
            evaluate_boundary(&bc, &Field::zeros(g), P22),
            Err(Error::PointSetOutsideGrid(_))
        ));
    }

    #[test]
    fn builtin_domains() {
        let b = builtin_problems();
        assert_eq!(b.wave.grid.x_bounds(), (0.0, 1.0));
        assert_eq!(b.wave.grid.t_bounds(), (0.0, 1.0));
        assert_eq!(b.heat.grid.x_bounds(), (-8.0, 8.0));
        assert_eq!(b.heat.grid.t_bounds(), (0.0, 10.0));
        let ic = &b.heat.boundary[2];
        assert_eq!(ic.points.edge, Edge::TMin);
        assert_eq!(ic.target.eval(4.0, 0.0), 1.0);
    }

    #[test]
    fn json_round_trip_evaluates_identically() {
        let mut wave = BuiltinProblem::Wave.problem(8, 9).unwrap();
        wave.operator.terms.push(DiffTerm::new(
            Coefficient::Function(GridFunction::Affine {
                c0: 0.5,
                cx: 1.0,
                ct: -0.25,
            }),
            vec![
                Factor::mixed(1, 1).unwrap(),
                Factor::pure(Axis::X, 1).unwrap(),
            ],
            2,
        ));
        wave.boundary.push(BoundaryCondition::neumann(
            Edge::XMax,
            GridFunction::constant(0.1),
        ));
        let json = wave.to_json().unwrap();
        let back = ProblemSpec::from_json(&json).unwrap();
        assert_eq!(back, wave);
        let u = random_field(wave.grid, 5, 0.0, 1.0).unwrap();
        assert_eq!(
            evaluate_operator(&wave.operator, &u, P24).unwrap(),
            evaluate_operator(&back.operator, &u, P24).unwrap()
        );
    }

    #[test]
    fn json_problem_format() {
        let json = r#"{
            "grid": {"x": [0, 1, 6], "t": [0, 2, 7]},
            "operator": {
                "terms": [{"coeff": 1.0, "factors": [["t", 1]]},
                          {"coeff": {"fn": "const", "value": -1.0}, "factors": [["x", 2]], "power": 1}],
                "rhs": {"fn": "sin_scaled", "axis": "x", "scale": 3.14159}
            },
            "boundary": [{"edge": "x_min", "kind": "dirichlet", "target": {"fn": "const", "value": 0}},
                         {"edge": "x_max", "kind": "neumann"}],
            "lambda": 3
        }"#;
        let p = ProblemSpec::from_json(json).unwrap();
        assert_eq!(p.lambda, 3.0);
        assert_eq!(p.grid.shape(), (6, 7));
        assert_eq!(
            p.boundary[1],
            BoundaryCondition::neumann(Edge::XMax, GridFunction::zero())
        );

        assert!(ProblemSpec::from_json(&json.replace("\"lambda\": 3", "\"lambda\": -1")).is_err());
        assert!(ProblemSpec::from_json(&json.replace("[\"t\", 1]", "[\"t\", 0]")).is_err());
        let no_lambda = json.replace(",\n            \"lambda\": 3", "");
        assert_eq!(
            ProblemSpec::from_json(&no_lambda).unwrap().lambda,
            DEFAULT_LAMBDA
        );
    }

    #[test]
    fn term_order_does_not_matter() {
        let wave = BuiltinProblem::Wave.problem(9, 9).unwrap();
        let mut op = wave.operator.clone();
        op.terms.push(DiffTerm::new(
            0.3,
            vec![
                Factor::pure(Axis::X, 1).unwrap(),
                Factor::pure(Axis::T, 1).unwrap(),
            ],
            1,
        ));
        let mut rev = op.clone();
        rev.terms.reverse();
        rev.terms[0].factors.reverse();
        let u = random_field(wave.grid, 9, 0.0, 1.0).unwrap();
        assert_eq!(
            evaluate_operator(&op, &u, P22).unwrap(),
            evaluate_operator(&rev, &u, P22).unwrap()
        );
    }
}
