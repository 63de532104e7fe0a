//! First-derivative finite-difference formulas and their repeated application.
//!
//! Two families are available. The second-order family uses the two-point
//! forward/backward differences and their average, `(u(x+h) − u(x−h)) / 2h`.
//! The fourth-order family uses the three-point one-sided differences
//!
//! ```text
//! u'_f(x) = (−3/2 u(x) + 2 u(x+h) − 1/2 u(x+2h)) / h
//! u'_b(x) = ( 3/2 u(x) − 2 u(x−h) + 1/2 u(x−2h)) / h
//! ```
//!
//! and their average for the central form. Where a stencil would leave the
//! grid, the mirrored one-sided stencil of the same family is used: forward
//! at the low edge, backward at the high edge.

use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis as NdAxis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Axis, Field, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
    Central,
}

/// Stencil family, named after the nominal approximation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ApproxOrder {
    Second,
    Fourth,
}

impl ApproxOrder {
    pub fn value(self) -> u8 {
        match self {
            ApproxOrder::Second => 2,
            ApproxOrder::Fourth => 4,
        }
    }
}

impl TryFrom<u8> for ApproxOrder {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            2 => Ok(ApproxOrder::Second),
            4 => Ok(ApproxOrder::Fourth),
            other => Err(Error::InvalidArgument(format!(
                "scheme order {other} is not available (only 2 and 4)"
            ))),
        }
    }
}

impl From<ApproxOrder> for u8 {
    fn from(o: ApproxOrder) -> u8 {
        o.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StencilKind {
    pub direction: Direction,
    pub order: ApproxOrder,
}

impl StencilKind {
    pub const fn new(direction: Direction, order: ApproxOrder) -> Self {
        StencilKind { direction, order }
    }
}

/// Which stencil family is used on interior points and which on the
/// boundary bands.
///
/// Serialized as the string `"I,B"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SchemePolicy {
    pub interior: ApproxOrder,
    pub boundary: ApproxOrder,
}

impl Default for SchemePolicy {
    fn default() -> Self {
        SchemePolicy {
            interior: ApproxOrder::Second,
            boundary: ApproxOrder::Second,
        }
    }
}

impl SchemePolicy {
    pub const fn new(interior: ApproxOrder, boundary: ApproxOrder) -> Self {
        SchemePolicy { interior, boundary }
    }

    /// Parses `"I,B"`, e.g. `"2,4"`.
    pub fn parse(s: &str) -> Result<Self> {
        let (i, b) = s.split_once(',').ok_or_else(|| {
            Error::InvalidArgument(format!("scheme {s:?} is not of the form I,B"))
        })?;
        let parse = |p: &str| -> Result<ApproxOrder> {
            let v: u8 = p.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("scheme order {p:?} is not an integer"))
            })?;
            ApproxOrder::try_from(v)
        };
        Ok(SchemePolicy::new(parse(i)?, parse(b)?))
    }

    /// Points per edge that use one-sided stencils.
    pub fn band_width(&self) -> usize {
        match self.boundary {
            ApproxOrder::Second => 1,
            ApproxOrder::Fourth => 2,
        }
    }

    /// Minimum number of points on an axis for this policy.
    pub fn required_points(&self) -> usize {
        if self.interior == ApproxOrder::Fourth || self.boundary == ApproxOrder::Fourth {
            5
        } else {
            3
        }
    }
}

impl TryFrom<String> for SchemePolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        SchemePolicy::parse(&s)
    }
}

impl From<SchemePolicy> for String {
    fn from(p: SchemePolicy) -> String {
        p.to_string()
    }
}

impl std::str::FromStr for SchemePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemePolicy::parse(s)
    }
}

impl std::fmt::Display for SchemePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.interior.value(), self.boundary.value())
    }
}

/// Index partition of one axis into low band, interior and high band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointClasses {
    pub low: Range<usize>,
    pub interior: Range<usize>,
    pub high: Range<usize>,
}

impl PointClasses {
    pub fn in_band(&self, i: usize) -> bool {
        self.low.contains(&i) || self.high.contains(&i)
    }
}

pub fn classify_points(spec: &GridSpec, policy: SchemePolicy, axis: Axis) -> PointClasses {
    classify_len(spec.points(axis), policy)
}

fn classify_len(n: usize, policy: SchemePolicy) -> PointClasses {
    let w = policy.band_width();
    let low_end = w.min(n);
    let high_start = n.saturating_sub(w).max(low_end);
    PointClasses {
        low: 0..low_end,
        interior: low_end..high_start,
        high: high_start..n,
    }
}

// (offset, weight) pairs in ascending offset order; weights are in units of 1/h.
type Taps = &'static [(isize, f64)];

const FORWARD_2: Taps = &[(0, -1.0), (1, 1.0)];
const BACKWARD_2: Taps = &[(-1, -1.0), (0, 1.0)];
const CENTRAL_2: Taps = &[(-1, -0.5), (1, 0.5)];
const FORWARD_4: Taps = &[(0, -1.5), (1, 2.0), (2, -0.5)];
const BACKWARD_4: Taps = &[(-2, 0.5), (-1, -2.0), (0, 1.5)];
const CENTRAL_4: Taps = &[(-2, 0.25), (-1, -1.0), (1, 1.0), (2, -0.25)];

fn fits(taps: Taps, i: usize, n: usize) -> bool {
    taps.iter().all(|&(o, _)| {
        let k = i as isize + o;
        k >= 0 && (k as usize) < n
    })
}

/// Taps for `kind` at index `i`, with the edge fallback applied.
fn resolve(kind: StencilKind, i: usize, n: usize) -> Option<Taps> {
    let (fwd, bwd, ctr) = match kind.order {
        ApproxOrder::Second => (FORWARD_2, BACKWARD_2, CENTRAL_2),
        ApproxOrder::Fourth => (FORWARD_4, BACKWARD_4, CENTRAL_4),
    };
    let pick = |first: Taps, second: Taps| {
        if fits(first, i, n) {
            Some(first)
        } else if fits(second, i, n) {
            Some(second)
        } else {
            None
        }
    };
    match kind.direction {
        Direction::Forward => pick(fwd, bwd),
        Direction::Backward => pick(bwd, fwd),
        Direction::Central => {
            if fits(ctr, i, n) {
                Some(ctr)
            } else if 2 * i < n {
                pick(fwd, bwd)
            } else {
                pick(bwd, fwd)
            }
        }
    }
}

/// A first-derivative operator along one axis, stored as per-index taps.
///
/// `apply` computes `D u`; `apply_adjoint` computes `Dᵀ v`, which the loss
/// gradient needs. Per-point sums run in ascending offset order so results do
/// not depend on loop order.
#[derive(Debug, Clone)]
pub struct AxisOperator {
    axis: Axis,
    inv_h: f64,
    rows: Vec<Taps>,
    runs: Vec<(Range<usize>, Taps)>,
}

impl AxisOperator {
    /// Uses `kind` at every index.
    pub fn uniform(spec: &GridSpec, axis: Axis, kind: StencilKind) -> Result<Self> {
        let n = spec.points(axis);
        let required = match (kind.order, kind.direction) {
            (ApproxOrder::Second, _) => 3,
            (ApproxOrder::Fourth, Direction::Central) => 5,
            (ApproxOrder::Fourth, _) => 4,
        };
        check_points(axis, n, required)?;
        let rows = (0..n)
            .map(|i| resolve(kind, i, n).expect("point count checked"))
            .collect::<Vec<_>>();
        Ok(AxisOperator {
            axis,
            inv_h: 1.0 / spec.step(axis),
            runs: runs_of(&rows),
            rows,
        })
    }

    /// Interior family on interior points, one-sided boundary family on the bands.
    pub fn from_policy(spec: &GridSpec, axis: Axis, policy: SchemePolicy) -> Result<Self> {
        let n = spec.points(axis);
        check_points(axis, n, policy.required_points())?;
        let classes = classify_len(n, policy);
        let rows = (0..n)
            .map(|i| {
                let kind = if classes.low.contains(&i) {
                    StencilKind::new(Direction::Forward, policy.boundary)
                } else if classes.high.contains(&i) {
                    StencilKind::new(Direction::Backward, policy.boundary)
                } else {
                    StencilKind::new(Direction::Central, policy.interior)
                };
                resolve(kind, i, n).expect("point count checked")
            })
            .collect::<Vec<_>>();
        Ok(AxisOperator {
            axis,
            inv_h: 1.0 / spec.step(axis),
            runs: runs_of(&rows),
            rows,
        })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `(index, weight)` pairs of row `i`, weights already divided by h.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows[i]
            .iter()
            .map(move |&(o, w)| ((i as isize + o) as usize, w * self.inv_h))
    }

    pub fn apply(&self, u: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(u.dim());
        self.apply_into(u, out.view_mut());
        out
    }

    pub fn apply_into(&self, u: ArrayView2<f64>, mut out: ArrayViewMut2<f64>) {
        match self.axis {
            Axis::X => {
                for (i, taps) in self.rows.iter().enumerate() {
                    let mut dst = out.index_axis_mut(NdAxis(0), i);
                    dst.fill(0.0);
                    for &(o, w) in taps.iter() {
                        let w = w * self.inv_h;
                        let src = u.index_axis(NdAxis(0), (i as isize + o) as usize);
                        Zip::from(&mut dst).and(&src).for_each(|d, &s| *d += w * s);
                    }
                }
            }
            Axis::T => {
                let mut buf = vec![0.0; self.rows.len()];
                for (src, mut dst) in u.outer_iter().zip(out.outer_iter_mut()) {
                    let src = slice_or_copy(src, &mut buf);
                    match dst.as_slice_mut() {
                        Some(d) => self.lane(src, d),
                        None => {
                            let mut d = vec![0.0; src.len()];
                            self.lane(src, &mut d);
                            dst.assign(&ArrayView1::from(&d));
                        }
                    }
                }
            }
        }
    }

    pub fn apply_adjoint(&self, v: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(v.dim());
        match self.axis {
            Axis::X => {
                for (i, taps) in self.rows.iter().enumerate() {
                    let src = v.index_axis(NdAxis(0), i);
                    for &(o, w) in taps.iter() {
                        let w = w * self.inv_h;
                        let mut dst = out.index_axis_mut(NdAxis(0), (i as isize + o) as usize);
                        Zip::from(&mut dst).and(&src).for_each(|d, &s| *d += w * s);
                    }
                }
            }
            Axis::T => {
                let mut buf = vec![0.0; self.rows.len()];
                for (src, mut dst) in v.outer_iter().zip(out.outer_iter_mut()) {
                    let src = slice_or_copy(src, &mut buf);
                    let dst = dst.as_slice_mut().expect("fresh array is contiguous");
                    for (run, taps) in &self.runs {
                        for &(o, w) in taps.iter() {
                            let w = w * self.inv_h;
                            let shifted = shift(run, o);
                            for (d, &s) in dst[shifted].iter_mut().zip(&src[run.clone()]) {
                                *d += w * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    // D applied to one contiguous lane.
    fn lane(&self, src: &[f64], dst: &mut [f64]) {
        for (run, taps) in &self.runs {
            let d = &mut dst[run.clone()];
            d.fill(0.0);
            for &(o, w) in taps.iter() {
                let w = w * self.inv_h;
                for (d, &s) in d.iter_mut().zip(&src[shift(run, o)]) {
                    *d += w * s;
                }
            }
        }
    }

    /// Applies the operator `times` times.
    pub fn apply_repeated(&self, u: ArrayView2<f64>, times: u32) -> Array2<f64> {
        let mut cur = u.to_owned();
        for _ in 0..times {
            cur = self.apply(cur.view());
        }
        cur
    }

    pub fn apply_adjoint_repeated(&self, v: ArrayView2<f64>, times: u32) -> Array2<f64> {
        let mut cur = v.to_owned();
        for _ in 0..times {
            cur = self.apply_adjoint(cur.view());
        }
        cur
    }
}

fn shift(run: &Range<usize>, o: isize) -> Range<usize> {
    (run.start as isize + o) as usize..(run.end as isize + o) as usize
}

fn slice_or_copy<'a>(lane: ArrayView1<'a, f64>, buf: &'a mut [f64]) -> &'a [f64] {
    match lane.to_slice() {
        Some(s) => s,
        None => {
            for (b, &v) in buf.iter_mut().zip(lane.iter()) {
                *b = v;
            }
            buf
        }
    }
}

// Maximal runs of consecutive indices sharing the same taps.
fn runs_of(rows: &[Taps]) -> Vec<(Range<usize>, Taps)> {
    let mut runs: Vec<(Range<usize>, Taps)> = Vec::new();
    for (i, &taps) in rows.iter().enumerate() {
        match runs.last_mut() {
            Some((r, t)) if *t == taps => r.end = i + 1,
            _ => runs.push((i..i + 1, taps)),
        }
    }
    runs
}

fn check_points(axis: Axis, n: usize, required: usize) -> Result<()> {
    if n < required {
        Err(Error::GridTooSmall {
            axis: axis.name(),
            points: n,
            required,
        })
    } else {
        Ok(())
    }
}

/// Derivative estimate at every node using `kind` everywhere (with edge fallback).
pub fn first_derivative(field: &Field, axis: Axis, kind: StencilKind) -> Result<Field> {
    let op = AxisOperator::uniform(field.spec(), axis, kind)?;
    Field::new(*field.spec(), op.apply(field.values().view()))
}

/// `order`-th derivative by repeated application of the policy's first-derivative operator.
pub fn derivative(field: &Field, axis: Axis, order: u32, policy: SchemePolicy) -> Result<Field> {
    if order == 0 {
        return Err(Error::InvalidArgument(
            "derivative order must be at least 1".into(),
        ));
    }
    let op = AxisOperator::from_policy(field.spec(), axis, policy)?;
    Field::new(
        *field.spec(),
        op.apply_repeated(field.values().view(), order),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_field;
    use std::f64::consts::PI;

    const P22: SchemePolicy = SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Second);
    const P24: SchemePolicy = SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Fourth);
    const P44: SchemePolicy = SchemePolicy::new(ApproxOrder::Fourth, ApproxOrder::Fourth);

    fn line(n: usize, h: f64) -> GridSpec {
        GridSpec::new(0.0, h * (n - 1) as f64, n, 0.0, 1.0, 3).unwrap()
    }

    #[test]
    fn classify_examples() {
        let g = GridSpec::new(0.0, 1.0, 10, 0.0, 1.0, 5).unwrap();
        let c = classify_points(&g, P22, Axis::X);
        assert_eq!((c.low, c.interior, c.high), (0..1, 1..9, 9..10));
        let c = classify_points(&g, P24, Axis::X);
        assert_eq!((c.low, c.interior, c.high), (0..2, 2..8, 8..10));
        let c = classify_points(&g, P24, Axis::T);
        assert_eq!((c.low, c.interior, c.high), (0..2, 2..3, 3..5));
    }

    #[test]
    fn central_is_exact_on_linear_and_quadratic() {
        let g = line(3, 1.0);
        let f = Field::from_fn(g, |x, _| x * x).unwrap();
        let d = first_derivative(
            &f,
            Axis::X,
            StencilKind::new(Direction::Central, ApproxOrder::Second),
        )
        .unwrap();
        assert_eq!(d.get(1, 0), 2.0);

        let g = GridSpec::new(0.0, 1.0, 11, 0.0, 1.0, 3).unwrap();
        let f = Field::from_fn(g, |x, _| x).unwrap();
        for dir in [Direction::Forward, Direction::Backward, Direction::Central] {
            let d =
                first_derivative(&f, Axis::X, StencilKind::new(dir, ApproxOrder::Second)).unwrap();
            for v in d.values().iter() {
                assert!((v - 1.0).abs() < 1e-12, "{dir:?}: {v}");
            }
        }
    }

    #[test]
    fn fourth_order_forward_on_quadratic() {
        let g = line(5, 1.0);
        let f = Field::from_fn(g, |x, _| x * x).unwrap();
        let d = first_derivative(
            &f,
            Axis::X,
            StencilKind::new(Direction::Forward, ApproxOrder::Fourth),
        )
        .unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        // every point, including the fallback ones, is exact on quadratics
        for i in 0..5 {
            assert_eq!(d.get(i, 1), 2.0 * i as f64);
        }
        let d = first_derivative(
            &f,
            Axis::X,
            StencilKind::new(Direction::Backward, ApproxOrder::Fourth),
        )
        .unwrap();
        for i in 0..5 {
            assert_eq!(d.get(i, 2), 2.0 * i as f64);
        }
    }

    #[test]
    fn edge_fallback_directions() {
        let g = line(6, 1.0);
        let f = Field::from_fn(g, |x, _| x * x * x).unwrap();
        let fwd = first_derivative(
            &f,
            Axis::X,
            StencilKind::new(Direction::Forward, ApproxOrder::Second),
        )
        .unwrap();
        let bwd = first_derivative(
            &f,
            Axis::X,
            StencilKind::new(Direction::Backward, ApproxOrder::Second),
        )
        .unwrap();
        let ctr = first_derivative(
            &f,
            Axis::X,
            StencilKind::new(Direction::Central, ApproxOrder::Second),
        )
        .unwrap();
        // forward at the high edge falls back to backward, and vice versa
        assert_eq!(fwd.get(5, 0), bwd.get(5, 0));
        assert_eq!(bwd.get(0, 0), fwd.get(0, 0));
        assert_eq!(ctr.get(0, 0), fwd.get(0, 0));
        assert_eq!(ctr.get(5, 0), bwd.get(5, 0));
    }

    #[test]
    fn grid_too_small() {
        let g = GridSpec::new(0.0, 1.0, 4, 0.0, 1.0, 3).unwrap();
        let f = Field::zeros(g);
        assert!(matches!(
            derivative(&f, Axis::X, 1, P44),
            Err(Error::GridTooSmall {
                points: 4,
                required: 5,
                ..
            })
        ));
        assert!(matches!(
            first_derivative(
                &f,
                Axis::T,
                StencilKind::new(Direction::Forward, ApproxOrder::Fourth)
            ),
            Err(Error::GridTooSmall { .. })
        ));
        assert!(derivative(&f, Axis::X, 0, P22).is_err());
    }

    #[test]
    fn order_one_equals_policy_first_derivative() {
        let g = GridSpec::new(0.0, 1.0, 9, 0.0, 2.0, 7).unwrap();
        let f = random_field(g, 1, 0.0, 1.0).unwrap();
        let a = derivative(&f, Axis::T, 1, P22).unwrap();
        let b = first_derivative(
            &f,
            Axis::T,
            StencilKind::new(Direction::Central, ApproxOrder::Second),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn second_derivative_of_quadratic() {
        let g = GridSpec::new(0.0, 1.0, 11, 0.0, 1.0, 3).unwrap();
        let f = Field::from_fn(g, |x, _| x * x).unwrap();
        let d2 = derivative(&f, Axis::X, 2, P22).unwrap();
        // central-of-central only touches central first derivatives from index 2 inward
        for i in 2..9 {
            assert!((d2.get(i, 0) - 2.0).abs() < 1e-6, "i={i} {}", d2.get(i, 0));
        }
    }

    fn max_interior_error_sin(n: usize) -> f64 {
        let g = GridSpec::new(0.0, 1.0, n, 0.0, 1.0, 3).unwrap();
        let f = Field::from_fn(g, |x, _| (PI * x).sin()).unwrap();
        let d2 = derivative(&f, Axis::X, 2, P22).unwrap();
        let c = classify_points(&g, P22, Axis::X);
        c.interior
            .clone()
            .map(|i| {
                let x = g.coordinate(Axis::X, i);
                (d2.get(i, 0) + PI * PI * (PI * x).sin()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn repeated_second_derivative_converges_at_second_order() {
        let e1 = max_interior_error_sin(41);
        let e2 = max_interior_error_sin(81);
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        // central-of-central is the 2h-wide three-point formula: error ≈ (2h)²/12 · max|u⁗|
        let h = 1.0 / 40.0;
        assert!(e1 <= 1.05 * PI.powi(4) / 3.0 * h * h, "e1 {e1}");
    }

    #[test]
    fn adjoint_matches_dot_product() {
        let g = GridSpec::new(0.0, 1.0, 8, -1.0, 3.0, 9).unwrap();
        let u = random_field(g, 11, -1.0, 1.0).unwrap();
        let v = random_field(g, 12, -1.0, 1.0).unwrap();
        for policy in [P22, P24, P44] {
            for axis in [Axis::X, Axis::T] {
                let op = AxisOperator::from_policy(&g, axis, policy).unwrap();
                let du = op.apply(u.values().view());
                let dtv = op.apply_adjoint(v.values().view());
                let lhs: f64 = (&du * v.values()).sum();
                let rhs: f64 = (u.values() * &dtv).sum();
                assert!(
                    (lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()),
                    "{lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn scheme_parse() {
        assert_eq!(SchemePolicy::parse("2,4").unwrap(), P24);
        assert!(SchemePolicy::parse("3,2").is_err());
        assert!(SchemePolicy::parse("2").is_err());
    }
}
