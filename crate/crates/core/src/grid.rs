//! Uniform rectangular space-time meshes and the mesh functions living on them.
//!
//! Storage is row-major with axis 0 = x and axis 1 = t, so `values[[i, j]]`
//! is the value at `(x_i, t_j)`. Random fields are drawn from ChaCha8
//! (`rand_chacha::ChaCha8Rng`), which is counter based and produces the same
//! stream on every platform for a given seed.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid axis. `X` is the spatial axis (array axis 0), `T` the time axis (array axis 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    T,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::T => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::T => "t",
        }
    }
}

/// Minimum number of points per axis.
pub const MIN_POINTS: usize = 3;

/// Uniform 2-D mesh over `[x_min, x_max] × [t_min, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRepr", into = "GridSpecRepr")]
pub struct GridSpec {
    x_min: f64,
    x_max: f64,
    t_min: f64,
    t_max: f64,
    n_x: usize,
    n_t: usize,
}

/// JSON layout `{ "x": [min, max, n], "t": [min, max, n] }`.
#[derive(Serialize, Deserialize)]
struct GridSpecRepr {
    x: (f64, f64, usize),
    t: (f64, f64, usize),
}

impl TryFrom<GridSpecRepr> for GridSpec {
    type Error = Error;

    fn try_from(r: GridSpecRepr) -> Result<Self> {
        GridSpec::new(r.x.0, r.x.1, r.x.2, r.t.0, r.t.1, r.t.2)
    }
}

impl From<GridSpec> for GridSpecRepr {
    fn from(g: GridSpec) -> Self {
        GridSpecRepr {
            x: (g.x_min, g.x_max, g.n_x),
            t: (g.t_min, g.t_max, g.n_t),
        }
    }
}

impl GridSpec {
    pub fn new(
        x_min: f64,
        x_max: f64,
        n_x: usize,
        t_min: f64,
        t_max: f64,
        n_t: usize,
    ) -> Result<Self> {
        for (name, lo, hi, n) in [("x", x_min, x_max, n_x), ("t", t_min, t_max, n_t)] {
            if n < MIN_POINTS {
                return Err(Error::InvalidSpec(format!(
                    "axis {name} has {n} points, need at least {MIN_POINTS}"
                )));
            }
            if !lo.is_finite() || !hi.is_finite() || hi <= lo {
                return Err(Error::InvalidSpec(format!(
                    "axis {name} bounds [{lo}, {hi}] are degenerate"
                )));
            }
        }
        Ok(GridSpec {
            x_min,
            x_max,
            t_min,
            t_max,
            n_x,
            n_t,
        })
    }

    /// Same domain, different resolution.
    pub fn with_resolution(&self, n_x: usize, n_t: usize) -> Result<Self> {
        GridSpec::new(self.x_min, self.x_max, n_x, self.t_min, self.t_max, n_t)
    }

    pub fn x_bounds(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    pub fn t_bounds(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }

    pub fn bounds(&self, axis: Axis) -> (f64, f64) {
        match axis {
            Axis::X => self.x_bounds(),
            Axis::T => self.t_bounds(),
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn points(&self, axis: Axis) -> usize {
        match axis {
            Axis::X => self.n_x,
            Axis::T => self.n_t,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_x, self.n_t)
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_t
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h_x(&self) -> f64 {
        self.step(Axis::X)
    }

    pub fn h_t(&self) -> f64 {
        self.step(Axis::T)
    }

    pub fn step(&self, axis: Axis) -> f64 {
        let (lo, hi) = self.bounds(axis);
        (hi - lo) / (self.points(axis) - 1) as f64
    }

    /// Coordinate of index `i` along `axis`. The last index returns the upper
    /// bound exactly rather than `lo + (n-1)·h`.
    pub fn coordinate(&self, axis: Axis, i: usize) -> f64 {
        let (lo, hi) = self.bounds(axis);
        let n = self.points(axis);
        if i + 1 == n {
            hi
        } else {
            lo + i as f64 * self.step(axis)
        }
    }

    pub fn coordinates(&self, axis: Axis) -> Array1<f64> {
        (0..self.points(axis))
            .map(|i| self.coordinate(axis, i))
            .collect()
    }

    /// True when both grids cover the same rectangle.
    pub fn same_domain(&self, other: &GridSpec) -> bool {
        self.x_min == other.x_min
            && self.x_max == other.x_max
            && self.t_min == other.t_min
            && self.t_max == other.t_max
    }
}

/// Coordinate arrays `(x, t)` of a grid.
pub fn build_grid(spec: &GridSpec) -> (Array1<f64>, Array1<f64>) {
    (spec.coordinates(Axis::X), spec.coordinates(Axis::T))
}

/// A real-valued mesh function bound to a [`GridSpec`]. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    spec: GridSpec,
    values: Array2<f64>,
}

impl Field {
    pub fn new(spec: GridSpec, values: Array2<f64>) -> Result<Self> {
        let actual = values.dim();
        if actual != spec.shape() {
            return Err(Error::ShapeMismatch {
                expected: spec.shape(),
                actual,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values".into()));
        }
        // Force standard (row-major) layout so flat views are well defined.
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(Field { spec, values })
    }

    pub fn from_flat(spec: GridSpec, flat: Vec<f64>) -> Result<Self> {
        let len = flat.len();
        let values =
            Array2::from_shape_vec(spec.shape(), flat).map_err(|_| Error::ShapeMismatch {
                expected: spec.shape(),
                actual: (len, 1),
            })?;
        Field::new(spec, values)
    }

    pub fn constant(spec: GridSpec, value: f64) -> Result<Self> {
        Field::new(spec, Array2::from_elem(spec.shape(), value))
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Field {
            spec,
            values: Array2::zeros(spec.shape()),
        }
    }

    /// Samples `f(x, t)` at every node.
    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let (xs, ts) = build_grid(&spec);
        let values = Array2::from_shape_fn(spec.shape(), |(i, j)| f(xs[i], ts[j]));
        Field::new(spec, values)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Row-major flat view.
    pub fn as_slice(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("field storage is standard layout")
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Nested rows, one per x index.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.values.outer_iter().map(|r| r.to_vec()).collect()
    }

    /// CSV with one row per x index and comma-separated t values; floats use
    /// shortest round-trip formatting.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for row in self.values.outer_iter() {
            wtr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(spec: GridSpec, r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut flat = Vec::with_capacity(spec.len());
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != spec.n_t() {
                return Err(Error::ShapeMismatch {
                    expected: spec.shape(),
                    actual: (rows + 1, rec.len()),
                });
            }
            for cell in rec.iter() {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad number {cell:?} in field csv"))
                })?;
                flat.push(v);
            }
            rows += 1;
        }
        if rows != spec.n_x() {
            return Err(Error::ShapeMismatch {
                expected: spec.shape(),
                actual: (rows, spec.n_t()),
            });
        }
        Field::from_flat(spec, flat)
    }
}

/// Field with i.i.d. uniform entries on `[lo, hi]`, reproducible from `seed`.
pub fn random_field(spec: GridSpec, seed: u64, lo: f64, hi: f64) -> Result<Field> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "random range [{lo}, {hi}] is empty"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..spec.len()).map(|_| rng.random_range(lo..=hi)).collect();
    Field::from_flat(spec, flat)
}

/// Mean absolute difference over all nodes.
pub fn mae(a: &Field, b: &Field) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape(),
            actual: b.shape(),
        });
    }
    let n = a.values.len() as f64;
    let sum: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(p, q)| (p - q).abs())
        .sum();
    Ok(sum / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> GridSpec {
        GridSpec::new(0.0, 1.0, n, 0.0, 1.0, n).unwrap()
    }

    #[test]
    fn step_matches_point_count() {
        assert_eq!(unit(10).h_x(), 1.0 / 9.0);
        let heat = GridSpec::new(-8.0, 8.0, 50, 0.0, 10.0, 50).unwrap();
        assert_eq!(heat.h_x(), 16.0 / 49.0);
    }

    #[test]
    fn rejects_small_or_degenerate() {
        assert!(matches!(
            GridSpec::new(0.0, 1.0, 2, 0.0, 1.0, 5),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            GridSpec::new(1.0, 1.0, 5, 0.0, 1.0, 5),
            Err(Error::InvalidSpec(_))
        ));
        assert!(matches!(
            GridSpec::new(0.0, 1.0, 5, 2.0, 1.0, 5),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn coordinates_hit_endpoints() {
        let g = GridSpec::new(-8.0, 8.0, 50, 0.0, 10.0, 37).unwrap();
        let (x, t) = build_grid(&g);
        assert_eq!(x.len(), 50);
        assert_eq!(t.len(), 37);
        assert_eq!(x[0], -8.0);
        assert_eq!(x[49], 8.0);
        assert_eq!(t[36], 10.0);
        for w in x.windows(2) {
            assert!(((w[1] - w[0]) - g.h_x()).abs() < 1e-13);
        }
    }

    #[test]
    fn random_field_is_reproducible_and_in_range() {
        let g = unit(12);
        let a = random_field(g, 7, 0.0, 1.0).unwrap();
        let b = random_field(g, 7, 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(a.min() >= 0.0 && a.max() <= 1.0);
        let c = random_field(g, 8, 0.0, 1.0).unwrap();
        assert_ne!(a, c);
        assert!(random_field(g, 7, 0.5, 0.5).is_err());
    }

    #[test]
    fn mae_examples() {
        let g = unit(4);
        let z = Field::constant(g, 0.0).unwrap();
        let o = Field::constant(g, 1.0).unwrap();
        assert_eq!(mae(&z, &z).unwrap(), 0.0);
        assert_eq!(mae(&z, &o).unwrap(), 1.0);

        // [0, 1] vs [1, 1] tiled over a 3x4 grid
        let g34 = GridSpec::new(0.0, 1.0, 3, 0.0, 1.0, 4).unwrap();
        let fa = Field::from_fn(g34, |_, t| if t < 0.5 { 0.0 } else { 1.0 }).unwrap();
        let fb = Field::constant(g34, 1.0).unwrap();
        assert_eq!(mae(&fa, &fb).unwrap(), 0.5);
        assert_eq!(mae(&fb, &fa).unwrap(), 0.5);

        let other = Field::zeros(unit(5));
        assert!(matches!(mae(&z, &other), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn rejects_non_finite() {
        let g = unit(3);
        let mut v = Array2::zeros((3, 3));
        v[[1, 1]] = f64::NAN;
        assert!(matches!(Field::new(g, v), Err(Error::NonFinite(_))));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let g = GridSpec::new(-8.0, 8.0, 6, 0.0, 10.0, 4).unwrap();
        let f = random_field(g, 3, -1.0, 1.0).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 4);
        let back = Field::read_csv(g, buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn grid_json_layout() {
        let g = GridSpec::new(0.0, 1.0, 10, 0.0, 2.0, 20).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"x":[0.0,1.0,10],"t":[0.0,2.0,20]}"#);
        let back: GridSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<GridSpec>(r#"{"x":[0,1,2],"t":[0,1,5]}"#).is_err());
    }
}
