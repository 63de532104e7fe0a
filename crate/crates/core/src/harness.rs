//! Experiment runner: repeated solves over resolutions, scheme policies and
//! initializations, with one CSV row per solve and summary statistics.
//!
//! Seeds run from `seed` to `seed + runs − 1` for every method and
//! resolution. Rows are ordered by method, then resolution, then seed, and
//! `run_id` is the row position.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::grid::{mae, random_field, Field};
use crate::operator::{BuiltinProblem, ProblemSpec};
use crate::optimizer::{minimize, OptimizerConfig, SolveResult};
use crate::reference::reference_field;
use crate::stencil::SchemePolicy;
use crate::warmstart::{cascade, CascadeLevel, Interpolator, DEFAULT_RBF_SMOOTH};

/// Grid resolution `n_x × n_t`. JSON accepts `50` (square) or `[50, 40]`;
/// text form is `50x40`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "ResolutionRepr", into = "ResolutionRepr")]
pub struct Resolution {
    pub n_x: usize,
    pub n_t: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ResolutionRepr {
    Square(usize),
    Pair([usize; 2]),
}

impl From<ResolutionRepr> for Resolution {
    fn from(r: ResolutionRepr) -> Self {
        match r {
            ResolutionRepr::Square(n) => Resolution::square(n),
            ResolutionRepr::Pair([n_x, n_t]) => Resolution { n_x, n_t },
        }
    }
}

impl From<Resolution> for ResolutionRepr {
    fn from(r: Resolution) -> Self {
        ResolutionRepr::Pair([r.n_x, r.n_t])
    }
}

impl Resolution {
    pub const fn new(n_x: usize, n_t: usize) -> Self {
        Resolution { n_x, n_t }
    }

    pub const fn square(n: usize) -> Self {
        Resolution { n_x: n, n_t: n }
    }

    /// Strictly finer along both axes.
    pub fn finer_than(&self, other: &Resolution) -> bool {
        self.n_x > other.n_x && self.n_t > other.n_t
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_x, self.n_t)
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("grid {s:?} is not of the form NXxNT"));
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let n_x = a.trim().parse().map_err(|_| bad())?;
        let n_t = b.trim().parse().map_err(|_| bad())?;
        Ok(Resolution { n_x, n_t })
    }
}

/// How the initial field of a solve is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    /// Uniform `[0, 1]` noise.
    Random,
    /// Solve at the largest ladder level below the target from random noise,
    /// then interpolate bilinearly.
    #[serde(alias = "interp")]
    Multilinear,
    /// As `Multilinear`, with the RBF interpolator.
    Rbf,
    /// Chain through every ladder level up to the target, interpolating
    /// bilinearly between levels.
    #[serde(alias = "cascade")]
    CascadeMultilinear,
    CascadeRbf,
}

impl InitKind {
    pub const ALL: [InitKind; 5] = [
        InitKind::Random,
        InitKind::Multilinear,
        InitKind::Rbf,
        InitKind::CascadeMultilinear,
        InitKind::CascadeRbf,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            InitKind::Random => "random",
            InitKind::Multilinear => "multilinear",
            InitKind::Rbf => "rbf",
            InitKind::CascadeMultilinear => "cascade-multilinear",
            InitKind::CascadeRbf => "cascade-rbf",
        }
    }

    fn interpolator(&self, smooth: f64) -> Option<Interpolator> {
        match self {
            InitKind::Random => None,
            InitKind::Multilinear | InitKind::CascadeMultilinear => Some(Interpolator::Multilinear),
            InitKind::Rbf | InitKind::CascadeRbf => Some(Interpolator::Rbf { smooth }),
        }
    }

    fn is_chain(&self) -> bool {
        matches!(self, InitKind::CascadeMultilinear | InitKind::CascadeRbf)
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(InitKind::Random),
            "interp" | "multilinear" => Ok(InitKind::Multilinear),
            "rbf" => Ok(InitKind::Rbf),
            "cascade" | "cascade-multilinear" => Ok(InitKind::CascadeMultilinear),
            "cascade-rbf" => Ok(InitKind::CascadeRbf),
            other => Err(Error::InvalidArgument(format!(
                "unknown init {other:?} (expected random, interp, rbf, cascade or cascade-rbf)"
            ))),
        }
    }
}

/// One row of a results table: a scheme policy paired with an initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub scheme: SchemePolicy,
    pub init: InitKind,
}

/// A builtin problem by name, or a full problem description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemRef {
    Builtin(BuiltinProblem),
    Custom(Box<ProblemSpec>),
}

impl ProblemRef {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemRef::Builtin(b) => b.name(),
            ProblemRef::Custom(_) => "custom",
        }
    }

    /// The problem on a grid of the given resolution.
    pub fn at(&self, res: Resolution) -> Result<ProblemSpec> {
        match self {
            ProblemRef::Builtin(b) => b.problem(res.n_x, res.n_t),
            ProblemRef::Custom(p) => p.with_resolution(res.n_x, res.n_t),
        }
    }

    /// Reference solution on `problem`'s grid; `None` for custom problems.
    pub fn reference(&self, problem: &ProblemSpec) -> Result<Option<Field>> {
        match self {
            ProblemRef::Builtin(b) => reference_field(*b, &problem.grid).map(Some),
            ProblemRef::Custom(_) => Ok(None),
        }
    }
}

fn default_runs() -> usize {
    30
}

fn default_policies() -> Vec<SchemePolicy> {
    vec![SchemePolicy::default()]
}

fn default_inits() -> Vec<InitKind> {
    vec![InitKind::Random]
}

fn default_ladder() -> Vec<Resolution> {
    (10..=50).step_by(5).map(Resolution::square).collect()
}

fn default_smooth() -> f64 {
    DEFAULT_RBF_SMOOTH
}

/// A sweep over methods × resolutions × seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub problem: ProblemRef,
    pub resolutions: Vec<Resolution>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_policies")]
    pub policies: Vec<SchemePolicy>,
    #[serde(default = "default_inits")]
    pub inits: Vec<InitKind>,
    /// Explicit method list; replaces `policies × inits` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<MethodSpec>>,
    /// Base seed.
    #[serde(default)]
    pub seed: u64,
    /// Coarse levels available to warm starts.
    #[serde(default = "default_ladder")]
    pub ladder: Vec<Resolution>,
    #[serde(default = "default_smooth")]
    pub rbf_smooth: f64,
    /// Overrides the problem's penalty weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Per-run CSV path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(problem: ProblemRef, resolutions: Vec<Resolution>) -> Self {
        ExperimentSpec {
            problem,
            resolutions,
            runs: default_runs(),
            policies: default_policies(),
            inits: default_inits(),
            methods: None,
            seed: 0,
            ladder: default_ladder(),
            rbf_smooth: default_smooth(),
            lambda: None,
            optimizer: OptimizerConfig::default(),
            output: None,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_reader(r: impl Read) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_reader(r)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Methods in table order.
    pub fn method_list(&self) -> Vec<MethodSpec> {
        match &self.methods {
            Some(m) => m.clone(),
            None => self
                .policies
                .iter()
                .flat_map(|&scheme| {
                    self.inits
                        .iter()
                        .map(move |&init| MethodSpec { scheme, init })
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.resolutions.is_empty() {
            return bad("resolutions must not be empty".into());
        }
        for w in self.resolutions.windows(2) {
            if !w[1].finer_than(&w[0]) {
                return bad(format!("resolutions must increase: {} then {}", w[0], w[1]));
            }
        }
        for w in self.ladder.windows(2) {
            if !w[1].finer_than(&w[0]) {
                return bad(format!("ladder must increase: {} then {}", w[0], w[1]));
            }
        }
        if self.method_list().is_empty() {
            return bad("no methods to run".into());
        }
        if !(self.rbf_smooth >= 0.0 && self.rbf_smooth.is_finite()) {
            return bad(format!(
                "rbf_smooth must be finite and non-negative, got {}",
                self.rbf_smooth
            ));
        }
        self.optimizer.validate()?;
        for &res in &self.resolutions {
            self.problem_at(res)?.validate()?;
        }
        for m in self.method_list() {
            let mut used = self.resolutions.clone();
            if m.init.is_chain() {
                used = self.chain_levels(*self.resolutions.last().expect("non-empty"))?;
            } else if m.init != InitKind::Random {
                used.extend(
                    self.resolutions
                        .iter()
                        .filter_map(|&r| self.coarse_level(r)),
                );
            }
            let need = m.scheme.required_points();
            if let Some(r) = used.iter().find(|r| r.n_x < need || r.n_t < need) {
                return bad(format!(
                    "scheme {} needs at least {need} points per axis, level {r} has fewer",
                    m.scheme
                ));
            }
        }
        Ok(())
    }

    fn problem_at(&self, res: Resolution) -> Result<ProblemSpec> {
        let p = self.problem.at(res)?;
        Ok(match self.lambda {
            Some(l) => p.with_lambda(l),
            None => p,
        })
    }

    /// Ladder levels below `top`, followed by `top`.
    fn chain_levels(&self, top: Resolution) -> Result<Vec<Resolution>> {
        let mut levels: Vec<Resolution> = self
            .ladder
            .iter()
            .chain(&self.resolutions)
            .copied()
            .filter(|r| top.finer_than(r) || *r == top)
            .collect();
        levels.sort();
        levels.dedup();
        for w in levels.windows(2) {
            if !w[1].finer_than(&w[0]) {
                return Err(Error::InvalidSpec(format!(
                    "ladder and resolutions do not form an increasing chain: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(levels)
    }

    /// Largest ladder level strictly coarser than `res`.
    fn coarse_level(&self, res: Resolution) -> Option<Resolution> {
        self.ladder
            .iter()
            .copied()
            .filter(|l| res.finer_than(l))
            .max()
    }
}

/// One solve, as written to the per-run CSV.
///
/// Failed runs carry `converged = "error"` and empty numeric fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: usize,
    pub n_x: usize,
    pub n_t: usize,
    pub interior_order: u8,
    pub boundary_order: u8,
    pub init: String,
    pub seed: u64,
    pub iterations: Option<usize>,
    pub converged: String,
    pub mae: Option<f64>,
    pub interior_loss: Option<f64>,
    pub boundary_loss: Option<f64>,
    pub wall_time_s: Option<f64>,
}

pub const ERROR_STATUS: &str = "error";

impl RunRow {
    pub fn failed(&self) -> bool {
        self.converged == ERROR_STATUS
    }
}

/// Mean with a two-sided 95% Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// `None` when `n < 2`.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl Stats {
    /// `None` for an empty sample. Values are summed in the given order.
    pub fn from_samples(xs: &[f64]) -> Option<Stats> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return Some(Stats {
                n,
                mean,
                ci_low: None,
                ci_high: None,
            });
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        let half = t * (var / n as f64).sqrt();
        Some(Stats {
            n,
            mean,
            ci_low: Some(mean - half),
            ci_high: Some(mean + half),
        })
    }

    pub fn half_width(&self) -> Option<f64> {
        self.ci_high.map(|h| h - self.mean)
    }
}

/// Aggregates for one method at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub init: String,
    pub scheme: String,
    pub n_x: usize,
    pub n_t: usize,
    pub runs: usize,
    pub failures: usize,
    /// False when fewer than two runs succeeded, so no interval exists.
    pub ci_defined: bool,
    pub converged: BTreeMap<String, usize>,
    pub mae: Option<Stats>,
    pub iterations: Option<Stats>,
    pub wall_time_s: Option<Stats>,
    /// Wall time over the slowest run of the whole experiment.
    pub time_ratio: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub run_id: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub problem: String,
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<Failure>,
}

/// Groups rows by (init, scheme, resolution) in order of first appearance.
pub fn summarize(rows: &[RunRow]) -> Vec<SummaryRow> {
    let max_time = rows
        .iter()
        .filter_map(|r| r.wall_time_s)
        .fold(0.0, f64::max);
    let mut order: Vec<(String, u8, u8, usize, usize)> = Vec::new();
    let mut groups: BTreeMap<(String, u8, u8, usize, usize), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.init.clone(),
            r.interior_order,
            r.boundary_order,
            r.n_x,
            r.n_t,
        );
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let ok: Vec<&&RunRow> = members.iter().filter(|r| !r.failed()).collect();
            let col = |f: &dyn Fn(&RunRow) -> Option<f64>| -> Vec<f64> {
                ok.iter().filter_map(|r| f(r)).collect()
            };
            let mut converged = BTreeMap::new();
            for r in members {
                *converged.entry(r.converged.clone()).or_insert(0) += 1;
            }
            let (init, io, bo, n_x, n_t) = key;
            SummaryRow {
                init,
                scheme: format!("{io},{bo}"),
                n_x,
                n_t,
                runs: members.len(),
                failures: members.len() - ok.len(),
                ci_defined: ok.len() >= 2,
                converged,
                mae: Stats::from_samples(&col(&|r| r.mae)),
                iterations: Stats::from_samples(&col(&|r| r.iterations.map(|i| i as f64))),
                wall_time_s: Stats::from_samples(&col(&|r| r.wall_time_s)),
                time_ratio: if max_time > 0.0 {
                    Stats::from_samples(&col(&|r| r.wall_time_s.map(|t| t / max_time)))
                } else {
                    None
                },
            }
        })
        .collect()
}

/// Per-run rows plus their summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<RunRow>,
    pub summary: Summary,
}

impl ExperimentResult {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_rows(&self.rows, w)
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }

    /// Mean MAE per method (rows) and resolution (columns), as a Markdown table.
    pub fn mae_table(&self) -> String {
        let mut methods: Vec<(String, String)> = Vec::new();
        let mut resolutions: Vec<(usize, usize)> = Vec::new();
        for r in &self.summary.rows {
            let m = (r.init.clone(), r.scheme.clone());
            if !methods.contains(&m) {
                methods.push(m);
            }
            if !resolutions.contains(&(r.n_x, r.n_t)) {
                resolutions.push((r.n_x, r.n_t));
            }
        }
        resolutions.sort();
        let mut out = String::from("| Method | SO | BO |");
        for (nx, nt) in &resolutions {
            out.push_str(&format!(" {nx}x{nt} |"));
        }
        out.push_str("\n|---|---|---|");
        out.push_str(&"---|".repeat(resolutions.len()));
        out.push('\n');
        for (init, scheme) in &methods {
            let (so, bo) = scheme.split_once(',').unwrap_or((scheme, ""));
            out.push_str(&format!("| {init} | {so} | {bo} |"));
            for &(nx, nt) in &resolutions {
                let cell = self
                    .summary
                    .rows
                    .iter()
                    .find(|r| &r.init == init && &r.scheme == scheme && r.n_x == nx && r.n_t == nt)
                    .and_then(|r| r.mae)
                    .map_or_else(|| "-".to_string(), |s| format!("{:.4}", s.mean));
                out.push_str(&format!(" {cell} |"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn write_rows(rows: &[RunRow], w: impl Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_rows(r: impl Read) -> Result<Vec<RunRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Outcome of one solve inside a job.
struct Solved {
    method: usize,
    res: usize,
    seed: u64,
    outcome: Result<(SolveResult, f64)>,
}

#[derive(Debug, Clone, Copy)]
enum Job {
    /// One resolution, possibly with a two-level warm start.
    Single {
        method: usize,
        res: usize,
        seed: u64,
    },
    /// Every resolution of a method, chained through the ladder.
    Chain { method: usize, seed: u64 },
}

struct Runner<'a> {
    spec: &'a ExperimentSpec,
    methods: Vec<MethodSpec>,
    references: Vec<Option<Field>>,
}

impl Runner<'_> {
    fn solve(&self, res: Resolution, init: &Field, scheme: SchemePolicy) -> Result<SolveResult> {
        minimize(
            &self.spec.problem_at(res)?,
            init,
            scheme,
            &self.spec.optimizer,
        )
    }

    fn random_init(&self, res: Resolution, seed: u64) -> Result<Field> {
        random_field(self.spec.problem_at(res)?.grid, seed, 0.0, 1.0)
    }

    fn run(&self, job: Job) -> Vec<Solved> {
        match job {
            Job::Single { method, res, seed } => {
                let m = self.methods[method];
                let target = self.spec.resolutions[res];
                let start = Instant::now();
                let outcome = (|| {
                    let levels = solve_with_init(
                        &self.spec.problem_at(target)?,
                        m.init,
                        m.scheme,
                        &self.spec.optimizer,
                        seed,
                        &self.spec.ladder,
                        self.spec.rbf_smooth,
                    )?;
                    let last = levels.into_iter().last().expect("at least one level");
                    Ok((last.result, start.elapsed().as_secs_f64()))
                })();
                vec![Solved {
                    method,
                    res,
                    seed,
                    outcome,
                }]
            }
            Job::Chain { method, seed } => {
                let m = self.methods[method];
                let interp = m
                    .init
                    .interpolator(self.spec.rbf_smooth)
                    .expect("chains interpolate");
                let top = *self.spec.resolutions.last().expect("validated");
                let levels = self.spec.chain_levels(top).expect("validated");
                let start = Instant::now();
                let mut out = Vec::new();
                let mut prev: Option<Field> = None;
                let mut failure: Option<Error> = None;
                for level in levels {
                    let res_idx = self.spec.resolutions.iter().position(|r| *r == level);
                    let step = match &failure {
                        Some(e) => {
                            Err(Error::InvalidArgument(format!("earlier level failed: {e}")))
                        }
                        None => (|| {
                            let init = match &prev {
                                None => self.random_init(level, seed)?,
                                Some(f) => {
                                    interp.interpolate(f, self.spec.problem_at(level)?.grid)?
                                }
                            };
                            self.solve(level, &init, m.scheme)
                        })(),
                    };
                    match &step {
                        Ok(r) => prev = Some(r.field.clone()),
                        Err(e) if failure.is_none() => {
                            failure = Some(Error::InvalidArgument(format!("{level}: {e}")))
                        }
                        Err(_) => {}
                    }
                    if let Some(res) = res_idx {
                        let outcome = step.map(|r| (r, start.elapsed().as_secs_f64()));
                        out.push(Solved {
                            method,
                            res,
                            seed,
                            outcome,
                        });
                    }
                }
                out
            }
        }
    }

    fn row(&self, s: Solved) -> (RunRow, Option<String>) {
        let m = self.methods[s.method];
        let res = self.spec.resolutions[s.res];
        let mut row = RunRow {
            run_id: 0,
            n_x: res.n_x,
            n_t: res.n_t,
            interior_order: m.scheme.interior.value(),
            boundary_order: m.scheme.boundary.value(),
            init: m.init.label().to_string(),
            seed: s.seed,
            iterations: None,
            converged: ERROR_STATUS.to_string(),
            mae: None,
            interior_loss: None,
            boundary_loss: None,
            wall_time_s: None,
        };
        let outcome = s.outcome.and_then(|(r, _)| {
            let err = match &self.references[s.res] {
                Some(reference) => Some(mae(&r.field, reference)?),
                None => None,
            };
            Ok((r, err))
        });
        match outcome {
            Ok((r, err)) => {
                let last = r.final_loss();
                row.iterations = Some(r.iterations);
                row.converged = r.converged.as_str().to_string();
                row.mae = err;
                row.interior_loss = Some(last.interior);
                row.boundary_loss = Some(last.boundary);
                row.wall_time_s = Some(r.wall_time);
                (row, None)
            }
            Err(e) => (row, Some(e.to_string())),
        }
    }
}

/// Levels solved to reach `target` with `init`: the target alone for random
/// starts, the largest coarser ladder level then the target for two-level
/// starts, every coarser ladder level then the target for chains.
pub fn init_levels(init: InitKind, target: Resolution, ladder: &[Resolution]) -> Vec<Resolution> {
    let mut coarser: Vec<Resolution> = ladder
        .iter()
        .copied()
        .filter(|l| target.finer_than(l))
        .collect();
    coarser.sort();
    let mut levels = match init {
        InitKind::Random => Vec::new(),
        InitKind::Multilinear | InitKind::Rbf => coarser.last().copied().into_iter().collect(),
        InitKind::CascadeMultilinear | InitKind::CascadeRbf => coarser,
    };
    levels.push(target);
    levels
}

/// Solves `problem` at its own resolution, with the initial field produced by
/// `init`. Coarser levels, if any, come first in the returned list.
pub fn solve_with_init(
    problem: &ProblemSpec,
    init: InitKind,
    scheme: SchemePolicy,
    config: &OptimizerConfig,
    seed: u64,
    ladder: &[Resolution],
    rbf_smooth: f64,
) -> Result<Vec<CascadeLevel>> {
    let target = Resolution::new(problem.grid.n_x(), problem.grid.n_t());
    let levels: Vec<(usize, usize)> = init_levels(init, target, ladder)
        .iter()
        .map(|r| (r.n_x, r.n_t))
        .collect();
    let interp = init
        .interpolator(rbf_smooth)
        .unwrap_or(Interpolator::Multilinear);
    let single = levels.len() == 1;
    cascade(problem, &levels, interp, scheme, config, seed, None).map_err(|e| match e {
        Error::CascadeLevel { cause, .. } if single => *cause,
        e => e,
    })
}

/// Runs the experiment with parallelism capped by the `THREADS` environment
/// variable when set.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let threads = match std::env::var("THREADS") {
        Ok(v) => Some(v.parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::InvalidArgument(format!("THREADS={v:?} is not a positive integer"))
        })?),
        Err(_) => None,
    };
    run_experiment_with_threads(spec, threads)
}

/// Runs the experiment on `threads` workers (`None`: one per core). Results
/// do not depend on the thread count, apart from wall times.
pub fn run_experiment_with_threads(
    spec: &ExperimentSpec,
    threads: Option<usize>,
) -> Result<ExperimentResult> {
    spec.validate()?;
    let methods = spec.method_list();
    let references = spec
        .resolutions
        .iter()
        .map(|&r| spec.problem.reference(&spec.problem_at(r)?))
        .collect::<Result<Vec<_>>>()?;
    let runner = Runner {
        spec,
        methods,
        references,
    };

    let seeds = (0..spec.runs as u64).map(|k| spec.seed + k);
    let mut jobs = Vec::new();
    for (mi, m) in runner.methods.iter().enumerate() {
        if m.init.is_chain() {
            jobs.extend(seeds.clone().map(|seed| Job::Chain { method: mi, seed }));
        } else {
            for res in 0..spec.resolutions.len() {
                jobs.extend(seeds.clone().map(|seed| Job::Single {
                    method: mi,
                    res,
                    seed,
                }));
            }
        }
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut solved: Vec<Solved> = pool.install(|| {
        jobs.par_iter()
            .flat_map_iter(|&job| runner.run(job))
            .collect()
    });
    solved.sort_by_key(|s| (s.method, s.res, s.seed));

    let mut rows = Vec::with_capacity(solved.len());
    let mut failures = Vec::new();
    for (run_id, s) in solved.into_iter().enumerate() {
        let (mut row, err) = runner.row(s);
        row.run_id = run_id;
        if let Some(message) = err {
            failures.push(Failure { run_id, message });
        }
        rows.push(row);
    }
    let summary = Summary {
        problem: spec.problem.name().to_string(),
        rows: summarize(&rows),
        failures,
    };
    Ok(ExperimentResult { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(runs: usize) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(
            ProblemRef::Builtin(BuiltinProblem::Wave),
            vec![Resolution::square(6)],
        );
        spec.runs = runs;
        spec.ladder = vec![Resolution::square(4)];
        spec.optimizer.max_iterations = Some(300);
        spec
    }

    #[test]
    fn parses_resolutions() {
        assert_eq!(
            "50x40".parse::<Resolution>().unwrap(),
            Resolution::new(50, 40)
        );
        assert!("50".parse::<Resolution>().is_err());
        assert!("ax3".parse::<Resolution>().is_err());
        let r: Vec<Resolution> = serde_json::from_str("[10, [20, 30]]").unwrap();
        assert_eq!(r, vec![Resolution::square(10), Resolution::new(20, 30)]);
    }

    #[test]
    fn init_names_and_aliases() {
        for k in InitKind::ALL {
            assert_eq!(k.label().parse::<InitKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(serde_json::from_str::<InitKind>(&json).unwrap(), k);
        }
        assert_eq!("interp".parse::<InitKind>().unwrap(), InitKind::Multilinear);
        assert_eq!(
            serde_json::from_str::<InitKind>("\"cascade\"").unwrap(),
            InitKind::CascadeMultilinear
        );
        assert!("nn".parse::<InitKind>().is_err());
    }

    #[test]
    fn spec_json_defaults() {
        let spec =
            ExperimentSpec::from_json(r#"{"problem": "heat", "resolutions": [20, 30]}"#).unwrap();
        assert_eq!(spec.runs, 30);
        assert_eq!(
            spec.method_list(),
            vec![MethodSpec {
                scheme: SchemePolicy::default(),
                init: InitKind::Random
            }]
        );
        assert_eq!(spec.ladder.len(), 9);
        assert_eq!(spec.rbf_smooth, 10.0);
    }

    #[test]
    fn spec_validation() {
        let parse = |s: &str| ExperimentSpec::from_json(s);
        assert!(parse(r#"{"problem": "wave", "resolutions": []}"#).is_err());
        assert!(parse(r#"{"problem": "wave", "resolutions": [20, 10]}"#).is_err());
        assert!(parse(r#"{"problem": "wave", "resolutions": [10], "runs": 0}"#).is_err());
        assert!(parse(r#"{"problem": "wave", "resolutions": [10], "policies": ["3,2"]}"#).is_err());
        assert!(parse(r#"{"problem": "wave", "resolutions": [10], "bogus": 1}"#).is_err());
        assert!(parse(r#"{"problem": "wave", "resolutions": [2]}"#).is_err());
        assert!(parse(r#"{"problem": "wave", "resolutions": [10], "policies": ["4,4"], "inits": ["cascade"], "ladder": [3, 6]}"#).is_err());
    }

    #[test]
    fn explicit_methods_override_product() {
        let spec = ExperimentSpec::from_json(
            r#"{"problem": "wave", "resolutions": [10], "policies": ["2,2", "2,4"], "inits": ["random", "rbf"],
                "methods": [{"scheme": "2,4", "init": "cascade"}]}"#,
        )
        .unwrap();
        assert_eq!(spec.method_list().len(), 1);
        let product = ExperimentSpec {
            methods: None,
            ..spec
        };
        assert_eq!(product.method_list().len(), 4);
    }

    #[test]
    fn chain_levels_merge_ladder_and_resolutions() {
        let mut spec = small(1);
        spec.resolutions = vec![Resolution::square(12), Resolution::square(20)];
        spec.ladder = vec![
            Resolution::square(10),
            Resolution::square(15),
            Resolution::square(25),
        ];
        let levels = spec.chain_levels(Resolution::square(20)).unwrap();
        assert_eq!(levels, [10, 12, 15, 20].map(Resolution::square));
        assert_eq!(
            spec.coarse_level(Resolution::square(12)),
            Some(Resolution::square(10))
        );
        assert_eq!(spec.coarse_level(Resolution::square(10)), None);
    }

    #[test]
    fn init_levels_follow_the_ladder() {
        let ladder = [10, 15, 20, 25].map(Resolution::square);
        let t = Resolution::square(20);
        assert_eq!(init_levels(InitKind::Random, t, &ladder), vec![t]);
        assert_eq!(
            init_levels(InitKind::Rbf, t, &ladder),
            [15, 20].map(Resolution::square)
        );
        assert_eq!(
            init_levels(InitKind::CascadeRbf, t, &ladder),
            [10, 15, 20].map(Resolution::square)
        );
        assert_eq!(
            init_levels(InitKind::Multilinear, Resolution::square(8), &ladder),
            vec![Resolution::square(8)]
        );
    }

    #[test]
    fn two_level_start_matches_manual_chain() {
        let p = BuiltinProblem::Wave.problem(9, 9).unwrap();
        let cfg = OptimizerConfig {
            max_iterations: Some(200),
            ..Default::default()
        };
        let ladder = [Resolution::square(5)];
        let levels = solve_with_init(
            &p,
            InitKind::Multilinear,
            SchemePolicy::default(),
            &cfg,
            3,
            &ladder,
            10.0,
        )
        .unwrap();
        assert_eq!(levels.len(), 2);
        let coarse = minimize(
            &p.with_resolution(5, 5).unwrap(),
            &random_field(p.with_resolution(5, 5).unwrap().grid, 3, 0.0, 1.0).unwrap(),
            SchemePolicy::default(),
            &cfg,
        )
        .unwrap();
        let init = crate::warmstart::interp_multilinear(&coarse.field, p.grid).unwrap();
        let fine = minimize(&p, &init, SchemePolicy::default(), &cfg).unwrap();
        assert_eq!(levels[1].result.field, fine.field);
    }

    #[test]
    fn stats_match_hand_computation() {
        let s = Stats::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        // t(0.975, 3) = 3.182446305284263, sd = sqrt(5/3)
        let half = 3.182446305284263 * (5.0f64 / 3.0).sqrt() / 2.0;
        assert!((s.half_width().unwrap() - half).abs() < 1e-12);
        let one = Stats::from_samples(&[0.7]).unwrap();
        assert_eq!((one.mean, one.ci_low, one.ci_high), (0.7, None, None));
        assert!(Stats::from_samples(&[]).is_none());
    }

    #[test]
    fn single_run_has_no_interval() {
        let out = run_experiment_with_threads(&small(1), Some(1)).unwrap();
        assert_eq!(out.rows.len(), 1);
        let s = &out.summary.rows[0];
        assert!(!s.ci_defined);
        assert!(s.mae.unwrap().ci_low.is_none());
    }

    #[test]
    fn rows_are_ordered_and_seeded() {
        let mut spec = small(2);
        spec.seed = 7;
        spec.resolutions = vec![Resolution::square(5), Resolution::square(6)];
        spec.inits = vec![
            InitKind::Random,
            InitKind::CascadeMultilinear,
            InitKind::Multilinear,
        ];
        let out = run_experiment_with_threads(&spec, Some(2)).unwrap();
        assert_eq!(out.rows.len(), 12);
        for (i, r) in out.rows.iter().enumerate() {
            assert_eq!(r.run_id, i);
            assert!(!r.failed(), "{r:?}");
            assert!(r.mae.is_some());
        }
        let seeds: Vec<u64> = out.rows.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, [7, 8].repeat(6));
        assert_eq!(out.rows[4].init, "cascade-multilinear");
        assert_eq!(out.summary.rows.len(), 6);
        assert!(out.summary.failures.is_empty());
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let mut spec = small(2);
        spec.optimizer.max_iterations = Some(5);
        // a non-finite start is rejected by the optimizer; force it through a huge lambda
        spec.lambda = Some(f64::MAX);
        let out = run_experiment_with_threads(&spec, Some(1)).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert!(out.rows.iter().all(|r| r.failed() && r.mae.is_none()));
        assert_eq!(out.summary.failures.len(), 2);
        assert_eq!(out.summary.rows[0].failures, 2);
        assert!(out.summary.rows[0].mae.is_none());
    }

    #[test]
    fn csv_round_trip() {
        let out = run_experiment_with_threads(&small(2), Some(1)).unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "run_id,n_x,n_t,interior_order,boundary_order,init,seed,iterations,converged,mae,interior_loss,boundary_loss,wall_time_s\n"
        ));
        assert_eq!(read_rows(buf.as_slice()).unwrap(), out.rows);
    }

    #[test]
    fn mae_table_layout() {
        let mut spec = small(1);
        spec.resolutions = vec![Resolution::square(5), Resolution::square(6)];
        spec.policies = vec![SchemePolicy::parse("2,2").unwrap()];
        spec.inits = vec![InitKind::Random, InitKind::CascadeMultilinear];
        let table = run_experiment_with_threads(&spec, Some(1))
            .unwrap()
            .mae_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "| Method | SO | BO | 5x5 | 6x6 |");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("| cascade-multilinear | 2 | 2 |"));
    }
}
