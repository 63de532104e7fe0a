//! Fixtures shared by the benchmarks.

use optpde::{random_field, BuiltinProblem, Field, ProblemSpec};

/// Builtin problem on an `n × n` grid with a seeded random field.
pub fn fixture(problem: BuiltinProblem, n: usize, seed: u64) -> (ProblemSpec, Field) {
    let p = problem
        .problem(n, n)
        .expect("builtin problems accept n >= 5");
    let u = random_field(p.grid, seed, 0.0, 1.0).expect("valid range");
    (p, u)
}
