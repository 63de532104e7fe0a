use approx::assert_relative_eq;
use ndarray::Array2;
use optpde::stencil::AxisOperator;
use optpde::{
    mae, random_field, ApproxOrder, Axis, BuiltinProblem, Field, GridSpec, Objective, SchemePolicy,
};
use proptest::prelude::*;

fn policy() -> impl Strategy<Value = SchemePolicy> {
    prop_oneof![
        Just(SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Second)),
        Just(SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Fourth)),
        Just(SchemePolicy::new(ApproxOrder::Fourth, ApproxOrder::Fourth)),
    ]
}

fn spec(n_x: usize, n_t: usize) -> GridSpec {
    GridSpec::new(-1.0, 1.0, n_x, 0.0, 2.0, n_t).unwrap()
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mae_is_a_symmetric_nonnegative_distance(
        n_x in 3usize..9, n_t in 3usize..9, s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>(),
    ) {
        let g = spec(n_x, n_t);
        let a = random_field(g, s1, -1.0, 1.0).unwrap();
        let b = random_field(g, s2, -1.0, 1.0).unwrap();
        let c = random_field(g, s3, -1.0, 1.0).unwrap();
        let ab = mae(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(mae(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, mae(&b, &a).unwrap());
        prop_assert!(ab <= mae(&a, &c).unwrap() + mae(&c, &b).unwrap() + 1e-15);
    }

    #[test]
    fn axis_operator_is_linear(
        n in 9usize..16, p in policy(), axis in prop_oneof![Just(Axis::X), Just(Axis::T)],
        s1 in any::<u64>(), s2 in any::<u64>(), alpha in -3.0f64..3.0,
    ) {
        let g = spec(n, n);
        let op = AxisOperator::from_policy(&g, axis, p).unwrap();
        let u = random_field(g, s1, -1.0, 1.0).unwrap().into_values();
        let v = random_field(g, s2, -1.0, 1.0).unwrap().into_values();
        let lhs = op.apply((&u * alpha + &v).view());
        let rhs = op.apply(u.view()) * alpha + op.apply(v.view());
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-9, max_relative = 1e-12);
        }
    }

    #[test]
    fn adjoint_matches_transpose(
        n_x in 9usize..16, n_t in 9usize..16, p in policy(),
        axis in prop_oneof![Just(Axis::X), Just(Axis::T)], s1 in any::<u64>(), s2 in any::<u64>(),
    ) {
        let g = spec(n_x, n_t);
        let op = AxisOperator::from_policy(&g, axis, p).unwrap();
        let u = random_field(g, s1, -1.0, 1.0).unwrap().into_values();
        let v = random_field(g, s2, -1.0, 1.0).unwrap().into_values();
        let lhs = dot(&op.apply(u.view()), &v);
        let rhs = dot(&u, &op.apply_adjoint(v.view()));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-9, max_relative = 1e-12);
    }

    #[test]
    fn random_fields_have_nonnegative_loss_and_nonzero_gradient(
        n in 7usize..11, p in prop_oneof![
            Just(SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Second)),
            Just(SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Fourth)),
        ], seed in any::<u64>(),
    ) {
        let problem = BuiltinProblem::Wave.problem(n, n).unwrap();
        let obj = Objective::new(&problem, p).unwrap();
        let u = random_field(problem.grid, seed, 0.0, 1.0).unwrap();
        let l = obj.loss(&u).unwrap();
        prop_assert!(l.interior >= 0.0 && l.boundary >= 0.0);
        prop_assert!(obj.gradient(&u).unwrap().as_slice().iter().any(|g| *g != 0.0));
    }
}

#[test]
fn loss_is_a_quadratic_along_any_line() {
    let problem = BuiltinProblem::Heat.problem(9, 8).unwrap();
    let obj = Objective::new(
        &problem,
        SchemePolicy::new(ApproxOrder::Second, ApproxOrder::Fourth),
    )
    .unwrap();
    let u = random_field(problem.grid, 1, 0.0, 1.0).unwrap();
    let d = random_field(problem.grid, 2, -1.0, 1.0).unwrap();
    let at = |s: f64| {
        let v: Vec<f64> = u
            .as_slice()
            .iter()
            .zip(d.as_slice())
            .map(|(a, b)| a + s * b)
            .collect();
        obj.loss(&Field::from_flat(problem.grid, v).unwrap())
            .unwrap()
            .total
    };
    // third finite difference of a quadratic is zero
    let third = at(1.5) - 3.0 * at(0.5) + 3.0 * at(-0.5) - at(-1.5);
    assert!(third.abs() <= 1e-9 * at(0.0).max(1.0), "{third}");
}
