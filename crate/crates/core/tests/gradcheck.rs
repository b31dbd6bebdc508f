mod common;

use common::{op_cases, GRAD_TOL};

#[test]
fn every_op_matches_finite_differences() {
    for (name, case) in op_cases() {
        for seed in 0..10 {
            let err = case(seed);
            assert!(err <= GRAD_TOL, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn harness_catches_a_wrong_gradient() {
    use blindspot::{Result, ScalarObjective, Shape, Tensor};

    // claims d/dx sum(x^2) = x instead of 2x
    struct Halved;
    impl ScalarObjective for Halved {
        fn name(&self) -> &'static str {
            "halved"
        }
        fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
            let v = x.data().iter().map(|&a| (a as f64).powi(2)).sum();
            Ok((v, x.clone()))
        }
    }
    let x = Tensor::from_fn(Shape::new(1, 1, 3, 3), |[_, _, y, x]| (y * 3 + x) as f32 / 9.0 + 0.1);
    let err = common::grad_check(&[x], 1e-2, &|t, v| t.objective(v[0], &Halved));
    assert!(err > 0.1, "{err}");
}

#[test]
fn network_input_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let err = common::network_case(seed);
        assert!(err <= GRAD_TOL, "seed {seed}: relative error {err:e}");
    }
}
