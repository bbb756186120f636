mod support;

use support::gradient_suite::{full_model_error, op_errors};

#[test]
fn every_op_matches_finite_differences() {
    for (name, err) in op_errors() {
        assert!(err < 1e-6, "{name}: relative error {err:e}");
    }
}

#[test]
fn full_model_matches_finite_differences() {
    let err = full_model_error(2);
    assert!(err < 1e-4, "relative error {err:e}");
}
