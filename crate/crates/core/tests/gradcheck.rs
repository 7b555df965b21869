mod common;

use common::{layer_gradient_errors, network_gradient_errors};

const TOL: f64 = 1e-4;

#[test]
fn every_layer_matches_finite_differences() {
    for seed in [1, 2] {
        for (name, err) in layer_gradient_errors(seed) {
            assert!(err < TOL, "{name}: relative error {err:e}");
        }
    }
}

#[test]
fn full_network_matches_finite_differences() {
    let errs = network_gradient_errors(3, 16);
    assert!(errs.iter().any(|(n, _)| n == "head.weight"));
    assert!(errs.iter().any(|(n, _)| n.contains("up.weight")));
    for (name, err) in errs {
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}
