//! Central-difference gradient checks for every differentiable tensor op.

mod support;

use support::gradcheck::{self, encoder, TOL};

fn op(name: &str) {
    let &(_, case) = gradcheck::OPS.iter().find(|(n, _)| *n == name).unwrap();
    let err = gradcheck::worst(name, case);
    assert!(err < TOL, "{name}: relative error {err:e}");
}

#[test]
fn conv1d_gradients() {
    op("conv1d");
}

#[test]
fn batchnorm_gradients_in_both_modes() {
    op("batchnorm");
}

#[test]
fn pointwise_gradients() {
    op("pointwise");
}

#[test]
fn binary_elementwise_gradients() {
    op("binary");
}

#[test]
fn linear_gradients() {
    op("linear");
}

#[test]
fn pooling_and_gating_gradients() {
    op("gating");
}

#[test]
fn concat_gradients() {
    op("concat");
}

#[test]
fn normalization_gradients() {
    op("normalize");
}

#[test]
fn row_selection_gradients() {
    op("rows");
}

#[test]
fn distance_and_triplet_gradients() {
    op("distance");
}

#[test]
fn tiny_encoder_matches_finite_differences() {
    let err = encoder::worst();
    assert!(err < encoder::TOL_E2E, "relative error {err:e}");
}
