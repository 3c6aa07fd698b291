//! End-to-end finite-difference checks of both training losses in 64-bit mode.

use gqnloc_core::gradcheck::{elbo_check, pose_nll_check, LOSS_TOL};
use gqnloc_core::ModelConfig;

#[test]
fn elbo_gradients_parametric() {
    let (e, at) = elbo_check(false);
    assert!(e < LOSS_TOL, "ELBO max relative error {e:e} at {at}");
}

#[test]
fn elbo_gradients_attention() {
    let (e, at) = elbo_check(true);
    assert!(e < LOSS_TOL, "ELBO max relative error {e:e} at {at}");
}

#[test]
fn pose_nll_gradients_parametric() {
    let (e, at) = pose_nll_check(false);
    assert!(e < LOSS_TOL, "pose NLL max relative error {e:e} at {at}");
}

#[test]
fn pose_nll_gradients_attention() {
    assert_eq!(ModelConfig::tiny(true).disc_attention_layers, 2);
    let (e, at) = pose_nll_check(true);
    assert!(e < LOSS_TOL, "pose NLL max relative error {e:e} at {at}");
}
