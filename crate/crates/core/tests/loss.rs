use confscale_core::dataset::{combined_loss, combined_loss_grad, smooth_l1};
use proptest::prelude::*;

fn numeric_grad(pred: f64, target: f64) -> f64 {
    let h = 1e-6;
    (combined_loss(pred + h, target, 2.0, 0.1, true) - combined_loss(pred - h, target, 2.0, 0.1, true))
        / (2.0 * h)
}

#[test]
fn gradient_matches_central_differences_on_a_grid() {
    for i in 0..20 {
        let pred = 0.025 + i as f64 * 0.05;
        let target = 1.0 - pred * 0.6;
        let analytic = combined_loss_grad(pred, target);
        assert!((analytic - numeric_grad(pred, target)).abs() < 1e-5, "pred {pred}");
    }
}

#[test]
fn generation_term_only_when_passing_eta() {
    let base = combined_loss(0.4, 0.9, 3.0, 0.1, false);
    assert_eq!(base, smooth_l1(-0.5));
    assert!((combined_loss(0.4, 0.9, 3.0, 0.1, true) - base - 0.3).abs() < 1e-12);
}

proptest! {
    #[test]
    fn smooth_l1_is_quadratic_inside_unit_interval(pred in 0.0f64..=1.0, target in 0.0f64..=1.0) {
        let d = pred - target;
        prop_assert!((combined_loss(pred, target, 0.0, 0.1, true) - 0.5 * d * d).abs() < 1e-12);
        prop_assert!((combined_loss_grad(pred, target) - d).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_is_linear_outside(d in 1.0f64..50.0) {
        prop_assert!((smooth_l1(d) - (d - 0.5)).abs() < 1e-12);
        prop_assert!((smooth_l1(-d) - (d - 0.5)).abs() < 1e-12);
    }
}
