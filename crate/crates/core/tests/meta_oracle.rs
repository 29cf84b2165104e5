mod common;

use common::oracles::{exact_composed_error, exact_quadratic_error, first_order_error, step, toy_mte, toy_mtr};
use metadg::autodiff::{ParamSet, Tensor};
use metadg::engine::{meta_gradient, InnerOptimizer, MetaGradMode};

#[test]
fn first_order_matches_hand_computation() {
    let e = first_order_error();
    assert!(e <= 1e-9, "{e:e}");
}

#[test]
fn exact_mode_matches_closed_form_on_a_quadratic() {
    let e = exact_quadratic_error();
    assert!(e <= 1e-6, "{e:e}");
}

#[test]
fn exact_mode_matches_differentiating_the_composed_objective() {
    let e = exact_composed_error();
    assert!(e <= 1e-6, "{e:e}");
}

#[test]
fn exact_mode_refuses_an_adam_inner_step() {
    let p = ParamSet::new(vec![("theta".into(), Tensor::vector(vec![0.1, 0.2]))]);
    let err = meta_gradient(&p, &step(InnerOptimizer::Adam, 0.1, 0.0), MetaGradMode::Exact, 1e-4, toy_mtr, toy_mte).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
