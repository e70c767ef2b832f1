use rksa::config::KernelSet;
use rksa::train::{
    analytic_gradients, compare_gradients, corrupt_gradient, grad_check, grad_check_fixture, GradCheckConfig,
};

fn show(report: &rksa::train::GradCheckReport) {
    for t in &report.tensors {
        println!("{:<40} rel {:.3e} abs {:.3e}", t.name, t.max_rel_error, t.max_abs_error);
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let report = grad_check(&GradCheckConfig::default()).unwrap();
    show(&report);
    assert!(report.passed(), "failing tensors: {:?}", report.failures());
}

#[test]
fn every_kernel_subset_and_the_default_rank_weight() {
    for kernels in ["C", "I", "U", "C+I", "I+U"] {
        let cfg = GradCheckConfig {
            kernels: kernels.parse::<KernelSet>().unwrap(),
            lambda_r: 0.001,
            seed: 3,
            ..GradCheckConfig::default()
        };
        let report = grad_check(&cfg).unwrap();
        assert!(report.passed(), "{kernels}: {:?}", report.failures());
    }
}

#[test]
fn zero_initialized_model_passes() {
    let cfg = GradCheckConfig {
        zero_init: true,
        ..GradCheckConfig::default()
    };
    assert!(grad_check(&cfg).unwrap().passed());
}

#[test]
fn report_covers_every_parameter_group() {
    let report = grad_check(&GradCheckConfig::default()).unwrap();
    for group in ["embed.", "location_", "omega_", "shape_", "mixture_", "ffn.", "norm"] {
        assert!(report.tensors.iter().any(|t| t.name.contains(group)), "no entry for {group}");
    }
}

#[test]
fn corrupted_gradient_is_caught() {
    let cfg = GradCheckConfig::default();
    let (model, batch, cooc) = grad_check_fixture(&cfg).unwrap();
    let mut grads = analytic_gradients(&model, &batch, &cooc, &cfg).unwrap();
    corrupt_gradient(&mut grads, &model, "block0.ffn.w1", 1e-2).unwrap();
    let report = compare_gradients(&model, &batch, &cooc, &cfg, &grads).unwrap();
    let failed: Vec<&str> = report.failures().iter().map(|t| t.name.as_str()).collect();
    assert_eq!(failed, vec!["block0.ffn.w1"]);
}
