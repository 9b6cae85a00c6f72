mod common;

use smart_cluster::sim::{generate_trial, preset};
use smart_cluster::{fit, wald_test, FitOptions, MarginalMeanSpec};

#[test]
fn sandwich_se_agrees_with_cluster_bootstrap() {
    let p = preset("table3-row1").unwrap();
    let ds = generate_trial(&p.scenario, 200, p.m as usize, 2024).unwrap();
    let c = [0.0, 2.0, 1.0];
    let f = fit(&ds, &MarginalMeanSpec::for_dataset(&ds), &FitOptions::default()).unwrap();
    let se = wald_test(&f, &c, 0.05).unwrap().std_error;
    let boot = common::bootstrap_se(&ds, &c, 2000, 7);
    let rel = (se - boot).abs() / boot;
    assert!(rel < 0.15, "sandwich {se} bootstrap {boot} rel {rel}");
}
