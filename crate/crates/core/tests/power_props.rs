use proptest::prelude::*;

use smart_cluster::power::{
    detectable_effect_size, required_clusters, rho_conditional, rho_unconditional, Rounding, SampleSizeInputs,
};
use smart_cluster::DesignKind;

fn inputs() -> impl Strategy<Value = SampleSizeInputs> {
    (
        any::<bool>(),
        1u32..60,
        0.05..1.5f64,
        0.0..0.5f64,
        0.05..1.0f64,
        0.05..1.0f64,
        prop_oneof![Just(0.01), Just(0.05), Just(0.1)],
        0.6..0.95f64,
        proptest::option::of(0.0..0.9f64),
    )
        .prop_map(|(proto, m, delta, rho, p1, p_neg1, alpha, power, cor2)| SampleSizeInputs {
            design: if proto { DesignKind::Prototypical } else { DesignKind::Adept },
            m,
            delta,
            rho,
            p1,
            p_neg1,
            alpha,
            power,
            cor2_yx: cor2,
            rounding: Rounding::Nearest,
        })
}

fn exact(inp: &SampleSizeInputs) -> f64 {
    required_clusters(inp).unwrap().n_exact
}

proptest! {
    #[test]
    fn monotone_in_each_input(inp in inputs(), bump in 0.001..0.2f64) {
        let base = exact(&inp);
        let tol = 1e-9 * base;

        let mut t = inp; t.delta += bump;
        prop_assert!(exact(&t) <= base + tol);
        let mut t = inp; t.p1 = (inp.p1 + bump).min(1.0);
        prop_assert!(exact(&t) <= base + tol);
        let mut t = inp; t.p_neg1 = (inp.p_neg1 + bump).min(1.0);
        prop_assert!(exact(&t) <= base + tol);
        let mut t = inp; t.cor2_yx = Some((inp.cor2_yx.unwrap_or(0.0) + bump).min(0.95));
        prop_assert!(exact(&t) <= base + tol);
        let mut t = inp; t.rho = (inp.rho + bump).min(0.99);
        prop_assert!(exact(&t) >= base - tol);
        let mut t = inp; t.power = (inp.power + bump).min(0.99);
        prop_assert!(exact(&t) >= base - tol);
    }

    #[test]
    fn zero_cor2_equals_no_covariate(inp in inputs()) {
        let mut a = inp; a.cor2_yx = None;
        let mut b = inp; b.cor2_yx = Some(0.0);
        prop_assert_eq!(exact(&a), exact(&b));
    }

    #[test]
    fn prototypical_needs_at_least_adept(inp in inputs()) {
        let mut a = inp; a.design = DesignKind::Adept;
        let mut p = inp; p.design = DesignKind::Prototypical;
        if inp.p_neg1 < 1.0 {
            prop_assert!(exact(&p) > exact(&a));
        }
        p.p_neg1 = 1.0;
        prop_assert!((exact(&p) - exact(&a)).abs() < 1e-12 * exact(&a));
    }

    #[test]
    fn unit_cluster_size_ignores_icc(inp in inputs(), rho2 in 0.0..0.9f64) {
        let mut a = inp; a.m = 1;
        let mut b = a; b.rho = rho2;
        prop_assert!((exact(&a) - exact(&b)).abs() < 1e-12 * exact(&a));
    }

    #[test]
    fn ceiling_is_at_most_one_above_nearest(inp in inputs()) {
        let near = required_clusters(&inp).unwrap().n;
        let mut c = inp; c.rounding = Rounding::Ceiling;
        let ceil = required_clusters(&c).unwrap().n;
        prop_assert!(ceil >= near && ceil - near <= 1);
    }

    #[test]
    fn mde_round_trip(inp in inputs(), n in 1u64..500) {
        let d = detectable_effect_size(&inp, n).unwrap();
        let mut t = inp; t.delta = d;
        prop_assert_eq!(required_clusters(&t).unwrap().n, n);
        prop_assert!((exact(&t) - n as f64).abs() < 1e-10 * n as f64);
    }

    #[test]
    fn conditional_icc_round_trip(rho in -0.5..0.99f64, cor2 in 0.0..0.99f64) {
        let back = rho_unconditional(rho_conditional(rho, cor2).unwrap(), cor2).unwrap();
        prop_assert!((back - rho).abs() < 1e-12);
    }
}

#[test]
fn mde_decreases_with_n() {
    let mut inp = SampleSizeInputs::new(DesignKind::Adept, 10, 1.0, 0.01, 0.2);
    inp.power = 0.8;
    let mut prev = f64::INFINITY;
    for n in 20..=200 {
        let d = detectable_effect_size(&inp, n).unwrap();
        assert!(d < prev);
        prev = d;
    }
}
