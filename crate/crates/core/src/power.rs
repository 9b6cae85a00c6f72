//! Closed-form cluster counts and detectable effect sizes for comparing two
//! embedded regimens that start with different first-stage treatments.
//!
//! The required number of clusters is a product of four factors:
//!
//! ```text
//! N = 4 (z_β + z_{α/2})² / (m δ²)      base (two-arm cluster RCT)
//!   · (1 + (m − 1) ρ)                  variance inflation
//!   · (1 + Σ(1 − p_a1) / 2)            re-randomization
//!   · (1 − Cor²(Y, X))                 covariate adjustment
//! ```
//!
//! where the re-randomization sum runs over the first-stage arms whose
//! non-responders are re-randomized (only `a1 = 1` for ADEPT, both arms for
//! the prototypical design), and `ρ` is the conditional ICC `ρ*` when a
//! cluster-level covariate is used.

use serde::{Deserialize, Serialize};

use crate::design::DesignKind;
use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    #[default]
    Nearest,
    Ceiling,
}

impl Rounding {
    pub fn apply(self, n: f64) -> u64 {
        match self {
            Rounding::Nearest => n.round() as u64,
            Rounding::Ceiling => (n - 1e-9).ceil().max(0.0) as u64,
        }
    }
}

impl std::str::FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Rounding::Nearest),
            "ceiling" | "ceil" => Ok(Rounding::Ceiling),
            _ => Err(Error::InvalidParameter(format!("unknown rounding mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeInputs {
    pub design: DesignKind,
    /// Common cluster size.
    pub m: u32,
    /// Standardized effect size.
    pub delta: f64,
    /// Outcome ICC; the conditional ICC when `cor2_yx` is set.
    pub rho: f64,
    /// Response probability after first-stage treatment `1`.
    pub p1: f64,
    /// Response probability after first-stage treatment `-1` (prototypical only).
    pub p_neg1: f64,
    pub alpha: f64,
    pub power: f64,
    /// Squared outcome-covariate correlation for a cluster-level covariate.
    pub cor2_yx: Option<f64>,
    pub rounding: Rounding,
}

impl SampleSizeInputs {
    /// Inputs with α = .05, power = .9, no covariate and nearest rounding.
    pub fn new(design: DesignKind, m: u32, delta: f64, rho: f64, p1: f64) -> Self {
        SampleSizeInputs {
            design,
            m,
            delta,
            rho,
            p1,
            p_neg1: 1.0,
            alpha: 0.05,
            power: 0.9,
            cor2_yx: None,
            rounding: Rounding::Nearest,
        }
    }

    fn check_common(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.m == 0 {
            return bad("cluster size m must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.rho) {
            return bad(format!("rho {} outside [0, 1)", self.rho));
        }
        if !(self.p1 > 0.0 && self.p1 <= 1.0) {
            return bad(format!("p1 {} outside (0, 1]", self.p1));
        }
        if self.design == DesignKind::Prototypical && !(self.p_neg1 > 0.0 && self.p_neg1 <= 1.0) {
            return bad(format!("p_neg1 {} outside (0, 1]", self.p_neg1));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.power > 0.0 && self.power < 1.0) {
            return bad(format!("power {} outside (0, 1)", self.power));
        }
        if let Some(c) = self.cor2_yx {
            if !(0.0..1.0).contains(&c) {
                return bad(format!("cor2 {c} outside [0, 1)"));
            }
        }
        Ok(())
    }

    fn check_delta(&self) -> Result<()> {
        if self.delta > 0.0 && self.delta.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("effect size {} must be positive", self.delta)))
        }
    }
}

/// The individual factors of the sample-size product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Terms {
    pub base: f64,
    pub vif: f64,
    pub rerand: f64,
    pub cov_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSize {
    pub n: u64,
    /// Unrounded value of the formula.
    pub n_exact: f64,
    pub formula: String,
    pub terms: Terms,
}

fn z_sum(alpha: f64, power: f64) -> f64 {
    normal::quantile(1.0 - alpha / 2.0) + normal::quantile(power)
}

/// `1 + (m − 1) ρ`.
pub fn vif(m: u32, rho: f64) -> f64 {
    1.0 + (f64::from(m) - 1.0) * rho
}

/// Third factor: inflation from re-randomizing non-responders.
pub fn rerandomization_factor(design: DesignKind, p1: f64, p_neg1: f64) -> f64 {
    match design {
        DesignKind::Adept => 1.0 + (1.0 - p1) / 2.0,
        DesignKind::Prototypical => 1.0 + ((1.0 - p1) + (1.0 - p_neg1)) / 2.0,
    }
}

/// Everything except `1/δ²` and `1/N`: `4 z² · vif · rerand · (1 − Cor²) / m`.
fn numerator(inp: &SampleSizeInputs) -> (f64, Terms) {
    let z = z_sum(inp.alpha, inp.power);
    let terms = Terms {
        base: 4.0 * z * z / (f64::from(inp.m) * inp.delta * inp.delta),
        vif: vif(inp.m, inp.rho),
        rerand: rerandomization_factor(inp.design, inp.p1, inp.p_neg1),
        cov_reduction: 1.0 - inp.cor2_yx.unwrap_or(0.0),
    };
    let k = 4.0 * z * z * terms.vif * terms.rerand * terms.cov_reduction / f64::from(inp.m);
    (k, terms)
}

fn formula_name(inp: &SampleSizeInputs) -> String {
    let design = match inp.design {
        DesignKind::Adept => "adept",
        DesignKind::Prototypical => "prototypical",
    };
    if inp.cor2_yx.is_some() {
        format!("{design}-covariate")
    } else {
        design.to_string()
    }
}

/// Required number of clusters.
pub fn required_clusters(inp: &SampleSizeInputs) -> Result<SampleSize> {
    inp.check_common()?;
    inp.check_delta()?;
    let (_, terms) = numerator(inp);
    let n_exact = terms.base * terms.vif * terms.rerand * terms.cov_reduction;
    Ok(SampleSize {
        n: inp.rounding.apply(n_exact),
        n_exact,
        formula: formula_name(inp),
        terms,
    })
}

/// Smallest standardized effect detectable with `n` clusters; `inp.delta`
/// is ignored.
pub fn detectable_effect_size(inp: &SampleSizeInputs, n: u64) -> Result<f64> {
    inp.check_common()?;
    if n == 0 {
        return Err(Error::InvalidParameter("number of clusters must be at least 1".into()));
    }
    let mut probe = *inp;
    probe.delta = 1.0;
    let (k, _) = numerator(&probe);
    Ok((k / n as f64).sqrt())
}

/// Conservative common cluster size for unequal sizes: the minimum.
pub fn conservative_cluster_size(sizes: &[u32]) -> Result<u32> {
    match sizes.iter().copied().min() {
        Some(0) | None => Err(Error::InvalidParameter("cluster sizes must be positive".into())),
        Some(m) => Ok(m),
    }
}

fn check_cor2(cor2: f64) -> Result<()> {
    if (0.0..1.0).contains(&cor2) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("cor2 {cor2} outside [0, 1)")))
    }
}

/// Conditional ICC `ρ* = (ρ − Cor²) / (1 − Cor²)`.
pub fn rho_conditional(rho: f64, cor2: f64) -> Result<f64> {
    check_cor2(cor2)?;
    Ok((rho - cor2) / (1.0 - cor2))
}

/// Inverse of [`rho_conditional`]: `ρ = ρ*(1 − Cor²) + Cor²`.
pub fn rho_unconditional(rho_star: f64, cor2: f64) -> Result<f64> {
    check_cor2(cor2)?;
    Ok(rho_star * (1.0 - cor2) + cor2)
}

/// Bound on `Var(√N μ̂)` for one regimen:
/// `2(2 − p) σ² [1 + (m−1)ρ] / m` when its non-responders are re-randomized,
/// `2 σ² [1 + (m−1)ρ] / m` otherwise.
pub fn tau2_bound(sigma2: f64, rho: f64, m: u32, p_response: f64, rerandomized: bool) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 {sigma2} must be positive")));
    }
    if m == 0 {
        return Err(Error::InvalidParameter("cluster size m must be at least 1".into()));
    }
    if m > 1 && !(rho > -1.0 / (f64::from(m) - 1.0) && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho {rho} outside the valid ICC range")));
    }
    if !(0.0..=1.0).contains(&p_response) {
        return Err(Error::InvalidParameter(format!("response probability {p_response} outside [0, 1]")));
    }
    let factor = if rerandomized { 2.0 * (2.0 - p_response) } else { 2.0 };
    Ok(factor * sigma2 * vif(m, rho) / f64::from(m))
}

/// `N = (z_β + z_{α/2})² (τ²_a + τ²_b) / (δ² σ²)`.
pub fn required_clusters_from_tau(
    tau2_a: f64,
    tau2_b: f64,
    delta: f64,
    sigma2_pooled: f64,
    alpha: f64,
    power: f64,
    rounding: Rounding,
) -> Result<u64> {
    if !(tau2_a > 0.0 && tau2_b > 0.0 && sigma2_pooled > 0.0) {
        return Err(Error::InvalidParameter("variances must be positive".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("effect size {delta} must be positive")));
    }
    if !(alpha > 0.0 && alpha < 1.0 && power > 0.0 && power < 1.0) {
        return Err(Error::InvalidParameter("alpha and power must lie in (0, 1)".into()));
    }
    let z = z_sum(alpha, power);
    Ok(rounding.apply(z * z * (tau2_a + tau2_b) / (delta * delta * sigma2_pooled)))
}

/// Responder / non-responder moments of one regimen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMoments {
    pub mu_r: f64,
    pub mu_nr: f64,
    pub var_r: f64,
    pub var_nr: f64,
    pub icc_r: f64,
    pub icc_nr: f64,
    pub p_response: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Assumption2Check {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Scalar form of the conditional covariance inequality:
///
/// ```text
/// |(σ²_R ρ_R − σ²_NR ρ_NR) p + (μ_R − μ_NR)² p(1−2p)|
///     ≤ (σ²_R − σ²_NR) p + (μ_R − μ_NR)² p(1−2p)
/// ```
pub fn check_assumption2(cells: &CellMoments) -> Assumption2Check {
    let p = cells.p_response;
    let d2 = (cells.mu_r - cells.mu_nr).powi(2);
    let mean_part = d2 * p * (1.0 - 2.0 * p);
    let lhs = ((cells.var_r * cells.icc_r - cells.var_nr * cells.icc_nr) * p + mean_part).abs();
    let rhs = (cells.var_r - cells.var_nr) * p + mean_part;
    let tol = 1e-12 * (lhs.abs() + rhs.abs()).max(1.0);
    Assumption2Check {
        lhs,
        rhs,
        holds: lhs <= rhs + tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn adept(m: u32, delta: f64, rho: f64) -> SampleSizeInputs {
        SampleSizeInputs::new(DesignKind::Adept, m, delta, rho, 0.2)
    }

    #[test]
    fn adept_table_without_covariate() {
        let rows = [
            (0.01, 0.2, 5, 306),
            (0.01, 0.2, 20, 88),
            (0.01, 0.5, 5, 49),
            (0.01, 0.5, 10, 26),
            (0.1, 0.2, 5, 412),
            (0.1, 0.2, 20, 213),
            (0.1, 0.5, 5, 66),
            (0.1, 0.5, 20, 34),
        ];
        for (rho, delta, m, n) in rows {
            assert_eq!(required_clusters(&adept(m, delta, rho)).unwrap().n, n, "rho={rho} delta={delta} m={m}");
        }
    }

    #[test]
    fn ceiling_mode_breaks_two_rows() {
        let mut inp = adept(20, 0.2, 0.1);
        inp.rounding = Rounding::Ceiling;
        assert_eq!(required_clusters(&inp).unwrap().n, 214);
        let mut inp = adept(20, 0.5, 0.1);
        inp.rounding = Rounding::Ceiling;
        assert_eq!(required_clusters(&inp).unwrap().n, 35);
    }

    #[test]
    fn adept_with_covariate() {
        let mut inp = adept(5, 0.5, 0.01);
        inp.cor2_yx = Some(0.043);
        assert_eq!(required_clusters(&inp).unwrap().n, 47);
        let mut inp = adept(10, 0.5, 0.01);
        inp.cor2_yx = Some(0.066);
        let res = required_clusters(&inp).unwrap();
        assert_eq!(res.n, 24);
        assert_eq!(res.formula, "adept-covariate");
        assert!((res.terms.cov_reduction - 0.934).abs() < 1e-12);
    }

    #[test]
    fn prototypical_without_rerandomization_is_two_arm_rct() {
        let mut inp = SampleSizeInputs::new(DesignKind::Prototypical, 8, 0.3, 0.0, 1.0);
        inp.p_neg1 = 1.0;
        let z = normal::quantile(0.975) + normal::quantile(0.9);
        let expected = (4.0 * z * z / (8.0 * 0.09)).round() as u64;
        assert_eq!(required_clusters(&inp).unwrap().n, expected);
    }

    #[test]
    fn mde_for_adept_trial() {
        let mut inp = adept(10, 1.0, 0.01);
        inp.power = 0.8;
        let d = detectable_effect_size(&inp, 60).unwrap();
        assert!((d - 0.2826).abs() < 5e-5, "{d}");
    }

    #[test]
    fn input_errors() {
        assert!(required_clusters(&adept(5, 0.0, 0.01)).is_err());
        assert!(required_clusters(&adept(0, 0.2, 0.01)).is_err());
        let mut inp = adept(5, 0.2, 0.01);
        inp.cor2_yx = Some(1.0);
        assert!(required_clusters(&inp).is_err());
        inp.cor2_yx = Some(1.2);
        assert!(required_clusters(&inp).is_err());
        assert!(detectable_effect_size(&adept(5, 0.2, 0.01), 0).is_err());
        assert!(rho_conditional(0.3, 1.0).is_err());
    }

    #[test]
    fn conditional_icc() {
        assert_eq!(rho_conditional(0.2, 0.0).unwrap(), 0.2);
        let r = rho_conditional(0.2456, 0.238).unwrap();
        assert!((r - 0.010).abs() < 0.001, "{r}");
        for &(rho, c) in &[(0.3, 0.1), (0.01, 0.005), (0.9, 0.5)] {
            let back = rho_unconditional(rho_conditional(rho, c).unwrap(), c).unwrap();
            assert!((back - rho).abs() < 1e-12);
        }
    }

    #[test]
    fn tau_bounds() {
        let a = tau2_bound(10.0, 0.05, 7, 1.0, true).unwrap();
        let b = tau2_bound(10.0, 0.05, 7, 1.0, false).unwrap();
        assert!((a - b).abs() < 1e-12);
        let t = tau2_bound(64.0, 0.01, 5, 0.2, true).unwrap();
        assert!((t - 2.0 * 1.8 * 64.0 * 1.04 / 5.0).abs() < 1e-12);
        assert!((t - 47.923).abs() < 1e-3);
        let t1 = tau2_bound(3.0, 0.0, 1, 0.3, true).unwrap();
        assert!((t1 - 2.0 * 1.7 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn tau_route_reproduces_closed_form() {
        for &(m, delta, rho) in &[(5, 0.2, 0.01), (20, 0.5, 0.1), (10, 0.3, 0.05)] {
            let sigma2 = 64.0;
            let inp = adept(m, delta, rho);
            let ta = tau2_bound(sigma2, rho, m, inp.p1, true).unwrap();
            let tb = tau2_bound(sigma2, rho, m, 0.3, false).unwrap();
            let via_tau = required_clusters_from_tau(ta, tb, delta, sigma2, 0.05, 0.9, Rounding::Nearest).unwrap();
            assert_eq!(via_tau, required_clusters(&inp).unwrap().n);
        }
        // symmetric non-rerandomized bounds give the two-arm cluster RCT
        let t = tau2_bound(4.0, 0.02, 6, 0.0, false).unwrap();
        let rct = required_clusters_from_tau(t, t, 0.25, 4.0, 0.05, 0.9, Rounding::Nearest).unwrap();
        let z = normal::quantile(0.975) + normal::quantile(0.9);
        assert_eq!(rct, (4.0 * z * z * vif(6, 0.02) / (6.0 * 0.0625)).round() as u64);
    }

    #[test]
    fn asymmetric_tau_lies_between_symmetric_extremes() {
        let (rho, m, p) = (0.05, 10, 0.3);
        let lo = tau2_bound(64.0, rho, m, p, true).unwrap();
        let hi = tau2_bound(96.0, rho, m, p, true).unwrap();
        let n = |a, b| required_clusters_from_tau(a, b, 0.3, 80.0, 0.05, 0.9, Rounding::Nearest).unwrap();
        let mixed = n(lo, hi);
        assert!(n(lo, lo) <= mixed && mixed <= n(hi, hi));
        assert!(n(lo, lo) < n(hi, hi));
    }

    #[test]
    fn assumption2_examples() {
        let sym = check_assumption2(&CellMoments {
            mu_r: 10.0,
            mu_nr: 8.0,
            var_r: 5.0,
            var_nr: 5.0,
            icc_r: 0.1,
            icc_nr: 0.1,
            p_response: 0.2,
        });
        assert!(sym.holds);
        assert!((sym.lhs - sym.rhs).abs() < 1e-12);

        let noisy_nr = check_assumption2(&CellMoments {
            mu_r: 10.0,
            mu_nr: 10.0,
            var_r: 5.0,
            var_nr: 50.0,
            icc_r: 0.1,
            icc_nr: 0.1,
            p_response: 0.2,
        });
        assert!(!noisy_nr.holds);

        let table_row = check_assumption2(&CellMoments {
            mu_r: 34.71,
            mu_nr: 32.71,
            var_r: 63.36,
            var_nr: 63.36,
            icc_r: 0.0,
            icc_nr: 0.0,
            p_response: 0.2,
        });
        assert!(table_row.holds);
        assert!((table_row.lhs - 0.48).abs() < 1e-9);
    }

    #[test]
    fn conservative_size_is_minimum() {
        assert_eq!(conservative_cluster_size(&[12, 7, 25]).unwrap(), 7);
        assert!(conservative_cluster_size(&[]).is_err());
        assert!(conservative_cluster_size(&[3, 0]).is_err());
    }
}
