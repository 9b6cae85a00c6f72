use serde::Serialize;

use crate::design::{CellKey, EmbeddedDtr};
use crate::error::{Error, Result};
use crate::normal;
use crate::power::CellMoments;

use super::Scenario;

/// `f_k(x)`: identity on `[-k, k]`, constant outside.
pub fn clip_fk(x: f64, k: f64) -> f64 {
    x.clamp(-k, k)
}

/// `Var(f_k(X))` for standard normal `X`:
/// `(2Φ(k) − 1) − 2kφ(k) + 2k²(1 − Φ(k))`.
pub fn var_clipped_normal(k: f64) -> f64 {
    if k.is_infinite() {
        return 1.0;
    }
    let tail = normal::upper_tail(k);
    (1.0 - 2.0 * tail) - 2.0 * k * normal::pdf(k) + 2.0 * k * k * tail
}

/// `Cov(X, f_k(X)) = 2Φ(k) − 1` for standard normal `X`.
pub fn cov_x_clipped(k: f64) -> f64 {
    if k.is_infinite() {
        return 1.0;
    }
    1.0 - 2.0 * normal::upper_tail(k)
}

/// Outcome moments under one regimen, marginal over responder status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginalMoments {
    pub mean: f64,
    pub variance: f64,
    pub icc: f64,
}

impl MarginalMoments {
    pub fn covariance(&self) -> f64 {
        self.icc * self.variance
    }
}

/// Responder and non-responder cell parameters feeding regimen `dtr`.
pub fn cell_moments(scenario: &Scenario, dtr: &EmbeddedDtr) -> Result<CellMoments> {
    if dtr.a2().is_some() != scenario.design.rerandomizes(dtr.a1(), 0) {
        return Err(Error::InvalidParameter(format!(
            "DTR {dtr} is not embedded in the {} design",
            scenario.design
        )));
    }
    let resp = scenario.cell(CellKey {
        a1: dtr.a1(),
        r: 1,
        a2: None,
    })?;
    let nonresp = scenario.cell(CellKey {
        a1: dtr.a1(),
        r: 0,
        a2: dtr.a2(),
    })?;
    Ok(CellMoments {
        mu_r: resp.mu,
        mu_nr: nonresp.mu,
        var_r: resp.var,
        var_nr: nonresp.var,
        icc_r: resp.icc,
        icc_nr: nonresp.icc,
        p_response: scenario.p_response(dtr.a1()),
    })
}

/// Mixes responder and non-responder cells by total expectation/variance.
pub fn mix(cells: &CellMoments) -> MarginalMoments {
    let p = cells.p_response;
    let spread = p * (1.0 - p) * (cells.mu_r - cells.mu_nr).powi(2);
    let mean = cells.mu_r * p + cells.mu_nr * (1.0 - p);
    let variance = cells.var_r * p + cells.var_nr * (1.0 - p) + spread;
    let cov = cells.var_r * cells.icc_r * p + cells.var_nr * cells.icc_nr * (1.0 - p) + spread;
    MarginalMoments {
        mean,
        variance,
        icc: cov / variance,
    }
}

/// Regimen-level moments; conditional on `X` for covariate scenarios.
pub fn mixture_moments(scenario: &Scenario, dtr: &EmbeddedDtr) -> Result<MarginalMoments> {
    Ok(mix(&cell_moments(scenario, dtr)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Unconditional {
    pub moments: MarginalMoments,
    /// `η² var_x / (σ²* + η² var_x)`.
    pub cor2: f64,
}

/// Adds the covariate's contribution `η² var_x` to both the variance and
/// the within-cluster covariance.
pub fn unconditional_moments(cond: &MarginalMoments, eta: f64, var_x: f64) -> Result<Unconditional> {
    if !(var_x >= 0.0) {
        return Err(Error::InvalidParameter(format!("var_x {var_x} must be non-negative")));
    }
    let add = eta * eta * var_x;
    let variance = cond.variance + add;
    Ok(Unconditional {
        moments: MarginalMoments {
            mean: cond.mean,
            variance,
            icc: (cond.covariance() + add) / variance,
        },
        cor2: add / variance,
    })
}

/// Variance of the covariate term `f(X)` entering the mean.
pub fn covariate_term_variance(scenario: &Scenario) -> f64 {
    match (scenario.covariate, scenario.k) {
        (false, _) => 0.0,
        (true, None) => 1.0,
        (true, Some(k)) => var_clipped_normal(k),
    }
}

/// `Cor²(Y, X)` against the raw covariate, which is what the analysis
/// model sees. Equal to the `cor2` of [`unconditional_moments`] in the
/// linear case.
pub fn implied_cor2_raw(cond: &MarginalMoments, scenario: &Scenario) -> f64 {
    if !scenario.covariate {
        return 0.0;
    }
    let c = scenario.k.map_or(1.0, cov_x_clipped);
    let total = cond.variance + scenario.eta.powi(2) * covariate_term_variance(scenario);
    (scenario.eta * c).powi(2) / total
}

/// Unconditional regimen moments, whether or not the scenario has a covariate.
pub fn marginal_moments(scenario: &Scenario, dtr: &EmbeddedDtr) -> Result<MarginalMoments> {
    let cond = mixture_moments(scenario, dtr)?;
    if !scenario.covariate {
        return Ok(cond);
    }
    Ok(unconditional_moments(&cond, scenario.eta, covariate_term_variance(scenario))?.moments)
}

/// Standardized difference `(μ_a − μ_b) / sqrt((σ²_a + σ²_b)/2)` using
/// unconditional variances.
pub fn effect_size(scenario: &Scenario, a: &EmbeddedDtr, b: &EmbeddedDtr) -> Result<f64> {
    let ma = marginal_moments(scenario, a)?;
    let mb = marginal_moments(scenario, b)?;
    Ok((ma.mean - mb.mean) / ((ma.variance + mb.variance) / 2.0).sqrt())
}
