use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{fit, wald_test, FitOptions, MarginalMeanSpec};

use super::generate::generate_with_rng;
use super::Scenario;

/// Seed of replication `index`, a splitmix64 step away from `master`.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerEstimate {
    /// Rejection fraction among replications that fitted.
    pub power: f64,
    pub mc_se: f64,
    pub rejections: usize,
    /// Replications whose fit or test failed; excluded from `power`.
    pub failures: usize,
    pub reps: usize,
    /// First few failure messages, for diagnosis.
    pub failure_examples: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    pub n: usize,
    pub m: usize,
    pub reps: usize,
    pub alpha: f64,
    pub master_seed: u64,
}

/// Monte Carlo power of the Wald test of `contrast` under `scenario`.
///
/// Each replication draws its own seed from `master_seed`, so the result
/// does not depend on thread count or scheduling.
pub fn mc_power(scenario: &Scenario, contrast: &[f64], config: &McConfig, options: &FitOptions) -> Result<PowerEstimate> {
    scenario.validate()?;
    if config.reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    if config.n == 0 || config.m == 0 {
        return Err(Error::InvalidParameter("N and m must be at least 1".into()));
    }
    let spec = MarginalMeanSpec::new(scenario.design, usize::from(scenario.covariate));
    if contrast.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: contrast.len(),
        });
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {} outside (0, 1)", config.alpha)));
    }

    let outcomes: Vec<std::result::Result<bool, String>> = (0..config.reps as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(replication_seed(config.master_seed, i));
            let ds = generate_with_rng(scenario, config.n, config.m, None, &mut rng).map_err(|e| e.to_string())?;
            let f = fit(&ds, &spec, options).map_err(|e| e.to_string())?;
            let t = wald_test(&f, contrast, config.alpha).map_err(|e| e.to_string())?;
            Ok(t.reject)
        })
        .collect();

    let rejections = outcomes.iter().filter(|o| matches!(o, Ok(true))).count();
    let failed: Vec<&String> = outcomes.iter().filter_map(|o| o.as_ref().err()).collect();
    let ok = config.reps - failed.len();
    let power = if ok == 0 { f64::NAN } else { rejections as f64 / ok as f64 };
    let mc_se = if ok == 0 { f64::NAN } else { (power * (1.0 - power) / ok as f64).sqrt() };
    Ok(PowerEstimate {
        power,
        mc_se,
        rejections,
        failures: failed.len(),
        reps: config.reps,
        failure_examples: failed.into_iter().take(5).cloned().collect(),
    })
}
