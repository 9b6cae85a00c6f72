use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{ClusterRecord, IndividualRecord, TrialDataset};
use crate::design::{CellKey, EmbeddedDtr, TreatmentPath};
use crate::error::{Error, Result};

use super::moments::clip_fk;
use super::Scenario;

/// Simulates `n` clusters of size `m` from the scenario's generative model.
pub fn generate_trial(scenario: &Scenario, n: usize, m: usize, seed: u64) -> Result<TrialDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with_rng(scenario, n, m, None, &mut rng)
}

/// Like [`generate_trial`] but every cluster follows `dtr`: the first-stage
/// and second-stage treatments are fixed while response stays random.
pub fn generate_forced(scenario: &Scenario, dtr: &EmbeddedDtr, n: usize, m: usize, seed: u64) -> Result<TrialDataset> {
    if dtr.a2().is_some() != scenario.design.rerandomizes(dtr.a1(), 0) {
        return Err(Error::InvalidParameter(format!(
            "DTR {dtr} is not embedded in the {} design",
            scenario.design
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_with_rng(scenario, n, m, Some(dtr), &mut rng)
}

pub fn generate_with_rng<R: Rng + ?Sized>(
    scenario: &Scenario,
    n: usize,
    m: usize,
    forced: Option<&EmbeddedDtr>,
    rng: &mut R,
) -> Result<TrialDataset> {
    scenario.validate()?;
    if m == 0 {
        return Err(Error::InvalidParameter("cluster size m must be at least 1".into()));
    }
    let design = scenario.design;
    let p = usize::from(scenario.covariate);
    let mut clusters = Vec::with_capacity(n);
    for i in 0..n {
        let a1: i8 = match forced {
            Some(d) => d.a1(),
            None if rng.random_bool(0.5) => 1,
            None => -1,
        };
        let r = u8::from(rng.random_bool(scenario.p_response(a1)));
        let a2 = if design.rerandomizes(a1, r) {
            match forced {
                Some(d) => d.a2(),
                None => Some(if rng.random_bool(0.5) { 1 } else { -1 }),
            }
        } else {
            None
        };
        let path = TreatmentPath::new(design, a1, r, a2)?;
        let cell = scenario.cell(CellKey { a1, r, a2 })?;

        let (x, shift) = if scenario.covariate {
            let x: f64 = rng.sample(StandardNormal);
            let fx = scenario.k.map_or(x, |k| clip_fk(x, k));
            (vec![x], scenario.eta * fx)
        } else {
            (Vec::new(), 0.0)
        };

        let sd = cell.var.sqrt();
        let (w_cluster, w_ind) = (cell.icc.sqrt(), (1.0 - cell.icc).sqrt());
        let z_cluster: f64 = rng.sample(StandardNormal);
        let individuals = (0..m)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                IndividualRecord {
                    y: cell.mu + shift + sd * (w_cluster * z_cluster + w_ind * z),
                    x: x.clone(),
                }
            })
            .collect();
        clusters.push(ClusterRecord {
            id: format!("c{}", i + 1),
            path,
            individuals,
        });
    }
    let ds = TrialDataset::with_p(design, clusters, p)?;
    if scenario.covariate {
        ds.with_cluster_level_covariates(&[0])
    } else {
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::validate;
    use crate::design::DesignKind;
    use crate::sim::preset;

    #[test]
    fn same_seed_same_data() {
        let s = preset("table4-row1-k1").unwrap().scenario;
        let a = generate_trial(&s, 30, 4, 11).unwrap();
        let b = generate_trial(&s, 30, 4, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_trial(&s, 30, 4, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn path_frequencies() {
        let s = preset("table3-row1").unwrap().scenario;
        let ds = generate_trial(&s, 20_000, 1, 3).unwrap();
        let pos: Vec<_> = ds.clusters().iter().filter(|c| c.path.a1() == 1).collect();
        let frac = pos.len() as f64 / 20_000.0;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
        let resp = pos.iter().filter(|c| c.path.r() == 1).count() as f64 / pos.len() as f64;
        assert!((resp - 0.2).abs() < 0.01, "{resp}");
        let nr: Vec<_> = pos.iter().filter(|c| c.path.r() == 0).collect();
        let a2 = nr.iter().filter(|c| c.path.a2() == Some(1)).count() as f64 / nr.len() as f64;
        assert!((a2 - 0.5).abs() < 0.015, "{a2}");
    }

    #[test]
    fn output_validates_cleanly() {
        for name in ["table3-row4", "table4-row3", "table4-row2-k2"] {
            let p = preset(name).unwrap();
            let ds = generate_trial(&p.scenario, p.n as usize, p.m as usize, 5).unwrap();
            assert_eq!(ds.n_clusters(), p.n as usize);
            assert!(ds.clusters().iter().all(|c| c.size() == p.m as usize));
            let report = validate(&ds);
            assert_eq!(report.n_clusters, p.n as usize);
        }
    }

    #[test]
    fn analysis_covariate_is_raw() {
        let s = preset("table4-row1-k1").unwrap().scenario;
        let ds = generate_trial(&s, 400, 2, 9).unwrap();
        assert_eq!(ds.p(), 1);
        assert!(ds.clusters().iter().any(|c| c.individuals[0].x[0].abs() > 1.0));
    }

    #[test]
    fn forced_assignment() {
        let s = preset("table3-row1").unwrap().scenario;
        let d = EmbeddedDtr::new(DesignKind::Adept, 1, Some(-1)).unwrap();
        let ds = generate_forced(&s, &d, 200, 3, 1).unwrap();
        for c in ds.clusters() {
            assert_eq!(c.path.a1(), 1);
            if c.path.r() == 0 {
                assert_eq!(c.path.a2(), Some(-1));
            }
        }
        let bad = EmbeddedDtr::new(DesignKind::Prototypical, -1, Some(1)).unwrap();
        assert!(generate_forced(&s, &bad, 10, 3, 1).is_err());
        assert!(generate_trial(&s, 10, 0, 1).is_err());
    }
}
