#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use smart_cluster::estimator::{ClusterResiduals, DtrCovariance};
use smart_cluster::{ClusterRecord, DesignKind, IndividualRecord, TrialDataset, TreatmentPath};

/// Random dataset with every design cell covered by at least one cluster.
/// Cluster sizes vary in `1..=max_m`; about half the datasets use unequal
/// randomization probabilities.
pub fn random_dataset(design: DesignKind, n: usize, max_m: usize, p: usize, seed: u64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = design.cells();
    let unequal = rng.random_bool(0.5);
    let clusters = (0..n)
        .map(|i| {
            let key = if i < cells.len() {
                cells[i].key
            } else {
                cells[rng.random_range(0..cells.len())].key
            };
            let mut path = TreatmentPath::new(design, key.a1, key.r, key.a2).unwrap();
            if unequal {
                let s1 = rng.random_range(0.2..0.8);
                let s2 = key.a2.map(|_| rng.random_range(0.2..0.8));
                path = path.with_probabilities(s1, s2).unwrap();
            }
            let m = rng.random_range(1..=max_m);
            let u: f64 = rng.sample(StandardNormal);
            let shift = f64::from(key.a1) + 0.5 * f64::from(key.a2.unwrap_or(0)) + f64::from(key.r);
            let individuals = (0..m)
                .map(|_| {
                    let x: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
                    let e: f64 = rng.sample(StandardNormal);
                    let y = 10.0 + shift + x.iter().sum::<f64>() * 0.7 + 1.5 * u + e;
                    IndividualRecord { y, x }
                })
                .collect();
            ClusterRecord {
                id: format!("k{i}"),
                path,
                individuals,
            }
        })
        .collect();
    TrialDataset::with_p(design, clusters, p).unwrap()
}

/// `(a1, a2)` lists written out by hand, independent of the library.
pub fn regimens(design: DesignKind) -> Vec<(i8, Option<i8>)> {
    match design {
        DesignKind::Adept => vec![(1, Some(1)), (1, Some(-1)), (-1, None)],
        DesignKind::Prototypical => vec![(1, Some(1)), (1, Some(-1)), (-1, Some(1)), (-1, Some(-1))],
    }
}

pub fn oracle_row(design: DesignKind, a1: i8, a2: Option<i8>, x: &[f64]) -> Vec<f64> {
    let a1f = f64::from(a1);
    let a2f = f64::from(a2.unwrap_or(0));
    let mut row = match design {
        DesignKind::Adept => vec![1.0, a1f, if a1 == 1 { a2f } else { 0.0 }],
        DesignKind::Prototypical => vec![1.0, a1f, a2f, a1f * a2f],
    };
    row.extend_from_slice(x);
    row
}

pub fn oracle_consistent(c: &ClusterRecord, a1: i8, a2: Option<i8>) -> bool {
    c.path.a1() == a1 && (c.path.r() == 1 || c.path.a2() == a2)
}

pub fn oracle_weight(c: &ClusterRecord) -> f64 {
    1.0 / (c.path.rand_prob_stage1() * c.path.rand_prob_stage2().unwrap_or(1.0))
}

/// Generalized least squares over the explicitly stacked replicated rows,
/// minimizing `Σ W (y − Xθ)ᵀ V⁻¹ (y − Xθ)`. Each materialized `V` is
/// factored by a generic Cholesky, the block is whitened by `√W L⁻¹`, and
/// the stacked least-squares problem is solved by QR. This never forms the
/// normal equations, so it stays accurate when a working ICC sits at the
/// clamp and `V` is nearly singular.
pub fn brute_force_theta(ds: &TrialDataset, covs: &[DtrCovariance]) -> Vec<f64> {
    let design = ds.design();
    let regs = regimens(design);
    let k = regs.len() + ds.p();
    let mut blocks: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    for c in ds.clusters() {
        for (idx, &(a1, a2)) in regs.iter().enumerate() {
            if !oracle_consistent(c, a1, a2) {
                continue;
            }
            let m = c.size();
            let rows: Vec<Vec<f64>> = c.individuals.iter().map(|ind| oracle_row(design, a1, a2, &ind.x)).collect();
            let x = DMatrix::from_fn(m, k, |i, j| rows[i][j]);
            let y = DVector::from_iterator(m, c.individuals.iter().map(|ind| ind.y));
            let cv = covs[idx];
            let v = DMatrix::from_fn(m, m, |i, j| if i == j { cv.sigma2 } else { cv.sigma2 * cv.rho });
            let l = v.cholesky().expect("positive definite working covariance").l();
            let sw = oracle_weight(c).sqrt();
            let xw = l.solve_lower_triangular(&x).expect("nonsingular factor") * sw;
            let yw = l.solve_lower_triangular(&y).expect("nonsingular factor") * sw;
            blocks.push((xw, yw));
        }
    }
    let total: usize = blocks.iter().map(|b| b.0.nrows()).sum();
    let mut x_all = DMatrix::zeros(total, k);
    let mut y_all = DVector::zeros(total);
    let mut at = 0;
    for (x, y) in &blocks {
        let m = x.nrows();
        x_all.view_mut((at, 0), (m, k)).copy_from(x);
        y_all.rows_mut(at, m).copy_from(y);
        at += m;
    }
    let qr = x_all.qr();
    let qty = qr.q().transpose() * y_all;
    qr.r().solve_upper_triangular(&qty).expect("full column rank").iter().copied().collect()
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0_f64, |s, v| s.max(v.abs()));
    a.iter().zip(b).fold(0.0_f64, |s, (x, y)| s.max((x - y).abs())) / scale
}

/// Smallest eigenvalue relative to the largest absolute one.
pub fn min_rel_eigen(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |s, v| s.min(*v));
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

pub fn is_symmetric(m: &DMatrix<f64>) -> bool {
    m == &m.transpose()
}

/// Cluster bootstrap standard deviation of the contrast `c'θ̂`: clusters
/// are resampled with replacement and renamed so duplicates stay distinct.
pub fn bootstrap_se(ds: &TrialDataset, c: &[f64], reps: usize, seed: u64) -> f64 {
    use smart_cluster::{fit, FitOptions, MarginalMeanSpec};
    let spec = MarginalMeanSpec::for_dataset(ds);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ds.n_clusters();
    let mut est = Vec::with_capacity(reps);
    while est.len() < reps {
        let clusters: Vec<ClusterRecord> = (0..n)
            .map(|i| {
                let mut cl = ds.clusters()[rng.random_range(0..n)].clone();
                cl.id = format!("b{i}");
                cl
            })
            .collect();
        let Ok(b) = TrialDataset::with_p(ds.design(), clusters, ds.p()) else { continue };
        // a resample missing a cell cannot identify every coefficient
        let Ok(f) = fit(&b, &spec, &FitOptions::default()) else { continue };
        est.push(f.theta.iter().zip(c).map(|(t, w)| t * w).sum::<f64>());
    }
    let mean = est.iter().sum::<f64>() / reps as f64;
    (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt()
}

/// Σ over clusters of W·I·Σ_j e_j², W·I·m, W·I·Σ_{j≠k} e_j e_k, W·I·m(m−1),
/// written as literal loops.
pub fn working_cov_oracle(res: &[ClusterResiduals], k: usize) -> (f64, f64) {
    let (mut num_s, mut den_s, mut num_r, mut den_r) = (0.0, 0.0, 0.0, 0.0);
    for c in res {
        let Some(e) = &c.by_dtr[k] else { continue };
        for j in 0..e.len() {
            num_s += c.weight * e[j] * e[j];
            den_s += c.weight;
            for l in 0..e.len() {
                if l != j {
                    num_r += c.weight * e[j] * e[l];
                    den_r += c.weight;
                }
            }
        }
    }
    let sigma2 = num_s / den_s;
    (sigma2, num_r / (sigma2 * den_r))
}
