//! Weighted-and-replicated estimating equations for embedded regimen means.
//!
//! Each cluster enters the equations once per regimen it is consistent
//! with, carrying its known inverse-probability weight and that regimen's
//! design rows. Because the marginal mean is linear in the parameters, the
//! root is the solution of a weighted generalized least-squares system and
//! is computed directly. The working covariance is exchangeable per regimen
//! and is re-estimated from residuals a fixed number of times.

mod contrast;
mod report;
mod sandwich;
mod working;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::TrialDataset;
use crate::design::{consistent_dtrs, embedded_dtrs, known_weight, DesignKind, EmbeddedDtr};
use crate::error::{Error, Result};

pub use contrast::{dtr_means, parse_contrast, wald_test, ContrastResult, DtrMean};
pub use report::{ContrastReport, FitReport, SCHEMA};
pub use sandwich::sandwich_covariance;
pub use working::{estimate_working_cov, residuals, ClusterResiduals, WorkingEstimate};

/// Marginal mean model for a design with `p` covariates.
///
/// ADEPT rows are `(1, a1, a2·1{a1=1}, x)`, prototypical rows are
/// `(1, a1, a2, a1·a2, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarginalMeanSpec {
    pub design: DesignKind,
    pub p: usize,
}

impl MarginalMeanSpec {
    pub fn new(design: DesignKind, p: usize) -> Self {
        MarginalMeanSpec { design, p }
    }

    pub fn for_dataset(dataset: &TrialDataset) -> Self {
        MarginalMeanSpec::new(dataset.design(), dataset.p())
    }

    /// Number of regimen coefficients.
    pub fn q(&self) -> usize {
        self.design.n_dtrs()
    }

    /// Total parameter count `q + p`.
    pub fn dim(&self) -> usize {
        self.q() + self.p
    }

    fn treatment_part(&self, dtr: &EmbeddedDtr, out: &mut [f64]) {
        let a1 = f64::from(dtr.a1());
        let a2 = f64::from(dtr.a2().unwrap_or(0));
        match self.design {
            DesignKind::Adept => {
                out[0] = 1.0;
                out[1] = a1;
                out[2] = if dtr.a1() == 1 { a2 } else { 0.0 };
            }
            DesignKind::Prototypical => {
                out[0] = 1.0;
                out[1] = a1;
                out[2] = a2;
                out[3] = a1 * a2;
            }
        }
    }

    /// Regressor row for `dtr` at covariate vector `x`.
    pub fn regressor_row(&self, dtr: &EmbeddedDtr, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                found: x.len(),
            });
        }
        let q = self.q();
        let mut row = vec![0.0; q + self.p];
        self.treatment_part(dtr, &mut row[..q]);
        row[q..].copy_from_slice(x);
        Ok(row)
    }

    /// `m × (q+p)` design matrix of a cluster's individuals under `dtr`.
    fn design_matrix(&self, dtr: &EmbeddedDtr, xs: &[&[f64]]) -> DMatrix<f64> {
        let q = self.q();
        let mut t = vec![0.0; q];
        self.treatment_part(dtr, &mut t);
        DMatrix::from_fn(xs.len(), self.dim(), |i, j| if j < q { t[j] } else { xs[i][j - q] })
    }
}

/// Free-function form of [`MarginalMeanSpec::regressor_row`].
pub fn regressor_row(dtr: &EmbeddedDtr, x: &[f64], spec: &MarginalMeanSpec) -> Result<Vec<f64>> {
    spec.regressor_row(dtr, x)
}

/// Exchangeable working covariance `σ² Exch(ρ)` for one regimen.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DtrCovariance {
    pub sigma2: f64,
    pub rho: f64,
}

impl DtrCovariance {
    pub const IDENTITY: DtrCovariance = DtrCovariance { sigma2: 1.0, rho: 0.0 };

    /// Applies `V⁻¹` to every column of `m` using
    /// `Exch(ρ)⁻¹ = (I − ρ/(1+(n−1)ρ) J) / (1−ρ)`.
    fn apply_inverse(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = m.nrows() as f64;
        let scale = 1.0 / (self.sigma2 * (1.0 - self.rho));
        let shrink = self.rho / (1.0 + (n - 1.0) * self.rho);
        let mut out = m.clone();
        for mut col in out.column_iter_mut() {
            let s = col.sum();
            col.add_scalar_mut(-shrink * s);
            col *= scale;
        }
        out
    }
}

/// Per-regimen working covariance parameters, in embedded-regimen order.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingCovariance {
    entries: Vec<(EmbeddedDtr, DtrCovariance)>,
    shared: bool,
}

impl WorkingCovariance {
    /// `V = I` for every regimen.
    pub fn identity(design: DesignKind) -> Self {
        Self::uniform(design, DtrCovariance::IDENTITY)
    }

    /// The same `σ² Exch(ρ)` for every regimen.
    pub fn uniform(design: DesignKind, cov: DtrCovariance) -> Self {
        WorkingCovariance {
            entries: embedded_dtrs(design).into_iter().map(|d| (d, cov)).collect(),
            shared: true,
        }
    }

    /// Separate parameters per regimen, given in embedded order.
    pub fn per_dtr(design: DesignKind, covs: &[DtrCovariance]) -> Result<Self> {
        let dtrs = embedded_dtrs(design);
        if covs.len() != dtrs.len() {
            return Err(Error::DimensionMismatch {
                expected: dtrs.len(),
                found: covs.len(),
            });
        }
        Ok(WorkingCovariance {
            entries: dtrs.into_iter().zip(covs.iter().copied()).collect(),
            shared: false,
        })
    }

    pub fn entries(&self) -> &[(EmbeddedDtr, DtrCovariance)] {
        &self.entries
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn get(&self, index: usize) -> DtrCovariance {
        self.entries[index].1
    }
}

/// One cluster's contribution: its weight, outcomes, and a design matrix
/// for each consistent regimen (by embedded index).
pub(crate) struct PreparedCluster {
    pub weight: f64,
    pub y: DVector<f64>,
    pub members: Vec<(usize, DMatrix<f64>)>,
}

pub(crate) struct Prepared {
    pub spec: MarginalMeanSpec,
    pub clusters: Vec<PreparedCluster>,
}

impl Prepared {
    pub fn new(dataset: &TrialDataset, spec: &MarginalMeanSpec) -> Result<Self> {
        if spec.design != dataset.design() || spec.p != dataset.p() {
            return Err(Error::InvalidParameter(format!(
                "model ({}, p={}) does not match dataset ({}, p={})",
                spec.design,
                spec.p,
                dataset.design(),
                dataset.p()
            )));
        }
        let dtrs = embedded_dtrs(spec.design);
        let mut clusters = Vec::with_capacity(dataset.n_clusters());
        for c in dataset.clusters() {
            let weight = known_weight(&c.path, spec.design)?;
            let xs: Vec<&[f64]> = c.individuals.iter().map(|ind| ind.x.as_slice()).collect();
            let y = DVector::from_iterator(c.size(), c.individuals.iter().map(|ind| ind.y));
            let members = consistent_dtrs(&c.path, spec.design)?
                .into_iter()
                .map(|d| {
                    let idx = dtrs.iter().position(|e| *e == d).expect("embedded");
                    (idx, spec.design_matrix(&d, &xs))
                })
                .collect();
            clusters.push(PreparedCluster { weight, y, members });
        }
        let prepared = Prepared {
            spec: *spec,
            clusters,
        };
        for (k, dtr) in dtrs.iter().enumerate() {
            if !prepared.clusters.iter().any(|c| c.members.iter().any(|(i, _)| *i == k)) {
                return Err(Error::NoConsistentClusters(dtr.to_string()));
            }
        }
        Ok(prepared)
    }

    /// Sums of `I·W·DᵀV⁻¹D` and `I·W·DᵀV⁻¹y` over clusters and regimens.
    pub fn normal_equations(&self, v: &WorkingCovariance) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.spec.dim();
        let mut lhs = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for c in &self.clusters {
            for (idx, d) in &c.members {
                let vinv_d = v.get(*idx).apply_inverse(d);
                lhs += c.weight * d.transpose() * &vinv_d;
                rhs += c.weight * vinv_d.transpose() * &c.y;
            }
        }
        (lhs, rhs)
    }
}

/// Cholesky factor of a normal-equations matrix, rejecting numerically
/// singular systems.
pub(crate) fn factor(lhs: DMatrix<f64>, context: impl FnOnce() -> String) -> Result<Cholesky<f64, Dyn>> {
    let max_diag = lhs.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let Some(chol) = Cholesky::new(lhs) else {
        return Err(Error::Singular(context()));
    };
    let min_pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b * b));
    if !(min_pivot > 1e-12 * max_diag) {
        return Err(Error::Singular(context()));
    }
    Ok(chol)
}

fn singular_context(dataset: &TrialDataset) -> String {
    let empty: Vec<String> = crate::data::validate(dataset)
        .empty_cells()
        .map(|c| format!("cell {} ({})", c.cell, c.description))
        .collect();
    if empty.is_empty() {
        "design matrix is rank deficient; check covariates for collinearity or constant columns".into()
    } else {
        format!("design matrix is rank deficient; empty {}", empty.join(", "))
    }
}

/// Solves the estimating equations for a fixed working covariance.
pub fn solve_weighted_ee(
    dataset: &TrialDataset,
    spec: &MarginalMeanSpec,
    v: &WorkingCovariance,
) -> Result<Vec<f64>> {
    let prepared = Prepared::new(dataset, spec)?;
    solve_prepared(&prepared, v, dataset)
}

fn solve_prepared(prepared: &Prepared, v: &WorkingCovariance, dataset: &TrialDataset) -> Result<Vec<f64>> {
    let (lhs, rhs) = prepared.normal_equations(v);
    let chol = factor(lhs, || singular_context(dataset))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Average the working covariance across regimens.
    pub shared_cov: bool,
    /// Number of working-covariance updates after the identity solve.
    pub iterations: usize,
    /// Refuse to fit when any design cell has no clusters.
    pub require_all_cells: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            shared_cov: false,
            iterations: 2,
            require_all_cells: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub spec: MarginalMeanSpec,
    /// `β` followed by `η`.
    pub theta: Vec<f64>,
    /// Estimated variance of `theta` (the plug-in sandwich divided by N).
    pub sigma_theta: DMatrix<f64>,
    pub working: WorkingCovariance,
    pub n_clusters: usize,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn std_errors(&self) -> Vec<f64> {
        self.sigma_theta.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

fn outcome_scale(dataset: &TrialDataset) -> f64 {
    let (sum, n) = dataset
        .clusters()
        .iter()
        .flat_map(|c| &c.individuals)
        .fold((0.0, 0usize), |(s, n), ind| (s + ind.y * ind.y, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Identity-covariance solve followed by `options.iterations` rounds of
/// working-covariance estimation and re-solving, then the sandwich variance.
pub fn fit(dataset: &TrialDataset, spec: &MarginalMeanSpec, options: &FitOptions) -> Result<FitResult> {
    if options.require_all_cells {
        let report = crate::data::validate(dataset);
        let first = report.empty_cells().next().map(|c| (c.cell, c.description.clone()));
        if let Some((cell, description)) = first {
            return Err(Error::EmptyCell { cell, description });
        }
    }
    let prepared = Prepared::new(dataset, spec)?;
    let mut working = WorkingCovariance::identity(spec.design);
    let mut theta = solve_prepared(&prepared, &working, dataset)?;
    let mut warnings = Vec::new();
    // residual variances this far below the outcome scale are rounding noise
    let floor = 1e-24 * outcome_scale(dataset);
    for _ in 0..options.iterations {
        let res = working::residuals_prepared(&prepared, &theta);
        let est = working::estimate_with_floor(spec.design, &res, options.shared_cov, floor)?;
        warnings = est.warnings;
        working = est.covariance;
        theta = solve_prepared(&prepared, &working, dataset)?;
    }
    let sigma_theta = sandwich::sandwich_prepared(&prepared, &theta, &working, dataset)?;
    Ok(FitResult {
        spec: *spec,
        theta,
        sigma_theta,
        working,
        n_clusters: dataset.n_clusters(),
        iterations: options.iterations,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClusterRecord, IndividualRecord};
    use crate::design::TreatmentPath;

    fn dtr(design: DesignKind, a1: i8, a2: Option<i8>) -> EmbeddedDtr {
        EmbeddedDtr::new(design, a1, a2).unwrap()
    }

    #[test]
    fn regressor_rows() {
        let a = MarginalMeanSpec::new(DesignKind::Adept, 0);
        assert_eq!(a.regressor_row(&dtr(DesignKind::Adept, -1, None), &[]).unwrap(), [1.0, -1.0, 0.0]);
        let p = MarginalMeanSpec::new(DesignKind::Prototypical, 0);
        assert_eq!(
            p.regressor_row(&dtr(DesignKind::Prototypical, 1, Some(-1)), &[]).unwrap(),
            [1.0, 1.0, -1.0, -1.0]
        );
        let a1 = MarginalMeanSpec::new(DesignKind::Adept, 1);
        assert_eq!(
            regressor_row(&dtr(DesignKind::Adept, 1, Some(1)), &[0.5], &a1).unwrap(),
            [1.0, 1.0, 1.0, 0.5]
        );
        assert!(a1.regressor_row(&dtr(DesignKind::Adept, 1, Some(1)), &[]).is_err());
        for spec in [a, p, a1] {
            for d in embedded_dtrs(spec.design) {
                let x = vec![0.0; spec.p];
                assert_eq!(spec.regressor_row(&d, &x).unwrap().len(), spec.dim());
            }
        }
    }

    #[test]
    fn exchangeable_inverse_matches_generic() {
        let cov = DtrCovariance { sigma2: 2.5, rho: 0.3 };
        let n = 4;
        let v = DMatrix::from_fn(n, n, |i, j| cov.sigma2 * if i == j { 1.0 } else { cov.rho });
        let vinv = v.try_inverse().unwrap();
        let m = DMatrix::from_fn(n, 2, |i, j| (i * 3 + j) as f64 - 2.0);
        let diff = cov.apply_inverse(&m) - vinv * &m;
        assert!(diff.amax() < 1e-12);
    }

    fn cluster(design: DesignKind, id: &str, a1: i8, r: u8, a2: Option<i8>, ys: &[f64]) -> ClusterRecord {
        ClusterRecord {
            id: id.into(),
            path: TreatmentPath::new(design, a1, r, a2).unwrap(),
            individuals: ys.iter().map(|&y| IndividualRecord { y, x: vec![] }).collect(),
        }
    }

    #[test]
    fn missing_regimen_is_an_error() {
        let d = DesignKind::Adept;
        let ds = TrialDataset::new(
            d,
            vec![
                cluster(d, "a", 1, 0, Some(-1), &[1.0, 2.0]),
                cluster(d, "b", -1, 1, None, &[1.0]),
                cluster(d, "c", -1, 0, None, &[3.0]),
            ],
        )
        .unwrap();
        let err = fit(&ds, &MarginalMeanSpec::for_dataset(&ds), &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoConsistentClusters(ref s) if s == "(1,1)"), "{err}");
        assert!(err.is_computation());
    }

    #[test]
    fn strict_mode_names_empty_cell() {
        let d = DesignKind::Adept;
        let ds = TrialDataset::new(
            d,
            vec![
                cluster(d, "a", 1, 1, None, &[1.0, 2.0]),
                cluster(d, "b", 1, 0, Some(1), &[1.0, 2.5]),
                cluster(d, "c", -1, 1, None, &[1.0]),
                cluster(d, "e", -1, 0, None, &[3.0]),
            ],
        )
        .unwrap();
        let spec = MarginalMeanSpec::for_dataset(&ds);
        assert!(fit(&ds, &spec, &FitOptions::default()).is_ok());
        let strict = FitOptions {
            require_all_cells: true,
            ..FitOptions::default()
        };
        match fit(&ds, &spec, &strict).unwrap_err() {
            Error::EmptyCell { cell, description } => {
                assert_eq!(cell, 'C');
                assert!(description.contains("(1,-1)"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn collinear_covariate_is_singular() {
        let d = DesignKind::Adept;
        let mk = |id: &str, a1, r, a2, y: f64| ClusterRecord {
            id: id.into(),
            path: TreatmentPath::new(d, a1, r, a2).unwrap(),
            individuals: vec![IndividualRecord { y, x: vec![1.0] }, IndividualRecord { y: y + 1.0, x: vec![1.0] }],
        };
        let ds = TrialDataset::new(
            d,
            vec![
                mk("a", 1, 1, None, 1.0),
                mk("b", 1, 0, Some(1), 2.0),
                mk("c", 1, 0, Some(-1), 3.0),
                mk("d", -1, 1, None, 4.0),
                mk("e", -1, 0, None, 5.0),
            ],
        )
        .unwrap();
        let err = solve_weighted_ee(&ds, &MarginalMeanSpec::for_dataset(&ds), &WorkingCovariance::identity(d))
            .unwrap_err();
        assert!(matches!(err, Error::Singular(_)), "{err}");
    }

    #[test]
    fn constant_outcome() {
        for d in [DesignKind::Adept, DesignKind::Prototypical] {
            let clusters: Vec<ClusterRecord> = d
                .cells()
                .iter()
                .enumerate()
                .map(|(i, c)| cluster(d, &format!("c{i}"), c.key.a1, c.key.r, c.key.a2, &[7.5, 7.5, 7.5]))
                .collect();
            let ds = TrialDataset::new(d, clusters).unwrap();
            let res = fit(&ds, &MarginalMeanSpec::for_dataset(&ds), &FitOptions::default()).unwrap();
            assert!((res.theta[0] - 7.5).abs() < 1e-12);
            assert!(res.theta[1..].iter().all(|t| t.abs() < 1e-12), "{:?}", res.theta);
            assert!(res.sigma_theta.amax() < 1e-20);
        }
    }
}
