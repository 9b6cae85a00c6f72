//! Moment estimators of the per-regimen working variance and ICC.

use crate::data::TrialDataset;
use crate::design::{embedded_dtrs, DesignKind};
use crate::error::{Error, Result};

use super::{DtrCovariance, MarginalMeanSpec, Prepared, WorkingCovariance};

/// Margin kept between a clamped ICC and the edge of the positive-definite range.
pub const RHO_MARGIN: f64 = 1e-6;

/// Residuals of one cluster under each regimen it is consistent with.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResiduals {
    pub weight: f64,
    /// Indexed by embedded regimen; `None` where the cluster is inconsistent.
    pub by_dtr: Vec<Option<Vec<f64>>>,
}

/// `y − μ(x, a1, a2; θ)` for every (cluster, consistent regimen) pair.
pub fn residuals(dataset: &TrialDataset, spec: &MarginalMeanSpec, theta: &[f64]) -> Result<Vec<ClusterResiduals>> {
    if theta.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: theta.len(),
        });
    }
    let prepared = Prepared::new(dataset, spec)?;
    Ok(residuals_prepared(&prepared, theta))
}

pub(crate) fn residuals_prepared(prepared: &Prepared, theta: &[f64]) -> Vec<ClusterResiduals> {
    let n_dtrs = prepared.spec.q();
    let theta = nalgebra::DVector::from_column_slice(theta);
    prepared
        .clusters
        .iter()
        .map(|c| {
            let mut by_dtr = vec![None; n_dtrs];
            for (idx, d) in &c.members {
                let e = &c.y - d * &theta;
                by_dtr[*idx] = Some(e.iter().copied().collect());
            }
            ClusterResiduals {
                weight: c.weight,
                by_dtr,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct WorkingEstimate {
    /// Clamped (and, if requested, averaged) parameters ready for use.
    pub covariance: WorkingCovariance,
    /// Per-regimen moment estimates before clamping or averaging.
    pub raw: Vec<DtrCovariance>,
    pub warnings: Vec<String>,
}

/// Weighted moment estimates of `σ²*` and `ρ*` per regimen:
///
/// ```text
/// σ² = Σ W I Σ_j e_j²            / Σ W I m
/// ρ  = Σ W I Σ_j Σ_{k≠j} e_j e_k / (σ² Σ W I m(m−1))
/// ```
///
/// ICCs are clamped into `(−1/(m_max−1), 1)` so every working matrix stays
/// positive definite. With `shared`, the clamped values are averaged across
/// regimens.
pub fn estimate_working_cov(design: DesignKind, residuals: &[ClusterResiduals], shared: bool) -> Result<WorkingEstimate> {
    estimate_with_floor(design, residuals, shared, 0.0)
}

/// As [`estimate_working_cov`], treating any `σ²` at or below `floor` as zero.
pub(crate) fn estimate_with_floor(
    design: DesignKind,
    residuals: &[ClusterResiduals],
    shared: bool,
    floor: f64,
) -> Result<WorkingEstimate> {
    let dtrs = embedded_dtrs(design);
    let m_max = residuals
        .iter()
        .flat_map(|c| c.by_dtr.iter().flatten().map(Vec::len))
        .max()
        .unwrap_or(0);
    let lower = if m_max > 1 {
        -1.0 / (m_max as f64 - 1.0) + RHO_MARGIN
    } else {
        f64::NEG_INFINITY
    };
    let upper = 1.0 - RHO_MARGIN;

    let mut warnings = Vec::new();
    let mut raw = Vec::with_capacity(dtrs.len());
    let mut used = Vec::with_capacity(dtrs.len());
    for (k, dtr) in dtrs.iter().enumerate() {
        let mut ss = 0.0;
        let mut sm = 0.0;
        let mut cross = 0.0;
        let mut pairs = 0.0;
        for c in residuals {
            let Some(e) = c.by_dtr.get(k).and_then(Option::as_ref) else {
                continue;
            };
            let m = e.len() as f64;
            let sum: f64 = e.iter().sum();
            let sq: f64 = e.iter().map(|v| v * v).sum();
            ss += c.weight * sq;
            sm += c.weight * m;
            cross += c.weight * (sum * sum - sq);
            pairs += c.weight * m * (m - 1.0);
        }
        if sm == 0.0 {
            return Err(Error::NoConsistentClusters(dtr.to_string()));
        }
        let sigma2 = ss / sm;
        let rho = if pairs == 0.0 {
            warnings.push(format!(
                "DTR {dtr}: all consistent clusters have size 1; working ICC set to 0"
            ));
            0.0
        } else {
            cross / (sigma2 * pairs)
        };
        raw.push(DtrCovariance { sigma2, rho });

        let (sigma2, rho) = if !(sigma2 > floor.max(f64::MIN_POSITIVE)) || !rho.is_finite() {
            warnings.push(format!(
                "DTR {dtr}: residual variance is zero; using identity working covariance"
            ));
            (1.0, 0.0)
        } else if rho < lower || rho > upper {
            let clamped = rho.clamp(lower, upper);
            warnings.push(format!("DTR {dtr}: working ICC {rho:.6} clamped to {clamped:.6}"));
            (sigma2, clamped)
        } else {
            (sigma2, rho)
        };
        used.push(DtrCovariance { sigma2, rho });
    }

    let covariance = if shared {
        let n = used.len() as f64;
        WorkingCovariance::uniform(
            design,
            DtrCovariance {
                sigma2: used.iter().map(|c| c.sigma2).sum::<f64>() / n,
                rho: used.iter().map(|c| c.rho).sum::<f64>() / n,
            },
        )
    } else {
        WorkingCovariance::per_dtr(design, &used)?
    };
    Ok(WorkingEstimate {
        covariance,
        raw,
        warnings,
    })
}
