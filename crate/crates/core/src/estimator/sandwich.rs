use nalgebra::{DMatrix, DVector};

use crate::data::TrialDataset;
use crate::error::{Error, Result};

use super::{factor, singular_context, MarginalMeanSpec, Prepared, WorkingCovariance};

/// Plug-in sandwich variance of `θ̂`, already divided by `N`:
/// `Ĵ⁻¹ Â Ĵ⁻¹ / N` with `Ĵ = (1/N) Σ I W DᵀV⁻¹D` and `Â = (1/N) Σ U Uᵀ`.
pub fn sandwich_covariance(
    dataset: &TrialDataset,
    spec: &MarginalMeanSpec,
    theta: &[f64],
    v: &WorkingCovariance,
) -> Result<DMatrix<f64>> {
    if theta.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: theta.len(),
        });
    }
    let prepared = Prepared::new(dataset, spec)?;
    sandwich_prepared(&prepared, theta, v, dataset)
}

pub(crate) fn sandwich_prepared(
    prepared: &Prepared,
    theta: &[f64],
    v: &WorkingCovariance,
    dataset: &TrialDataset,
) -> Result<DMatrix<f64>> {
    let k = prepared.spec.dim();
    let n = prepared.clusters.len() as f64;
    let theta = DVector::from_column_slice(theta);
    let mut j = DMatrix::zeros(k, k);
    let mut a = DMatrix::zeros(k, k);
    for c in &prepared.clusters {
        let mut u = DVector::zeros(k);
        for (idx, d) in &c.members {
            let vinv_d = v.get(*idx).apply_inverse(d);
            j += c.weight * d.transpose() * &vinv_d;
            let resid = &c.y - d * &theta;
            u += c.weight * vinv_d.transpose() * resid;
        }
        a += &u * u.transpose();
    }
    j /= n;
    a /= n;
    let j_inv = factor(j, || singular_context(dataset))?.inverse();
    let sigma = &j_inv * a * &j_inv / n;
    Ok((&sigma + sigma.transpose()) * 0.5)
}
