use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

use super::{ContrastResult, DtrCovariance, FitResult, WorkingCovariance};

/// Version tag carried by every JSON document this crate writes.
pub const SCHEMA: &str = "smart-cluster/v1";

#[derive(Debug, Clone, Serialize)]
pub struct ContrastReport {
    pub label: String,
    #[serde(flatten)]
    pub result: ContrastResult,
}

/// JSON view of a fit:
/// `{schema, design, theta, se, cov, working: {dtr: {sigma2, rho}}, contrasts: [...]}`.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub schema: &'static str,
    pub design: crate::design::DesignKind,
    pub n_clusters: usize,
    pub iterations: usize,
    pub theta: Vec<f64>,
    pub se: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub working: WorkingView,
    pub contrasts: Vec<ContrastReport>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn new(fit: &FitResult, contrasts: Vec<ContrastReport>) -> Self {
        let k = fit.theta.len();
        FitReport {
            schema: SCHEMA,
            design: fit.spec.design,
            n_clusters: fit.n_clusters,
            iterations: fit.iterations,
            theta: fit.theta.clone(),
            se: fit.std_errors(),
            cov: (0..k).map(|i| (0..k).map(|j| fit.sigma_theta[(i, j)]).collect()).collect(),
            working: WorkingView(fit.working.clone()),
            contrasts,
            warnings: fit.warnings.clone(),
        }
    }
}

/// Serializes as an ordered map keyed by regimen label, or a single
/// `shared` entry for an averaged covariance.
#[derive(Debug, Clone)]
pub struct WorkingView(pub WorkingCovariance);

impl Serialize for WorkingView {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let w = &self.0;
        if w.is_shared() {
            let mut map = serializer.serialize_map(Some(1))?;
            let first: DtrCovariance = w.get(0);
            map.serialize_entry("shared", &first)?;
            map.end()
        } else {
            let mut map = serializer.serialize_map(Some(w.entries().len()))?;
            for (dtr, cov) in w.entries() {
                map.serialize_entry(&dtr.to_string(), cov)?;
            }
            map.end()
        }
    }
}
