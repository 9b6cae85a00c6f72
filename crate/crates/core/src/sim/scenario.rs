use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{embedded_dtrs, CellKey, DesignKind};
use crate::error::{Error, Result};

/// Mean, variance and ICC of the outcome within one design cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellParams {
    pub a1: i8,
    pub r: u8,
    #[serde(default)]
    pub a2: Option<i8>,
    pub mu: f64,
    pub var: f64,
    pub icc: f64,
}

impl CellParams {
    pub fn key(&self) -> CellKey {
        CellKey {
            a1: self.a1,
            r: self.r,
            a2: self.a2,
        }
    }
}

/// Cell-level generative parameters for a simulated trial.
///
/// With `covariate` set, a cluster-level `X ~ N(0,1)` enters the mean as
/// `eta * X`, or `eta * clip_fk(X, k)` when `k` is given, and the cell
/// variances and ICCs are conditional on `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub design: DesignKind,
    pub p1: f64,
    pub p_neg1: f64,
    pub cells: Vec<CellParams>,
    #[serde(default)]
    pub covariate: bool,
    #[serde(default)]
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        for (name, p) in [("p1", self.p1), ("p_neg1", self.p_neg1)] {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("{name} {p} outside (0, 1)"));
            }
        }
        let expected = self.design.cells();
        if self.cells.len() != expected.len() {
            return bad(format!(
                "{} design needs {} cells, scenario has {}",
                self.design,
                expected.len(),
                self.cells.len()
            ));
        }
        for cell in &expected {
            let n = self.cells.iter().filter(|c| c.key() == cell.key).count();
            if n != 1 {
                return bad(format!(
                    "cell {} (a1={}, r={}, a2={:?}) appears {n} times",
                    cell.label, cell.key.a1, cell.key.r, cell.key.a2
                ));
            }
        }
        for c in &self.cells {
            if !c.mu.is_finite() {
                return bad(format!("cell mean {} is not finite", c.mu));
            }
            if !(c.var > 0.0 && c.var.is_finite()) {
                return bad(format!("cell variance {} must be positive", c.var));
            }
            if !(0.0..1.0).contains(&c.icc) {
                return bad(format!("cell ICC {} outside [0, 1)", c.icc));
            }
        }
        if self.covariate {
            if !self.eta.is_finite() {
                return bad(format!("eta {} is not finite", self.eta));
            }
            if let Some(k) = self.k {
                if !(k > 0.0) {
                    return bad(format!("clip threshold k {k} must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn cell(&self, key: CellKey) -> Result<&CellParams> {
        self.cells
            .iter()
            .find(|c| c.key() == key)
            .ok_or_else(|| Error::InvalidParameter(format!("scenario has no cell {key:?}")))
    }

    fn cell_mut(&mut self, key: CellKey) -> &mut CellParams {
        self.cells
            .iter_mut()
            .find(|c| c.key() == key)
            .expect("validated scenario covers every cell")
    }

    /// Response probability after first-stage treatment `a1`.
    pub fn p_response(&self, a1: i8) -> f64 {
        if a1 == 1 {
            self.p1
        } else {
            self.p_neg1
        }
    }

    /// Null version of the scenario: cell means are shifted so that every
    /// embedded regimen has the marginal mean of the last regimen listed
    /// for the design. Variances and ICCs are left alone.
    pub fn equalize_means(&self) -> Result<Scenario> {
        self.validate()?;
        let dtrs = embedded_dtrs(self.design);
        let target = super::mixture_moments(self, dtrs.last().expect("designs embed regimens"))?.mean;
        let mut out = self.clone();
        for a1 in [1i8, -1] {
            let group: Vec<_> = dtrs.iter().filter(|d| d.a1() == a1).collect();
            let p = self.p_response(a1);
            let first = super::mixture_moments(&out, group[0])?.mean;
            let shift = target - first;
            for c in out.cells.iter_mut().filter(|c| c.a1 == a1) {
                c.mu += shift;
            }
            let responder = out.cell(CellKey { a1, r: 1, a2: None })?.mu;
            for d in &group[1..] {
                let key = CellKey { a1, r: 0, a2: d.a2() };
                out.cell_mut(key).mu = (target - p * responder) / (1.0 - p);
            }
        }
        out.name = self.name.as_ref().map(|n| format!("{n}-null"));
        Ok(out)
    }
}
