//! Built-in scenarios for the ADEPT-style simulation study.
//!
//! Row 1 of each table carries the reference cell values verbatim. The
//! remaining rows are derived from the same structure: cells C, D and E are
//! kept, the `(1,1)` responder and non-responder means keep their gap of 2,
//! and the ICCs and means are solved so that the regimen-level ICC and
//! standardized effect hit the row's targets.

use serde::Serialize;

use crate::design::DesignKind;
use crate::error::{Error, Result};

use super::moments::{cov_x_clipped, var_clipped_normal};
use super::{CellParams, Scenario};

/// A named scenario with the cluster count and size it was designed for.
#[derive(Debug, Clone, Serialize)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub scenario: Scenario,
    pub n: u64,
    pub m: u32,
    pub delta: f64,
    /// Regimen-level ICC; conditional on `X` for covariate scenarios.
    pub rho: f64,
    pub cor2: Option<f64>,
}

const P1: f64 = 0.2;
const P_NEG1: f64 = 0.3;

/// (ρ, δ, m, N)
const TABLE3: [(f64, f64, u32, u64); 8] = [
    (0.01, 0.2, 5, 306),
    (0.01, 0.2, 20, 88),
    (0.01, 0.5, 5, 49),
    (0.01, 0.5, 10, 26),
    (0.1, 0.2, 5, 412),
    (0.1, 0.2, 20, 213),
    (0.1, 0.5, 5, 66),
    (0.1, 0.5, 20, 34),
];

/// (ρ*, δ, m, Cor², N)
const TABLE4: [(f64, f64, u32, f64, u64); 8] = [
    (0.01, 0.2, 5, 0.238, 233),
    (0.01, 0.2, 20, 0.238, 65),
    (0.01, 0.5, 5, 0.043, 47),
    (0.01, 0.5, 10, 0.066, 24),
    (0.1, 0.2, 5, 0.243, 305),
    (0.1, 0.2, 20, 0.243, 159),
    (0.1, 0.5, 5, 0.043, 63),
    (0.1, 0.5, 20, 0.043, 32),
];

fn cell(a1: i8, r: u8, a2: Option<i8>, mu: f64, var: f64, icc: f64) -> CellParams {
    CellParams { a1, r, a2, mu, var, icc }
}

/// `[A, B, C, D, E]` from the pieces that vary between reference rows.
fn adept_cells(a: f64, b: f64, var_ab: f64, icc_ab: f64, de: (f64, f64, f64, f64)) -> Vec<CellParams> {
    vec![
        cell(1, 1, None, a, var_ab, icc_ab),
        cell(1, 0, Some(1), b, var_ab, icc_ab),
        cell(1, 0, Some(-1), 28.0, 60.0, 0.0),
        cell(-1, 1, None, de.0, de.2, de.3),
        cell(-1, 0, None, de.1, de.2, de.3),
    ]
}

fn scenario(name: &str, cells: Vec<CellParams>, covariate: Option<(f64, Option<f64>)>) -> Scenario {
    Scenario {
        name: Some(name.to_string()),
        design: DesignKind::Adept,
        p1: P1,
        p_neg1: P_NEG1,
        cells,
        covariate: covariate.is_some(),
        eta: covariate.map_or(0.0, |c| c.0),
        k: covariate.and_then(|c| c.1),
    }
}

const DE: (f64, f64, f64, f64) = (32.7, 31.0, 63.39, 0.0006);

/// Cells hitting regimen ICC `rho` and standardized effect `delta` between
/// `(1,1)` and `(-1,.)`, with `extra_var` added to both regimen variances
/// by a covariate.
fn derived_cells(rho: f64, delta: f64, extra_var: f64) -> Vec<CellParams> {
    let (d_mu, e_mu, de_var) = (DE.0, DE.1, DE.2);
    let spread_neg = P_NEG1 * (1.0 - P_NEG1) * (d_mu - e_mu).powi(2);
    let var_neg = de_var + spread_neg;
    let icc_de = ((rho * var_neg - spread_neg) / de_var).max(0.0);
    let mean_neg = P_NEG1 * d_mu + (1.0 - P_NEG1) * e_mu;

    let gap = 2.0;
    let var_ab = 63.36;
    let spread_pos = P1 * (1.0 - P1) * gap * gap;
    let var_pos = var_ab + spread_pos;
    let icc_ab = ((rho * var_pos - spread_pos) / var_ab).max(0.0);

    let sd = ((var_pos + var_neg) / 2.0 + extra_var).sqrt();
    let mean_pos = mean_neg + delta * sd;
    let a = mean_pos + (1.0 - P1) * gap;
    let b = mean_pos - P1 * gap;
    let mut cells = adept_cells(a, b, var_ab, icc_ab, (d_mu, e_mu, de_var, icc_de));
    cells[2].icc = icc_ab;
    cells
}

/// `η` giving `Cor²(Y, X) = cor2` against the raw covariate when the mean
/// uses `f_k(X)` (linear when `k` is `None`) and the conditional variance is 64.
fn eta_for(cor2: f64, k: Option<f64>) -> f64 {
    let (c, v) = k.map_or((1.0, 1.0), |k| (cov_x_clipped(k), var_clipped_normal(k)));
    (64.0 * cor2 / (c * c - cor2 * v)).sqrt()
}

fn table3_row(row: usize) -> Preset {
    let (rho, delta, m, n) = TABLE3[row - 1];
    let name = format!("table3-row{row}");
    let cells = if row == 1 {
        adept_cells(34.71, 32.71, 63.36, 0.0, DE)
    } else {
        derived_cells(rho, delta, 0.0)
    };
    Preset {
        description: format!("no covariate, rho={rho}, delta={delta}, m={m}, N={n}"),
        scenario: scenario(&name, cells, None),
        name,
        n,
        m,
        delta,
        rho,
        cor2: None,
    }
}

fn table4_row(row: usize, k: Option<f64>) -> Preset {
    let (rho, delta, m, cor2, n) = TABLE4[row - 1];
    let suffix = k.map_or(String::new(), |k| format!("-k{k}"));
    let name = format!("table4-row{row}{suffix}");
    let reference = match (row, k) {
        (1, None) => Some((4.47, 34.94, 32.94)),
        (1, Some(2.0)) => Some((4.69, 34.95, 32.95)),
        (1, Some(1.0)) => Some((6.66, 34.98, 32.98)),
        _ => None,
    };
    let (eta, cells) = match reference {
        Some((eta, a, b)) => (eta, adept_cells(a, b, 63.36, 0.0, DE)),
        None => {
            let eta = eta_for(cor2, k);
            let v = k.map_or(1.0, var_clipped_normal);
            (eta, derived_cells(rho, delta, eta * eta * v))
        }
    };
    let kind = match k {
        None => "linear covariate".to_string(),
        Some(k) => format!("covariate clipped at k={k}"),
    };
    Preset {
        description: format!("{kind}, rho*={rho}, delta={delta}, m={m}, cor2={cor2}, N={n}"),
        scenario: scenario(&name, cells, Some((eta, k))),
        name,
        n,
        m,
        delta,
        rho,
        cor2: Some(cor2),
    }
}

fn violations() -> Vec<Preset> {
    let base = table3_row(1);
    let v1 = adept_cells(34.71, 32.71, 63.36, 0.0, (32.14, 31.44, 43.0, 0.0076));
    let v2 = vec![
        cell(1, 1, None, 33.36, 1.0, 0.9),
        cell(1, 0, Some(1), 33.05, 79.73, 0.007),
        cell(1, 0, Some(-1), 28.0, 60.0, 0.0),
        cell(-1, 1, None, DE.0, DE.2, DE.3),
        cell(-1, 0, None, DE.1, DE.2, DE.3),
    ];
    [
        ("table3-row1-violate1", "regimen (1,1) variance 1.5 times that of (-1,.)", v1),
        ("table3-row1-violate2", "non-responders far noisier than responders under (1,1)", v2),
    ]
    .into_iter()
    .map(|(name, what, cells)| Preset {
        name: name.to_string(),
        description: format!("{what}; rho=0.01, delta=0.2, m=5, N=306"),
        scenario: scenario(name, cells, None),
        ..base.clone()
    })
    .collect()
}

/// Every built-in preset.
pub fn presets() -> Vec<Preset> {
    let mut out: Vec<Preset> = (1..=8).map(table3_row).collect();
    out.extend(violations());
    for row in 1..=8 {
        out.push(table4_row(row, None));
        out.push(table4_row(row, Some(2.0)));
        out.push(table4_row(row, Some(1.0)));
    }
    out
}

pub fn preset(name: &str) -> Result<Preset> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown preset {name:?}")))
}
