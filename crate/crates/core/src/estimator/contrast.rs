use serde::Serialize;

use crate::design::{embedded_dtrs, DesignKind, EmbeddedDtr};
use crate::error::{Error, Result};
use crate::normal;

use super::{FitResult, MarginalMeanSpec};

/// Wald test of `H0: cᵀθ = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastResult {
    pub c: Vec<f64>,
    pub estimate: f64,
    #[serde(rename = "se")]
    pub std_error: f64,
    pub z: f64,
    #[serde(rename = "p")]
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

pub fn wald_test(fit: &FitResult, c: &[f64], alpha: f64) -> Result<ContrastResult> {
    let k = fit.theta.len();
    if c.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: c.len(),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let estimate: f64 = c.iter().zip(&fit.theta).map(|(a, b)| a * b).sum();
    let mut var = 0.0;
    for i in 0..k {
        for j in 0..k {
            var += c[i] * fit.sigma_theta[(i, j)] * c[j];
        }
    }
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let std_error = var.sqrt();
    let z = estimate / std_error;
    let p_value = normal::two_sided_p(z);
    Ok(ContrastResult {
        c: c.to_vec(),
        estimate,
        std_error,
        z,
        p_value,
        alpha,
        reject: z.abs() > normal::quantile(1.0 - alpha / 2.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DtrMean {
    pub dtr: String,
    pub estimate: f64,
    #[serde(rename = "se")]
    pub std_error: f64,
}

/// Estimated marginal mean of each embedded regimen at covariate value `x`
/// (zeros when `None`).
pub fn dtr_means(fit: &FitResult, x: Option<&[f64]>) -> Result<Vec<DtrMean>> {
    let zeros = vec![0.0; fit.spec.p];
    let x = x.unwrap_or(&zeros);
    embedded_dtrs(fit.spec.design)
        .iter()
        .map(|d| {
            let row = fit.spec.regressor_row(d, x)?;
            let estimate = row.iter().zip(&fit.theta).map(|(a, b)| a * b).sum();
            let mut var = 0.0;
            for i in 0..row.len() {
                for j in 0..row.len() {
                    var += row[i] * fit.sigma_theta[(i, j)] * row[j];
                }
            }
            Ok(DtrMean {
                dtr: d.to_string(),
                estimate,
                std_error: var.max(0.0).sqrt(),
            })
        })
        .collect()
}

fn average_row(spec: &MarginalMeanSpec, dtrs: &[EmbeddedDtr]) -> Result<Vec<f64>> {
    let zeros = vec![0.0; spec.p];
    let mut acc = vec![0.0; spec.dim()];
    for d in dtrs {
        for (a, v) in acc.iter_mut().zip(spec.regressor_row(d, &zeros)?) {
            *a += v;
        }
    }
    let n = dtrs.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

fn parse_group(design: DesignKind, s: &str) -> Result<Vec<EmbeddedDtr>> {
    let s = s.trim();
    if let Some(inner) = s.strip_prefix('{').and_then(|t| t.strip_suffix('}')) {
        // split "(1,1),(1,-1)" on the commas between closing and opening parens
        let mut out = Vec::new();
        let mut rest = inner.trim();
        while !rest.is_empty() {
            let end = rest.find(')').ok_or_else(|| bad_contrast(s))?;
            out.push(EmbeddedDtr::parse(design, &rest[..=end])?);
            rest = rest[end + 1..].trim_start_matches([',', ' ']);
        }
        if out.is_empty() {
            return Err(bad_contrast(s));
        }
        Ok(out)
    } else {
        Ok(vec![EmbeddedDtr::parse(design, s)?])
    }
}

fn bad_contrast(s: &str) -> Error {
    Error::InvalidParameter(format!("cannot parse contrast {s:?}"))
}

/// Builds a contrast vector from a textual specification.
///
/// Accepted forms, each optionally prefixed with `adept:` or `prototypical:`:
///
/// - `(1,1)-vs-(-1,.)`: difference of two regimen means;
/// - `{(1,1),(1,-1)}-vs-(-1,.)`: difference of averaged regimen groups;
/// - `first-stage`: regimens starting with `1` vs those starting with `-1`;
/// - `second-stage`: prototypical only, `a2 = 1` vs `a2 = -1` regimens;
/// - `same-first-stage`: `(1,1)` vs `(1,-1)`;
/// - an explicit vector such as `0,2,1`, of length `q+p` or `q` (zero-padded).
pub fn parse_contrast(spec: &MarginalMeanSpec, s: &str) -> Result<Vec<f64>> {
    let mut text = s.trim();
    for (prefix, design) in [("adept:", DesignKind::Adept), ("prototypical:", DesignKind::Prototypical)] {
        if let Some(rest) = text.strip_prefix(prefix) {
            if design != spec.design {
                return Err(Error::InvalidParameter(format!(
                    "contrast {s:?} is for the {design} design, data are {}",
                    spec.design
                )));
            }
            text = rest.trim();
        }
    }
    let dtrs = embedded_dtrs(spec.design);
    let diff = |a: &[EmbeddedDtr], b: &[EmbeddedDtr]| -> Result<Vec<f64>> {
        let ra = average_row(spec, a)?;
        let rb = average_row(spec, b)?;
        Ok(ra.into_iter().zip(rb).map(|(x, y)| x - y).collect())
    };
    match text {
        "first-stage" => {
            let (pos, neg): (Vec<_>, Vec<_>) = dtrs.iter().partition(|d| d.a1() == 1);
            return diff(&pos, &neg);
        }
        "second-stage" => {
            if spec.design != DesignKind::Prototypical {
                return Err(Error::InvalidParameter(
                    "second-stage contrast needs the prototypical design".into(),
                ));
            }
            let (pos, neg): (Vec<_>, Vec<_>) = dtrs.iter().partition(|d| d.a2() == Some(1));
            return diff(&pos, &neg);
        }
        "same-first-stage" => return diff(&dtrs[..1], &dtrs[1..2]),
        _ => {}
    }
    if let Some((left, right)) = text.split_once("-vs-") {
        let a = parse_group(spec.design, left)?;
        let b = parse_group(spec.design, right)?;
        return diff(&a, &b);
    }
    let inner = text.trim_matches(|c| matches!(c, '(' | ')' | '[' | ']'));
    let values = inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| bad_contrast(s)))
        .collect::<Result<Vec<_>>>()?;
    if values.len() == spec.dim() {
        Ok(values)
    } else if values.len() == spec.q() {
        let mut v = values;
        v.resize(spec.dim(), 0.0);
        Ok(v)
    } else {
        Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: values.len(),
        })
    }
}
