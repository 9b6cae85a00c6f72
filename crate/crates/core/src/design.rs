//! SMART design topology: embedded regimens, observed treatment paths,
//! consistency indicators and the known inverse-probability weights.
//!
//! Two designs are supported. In the ADEPT-style design only non-responders
//! to first-stage treatment `+1` are re-randomized, which embeds three
//! regimens. In the prototypical design every non-responder is
//! re-randomized, which embeds four.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default randomization probability at either stage.
pub const DEFAULT_RAND_PROB: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Adept,
    Prototypical,
}

impl DesignKind {
    /// Number of embedded regimens (3 or 4).
    pub fn n_dtrs(self) -> usize {
        match self {
            DesignKind::Adept => 3,
            DesignKind::Prototypical => 4,
        }
    }

    /// Whether a cluster with first-stage treatment `a1` and response `r`
    /// receives a second randomization.
    pub fn rerandomizes(self, a1: i8, r: u8) -> bool {
        match self {
            DesignKind::Adept => a1 == 1 && r == 0,
            DesignKind::Prototypical => r == 0,
        }
    }

    /// The design cells in lettered order (A-E or A-F).
    pub fn cells(self) -> Vec<Cell> {
        let keys: &[(i8, u8, Option<i8>)] = match self {
            DesignKind::Adept => &[
                (1, 1, None),
                (1, 0, Some(1)),
                (1, 0, Some(-1)),
                (-1, 1, None),
                (-1, 0, None),
            ],
            DesignKind::Prototypical => &[
                (1, 1, None),
                (1, 0, Some(1)),
                (1, 0, Some(-1)),
                (-1, 1, None),
                (-1, 0, Some(1)),
                (-1, 0, Some(-1)),
            ],
        };
        keys.iter()
            .zip('A'..)
            .map(|(&(a1, r, a2), label)| Cell {
                label,
                key: CellKey { a1, r, a2 },
            })
            .collect()
    }

    /// Looks up the letter of a cell key, if the key belongs to this design.
    pub fn cell_label(self, key: CellKey) -> Option<char> {
        self.cells().into_iter().find(|c| c.key == key).map(|c| c.label)
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignKind::Adept => f.write_str("adept"),
            DesignKind::Prototypical => f.write_str("prototypical"),
        }
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adept" => Ok(DesignKind::Adept),
            "prototypical" | "proto" => Ok(DesignKind::Prototypical),
            other => Err(Error::InvalidParameter(format!("unknown design {other:?}"))),
        }
    }
}

fn check_sign(name: &str, v: i8) -> Result<()> {
    if v == 1 || v == -1 {
        Ok(())
    } else {
        Err(Error::InvalidPath(format!("{name} must be -1 or 1, got {v}")))
    }
}

/// A regimen `(a1, a2)` embedded in a design. `a2` is unset only for the
/// ADEPT regimen `(-1,.)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EmbeddedDtr {
    a1: i8,
    a2: Option<i8>,
}

impl EmbeddedDtr {
    pub fn new(design: DesignKind, a1: i8, a2: Option<i8>) -> Result<Self> {
        check_sign("a1", a1)?;
        if let Some(v) = a2 {
            check_sign("a2", v)?;
        }
        let needs_a2 = match design {
            DesignKind::Adept => a1 == 1,
            DesignKind::Prototypical => true,
        };
        if needs_a2 != a2.is_some() {
            return Err(Error::InvalidPath(format!(
                "regimen ({a1},{}) is not embedded in the {design} design",
                a2.map_or(".".to_string(), |v| v.to_string())
            )));
        }
        Ok(EmbeddedDtr { a1, a2 })
    }

    pub fn a1(&self) -> i8 {
        self.a1
    }

    pub fn a2(&self) -> Option<i8> {
        self.a2
    }

    /// Parses labels like `(1,-1)` or `(-1,.)` and checks them against the design.
    pub fn parse(design: DesignKind, s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("cannot parse regimen label {s:?}"));
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(bad)?;
        let (first, second) = inner.split_once(',').ok_or_else(bad)?;
        let a1: i8 = first.trim().parse().map_err(|_| bad())?;
        let second = second.trim();
        let a2 = if second == "." || second == "·" || second.is_empty() {
            None
        } else {
            Some(second.parse().map_err(|_| bad())?)
        };
        EmbeddedDtr::new(design, a1, a2)
    }
}

impl fmt::Display for EmbeddedDtr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.a2 {
            Some(a2) => write!(f, "({},{})", self.a1, a2),
            None => write!(f, "({},.)", self.a1),
        }
    }
}

/// Embedded regimens in their fixed order: `(1,1)`, `(1,-1)`, then the
/// regimen(s) starting with `-1`.
pub fn embedded_dtrs(design: DesignKind) -> Vec<EmbeddedDtr> {
    let raw: &[(i8, Option<i8>)] = match design {
        DesignKind::Adept => &[(1, Some(1)), (1, Some(-1)), (-1, None)],
        DesignKind::Prototypical => &[(1, Some(1)), (1, Some(-1)), (-1, Some(1)), (-1, Some(-1))],
    };
    raw.iter().map(|&(a1, a2)| EmbeddedDtr { a1, a2 }).collect()
}

/// Identifies a design cell by its `(A1, R, A2)` pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub a1: i8,
    pub r: u8,
    pub a2: Option<i8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub label: char,
    pub key: CellKey,
}

impl Cell {
    /// Human-readable description, e.g. `DTR (1,-1) non-responders`.
    pub fn describe(&self, design: DesignKind) -> String {
        let path = TreatmentPath {
            a1: self.key.a1,
            r: self.key.r,
            a2: self.key.a2,
            rand_prob_stage1: DEFAULT_RAND_PROB,
            rand_prob_stage2: self.key.a2.map(|_| DEFAULT_RAND_PROB),
        };
        let dtrs: Vec<String> = embedded_dtrs(design)
            .into_iter()
            .filter(|d| path.consistent_with(d, design))
            .map(|d| d.to_string())
            .collect();
        let status = if self.key.r == 1 { "responder" } else { "non-responder" };
        format!("DTR {} {status}", dtrs.join("/"))
    }
}

/// The realized sequence `(A1, R, A2)` of one cluster together with the
/// randomization probabilities of the treatments it actually received.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreatmentPath {
    a1: i8,
    r: u8,
    a2: Option<i8>,
    rand_prob_stage1: f64,
    rand_prob_stage2: Option<f64>,
}

impl TreatmentPath {
    /// Builds a path with the default 0.5 randomization probabilities.
    pub fn new(design: DesignKind, a1: i8, r: u8, a2: Option<i8>) -> Result<Self> {
        check_sign("a1", a1)?;
        if r > 1 {
            return Err(Error::InvalidPath(format!("r must be 0 or 1, got {r}")));
        }
        let path = TreatmentPath {
            a1,
            r,
            a2,
            rand_prob_stage1: DEFAULT_RAND_PROB,
            rand_prob_stage2: a2.map(|_| DEFAULT_RAND_PROB),
        };
        path.check(design)?;
        Ok(path)
    }

    /// Overrides the randomization probabilities. `stage2` must be given
    /// exactly when the path was re-randomized.
    pub fn with_probabilities(mut self, stage1: f64, stage2: Option<f64>) -> Result<Self> {
        check_prob(stage1)?;
        if let Some(p) = stage2 {
            check_prob(p)?;
        }
        if stage2.is_some() != self.a2.is_some() {
            return Err(Error::InvalidPath(
                "stage-2 probability must be given exactly when a2 is set".into(),
            ));
        }
        self.rand_prob_stage1 = stage1;
        self.rand_prob_stage2 = stage2;
        Ok(self)
    }

    pub fn a1(&self) -> i8 {
        self.a1
    }

    pub fn r(&self) -> u8 {
        self.r
    }

    pub fn a2(&self) -> Option<i8> {
        self.a2
    }

    pub fn rand_prob_stage1(&self) -> f64 {
        self.rand_prob_stage1
    }

    pub fn rand_prob_stage2(&self) -> Option<f64> {
        self.rand_prob_stage2
    }

    pub fn cell_key(&self) -> CellKey {
        CellKey {
            a1: self.a1,
            r: self.r,
            a2: self.a2,
        }
    }

    /// Checks that the presence of `a2` matches the design's re-randomization rule.
    pub fn check(&self, design: DesignKind) -> Result<()> {
        check_sign("a1", self.a1)?;
        if let Some(a2) = self.a2 {
            check_sign("a2", a2)?;
        }
        let rerand = design.rerandomizes(self.a1, self.r);
        match (rerand, self.a2.is_some()) {
            (true, false) => Err(Error::InvalidPath(format!(
                "a2 missing for re-randomized cluster (a1={}, r={})",
                self.a1, self.r
            ))),
            (false, true) if self.r == 1 => {
                Err(Error::InvalidPath("a2 defined for responder".into()))
            }
            (false, true) => Err(Error::InvalidPath(format!(
                "a2 defined for a1={} non-responder, which the {design} design does not re-randomize",
                self.a1
            ))),
            _ => {
                check_prob(self.rand_prob_stage1)?;
                if let Some(p) = self.rand_prob_stage2 {
                    check_prob(p)?;
                }
                if self.rand_prob_stage2.is_some() != self.a2.is_some() {
                    return Err(Error::InvalidPath(
                        "stage-2 probability must be set exactly when a2 is set".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    fn consistent_with(&self, dtr: &EmbeddedDtr, design: DesignKind) -> bool {
        if self.a1 != dtr.a1 {
            return false;
        }
        if self.r == 1 || !design.rerandomizes(self.a1, self.r) {
            return true;
        }
        self.a2 == dtr.a2
    }
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}

/// Indicator that a cluster's realized path could have arisen under `dtr`.
pub fn is_consistent(path: &TreatmentPath, dtr: &EmbeddedDtr, design: DesignKind) -> Result<bool> {
    path.check(design)?;
    Ok(path.consistent_with(dtr, design))
}

/// Known inverse-probability weight `1 / [Pr(A1) Pr(A2 | A1, R)]`.
pub fn known_weight(path: &TreatmentPath, design: DesignKind) -> Result<f64> {
    path.check(design)?;
    let stage2 = path.rand_prob_stage2.unwrap_or(1.0);
    Ok(1.0 / (path.rand_prob_stage1 * stage2))
}

/// Regimens consistent with a path, in embedded order.
pub fn consistent_dtrs(path: &TreatmentPath, design: DesignKind) -> Result<Vec<EmbeddedDtr>> {
    path.check(design)?;
    Ok(embedded_dtrs(design)
        .into_iter()
        .filter(|d| path.consistent_with(d, design))
        .collect())
}
