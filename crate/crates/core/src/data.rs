//! Individual-level trial data nested in clusters, plus CSV ingest/export.
//!
//! The CSV layout is long format, one row per individual:
//!
//! ```text
//! cluster_id,a1,r,a2,y,x1,...,xp[,p1_prob,p2_prob]
//! ```
//!
//! `a2` is left empty for clusters that were not re-randomized. The optional
//! probability columns override the default 0.5 randomization probabilities.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::design::{embedded_dtrs, known_weight, DesignKind, TreatmentPath, DEFAULT_RAND_PROB};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IndividualRecord {
    pub y: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub id: String,
    pub path: TreatmentPath,
    pub individuals: Vec<IndividualRecord>,
}

impl ClusterRecord {
    pub fn size(&self) -> usize {
        self.individuals.len()
    }
}

/// A validated collection of clusters from one design.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    design: DesignKind,
    clusters: Vec<ClusterRecord>,
    p: usize,
    cluster_level: Vec<usize>,
}

impl TrialDataset {
    /// Validates and wraps clusters. The covariate count `p` is taken from
    /// the first individual and must agree everywhere.
    pub fn new(design: DesignKind, clusters: Vec<ClusterRecord>) -> Result<Self> {
        let p = clusters
            .first()
            .and_then(|c| c.individuals.first())
            .map_or(0, |ind| ind.x.len());
        Self::with_p(design, clusters, p)
    }

    /// Like [`TrialDataset::new`] with an explicit covariate count, which
    /// also permits an empty cluster list.
    pub fn with_p(design: DesignKind, clusters: Vec<ClusterRecord>, p: usize) -> Result<Self> {
        let mut seen = HashMap::with_capacity(clusters.len());
        for c in &clusters {
            if seen.insert(c.id.as_str(), ()).is_some() {
                return Err(Error::DuplicateCluster(c.id.clone()));
            }
            c.path.check(design)?;
            if c.individuals.is_empty() {
                return Err(Error::Empty(format!("cluster {} has no individuals", c.id)));
            }
            for ind in &c.individuals {
                if ind.x.len() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        found: ind.x.len(),
                    });
                }
                if !ind.y.is_finite() || ind.x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "cluster {}: non-finite outcome or covariate",
                        c.id
                    )));
                }
            }
        }
        Ok(TrialDataset {
            design,
            clusters,
            p,
            cluster_level: Vec::new(),
        })
    }

    /// Declares covariates (0-based column indices) as cluster-level, which
    /// requires every individual in a cluster to share the value.
    pub fn with_cluster_level_covariates(mut self, columns: &[usize]) -> Result<Self> {
        for &j in columns {
            if j >= self.p {
                return Err(Error::DimensionMismatch {
                    expected: self.p,
                    found: j + 1,
                });
            }
            for c in &self.clusters {
                let first = c.individuals[0].x[j];
                if c.individuals.iter().any(|ind| ind.x[j] != first) {
                    return Err(Error::InvalidParameter(format!(
                        "covariate x{} declared cluster-level but varies within cluster {}",
                        j + 1,
                        c.id
                    )));
                }
            }
        }
        self.cluster_level = columns.to_vec();
        Ok(self)
    }

    pub fn design(&self) -> DesignKind {
        self.design
    }

    pub fn clusters(&self) -> &[ClusterRecord] {
        &self.clusters
    }

    /// Number of covariates per individual.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn cluster_level_covariates(&self) -> &[usize] {
        &self.cluster_level
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_individuals(&self) -> usize {
        self.clusters.iter().map(ClusterRecord::size).sum()
    }

    pub fn max_cluster_size(&self) -> usize {
        self.clusters.iter().map(ClusterRecord::size).max().unwrap_or(0)
    }

    pub fn min_cluster_size(&self) -> usize {
        self.clusters.iter().map(ClusterRecord::size).min().unwrap_or(0)
    }

    /// Returns a copy with every outcome passed through `f`.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64) -> TrialDataset {
        let mut out = self.clone();
        for c in &mut out.clusters {
            for ind in &mut c.individuals {
                ind.y = f(ind.y);
            }
        }
        out
    }
}

/// Column positions resolved from the CSV header.
struct Columns {
    cluster_id: usize,
    a1: usize,
    r: usize,
    a2: usize,
    y: usize,
    x: Vec<usize>,
    p1_prob: Option<usize>,
    p2_prob: Option<usize>,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let mut named: HashMap<&str, usize> = HashMap::new();
        let mut xs: Vec<(usize, usize)> = Vec::new();
        for (i, h) in header.iter().enumerate() {
            let h = h.trim();
            if let Some(n) = h.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                xs.push((n, i));
            } else if matches!(h, "cluster_id" | "a1" | "r" | "a2" | "y" | "p1_prob" | "p2_prob") {
                if named.insert(h, i).is_some() {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("duplicate column {h}"),
                    });
                }
            } else {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unexpected column {h:?}"),
                });
            }
        }
        xs.sort_unstable();
        for (k, &(n, _)) in xs.iter().enumerate() {
            if n != k + 1 {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("covariate columns must be x1..xp without gaps (found x{n})"),
                });
            }
        }
        let need = |name: &str| {
            named.get(name).copied().ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing required column {name}"),
            })
        };
        Ok(Columns {
            cluster_id: need("cluster_id")?,
            a1: need("a1")?,
            r: need("r")?,
            a2: need("a2")?,
            y: need("y")?,
            x: xs.into_iter().map(|(_, i)| i).collect(),
            p1_prob: named.get("p1_prob").copied(),
            p2_prob: named.get("p2_prob").copied(),
        })
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, field: &str, line: usize) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{field}: cannot parse {s:?}"),
    })
}

fn parse_real(s: &str, field: &str, line: usize) -> Result<f64> {
    if s.trim().is_empty() {
        return Err(Error::Parse {
            line,
            message: format!("{field} is missing"),
        });
    }
    let v: f64 = parse_num(s, field, line)?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("{field} is not finite"),
        });
    }
    Ok(v)
}

/// Reads a long-format CSV dataset, grouping rows by `cluster_id` in order
/// of first appearance.
pub fn parse_dataset<R: Read>(reader: R, design: DesignKind) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Empty("file has no header".into()));
    }
    let cols = Columns::from_header(&header)?;
    let p = cols.x.len();

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (TreatmentPath, Vec<IndividualRecord>)> = HashMap::new();

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec[cols.cluster_id].to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "cluster_id is missing".into(),
            });
        }
        let a1: i8 = parse_num(&rec[cols.a1], "a1", line)?;
        let r: u8 = parse_num(&rec[cols.r], "r", line)?;
        let a2_raw = rec[cols.a2].trim();
        let a2: Option<i8> = if a2_raw.is_empty() {
            None
        } else {
            Some(parse_num(a2_raw, "a2", line)?)
        };
        let mut path = TreatmentPath::new(design, a1, r, a2).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if cols.p1_prob.is_some() || cols.p2_prob.is_some() {
            let opt = |idx: Option<usize>| idx.map(|i| rec[i].trim()).filter(|s| !s.is_empty());
            let p1 = match opt(cols.p1_prob) {
                Some(s) => parse_real(s, "p1_prob", line)?,
                None => DEFAULT_RAND_PROB,
            };
            let p2 = match (a2, opt(cols.p2_prob)) {
                (Some(_), Some(s)) => Some(parse_real(s, "p2_prob", line)?),
                (Some(_), None) => Some(DEFAULT_RAND_PROB),
                (None, Some(_)) => {
                    return Err(Error::Parse {
                        line,
                        message: "p2_prob given for a cluster without a2".into(),
                    })
                }
                (None, None) => None,
            };
            path = path.with_probabilities(p1, p2).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
        }
        let y = parse_real(&rec[cols.y], "y", line)?;
        let x = cols
            .x
            .iter()
            .enumerate()
            .map(|(k, &i)| parse_real(&rec[i], &format!("x{}", k + 1), line))
            .collect::<Result<Vec<_>>>()?;

        match groups.get_mut(&id) {
            Some((existing, inds)) => {
                let field = if existing.a1() != path.a1() {
                    Some("a1")
                } else if existing.r() != path.r() {
                    Some("r")
                } else if existing.a2() != path.a2() {
                    Some("a2")
                } else if existing.rand_prob_stage1() != path.rand_prob_stage1()
                    || existing.rand_prob_stage2() != path.rand_prob_stage2()
                {
                    Some("randomization probability")
                } else {
                    None
                };
                if let Some(field) = field {
                    return Err(Error::ConflictingPath { cluster: id, field });
                }
                inds.push(IndividualRecord { y, x });
            }
            None => {
                order.push(id.clone());
                groups.insert(id, (path, vec![IndividualRecord { y, x }]));
            }
        }
    }

    if order.is_empty() {
        return Err(Error::Empty("no data rows".into()));
    }
    let clusters = order
        .into_iter()
        .map(|id| {
            let (path, individuals) = groups.remove(&id).expect("grouped id");
            ClusterRecord { id, path, individuals }
        })
        .collect();
    TrialDataset::with_p(design, clusters, p)
}

pub fn read_dataset(path: impl AsRef<Path>, design: DesignKind) -> Result<TrialDataset> {
    let file = std::fs::File::open(path)?;
    parse_dataset(std::io::BufReader::new(file), design)
}

/// Writes the dataset in the long CSV layout. Probability columns are only
/// emitted when some cluster departs from the 0.5 default.
pub fn write_dataset<W: Write>(dataset: &TrialDataset, writer: W) -> Result<()> {
    let with_probs = dataset.clusters.iter().any(|c| {
        c.path.rand_prob_stage1() != DEFAULT_RAND_PROB
            || c.path.rand_prob_stage2().is_some_and(|p| p != DEFAULT_RAND_PROB)
    });
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["cluster_id", "a1", "r", "a2", "y"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=dataset.p).map(|j| format!("x{j}")));
    if with_probs {
        header.push("p1_prob".into());
        header.push("p2_prob".into());
    }
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for c in &dataset.clusters {
        for ind in &c.individuals {
            row.clear();
            row.push(c.id.clone());
            row.push(c.path.a1().to_string());
            row.push(c.path.r().to_string());
            row.push(c.path.a2().map_or(String::new(), |v| v.to_string()));
            row.push(ind.y.to_string());
            row.extend(ind.x.iter().map(f64::to_string));
            if with_probs {
                row.push(c.path.rand_prob_stage1().to_string());
                row.push(c.path.rand_prob_stage2().map_or(String::new(), |v| v.to_string()));
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct CellCount {
    pub cell: char,
    pub a1: i8,
    pub r: u8,
    pub a2: Option<i8>,
    pub description: String,
    pub clusters: usize,
    pub individuals: usize,
}

/// Summary of a dataset's coverage of the design cells.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub design: DesignKind,
    pub n_clusters: usize,
    pub n_individuals: usize,
    pub min_cluster_size: usize,
    pub max_cluster_size: usize,
    pub cells: Vec<CellCount>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn empty_cells(&self) -> impl Iterator<Item = &CellCount> {
        self.cells.iter().filter(|c| c.clusters == 0)
    }
}

/// Reports per-cell cluster counts and flags thin spots in the data.
pub fn validate(dataset: &TrialDataset) -> ValidationReport {
    let design = dataset.design;
    let mut cells: Vec<CellCount> = design
        .cells()
        .into_iter()
        .map(|c| CellCount {
            cell: c.label,
            a1: c.key.a1,
            r: c.key.r,
            a2: c.key.a2,
            description: c.describe(design),
            clusters: 0,
            individuals: 0,
        })
        .collect();
    for c in &dataset.clusters {
        let key = c.path.cell_key();
        if let Some(cc) = cells
            .iter_mut()
            .find(|cc| cc.a1 == key.a1 && cc.r == key.r && cc.a2 == key.a2)
        {
            cc.clusters += 1;
            cc.individuals += c.size();
        }
    }

    let mut warnings = Vec::new();
    let mut notes = Vec::new();
    for cc in cells.iter().filter(|c| c.clusters == 0) {
        warnings.push(format!("{} cell {} empty", cc.description, cc.cell));
    }
    let n_dtrs = embedded_dtrs(design).len();
    if dataset.n_clusters() < n_dtrs {
        warnings.push(format!(
            "only {} clusters; at least {n_dtrs} are needed to estimate the embedded regimens",
            dataset.n_clusters()
        ));
    }
    let singletons = dataset.clusters.iter().filter(|c| c.size() == 1).count();
    if singletons > 0 {
        notes.push(format!(
            "{singletons} cluster(s) of size 1 contribute nothing to the within-cluster correlation pair sums"
        ));
    }
    let (lo, hi) = (dataset.min_cluster_size(), dataset.max_cluster_size());
    if lo != hi {
        notes.push(format!("unequal cluster sizes ({lo} to {hi})"));
    }
    if dataset
        .clusters
        .iter()
        .any(|c| known_weight(&c.path, design).is_err())
    {
        warnings.push("some clusters carry invalid randomization probabilities".into());
    }

    ValidationReport {
        design,
        n_clusters: dataset.n_clusters(),
        n_individuals: dataset.n_individuals(),
        min_cluster_size: lo,
        max_cluster_size: hi,
        cells,
        warnings,
        notes,
    }
}
