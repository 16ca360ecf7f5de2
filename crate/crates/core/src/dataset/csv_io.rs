use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ObsData, Sample, TrialData};
use crate::error::{Error, Result};

/// Which study a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Rct,
    Obs,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Rct => "rct",
            Source::Obs => "obs",
        }
    }
}

/// How continuous feature columns are rescaled after parsing.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Standardize {
    Off,
    /// Pooled mean and standard deviation over every loaded row.
    #[default]
    Computed,
    /// `(mean, sd)` per column name; columns not listed are computed.
    Supplied(BTreeMap<String, (f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub outcome: String,
    pub treatment: String,
    pub source: String,
    /// Columns forced to be one-hot encoded even if numeric.
    pub categorical: Vec<String>,
    pub standardize: Standardize,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            outcome: "y".into(),
            treatment: "t".into(),
            source: "source".into(),
            categorical: Vec::new(),
            standardize: Standardize::Computed,
        }
    }
}

/// Rows from both studies with a shared feature encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rct: Vec<Sample>,
    pub obs: Vec<Sample>,
}

impl Dataset {
    pub fn trial(&self, pi: f64) -> Result<TrialData> {
        TrialData::new(self.rct.clone(), pi, self.feature_names.clone())
    }

    pub fn observational(&self) -> Result<ObsData> {
        ObsData::new(self.obs.clone(), self.feature_names.clone())
    }
}

struct RawRow {
    features: Vec<String>,
    y: f64,
    t: bool,
    source: Source,
}

enum ColumnKind {
    Binary,
    Continuous,
    Categorical(Vec<String>),
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    load_csv_files(&[path.as_ref()], schema)
}

/// Loads several files sharing a header into one dataset. One-hot label sets
/// and standardization statistics are computed over all of them together.
///
/// Row numbers in errors are 1-based data rows of the offending file; the
/// header is row 0.
pub fn load_csv_files<P: AsRef<Path>>(paths: &[P], schema: &CsvSchema) -> Result<Dataset> {
    let mut header: Option<Vec<String>> = None;
    let mut raw = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let hdr: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let locate = |name: &str| {
            hdr.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                row: 0,
                message: format!("{}: missing column `{name}`", path.display()),
            })
        };
        let (yi, ti, si) = (
            locate(&schema.outcome)?,
            locate(&schema.treatment)?,
            locate(&schema.source)?,
        );
        let feature_cols: Vec<usize> = (0..hdr.len()).filter(|c| ![yi, ti, si].contains(c)).collect();
        let names: Vec<String> = feature_cols.iter().map(|&c| hdr[c].clone()).collect();
        match &header {
            Some(h) if *h != names => {
                return Err(Error::Format(format!(
                    "{}: feature columns differ from the first file",
                    path.display()
                )))
            }
            None => header = Some(names),
            _ => {}
        }

        for (r, rec) in reader.records().enumerate() {
            let row = r + 1;
            let rec = rec.map_err(|e| Error::Parse {
                row,
                message: e.to_string(),
            })?;
            let field = |c: usize| rec.get(c).unwrap_or("");
            let y: f64 = field(yi).parse().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric outcome `{}`", field(yi)),
            })?;
            if !y.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite outcome `{}`", field(yi)),
                });
            }
            let t = match field(ti) {
                "0" | "0.0" => false,
                "1" | "1.0" => true,
                other => {
                    return Err(Error::Parse {
                        row,
                        message: format!("treatment must be 0 or 1, found `{other}`"),
                    })
                }
            };
            let source = match field(si).to_ascii_lowercase().as_str() {
                "rct" => Source::Rct,
                "obs" => Source::Obs,
                other => {
                    return Err(Error::Parse {
                        row,
                        message: format!("source must be `rct` or `obs`, found `{other}`"),
                    })
                }
            };
            raw.push(RawRow {
                features: feature_cols.iter().map(|&c| field(c).to_string()).collect(),
                y,
                t,
                source,
            });
        }
    }
    let header = header.unwrap_or_default();
    encode(header, raw, schema)
}

fn encode(header: Vec<String>, raw: Vec<RawRow>, schema: &CsvSchema) -> Result<Dataset> {
    let kinds: Vec<ColumnKind> = (0..header.len())
        .map(|c| {
            let forced = schema.categorical.iter().any(|n| *n == header[c]);
            let numeric: Option<Vec<f64>> = raw
                .iter()
                .map(|r| r.features[c].parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            match numeric {
                Some(vals) if !forced => {
                    if vals.iter().all(|&v| v == 0.0 || v == 1.0) {
                        ColumnKind::Binary
                    } else {
                        ColumnKind::Continuous
                    }
                }
                _ => {
                    let labels: BTreeSet<&str> = raw.iter().map(|r| r.features[c].as_str()).collect();
                    ColumnKind::Categorical(labels.into_iter().map(str::to_string).collect())
                }
            }
        })
        .collect();

    let mut feature_names = Vec::new();
    for (name, kind) in header.iter().zip(&kinds) {
        match kind {
            ColumnKind::Categorical(labels) => {
                feature_names.extend(labels.iter().map(|l| format!("{name}={l}")))
            }
            _ => feature_names.push(name.clone()),
        }
    }

    let mut scaling: Vec<(f64, f64)> = vec![(0.0, 1.0); header.len()];
    for (c, kind) in kinds.iter().enumerate() {
        if !matches!(kind, ColumnKind::Continuous) {
            continue;
        }
        let supplied = match &schema.standardize {
            Standardize::Off => Some((0.0, 1.0)),
            Standardize::Supplied(map) => map.get(&header[c]).copied(),
            Standardize::Computed => None,
        };
        scaling[c] = match supplied {
            Some((m, sd)) => {
                if !(sd > 0.0) {
                    return Err(Error::Config(format!(
                        "non-positive scale {sd} for column `{}`",
                        header[c]
                    )));
                }
                (m, sd)
            }
            None => {
                let vals: Vec<f64> = raw.iter().map(|r| r.features[c].parse().unwrap()).collect();
                let n = vals.len() as f64;
                let m = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                (m, if var > 0.0 { var.sqrt() } else { 1.0 })
            }
        };
    }

    let mut rct = Vec::new();
    let mut obs = Vec::new();
    for r in raw {
        let mut x = Vec::with_capacity(feature_names.len());
        for (c, kind) in kinds.iter().enumerate() {
            let v = &r.features[c];
            match kind {
                ColumnKind::Binary => x.push(v.parse().unwrap()),
                ColumnKind::Continuous => {
                    let (m, sd) = scaling[c];
                    x.push((v.parse::<f64>().unwrap() - m) / sd);
                }
                ColumnKind::Categorical(labels) => {
                    x.extend(labels.iter().map(|l| if l == v { 1.0 } else { 0.0 }))
                }
            }
        }
        let sample = Sample { x, y: r.y, t: r.t };
        match r.source {
            Source::Rct => rct.push(sample),
            Source::Obs => obs.push(sample),
        }
    }
    Ok(Dataset {
        feature_names,
        rct,
        obs,
    })
}

/// Writes samples in the loader's format: feature columns, then `y`, `t`,
/// and `source`. Floats use the shortest round-trip representation.
pub fn write_csv(
    path: impl AsRef<Path>,
    feature_names: &[String],
    samples: &[Sample],
    source: Source,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for name in feature_names {
        out.push_str(name);
        out.push(',');
    }
    out.push_str("y,t,source\n");
    for s in samples {
        for v in &s.x {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{},{},{}\n", s.y, u8::from(s.t), source.as_str()));
    }
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
