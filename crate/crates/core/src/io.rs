//! File formats: long-format observation CSV, fitted-model JSON and depth CSV.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::depth::DepthMethod;
use crate::dgp::{SparseCurve, SparseSample};
use crate::error::{Error, Result};
use crate::smoothing::FittedModel;
use crate::Grid;

const LONG_HEADER: [&str; 3] = ["subject_id", "time", "value"];

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Writes `subject_id,time,value` rows, one per observation.
pub fn write_long_csv<W: Write>(writer: W, sample: &SparseSample) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LONG_HEADER).map_err(csv_error)?;
    for c in sample.curves() {
        for (t, x) in c.times().iter().zip(c.values()) {
            w.write_record([c.subject_id(), &t.to_string(), &x.to_string()])
                .map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a long-format CSV. Curves appear in order of first occurrence and
/// each curve's rows are sorted by time.
pub fn read_long_csv<R: Read>(reader: R) -> Result<SparseSample> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers().map_err(csv_error)?.clone();
    if header.iter().collect::<Vec<_>>() != LONG_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}, found {}", LONG_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(f64, f64, u64)>> = HashMap::new();
    for record in r.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("invalid {name} '{raw}'"),
                })
        };
        let id = record.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty subject_id".into(),
            });
        }
        let (t, x) = (field(1, "time")?, field(2, "value")?);
        rows.entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push((t, x, line));
    }
    if order.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no observations".into(),
        });
    }
    let curves = order
        .into_iter()
        .map(|id| {
            let mut obs = rows.remove(&id).expect("recorded id");
            obs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let line = obs.last().map(|o| o.2).unwrap_or(0);
            let (times, values) = obs.iter().map(|o| (o.0, o.1)).unzip();
            SparseCurve::new(id, times, values).map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SparseSample::new(curves)
}

/// On-disk form of a [`FittedModel`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub grid: Vec<f64>,
    pub mu: Vec<f64>,
    /// Row-major `M × M`.
    pub gamma: Vec<f64>,
    pub sigma2: f64,
    pub eigenvalues: Vec<f64>,
    /// One row per component.
    pub eigenfunctions: Vec<Vec<f64>>,
}

impl From<&FittedModel> for ModelFile {
    fn from(m: &FittedModel) -> Self {
        Self {
            grid: m.grid().points().to_vec(),
            mu: m.mu().to_vec(),
            gamma: m.gamma().to_vec(),
            sigma2: m.sigma2(),
            eigenvalues: m.eigenvalues().to_vec(),
            eigenfunctions: m.eigenfunctions().to_vec(),
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<FittedModel> {
        let grid = Arc::new(Grid::new(self.grid)?);
        FittedModel::from_components(grid, self.mu, self.gamma, self.sigma2, self.eigenvalues, self.eigenfunctions)
    }
}

pub fn write_model<W: Write>(writer: W, model: &FittedModel) -> Result<()> {
    serde_json::to_writer_pretty(writer, &ModelFile::from(model))?;
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<FittedModel> {
    let file: ModelFile = serde_json::from_reader(reader)?;
    file.into_model()
}

/// One row of a depth table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthRecord {
    pub subject_id: String,
    pub method: DepthMethod,
    /// Empty for methods without a regularization radius.
    pub lambda: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub depth: f64,
}

pub fn write_depth_csv<W: Write>(writer: W, rows: &[DepthRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    if rows.is_empty() {
        w.write_record(["subject_id", "method", "lambda", "K", "depth"]).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_depth_csv<R: Read>(reader: R) -> Result<Vec<DepthRecord>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(csv_error))
        .collect()
}
