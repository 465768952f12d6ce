//! File formats and atomic writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use cldlab_core::diffkit::{Activation, Embedding, Matrix, Model};
use cldlab_core::pairgen::ContrastivePair;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::run::ResultRow;

/// Exact header of every results CSV.
pub const CSV_HEADER: &str =
    "run_id,config_hash,step,domain_id,split,loss_nats,accuracy,ci_index,penalty_value,penalty_kind,seed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serialisable value");
    v.push(b'\n');
    v
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &json_bytes(value))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::config(path.display().to_string(), e))
}

fn fmt_f64(v: f64) -> String {
    // shortest representation that parses back to the same bits
    format!("{v}")
}

pub fn results_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.config_hash.clone(),
            r.step.to_string(),
            r.domain_id.to_string(),
            serde_json::to_value(r.split).expect("split").as_str().expect("string").to_string(),
            fmt_f64(r.loss_nats),
            fmt_f64(r.accuracy),
            fmt_f64(r.ci_index),
            r.penalty_value.map(fmt_f64).unwrap_or_default(),
            r.penalty_kind.clone(),
            r.seed.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::io("<csv buffer>", e.into_error()))
}

pub fn write_results(path_stem: &Path, rows: &[ResultRow], format: Format) -> Result<PathBuf> {
    let path = path_stem.with_extension(format.extension());
    match format {
        Format::Csv => write_atomic(&path, &results_csv(rows)?)?,
        Format::Json => write_json(&path, rows)?,
    }
    Ok(path)
}

/// Flat model checkpoint; parameter arrays follow `shapes`, head last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub embedding: Embedding,
    pub activation: Activation,
    pub shapes: Vec<[usize; 2]>,
    pub params: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model(m: &Model) -> Self {
        let mats = m.params();
        Self {
            embedding: m.embedding.clone(),
            activation: m.activation,
            shapes: mats.iter().map(|p| [p.rows, p.cols]).collect(),
            params: mats.iter().map(|p| p.data.clone()).collect(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        let bad = |msg: String| HarnessError::config("checkpoint", msg);
        if self.shapes.is_empty() || self.shapes.len() != self.params.len() {
            return Err(bad("shapes and params must be non-empty and of equal length".into()));
        }
        let mut mats = Vec::with_capacity(self.shapes.len());
        let mut width = self.embedding.dim();
        for (i, ([r, c], data)) in self.shapes.into_iter().zip(self.params).enumerate() {
            if r * c != data.len() {
                return Err(bad(format!("params[{i}] has {} values for shape {r}x{c}", data.len())));
            }
            // every layer carries a bias row
            if r != width + 1 {
                return Err(bad(format!("params[{i}] expects {} input rows, found {r}", width + 1)));
            }
            width = c;
            mats.push(Matrix { rows: r, cols: c, data });
        }
        let head = mats.pop().expect("non-empty");
        Ok(Model { embedding: self.embedding, activation: self.activation, layers: mats, head })
    }
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    write_json(path, &Checkpoint::from_model(model))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    read_json::<Checkpoint>(path)?.into_model()
}

/// One JSON object per line.
pub fn pairs_jsonl(pairs: &[ContrastivePair]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut out, p).expect("pair serialises");
        out.push(b'\n');
    }
    out
}

pub fn parse_pairs_jsonl(text: &str) -> Result<Vec<ContrastivePair>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| HarnessError::config(format!("line {}", i + 1), e)))
        .collect()
}
