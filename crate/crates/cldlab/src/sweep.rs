//! Cartesian parameter sweeps over a base config.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::run::{run_experiment, ResultRecord};

/// Dotted config path (`objective.lambda`, `trainer.lr`, `seed`) to the
/// values it takes.
pub type Grid = BTreeMap<String, Vec<Value>>;

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run_index: usize,
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    /// Grid values of this run, keyed like the grid.
    pub params: BTreeMap<String, Value>,
    pub source_loss: f64,
    pub target_loss: f64,
    pub target_accuracy: f64,
    pub ci_index: f64,
    pub invariance_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub records: Vec<ResultRecord>,
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut at = root;
    for (i, p) in parts.iter().enumerate() {
        let obj = at.as_object_mut().ok_or_else(|| {
            HarnessError::config(format!("grid.{key}"), format!("{} is not an object", parts[..i].join(".")))
        })?;
        if i + 1 == parts.len() {
            obj.insert((*p).to_string(), value);
            return Ok(());
        }
        at = obj.entry((*p).to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split yields at least one part")
}

/// Every combination of grid values, last key varying fastest.
pub fn combinations(grid: &Grid) -> Result<Vec<BTreeMap<String, Value>>> {
    let mut out = vec![BTreeMap::new()];
    for (k, vs) in grid {
        if vs.is_empty() {
            return Err(HarnessError::config(format!("grid.{k}"), "empty value list"));
        }
        out = out
            .into_iter()
            .flat_map(|base| {
                vs.iter().map(move |v| {
                    let mut m = base.clone();
                    m.insert(k.clone(), v.clone());
                    m
                })
            })
            .collect();
    }
    Ok(out)
}

/// The config of each run. Seeds are `base seed + run index` unless the
/// grid sets `seed` itself.
pub fn expand(base: &ExperimentConfig, grid: &Grid) -> Result<Vec<(BTreeMap<String, Value>, ExperimentConfig)>> {
    let base_value = serde_json::to_value(base).expect("config serialises");
    combinations(grid)?
        .into_iter()
        .enumerate()
        .map(|(i, params)| {
            let mut v = base_value.clone();
            if !params.contains_key("seed") {
                set_path(&mut v, "seed", Value::from(base.seed + i as u64))?;
            }
            for (k, val) in &params {
                set_path(&mut v, k, val.clone())?;
            }
            let cfg = ExperimentConfig::from_value(v).map_err(|e| match e {
                HarnessError::Config { path, message } => {
                    HarnessError::config(format!("grid run {i}: {path}"), message)
                }
                other => other,
            })?;
            Ok((params, cfg))
        })
        .collect()
}

pub fn sweep(base: &ExperimentConfig, grid: &Grid, dir: Option<&Path>) -> Result<SweepOutput> {
    let runs = expand(base, grid)?;
    let mut rows = Vec::with_capacity(runs.len());
    let mut records = Vec::with_capacity(runs.len());
    for (i, (params, cfg)) in runs.into_iter().enumerate() {
        let rec = run_experiment(&cfg, dir)?;
        let s = &rec.summary;
        rows.push(SweepRow {
            run_index: i,
            run_id: s.run_id.clone(),
            config_hash: s.config_hash.clone(),
            seed: s.seed,
            params,
            source_loss: s.source[0].loss,
            target_loss: s.target.loss,
            target_accuracy: s.target.accuracy,
            ci_index: s.ci_index,
            invariance_deviation: s.invariance_deviation,
        });
        records.push(rec);
    }
    Ok(SweepOutput { rows, records })
}

/// CSV of the sweep table; grid values appear as JSON text in one column
/// per grid key (`seed` has its own column already).
pub fn sweep_csv(grid: &Grid, rows: &[SweepRow]) -> Result<Vec<u8>> {
    let keys: Vec<&String> = grid.keys().filter(|k| *k != "seed").collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run_index".to_string(), "run_id".into(), "config_hash".into(), "seed".into()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.extend(
        ["source_loss", "target_loss", "target_accuracy", "ci_index", "invariance_deviation"].map(String::from),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.run_index.to_string(), r.run_id.clone(), r.config_hash.clone(), r.seed.to_string()];
        rec.extend(keys.iter().map(|k| r.params.get(*k).map(Value::to_string).unwrap_or_default()));
        rec.extend(
            [r.source_loss, r.target_loss, r.target_accuracy, r.ci_index, r.invariance_deviation]
                .map(|v| format!("{v}")),
        );
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| HarnessError::io("<csv buffer>", e.into_error()))
}
