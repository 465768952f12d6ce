//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use cldlab_core::metrics::ci_index_mc;
use cldlab_core::oracle::{exact_ci_index, verify_theorems};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result, EXIT_OK, EXIT_VERIFY_FAILED};
use crate::family::{load_family, FamilyDoc};
use crate::io::{load_checkpoint, pairs_jsonl, save_checkpoint, write_atomic, write_json, write_results, Format};
use crate::run::{run_id, Prepared, ResultRecord, ResultRow, Split};
use crate::sweep::{sweep, sweep_csv, Grid};

/// Environment variable that overrides `--out`.
pub const OUT_ENV: &str = "CLDLAB_OUT";

/// Default claim tolerance of `verify`.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(name = "cldlab", version, about = "Exact-enumeration domain-generalization laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (the CLDLAB_OUT environment variable takes precedence).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample source datasets and contrastive pairs to files.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Records per source domain (default: the config's train_samples, else 1000).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train per the config and write results, summary and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on every domain of the config's family.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Check the structural claims on a family; exits 1 on any failure.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Fixture name or family document (instead of a config).
        #[arg(long)]
        family: Option<String>,
        #[arg(long, default_value_t = VERIFY_TOLERANCE)]
        tol: f64,
    },
    /// Exact and Monte Carlo CI index of a checkpoint on every domain.
    CiIndex {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the Cartesian product of a parameter grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// JSON object mapping dotted config paths to value lists.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
}

impl Common {
    pub fn out_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.out.clone(),
        }
    }

    fn base_dir(&self) -> Option<PathBuf> {
        self.config.as_ref().and_then(|p| p.parent()).map(Path::to_path_buf)
    }

    pub fn load_config(&self) -> Result<ExperimentConfig> {
        let path =
            self.config.as_ref().ok_or_else(|| HarnessError::config("--config", "this command needs a config file"))?;
        let mut cfg = ExperimentConfig::load(path)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    fn prepare(&self) -> Result<Prepared> {
        Prepared::new(self.load_config()?, self.base_dir().as_deref())
    }
}

fn write_config(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let value: serde_json::Value = serde_json::from_str(&cfg.canonical_json()).expect("canonical JSON parses");
    write_json(&out.join("configs").join(format!("{}.json", cfg.hash())), &value)
}

/// Writes everything a training run produces.
pub fn write_run(out: &Path, rec: &ResultRecord, format: Format) -> Result<()> {
    write_config(out, &rec.config)?;
    write_results(&out.join("results"), &rec.rows, format)?;
    write_json(&out.join("summary.json"), &rec.summary)?;
    save_checkpoint(&out.join("checkpoint.json"), &rec.model)
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    status: &'static str,
    error: String,
    config_hash: &'a str,
    run_id: String,
}

fn train_cmd(common: &Common) -> Result<i32> {
    let prep = common.prepare()?;
    let out = common.out_dir();
    match prep.run() {
        Ok(rec) => {
            write_run(&out, &rec, common.format)?;
            Ok(EXIT_OK)
        }
        Err(e @ HarnessError::Numeric(_)) => {
            let hash = prep.config.hash();
            write_json(
                &out.join("diagnostic.json"),
                &Diagnostic {
                    status: "numeric failure",
                    error: e.to_string(),
                    config_hash: &hash,
                    run_id: run_id(&hash, prep.config.seed),
                },
            )?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

fn generate_cmd(common: &Common, samples: Option<usize>) -> Result<i32> {
    let prep = common.prepare()?;
    let out = common.out_dir();
    let n = samples.or(prep.config.data.train_samples).unwrap_or(1000);
    if n == 0 {
        return Err(HarnessError::config("--samples", "must be positive"));
    }
    write_json(&out.join("family.json"), &FamilyDoc::from_family(&prep.loaded.family, &prep.loaded.domains))?;
    for d in prep.source_samples(n)? {
        write_json(&out.join(format!("data_{}.json", d.domain_id)), &d)?;
    }
    write_atomic(&out.join("pairs.jsonl"), &pairs_jsonl(&prep.pair_data()?.pairs))?;
    write_config(&out, &prep.config)?;
    Ok(EXIT_OK)
}

fn evaluate_cmd(common: &Common, checkpoint: &Path) -> Result<i32> {
    let prep = common.prepare()?;
    let model = load_checkpoint(checkpoint)?;
    check_model_fits(&prep, &model)?;
    let cfg = &prep.config;
    let hash = cfg.hash();
    let id = run_id(&hash, cfg.seed);
    let mut rows = Vec::new();
    for d in &prep.loaded.domains {
        let split = if cfg.sources.contains(&d.domain_id) {
            Split::Source
        } else if d.domain_id == cfg.target {
            Split::Target
        } else {
            Split::Other
        };
        let r = prep.evaluate(&model, d)?;
        rows.push(ResultRow {
            run_id: id.clone(),
            config_hash: hash.clone(),
            step: cfg.trainer.steps,
            domain_id: d.domain_id,
            split,
            loss_nats: r.loss,
            accuracy: r.accuracy,
            ci_index: prep.ci_index(&model, d)?,
            penalty_value: None,
            penalty_kind: cfg.objective.kind.name().to_string(),
            seed: cfg.seed,
        });
    }
    let out = common.out_dir();
    write_config(&out, cfg)?;
    write_results(&out.join("evaluation"), &rows, common.format)?;
    Ok(EXIT_OK)
}

fn check_model_fits(prep: &Prepared, model: &cldlab_core::diffkit::Model) -> Result<()> {
    let s = prep.loaded.family.spaces();
    if model.embedding.n_obs() != s.n_obs || model.n_classes() != s.n_classes {
        return Err(HarnessError::config(
            "checkpoint",
            format!("model is for {} observations and {} classes", model.embedding.n_obs(), model.n_classes()),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiRow {
    pub domain_id: usize,
    pub exact: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub n_pairs: usize,
    pub reps: usize,
}

fn ci_cmd(common: &Common, checkpoint: &Path) -> Result<i32> {
    let prep = common.prepare()?;
    let model = load_checkpoint(checkpoint)?;
    check_model_fits(&prep, &model)?;
    let e = &prep.config.eval;
    let table = model.predictor_table()?;
    let family = &prep.loaded.family;
    let reps = if family.is_deterministic() { e.ci_reps } else { e.ci_reps.max(64) };
    let stream = prep.stream().named("eval").named("ci");
    let mut rows = Vec::new();
    for d in &prep.loaded.domains {
        let mc =
            ci_index_mc(&model, family, d, e.ci_pairs.max(1), reps, e.ci_style, stream.seed_at(d.domain_id as u64))?;
        rows.push(CiRow {
            domain_id: d.domain_id,
            exact: exact_ci_index(family, d, &table),
            estimate: mc.value,
            stderr: mc.stderr,
            n_pairs: mc.n_pairs,
            reps,
        });
    }
    let out = common.out_dir();
    let path = out.join("ci_index").with_extension(common.format.extension());
    match common.format {
        Format::Json => write_json(&path, &rows)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r)?;
            }
            let bytes = w.into_inner().map_err(|e| HarnessError::io(&path, e.into_error()))?;
            write_atomic(&path, &bytes)?;
        }
    }
    Ok(EXIT_OK)
}

fn verify_cmd(common: &Common, family: Option<&str>, tol: f64) -> Result<i32> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(HarnessError::config("--tol", "must be positive"));
    }
    let loaded = match family {
        Some(f) => load_family(f, None, "--family")?,
        None => {
            let cfg = common.load_config()?;
            load_family(&cfg.family, common.base_dir().as_deref(), "family")?
        }
    };
    let report = verify_theorems(&loaded.family, &loaded.domains, tol);
    write_json(&common.out_dir().join("report.json"), &report)?;
    Ok(if report.any_fail() { EXIT_VERIFY_FAILED } else { EXIT_OK })
}

fn sweep_cmd(common: &Common, grid: Option<&Path>) -> Result<i32> {
    let cfg = common.load_config()?;
    let grid: Grid = match grid {
        Some(p) => crate::io::read_json(p)?,
        None => Grid::new(),
    };
    let out_put = sweep(&cfg, &grid, common.base_dir().as_deref())?;
    let out = common.out_dir();
    let mut all = Vec::new();
    for rec in &out_put.records {
        write_config(&out, &rec.config)?;
        all.extend(rec.rows.iter().cloned());
    }
    write_results(&out.join("results"), &all, common.format)?;
    match common.format {
        Format::Csv => write_atomic(&out.join("sweep.csv"), &sweep_csv(&grid, &out_put.rows)?)?,
        Format::Json => write_json(&out.join("sweep.json"), &out_put.rows)?,
    }
    Ok(EXIT_OK)
}

/// Runs a parsed command and returns the process exit status.
pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Generate { common, samples } => generate_cmd(common, *samples),
        Command::Train { common } => train_cmd(common),
        Command::Evaluate { common, checkpoint } => evaluate_cmd(common, checkpoint),
        Command::Verify { common, family, tol } => verify_cmd(common, family.as_deref(), *tol),
        Command::CiIndex { common, checkpoint } => ci_cmd(common, checkpoint),
        Command::Sweep { common, grid } => sweep_cmd(common, grid.as_deref()),
    }
}
