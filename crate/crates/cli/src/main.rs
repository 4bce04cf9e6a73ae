use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gelgt_cli::config::{Ablations, RunConfig};
use gelgt_cli::exit;
use gelgt_cli::run::{build_model, load_dataset, run_training};
use gelgt_core::relstore::write_database;
use gelgt_core::synthgen::generate_db;
use gelgt_core::trainer::{evaluate, SamplerSetup};
use gelgt_core::CoreError;
use gelgt_oracles::{run_suite, SuiteOptions};
use serde_json::json;

#[derive(Parser)]
#[command(name = "gelgt", version, about = "Temporal graph transformer over relational databases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory with schema.json and table CSVs; generated in memory when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct AblationFlags {
    #[arg(long)]
    no_structural_sampling: bool,
    #[arg(long)]
    no_semantic_refinement: bool,
    #[arg(long)]
    no_gaussian_bias: bool,
    #[arg(long)]
    no_gnn_branch: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic database as CSVs plus schema.json.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the generator seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a database and report graph statistics.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the subgraph of one task row.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ablations: AblationFlags,
        /// Task row index.
        #[arg(long)]
        row: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and write metrics.jsonl, the best checkpoint and summary.json.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ablations: AblationFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ablations: AblationFlags,
        /// Checkpoint stem, as written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the reference checks; exit 1 if any fails.
    Verify {
        /// Run one group only: katz, structural, hop, snr, mu or euler.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the full model and each single-component ablation over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Comma-separated variant names.
        #[arg(
            long,
            default_value = "full,no_structural_sampling,no_semantic_refinement,no_gaussian_bias,no_gnn_branch"
        )]
        variants: String,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Core(CoreError),
    Verification(String),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<gelgt_numcore::NumError> for Failure {
    fn from(e: gelgt_numcore::NumError) -> Self {
        Failure::Core(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match dispatch(cli.command) {
        Ok(()) => exit::OK,
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            exit::VERIFICATION_FAILED
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                CoreError::NonFinite(_) => exit::NUMERIC_ABORT,
                _ => exit::CONFIG_ERROR,
            }
        }
    };
    ExitCode::from(code as u8)
}

fn dispatch(cmd: Command) -> Outcome {
    match cmd {
        Command::Gen { config, seed, out } => cmd_gen(config.as_deref(), seed, &out),
        Command::Ingest { data, out } => cmd_ingest(&data, out.as_deref()),
        Command::Sample {
            common,
            ablations,
            row,
            out,
        } => cmd_sample(&common, ablations, row, out.as_deref()),
        Command::Train { common, ablations, out } => cmd_train(&common, ablations, &out),
        Command::Eval {
            common,
            ablations,
            checkpoint,
            split,
            out,
        } => cmd_eval(&common, ablations, &checkpoint, &split, out.as_deref()),
        Command::Verify { only, seed, out } => cmd_verify(only, seed, out.as_deref()),
        Command::Ablate {
            common,
            seeds,
            variants,
            out,
        } => cmd_ablate(&common, seeds, &variants, &out),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CoreError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Config with command-line overrides applied. Flags only switch ablations on.
fn resolve(common: &Common, flags: Option<AblationFlags>) -> Result<RunConfig, CoreError> {
    let mut cfg = load_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(f) = flags {
        let a = &mut cfg.ablations;
        a.no_structural_sampling |= f.no_structural_sampling;
        a.no_semantic_refinement |= f.no_semantic_refinement;
        a.no_gaussian_bias |= f.no_gaussian_bias;
        a.no_gnn_branch |= f.no_gnn_branch;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(out: Option<&Path>, value: &serde_json::Value) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(CoreError::from)?;
    match out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_gen(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Outcome {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.synth.rng_seed = s;
    }
    cfg.validate()?;
    let (schema, data) = generate_db(&cfg.synth)?;
    write_database(&schema, &data, out)?;
    Ok(())
}

fn cmd_ingest(dir: &Path, out: Option<&Path>) -> Outcome {
    let cfg = RunConfig::default();
    let data = load_dataset(Some(dir), &cfg)?;
    let g = &data.graph;
    let tables: Vec<_> = g
        .type_names
        .iter()
        .enumerate()
        .map(|(t, name)| json!({"table": name, "rows": g.node_count(t)}))
        .collect();
    let edge_types: Vec<_> = g.edge_types.iter().map(|e| e.name.clone()).collect();
    write_json(
        out,
        &json!({
            "tables": tables,
            "nodes": g.num_nodes(),
            "relational_edges": g.relational_edges,
            "edge_types": edge_types,
            "dangling_foreign_keys": g.dangling,
            "task_rows": data.rows.len(),
            "split": {
                "train": data.split.train.len(),
                "val": data.split.val.len(),
                "test": data.split.test.len(),
            },
        }),
    )
}

fn cmd_sample(common: &Common, flags: AblationFlags, row: usize, out: Option<&Path>) -> Outcome {
    let cfg = resolve(common, Some(flags))?;
    let data = load_dataset(common.data.as_deref(), &cfg)?;
    if row >= data.rows.len() {
        return Err(CoreError::Config(format!("row {row} out of range for {} task rows", data.rows.len())).into());
    }
    let model = build_model(&data, &cfg)?;
    let sampler = cfg.sampler();
    let emb = sampler.embeddings(&model, &data)?;
    let sub = data.sample_rows(&[row], &emb, &sampler.config, sampler.mode)?.remove(0);
    let delta_days: Vec<Option<f64>> = sub
        .delta_days()
        .into_iter()
        .map(|d| d.is_finite().then_some(d))
        .collect();
    let tables: Vec<&str> = sub
        .nodes
        .iter()
        .map(|&n| data.graph.type_names[data.graph.node_type[n]].as_str())
        .collect();
    let rows: Vec<usize> = sub.nodes.iter().map(|&n| data.graph.node_row[n]).collect();
    write_json(
        out,
        &json!({
            "row": row,
            "seed_time": sub.seed_time,
            "nodes": sub.nodes,
            "tables": tables,
            "table_rows": rows,
            "hop": sub.hop,
            "delta_days": delta_days,
            "edges": sub.edges,
        }),
    )
}

fn cmd_train(common: &Common, flags: AblationFlags, out: &Path) -> Outcome {
    let cfg = resolve(common, Some(flags))?;
    let data = load_dataset(common.data.as_deref(), &cfg)?;
    fs::create_dir_all(out)?;
    train_into(&data, &cfg, out, "metrics.jsonl", "checkpoint").map(|_| ())
}

/// Trains once, streaming epoch records to `out/log_name`; returns the test metric.
fn train_into(
    data: &gelgt_core::dataset::Dataset,
    cfg: &RunConfig,
    out: &Path,
    log_name: &str,
    ckpt_stem: &str,
) -> Result<f64, Failure> {
    let mut log = BufWriter::new(File::create(out.join(log_name))?);
    let mut write_err = None;
    let result = run_training(data, cfg, |rec| {
        let line = serde_json::to_string(rec).expect("epoch record serializes");
        if let Err(e) = writeln!(log, "{line}") {
            write_err.get_or_insert(e);
        }
    });
    log.flush()?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let r = result?;
    gelgt_numcore::checkpoint::save(&r.model.store, &out.join(ckpt_stem))?;
    let summary = json!({
        "variant": r.variant,
        "seed": cfg.train.rng_seed,
        "best_epoch": r.outcome.best_epoch,
        "best_val": r.outcome.best_val,
        "test_metric": r.test_metric,
    });
    write_json(Some(&out.join(format!("{ckpt_stem}.summary.json"))), &summary)?;
    println!("{}", serde_json::to_string(&summary).map_err(CoreError::from)?);
    Ok(r.test_metric)
}

fn cmd_eval(common: &Common, flags: AblationFlags, ckpt: &Path, split: &str, out: Option<&Path>) -> Outcome {
    let cfg = resolve(common, Some(flags))?;
    let data = load_dataset(common.data.as_deref(), &cfg)?;
    let mut model = build_model(&data, &cfg)?;
    gelgt_numcore::checkpoint::load_into(&mut model.store, ckpt)?;
    let rows = match split {
        "train" => &data.split.train,
        "val" => &data.split.val,
        "test" => &data.split.test,
        other => return Err(CoreError::Config(format!("unknown split {other:?}")).into()),
    };
    let sampler: SamplerSetup = cfg.sampler();
    let metric = evaluate(&model, &data, rows, &sampler)?;
    write_json(out, &json!({"split": split, "variant": cfg.ablations.variant(), "metric": metric}))
}

fn cmd_verify(only: Option<String>, seed: u64, out: Option<&Path>) -> Outcome {
    if let Some(g) = &only {
        if !gelgt_oracles::suite::GROUPS.contains(&g.as_str()) {
            return Err(CoreError::Config(format!(
                "unknown check group {g:?}; expected one of {:?}",
                gelgt_oracles::suite::GROUPS
            ))
            .into());
        }
    }
    let opts = SuiteOptions {
        seed,
        only,
        ..SuiteOptions::default()
    };
    let reports = run_suite(&opts).map_err(|e| Failure::Verification(e.to_string()))?;
    write_json(out, &serde_json::to_value(&reports).map_err(CoreError::from)?)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.ok()).map(|r| r.check.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failed.join(", ")))
    }
}

fn cmd_ablate(common: &Common, seeds: u64, variants: &str, out: &Path) -> Outcome {
    let base = resolve(common, None)?;
    let data = load_dataset(common.data.as_deref(), &base)?;
    fs::create_dir_all(out)?;
    let mut table = serde_json::Map::new();
    for name in variants.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let ablations = Ablations::single(name)
            .ok_or_else(|| CoreError::Config(format!("unknown variant {name:?}")))?;
        let mut metrics = Vec::new();
        for s in 0..seeds {
            let mut cfg = base.clone().with_seed(base.train.rng_seed + s);
            cfg.ablations = ablations;
            let stem = format!("{name}_seed{}", cfg.train.rng_seed);
            metrics.push(train_into(&data, &cfg, out, &format!("{stem}.metrics.jsonl"), &stem)?);
        }
        let mean = metrics.iter().sum::<f64>() / metrics.len().max(1) as f64;
        table.insert(name.to_string(), json!({"test_metrics": metrics, "mean": mean}));
    }
    write_json(Some(&out.join("ablation.json")), &serde_json::Value::Object(table))
}
