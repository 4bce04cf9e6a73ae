use std::path::Path;

use gelgt_core::dataset::Dataset;
use gelgt_core::model::GelGTModel;
use gelgt_core::relstore::{load_schema, load_tables};
use gelgt_core::synthgen::generate_db;
use gelgt_core::trainer::{evaluate, train, EpochRecord, TrainOutcome};
use gelgt_core::Result;

use crate::config::RunConfig;

/// Loads `dir/schema.json` plus CSVs, or generates the synthetic database
/// when no directory is given.
pub fn load_dataset(dir: Option<&Path>, cfg: &RunConfig) -> Result<Dataset> {
    let (schema, data) = match dir {
        Some(d) => {
            let schema = load_schema(&d.join("schema.json"))?;
            let data = load_tables(&schema, d)?;
            (schema, data)
        }
        None => generate_db(&cfg.synth)?,
    };
    Dataset::build(&schema, &data, cfg.split)
}

pub fn build_model(data: &Dataset, cfg: &RunConfig) -> Result<GelGTModel> {
    GelGTModel::new(
        cfg.model.clone(),
        cfg.switches(),
        data.rows.kind,
        &data.graph,
        &data.features,
        cfg.sampling.max_hop,
        cfg.train.rng_seed,
    )
}

#[derive(Debug)]
pub struct RunResult {
    pub model: GelGTModel,
    pub outcome: TrainOutcome,
    pub test_metric: f64,
    pub variant: String,
}

/// Trains per `cfg` and scores the best checkpoint on the test split.
pub fn run_training(data: &Dataset, cfg: &RunConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<RunResult> {
    cfg.validate()?;
    let mut model = build_model(data, cfg)?;
    let sampler = cfg.sampler();
    let variant = cfg.ablations.variant();
    let outcome = train(&mut model, data, &sampler, &cfg.train, &variant, on_epoch)?;
    let test_metric = evaluate(&model, data, &data.split.test, &sampler)?;
    Ok(RunResult {
        model,
        outcome,
        test_metric,
        variant,
    })
}
