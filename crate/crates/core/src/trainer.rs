//! Adam with decoupled weight decay, the epoch loop, and evaluation.

use gelgt_numcore::{ParamStore, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{CoreError, Result};
use crate::metrics::{auc, mae};
use crate::model::{loss, GelGTModel};
use crate::relstore::TaskKind;
use crate::sampler::{splitmix, SampledSubgraph, SamplerMode, SamplingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps_per_epoch: usize,
    pub warmup_steps: usize,
    pub rng_seed: u64,
    /// Learning-rate factor for the bias centers and widths.
    pub bias_lr_multiplier: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 64,
            epochs: 10,
            max_steps_per_epoch: 500,
            warmup_steps: 10,
            rng_seed: 0,
            bias_lr_multiplier: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.max_steps_per_epoch > 0
            && self.bias_lr_multiplier > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("invalid training config {self:?}")))
        }
    }

    /// `lr · min(1, step / warmup)` for 1-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.lr;
        }
        self.lr * (step as f64 / self.warmup_steps as f64).min(1.0)
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, p)| Tensor::zeros(p.value().shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One bias-corrected update; `lr_scale[i]` multiplies `lr` for parameter `i`.
    /// Decay is decoupled: `θ ← θ − lr·(m̂/(√v̂ + ε) + wd·θ)`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, weight_decay: f64, lr_scale: &[f64]) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(CoreError::Data("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (i, p) in store.iter_mut().enumerate() {
            let lr_i = lr * lr_scale.get(i).copied().unwrap_or(1.0);
            if p.grad.shape() != self.m[i].shape() {
                return Err(CoreError::Data(format!("shape changed for {}", p.name)));
            }
            let grad = p.grad.data().to_vec();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let theta = p.value_mut().data_mut();
            for k in 0..theta.len() {
                let g = grad[k];
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                theta[k] -= lr_i * (mh / (vh.sqrt() + ADAM_EPS) + weight_decay * theta[k]);
            }
        }
        Ok(())
    }
}

/// One line of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub eta: f64,
    pub mu_per_head: Vec<Vec<f64>>,
    pub sigma_per_head: Vec<Vec<f64>>,
    pub variant: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
}

/// Sampling settings used for every split of a run.
#[derive(Debug, Clone)]
pub struct SamplerSetup {
    pub config: SamplingConfig,
    pub mode: SamplerMode,
}

impl SamplerSetup {
    /// Tabular embeddings for similarity ranking, when refinement is on.
    pub fn embeddings(&self, model: &GelGTModel, data: &Dataset) -> Result<Tensor> {
        if self.mode.refine {
            model.encoders.embed_all(&model.store, &data.graph, &data.features)
        } else {
            Ok(Tensor::zeros(&[0, 0]))
        }
    }
}

/// Higher is better for AUC, lower for MAE.
pub fn improves(kind: TaskKind, candidate: f64, best: Option<f64>) -> bool {
    match best {
        None => candidate.is_finite(),
        Some(b) => match kind {
            TaskKind::BinaryClassification => candidate > b,
            TaskKind::Regression => candidate < b,
        },
    }
}

pub fn metric(kind: TaskKind, scores: &[f64], targets: &[f64]) -> Result<f64> {
    match kind {
        TaskKind::BinaryClassification => auc(scores, targets),
        TaskKind::Regression => mae(scores, targets),
    }
}

pub fn predict_all(model: &GelGTModel, data: &Dataset, subs: &[SampledSubgraph]) -> Result<Vec<f64>> {
    subs.iter()
        .map(|s| model.predict(&data.graph, &data.features, s))
        .collect()
}

/// Metric of `model` on the given task rows, sampling with current embeddings.
pub fn evaluate(model: &GelGTModel, data: &Dataset, rows: &[usize], sampler: &SamplerSetup) -> Result<f64> {
    let emb = sampler.embeddings(model, data)?;
    let subs = data.sample_rows(rows, &emb, &sampler.config, sampler.mode)?;
    let scores = predict_all(model, data, &subs)?;
    metric(model.task, &scores, &data.targets(rows))
}

/// Trains in place and leaves the best-validation parameters in `model`.
pub fn train(
    model: &mut GelGTModel,
    data: &Dataset,
    sampler: &SamplerSetup,
    config: &TrainConfig,
    variant: &str,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let lr_scale: Vec<f64> = model
        .store
        .iter()
        .map(|(_, p)| {
            if p.name.ends_with(".mu") || p.name.ends_with(".rho") {
                config.bias_lr_multiplier
            } else {
                1.0
            }
        })
        .collect();
    let mut adam = AdamState::new(&model.store);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(splitmix(config.rng_seed));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(splitmix(config.rng_seed ^ 0x5EED_D80F));
    let mut order = data.split.train.clone();
    let mut best: Option<(f64, ParamStore, usize)> = None;
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let emb = sampler.embeddings(model, data)?;
        order.shuffle(&mut shuffle_rng);
        let steps = order
            .len()
            .div_ceil(config.batch_size)
            .min(config.max_steps_per_epoch);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(config.batch_size).take(steps) {
            let subs = data.sample_rows(batch, &emb, &sampler.config, sampler.mode)?;
            model.store.zero_grad();
            let inv = 1.0 / batch.len() as f64;
            for (sub, &r) in subs.iter().zip(batch) {
                let mut tape = Tape::new();
                let f = model.forward(&mut tape, &data.graph, &data.features, sub, Some(&mut dropout_rng))?;
                let l = loss(&mut tape, f.score, data.rows.targets[r], model.task)?;
                let value = tape.value(l).data()[0];
                if !value.is_finite() {
                    return Err(CoreError::NonFinite(format!(
                        "loss {value} at epoch {epoch}, step {}, seed node {}",
                        adam.step + 1,
                        sub.nodes[0]
                    )));
                }
                loss_sum += value;
                seen += 1;
                let scaled = tape.scale(l, inv);
                tape.backward(scaled, &mut model.store)?;
            }
            if let Some((_, p)) = model.store.iter().find(|(_, p)| !p.grad.all_finite()) {
                return Err(CoreError::NonFinite(format!(
                    "gradient of {} at epoch {epoch}",
                    p.name
                )));
            }
            let lr = config.lr_at(adam.step + 1);
            adam.step(&mut model.store, lr, config.weight_decay, &lr_scale)?;
        }

        let val_metric = evaluate(model, data, &data.split.val, sampler)?;
        let record = EpochRecord {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            val_metric,
            eta: model.eta(),
            mu_per_head: model.mu_per_head(),
            sigma_per_head: model.sigma_per_head(),
            variant: variant.to_string(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val {:.4} eta {:.3}",
            record.train_loss,
            record.val_metric,
            record.eta
        );
        on_epoch(&record);
        if improves(model.task, val_metric, best.as_ref().map(|b| b.0)) {
            best = Some((val_metric, model.store.clone(), epoch));
        }
        records.push(record);
    }

    let (best_val, best_epoch) = match best {
        Some((v, store, e)) => {
            model.store.copy_values_from(&store)?;
            (Some(v), Some(e))
        }
        None => (None, None),
    };
    Ok(TrainOutcome {
        records,
        best_epoch,
        best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_closed_form() {
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::scalar(0.0));
        store.get_mut(id).grad = Tensor::scalar(1.0);
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, 1e-4, 0.0, &[]).unwrap();
        let expected = -1e-4 * (1.0 / (1.0 + 1e-8));
        assert!((store.value(id).data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row_vector(vec![0.5, -2.0]));
        let mut adam = AdamState::new(&store);
        for _ in 0..5 {
            adam.step(&mut store, 1e-2, 0.0, &[]).unwrap();
        }
        assert_eq!(store.value(id).data(), &[0.5, -2.0]);
    }

    #[test]
    fn decoupled_decay_shrinks_parameters() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(2.0));
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, 0.1, 0.5, &[]).unwrap();
        assert!((store.value(id).data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn warmup_schedule() {
        let cfg = TrainConfig::default();
        for k in 1..10 {
            assert!((cfg.lr_at(k) - cfg.lr * k as f64 / 10.0).abs() < 1e-20);
        }
        assert_eq!(cfg.lr_at(10), cfg.lr);
        assert_eq!(cfg.lr_at(500), cfg.lr);
    }
}
