//! The full model: encoders, stacked dual-branch layers fused by a learnable
//! gate, and a prediction head on the seed row.

use std::sync::Arc;

use gelgt_numcore::{Adjacency, ParamId, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionLayer;
use crate::encoders::{EncoderConfig, Encoders};
use crate::error::{CoreError, Result};
use crate::features::FeatureStore;
use crate::gnnbranch::GnnBranch;
use crate::layers::{LayerNorm, Linear};
use crate::relstore::{RelGraph, TaskKind};
use crate::sampler::SampledSubgraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub pe_dim: usize,
    pub gin_layers: usize,
    pub gnn_depth: usize,
    pub ffn_ratio: usize,
    /// Dropout on the attention and feed-forward outputs.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 512,
            n_layers: 4,
            n_heads: 4,
            pe_dim: 128,
            gin_layers: 2,
            gnn_depth: 3,
            ffn_ratio: 2,
            dropout: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(CoreError::Config(format!(
                "d = {} must be divisible by n_heads = {}",
                self.d, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CoreError::Config("dropout must lie in [0, 1)".into()));
        }
        if self.ffn_ratio == 0 {
            return Err(CoreError::Config("ffn_ratio must be positive".into()));
        }
        Ok(())
    }
}

/// Structural switches used by the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSwitches {
    pub gaussian_bias: bool,
    /// Fixed fusion weight instead of the learned gate.
    pub pinned_eta: Option<f64>,
}

impl Default for ModelSwitches {
    fn default() -> Self {
        Self {
            gaussian_bias: true,
            pinned_eta: None,
        }
    }
}

/// `η · attn + (1 − η) · gnn` for a `[1,1]` gate value `eta`.
pub fn fuse(tape: &mut Tape, attn: Var, gnn: Var, eta: Var) -> Result<Var> {
    let a = tape.mul_scalar(attn, eta)?;
    let neg = tape.scale(eta, -1.0);
    let rest = tape.add_const(neg, 1.0);
    let g = tape.mul_scalar(gnn, rest)?;
    Ok(tape.add(a, g)?)
}

/// Logistic loss on a logit, or absolute error for regression.
pub fn loss(tape: &mut Tape, score: Var, target: f64, kind: TaskKind) -> Result<Var> {
    match kind {
        TaskKind::BinaryClassification => Ok(tape.bce_with_logits(score, target)?),
        TaskKind::Regression => {
            let d = tape.add_const(score, -target);
            Ok(tape.abs(d))
        }
    }
}

#[derive(Debug, Clone)]
pub struct DualLayer {
    pub attn_norm: LayerNorm,
    pub attention: AttentionLayer,
    pub ffn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub gnn: GnnBranch,
}

#[derive(Debug, Clone)]
pub struct GelGTModel {
    pub config: ModelConfig,
    pub switches: ModelSwitches,
    pub task: TaskKind,
    pub store: ParamStore,
    pub encoders: Encoders,
    pub layers: Vec<DualLayer>,
    pub eta_raw: ParamId,
    pub head_in: Linear,
    pub head_out: Linear,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub score: Var,
    /// Per layer, per head attention matrices.
    pub attention: Vec<Vec<Var>>,
    pub final_rows: Var,
}

impl GelGTModel {
    pub fn new(
        config: ModelConfig,
        switches: ModelSwitches,
        task: TaskKind,
        graph: &RelGraph,
        features: &FeatureStore,
        max_hop: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d;
        let encoders = Encoders::new(
            &mut store,
            EncoderConfig {
                d,
                n_node_types: graph.type_names.len(),
                max_hop,
                pe_dim: config.pe_dim,
                gin_layers: config.gin_layers,
            },
            features,
            seed,
            &mut rng,
        )?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let name = format!("layer{l}");
            layers.push(DualLayer {
                attn_norm: LayerNorm::new(&mut store, &format!("{name}.attn_ln"), d),
                attention: AttentionLayer::new(&mut store, &format!("{name}.attn"), d, config.n_heads, &mut rng)?,
                ffn_norm: LayerNorm::new(&mut store, &format!("{name}.ffn_ln"), d),
                ffn_in: Linear::new(&mut store, &format!("{name}.ffn_in"), d, config.ffn_ratio * d, true, &mut rng),
                ffn_out: Linear::new(&mut store, &format!("{name}.ffn_out"), config.ffn_ratio * d, d, true, &mut rng),
                gnn: GnnBranch::new(&mut store, &format!("{name}.gnn"), d, config.gnn_depth, &mut rng),
            });
        }
        let eta_raw = store.add("eta_raw", Tensor::scalar(0.0));
        let head_in = Linear::new(&mut store, "head.l1", d, d, true, &mut rng);
        let head_out = Linear::new(&mut store, "head.l2", d, 1, true, &mut rng);
        Ok(Self {
            config,
            switches,
            task,
            store,
            encoders,
            layers,
            eta_raw,
            head_in,
            head_out,
        })
    }

    /// The fusion weight in effect.
    pub fn eta(&self) -> f64 {
        self.switches
            .pinned_eta
            .unwrap_or_else(|| gelgt_numcore::ops::sigmoid(self.store.value(self.eta_raw).data()[0]))
    }

    /// `mu[layer][head]` in days.
    pub fn mu_per_head(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| l.attention.mu_days(&self.store)).collect()
    }

    pub fn sigma_per_head(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| l.attention.sigma_days(&self.store)).collect()
    }

    fn eta_var(&self, tape: &mut Tape) -> Var {
        match self.switches.pinned_eta {
            Some(e) => tape.constant(Tensor::scalar(e)),
            None => {
                let raw = tape.param(&self.store, self.eta_raw);
                tape.sigmoid(raw)
            }
        }
    }

    /// One subgraph through the network. `rng` enables dropout.
    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &RelGraph,
        features: &FeatureStore,
        sub: &SampledSubgraph,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let store = &self.store;
        let mut h = self.encoders.forward(tape, store, graph, features, sub)?;
        let adj: Adjacency = Arc::new(sub.adjacency());
        let delta_days = sub.delta_days();
        let eta = self.eta_var(tape);
        let p = self.config.dropout;
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = layer.attn_norm.forward(tape, store, h)?;
            let att = layer
                .attention
                .forward(tape, store, x, &delta_days, self.switches.gaussian_bias)?;
            attention.push(att.weights);
            let mut a = att.out;
            if let Some(r) = rng.as_deref_mut() {
                a = tape.dropout(a, p, r)?;
            }
            let x1 = tape.add(h, a)?;
            let y = layer.ffn_norm.forward(tape, store, x1)?;
            let y = layer.ffn_in.forward(tape, store, y)?;
            let y = tape.gelu(y);
            let mut y = layer.ffn_out.forward(tape, store, y)?;
            if let Some(r) = rng.as_deref_mut() {
                y = tape.dropout(y, p, r)?;
            }
            let h_attn = tape.add(x1, y)?;
            let h_gnn = layer.gnn.forward(tape, store, h, &adj, rng.as_deref_mut())?;
            h = fuse(tape, h_attn, h_gnn, eta)?;
        }
        let seed_row = tape.gather_rows(h, &[0])?;
        let z = self.head_in.forward(tape, store, seed_row)?;
        let z = tape.gelu(z);
        let score = self.head_out.forward(tape, store, z)?;
        Ok(Forward {
            score,
            attention,
            final_rows: h,
        })
    }

    /// Evaluation-mode score (logit or regression value).
    pub fn predict(&self, graph: &RelGraph, features: &FeatureStore, sub: &SampledSubgraph) -> Result<f64> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, graph, features, sub, None)?;
        Ok(tape.value(f.score).data()[0])
    }
}
