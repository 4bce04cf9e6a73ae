//! Node encoders: type, hop, elapsed time, tabular attributes and a
//! structural position code, mixed into one `d`-wide row per node.

use std::sync::Arc;

use gelgt_numcore::{Adjacency, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::{FeatureStore, TableFeatures};
use crate::layers::{Embedding, LayerNorm, Linear};
use crate::relstore::RelGraph;
use crate::sampler::{splitmix, SampledSubgraph};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d: usize,
    pub n_node_types: usize,
    pub max_hop: usize,
    pub pe_dim: usize,
    pub gin_layers: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d % 2 != 0 {
            return Err(CoreError::Config(format!("d = {} must be positive and even", self.d)));
        }
        if self.pe_dim == 0 || self.pe_dim > self.d {
            return Err(CoreError::Config(format!(
                "pe_dim = {} must lie in 1..=d",
                self.pe_dim
            )));
        }
        Ok(())
    }

    pub fn time_freqs(&self) -> usize {
        self.d / 2
    }
}

/// `ω_j = 10000^(−2j/d)` for `j = 0..d/2`.
pub fn frequency_ladder(d: usize) -> Vec<f64> {
    (0..d / 2)
        .map(|j| 10000f64.powf(-2.0 * j as f64 / d as f64))
        .collect()
}

/// `[sin(ω_j Δt) …, cos(ω_j Δt) …]` per row, with `Δt` in days. Rows whose
/// `Δt` is negative or non-finite are zero and flagged invalid.
pub fn sinusoid_features(delta_days: &[f64], freqs: &[f64]) -> (Tensor, Vec<bool>) {
    let f = freqs.len();
    let mut out = Tensor::zeros(&[delta_days.len(), 2 * f]);
    let mut valid = Vec::with_capacity(delta_days.len());
    for (i, &dt) in delta_days.iter().enumerate() {
        let ok = dt.is_finite() && dt >= 0.0;
        valid.push(ok);
        if !ok {
            continue;
        }
        let row = out.row_mut(i);
        for (j, w) in freqs.iter().enumerate() {
            let (s, c) = (w * dt).sin_cos();
            row[j] = s;
            row[f + j] = c;
        }
    }
    (out, valid)
}

#[derive(Debug, Clone)]
pub struct TimeEncoder {
    pub freqs: Vec<f64>,
    pub proj: Linear,
    pub mask: ParamId,
}

impl TimeEncoder {
    fn new(store: &mut ParamStore, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            freqs: frequency_ladder(d),
            proj: Linear::new(store, "time.proj", d, d, true, rng),
            mask: store.add("time.mask", crate::layers::normal(rng, 1, d, 0.1)),
        }
    }

    /// Invalid rows are exactly the mask vector.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, delta_days: &[f64]) -> Result<Var> {
        let (feats, valid) = sinusoid_features(delta_days, &self.freqs);
        let d = feats.cols();
        let x = tape.constant(feats);
        let lin = self.proj.forward(tape, store, x)?;
        if valid.iter().all(|&v| v) {
            return Ok(lin);
        }
        let n = valid.len();
        let mut keep = Tensor::zeros(&[n, d]);
        let mut invalid = Tensor::zeros(&[n, 1]);
        for (i, &v) in valid.iter().enumerate() {
            if v {
                keep.row_mut(i).fill(1.0);
            } else {
                invalid.set(i, 0, 1.0);
            }
        }
        let kept = tape.mul_const(lin, keep)?;
        let inv = tape.constant(invalid);
        let m = tape.param(store, self.mask);
        let masked = tape.matmul(inv, m)?;
        Ok(tape.add(kept, masked)?)
    }
}

/// `h + W₂ relu(LN(W₁ h))`
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub l1: Linear,
    pub norm: LayerNorm,
    pub l2: Linear,
}

impl ResidualBlock {
    fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut impl Rng) -> Self {
        Self {
            l1: Linear::new(store, &format!("{name}.l1"), d, d, true, rng),
            norm: LayerNorm::new(store, &format!("{name}.ln"), d),
            l2: Linear::new(store, &format!("{name}.l2"), d, d, true, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let a = self.l1.forward(tape, store, h)?;
        let a = self.norm.forward(tape, store, a)?;
        let a = tape.relu(a);
        let a = self.l2.forward(tape, store, a)?;
        Ok(tape.add(h, a)?)
    }
}

/// Per-table attribute encoder: numeric affine plus summed categorical
/// embeddings, then two residual blocks.
#[derive(Debug, Clone)]
pub struct TabularEncoder {
    pub numeric: Option<ParamId>,
    pub base: ParamId,
    pub categorical: Vec<Embedding>,
    pub blocks: Vec<ResidualBlock>,
}

impl TabularEncoder {
    fn new(store: &mut ParamStore, t: usize, feats: &TableFeatures, d: usize, rng: &mut impl Rng) -> Self {
        let k = feats.numeric_width();
        let numeric = (k > 0).then(|| {
            store.add(format!("tab{t}.numeric"), crate::layers::glorot(rng, k, d))
        });
        Self {
            numeric,
            base: store.add(format!("tab{t}.base"), Tensor::zeros(&[1, d])),
            categorical: feats
                .cardinalities
                .iter()
                .enumerate()
                .map(|(c, &n)| Embedding::new(store, &format!("tab{t}.cat{c}"), n, d, rng))
                .collect(),
            blocks: (0..2)
                .map(|b| ResidualBlock::new(store, &format!("tab{t}.block{b}"), d, rng))
                .collect(),
        }
    }

    /// Encodes `rows` of the table; output `[rows.len(), d]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        feats: &TableFeatures,
        rows: &[usize],
    ) -> Result<Var> {
        let base = tape.param(store, self.base);
        let d = store.value(self.base).cols();
        let zeros = tape.constant(Tensor::zeros(&[rows.len(), d]));
        let mut h = tape.add_row(zeros, base)?;
        if let Some(w) = self.numeric {
            let k = feats.numeric_width();
            let mut x = Vec::with_capacity(rows.len() * k);
            for &r in rows {
                x.extend_from_slice(feats.numeric.row(r));
            }
            let x = tape.constant(Tensor::matrix(rows.len(), k, x));
            let w = tape.param(store, w);
            let xw = tape.matmul(x, w)?;
            h = tape.add(h, xw)?;
        }
        for (emb, codes) in self.categorical.iter().zip(&feats.categorical) {
            let ids: Vec<usize> = rows.iter().map(|&r| codes[r]).collect();
            let e = emb.forward(tape, store, &ids)?;
            h = tape.add(h, e)?;
        }
        for block in &self.blocks {
            h = block.forward(tape, store, h)?;
        }
        Ok(h)
    }
}

/// Graph isomorphism layers over random per-node features.
#[derive(Debug, Clone)]
pub struct PositionalEncoder {
    pub pe_dim: usize,
    pub eps: Vec<ParamId>,
    pub mlps: Vec<(Linear, LayerNorm, Linear)>,
    pub out: Linear,
    pub init_seed: u64,
}

impl PositionalEncoder {
    fn new(store: &mut ParamStore, cfg: &EncoderConfig, init_seed: u64, rng: &mut impl Rng) -> Self {
        let p = cfg.pe_dim;
        let mut eps = Vec::new();
        let mut mlps = Vec::new();
        for l in 0..cfg.gin_layers {
            eps.push(store.add(format!("pos.gin{l}.eps"), Tensor::scalar(0.0)));
            mlps.push((
                Linear::new(store, &format!("pos.gin{l}.l1"), p, p, true, rng),
                LayerNorm::new(store, &format!("pos.gin{l}.ln"), p),
                Linear::new(store, &format!("pos.gin{l}.l2"), p, p, true, rng),
            ));
        }
        Self {
            pe_dim: p,
            eps,
            mlps,
            out: Linear::new(store, "pos.out", p, p, true, rng),
            init_seed,
        }
    }

    /// Initial features in `[-1, 1)`, a pure function of the seed and the
    /// global node id, so relabeling local nodes permutes rows only.
    pub fn initial_features(&self, global_ids: &[usize]) -> Tensor {
        let p = self.pe_dim;
        let mut data = Vec::with_capacity(global_ids.len() * p);
        for &id in global_ids {
            let base = splitmix(self.init_seed ^ splitmix(id as u64));
            for j in 0..p {
                let bits = splitmix(base.wrapping_add(j as u64));
                data.push((bits >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0);
            }
        }
        Tensor::matrix(global_ids.len(), p, data)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        global_ids: &[usize],
        adj: &Adjacency,
    ) -> Result<Var> {
        let mut h = tape.constant(self.initial_features(global_ids));
        for (eps, (l1, ln, l2)) in self.eps.iter().zip(&self.mlps) {
            let e = tape.param(store, *eps);
            let one_plus = tape.add_const(e, 1.0);
            let own = tape.mul_scalar(h, one_plus)?;
            let msgs = tape.neighbor_sum(h, adj)?;
            let z = tape.add(own, msgs)?;
            let z = l1.forward(tape, store, z)?;
            let z = ln.forward(tape, store, z)?;
            let z = tape.relu(z);
            let z = l2.forward(tape, store, z)?;
            h = tape.add(h, z)?;
        }
        Ok(self.out.forward(tape, store, h)?)
    }
}

/// Per-component layer norm, concatenation, then a two-layer perceptron to `d`.
#[derive(Debug, Clone)]
pub struct Mixer {
    pub norms: Vec<LayerNorm>,
    pub l1: Linear,
    pub l2: Linear,
}

impl Mixer {
    fn new(store: &mut ParamStore, d: usize, pe_dim: usize, rng: &mut impl Rng) -> Self {
        let widths = [d, d, d, d, pe_dim];
        Self {
            norms: widths
                .iter()
                .enumerate()
                .map(|(i, &w)| LayerNorm::new(store, &format!("mix.ln{i}"), w))
                .collect(),
            l1: Linear::new(store, "mix.l1", 4 * d + pe_dim, d, true, rng),
            l2: Linear::new(store, "mix.l2", d, d, true, rng),
        }
    }

    /// Components in order: type, hop, time, tabular, position.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, parts: [Var; 5]) -> Result<Var> {
        let mut normed = Vec::with_capacity(5);
        for (norm, part) in self.norms.iter().zip(parts) {
            let w = store.value(norm.gain).cols();
            if tape.value(part).cols() != w {
                return Err(CoreError::Data(format!(
                    "mix component width {} where {w} expected",
                    tape.value(part).cols()
                )));
            }
            normed.push(norm.forward(tape, store, part)?);
        }
        let x = tape.concat_cols(&normed)?;
        let x = self.l1.forward(tape, store, x)?;
        let x = tape.gelu(x);
        Ok(self.l2.forward(tape, store, x)?)
    }
}

#[derive(Debug, Clone)]
pub struct Encoders {
    pub config: EncoderConfig,
    pub type_emb: Embedding,
    pub hop_emb: Embedding,
    pub time: TimeEncoder,
    pub tabular: Vec<TabularEncoder>,
    pub position: PositionalEncoder,
    pub mixer: Mixer,
}

/// Encoder outputs before mixing, each with one row per node.
#[derive(Debug, Clone, Copy)]
pub struct Components {
    pub node_type: Var,
    pub hop: Var,
    pub time: Var,
    pub tabular: Var,
    pub position: Var,
}

impl Encoders {
    pub fn new(
        store: &mut ParamStore,
        config: EncoderConfig,
        features: &FeatureStore,
        init_seed: u64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        Ok(Self {
            type_emb: Embedding::new(store, "type_emb", config.n_node_types, d, rng),
            hop_emb: Embedding::new(store, "hop_emb", config.max_hop + 1, d, rng),
            time: TimeEncoder::new(store, d, rng),
            tabular: features
                .tables
                .iter()
                .enumerate()
                .map(|(t, f)| TabularEncoder::new(store, t, f, d, rng))
                .collect(),
            position: PositionalEncoder::new(store, &config, init_seed, rng),
            mixer: Mixer::new(store, d, config.pe_dim, rng),
            config,
        })
    }

    pub fn encode_type(&self, tape: &mut Tape, store: &ParamStore, types: &[usize]) -> Result<Var> {
        if let Some(&t) = types.iter().find(|&&t| t >= self.type_emb.rows) {
            return Err(CoreError::Data(format!("node type {t} out of range")));
        }
        Ok(self.type_emb.forward(tape, store, types)?)
    }

    pub fn encode_hop(&self, tape: &mut Tape, store: &ParamStore, hops: &[usize]) -> Result<Var> {
        if let Some(&h) = hops.iter().find(|&&h| h > self.config.max_hop) {
            return Err(CoreError::Data(format!(
                "hop {h} exceeds max_hop {}",
                self.config.max_hop
            )));
        }
        Ok(self.hop_emb.forward(tape, store, hops)?)
    }

    /// Tabular encodings of arbitrary `(table, row)` nodes, in input order.
    pub fn encode_tabular(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: &FeatureStore,
        nodes: &[(usize, usize)],
    ) -> Result<Var> {
        let mut parts = Vec::new();
        let mut order = Vec::with_capacity(nodes.len());
        for (t, enc) in self.tabular.iter().enumerate() {
            let (idx, rows): (Vec<usize>, Vec<usize>) = nodes
                .iter()
                .enumerate()
                .filter(|(_, &(nt, _))| nt == t)
                .map(|(i, &(_, r))| (i, r))
                .unzip();
            if rows.is_empty() {
                continue;
            }
            parts.push(enc.forward(tape, store, &features.tables[t], &rows)?);
            order.extend(idx);
        }
        if order.len() != nodes.len() {
            return Err(CoreError::Data("node from an unknown table".into()));
        }
        let stacked = tape.concat_rows(&parts)?;
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return Ok(stacked);
        }
        let mut inverse = vec![0; order.len()];
        for (pos, &i) in order.iter().enumerate() {
            inverse[i] = pos;
        }
        Ok(tape.gather_rows(stacked, &inverse)?)
    }

    /// Tabular embedding of every node of the graph, computed off-tape in
    /// chunks. Row `v` belongs to global node `v`.
    pub fn embed_all(&self, store: &ParamStore, graph: &RelGraph, features: &FeatureStore) -> Result<Tensor> {
        const CHUNK: usize = 2048;
        let d = self.config.d;
        let mut out = Vec::with_capacity(graph.num_nodes() * d);
        let nodes: Vec<(usize, usize)> = (0..graph.num_nodes())
            .map(|v| (graph.node_type[v], graph.node_row[v]))
            .collect();
        for chunk in nodes.chunks(CHUNK) {
            let mut tape = Tape::new();
            let h = self.encode_tabular(&mut tape, store, features, chunk)?;
            out.extend_from_slice(tape.value(h).data());
        }
        Ok(Tensor::matrix(graph.num_nodes(), d, out))
    }

    pub fn components(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &RelGraph,
        features: &FeatureStore,
        sub: &SampledSubgraph,
    ) -> Result<Components> {
        let types: Vec<usize> = sub.nodes.iter().map(|&v| graph.node_type[v]).collect();
        let rows: Vec<(usize, usize)> = sub
            .nodes
            .iter()
            .map(|&v| (graph.node_type[v], graph.node_row[v]))
            .collect();
        let adj: Adjacency = Arc::new(sub.adjacency());
        Ok(Components {
            node_type: self.encode_type(tape, store, &types)?,
            hop: self.encode_hop(tape, store, &sub.hop)?,
            time: self.time.forward(tape, store, &sub.delta_days())?,
            tabular: self.encode_tabular(tape, store, features, &rows)?,
            position: self.position.forward(tape, store, &sub.nodes, &adj)?,
        })
    }

    /// The mixed `[N, d]` node matrix fed to the first layer.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        graph: &RelGraph,
        features: &FeatureStore,
        sub: &SampledSubgraph,
    ) -> Result<Var> {
        let c = self.components(tape, store, graph, features, sub)?;
        self.mixer
            .forward(tape, store, [c.node_type, c.hop, c.time, c.tabular, c.position])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_is_strictly_decreasing() {
        let f = frequency_ladder(16);
        assert_eq!(f.len(), 8);
        assert_eq!(f[0], 1.0);
        assert!(f.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_delta_gives_sin_zero_cos_one() {
        let (t, valid) = sinusoid_features(&[0.0], &frequency_ladder(8));
        assert_eq!(t.row(0), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(valid, vec![true]);
    }

    #[test]
    fn first_pair_is_periodic() {
        let f = frequency_ladder(8);
        let period = 2.0 * std::f64::consts::PI / f[0];
        let (t, _) = sinusoid_features(&[3.7, 3.7 + period], &f);
        assert!((t.get(0, 0) - t.get(1, 0)).abs() < 1e-12);
        assert!((t.get(0, 4) - t.get(1, 4)).abs() < 1e-12);
    }

    #[test]
    fn invalid_deltas_are_flagged() {
        let (t, valid) = sinusoid_features(&[-1.0, f64::INFINITY, f64::NAN], &frequency_ladder(4));
        assert_eq!(valid, vec![false, false, false]);
        assert!(t.data().iter().all(|&x| x == 0.0));
    }
}
