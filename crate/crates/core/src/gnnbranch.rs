//! Mean-aggregation message passing over the sampled relational edges.

use gelgt_numcore::{Adjacency, ParamId, ParamStore, Tape, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{glorot, LayerNorm};

pub const GNN_DROPOUT: f64 = 0.1;

/// `h + dropout(gelu(LN(h W_self + mean_N(h) W_neigh)))`; the mean over an
/// empty neighborhood is zero.
#[derive(Debug, Clone)]
pub struct SageLayer {
    pub w_self: ParamId,
    pub w_neigh: ParamId,
    pub norm: LayerNorm,
    pub dropout: f64,
}

impl SageLayer {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, dropout: f64, rng: &mut impl Rng) -> Self {
        Self {
            w_self: store.add(format!("{name}.w_self"), glorot(rng, d, d)),
            w_neigh: store.add(format!("{name}.w_neigh"), glorot(rng, d, d)),
            norm: LayerNorm::new(store, &format!("{name}.ln"), d),
            dropout,
        }
    }

    /// The aggregation core before normalization.
    pub fn aggregate(&self, tape: &mut Tape, store: &ParamStore, h: Var, adj: &Adjacency) -> Result<Var> {
        let ws = tape.param(store, self.w_self);
        let wn = tape.param(store, self.w_neigh);
        let own = tape.matmul(h, ws)?;
        let mean = tape.neighbor_mean(h, adj)?;
        let msg = tape.matmul(mean, wn)?;
        Ok(tape.add(own, msg)?)
    }

    /// `rng` enables dropout; `None` is evaluation mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        h: Var,
        adj: &Adjacency,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let z = self.aggregate(tape, store, h, adj)?;
        let z = self.norm.forward(tape, store, z)?;
        let mut z = tape.gelu(z);
        if let Some(rng) = rng {
            z = tape.dropout(z, self.dropout, rng)?;
        }
        Ok(tape.add(h, z)?)
    }
}

#[derive(Debug, Clone)]
pub struct GnnBranch {
    pub layers: Vec<SageLayer>,
}

impl GnnBranch {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, depth: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: (0..depth)
                .map(|l| SageLayer::new(store, &format!("{name}.sage{l}"), d, GNN_DROPOUT, rng))
                .collect(),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut h: Var,
        adj: &Adjacency,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        for layer in &self.layers {
            h = layer.forward(tape, store, h, adj, rng.as_deref_mut())?;
        }
        Ok(h)
    }
}
