//! Gain of the relevant-to-noise attention ratio when the bias separates a
//! fully matching time gap (kernel 1) from a distant one (kernel ≈ 0).

use gelgt_core::attention::{rho_for_sigma, AttentionLayer};
use gelgt_numcore::ops::softmax_rows;
use gelgt_numcore::{ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// `(α_rel / α_noise)` with the bias over the same ratio without it, from
/// two content logits that are both `offset` and bias terms `bias_rel`, `bias_noise`.
pub fn ratio_gain(offset: f64, bias_rel: f64, bias_noise: f64) -> f64 {
    let with = softmax_rows(&Tensor::row_vector(vec![offset + bias_rel, offset + bias_noise]));
    let without = softmax_rows(&Tensor::row_vector(vec![offset, offset]));
    (with.data()[0] / with.data()[1]) / (without.data()[0] / without.data()[1])
}

/// Same gain measured on a real attention layer: one head, zero query
/// weights (equal content logits), `μ = 0`, `σ = 1`, identity bias map. The
/// query node has gap 0 to itself and gap 100σ to the other node, so the
/// kernels are 1 and `exp(−5000)`.
pub fn layer_ratio_gain() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let layer = AttentionLayer::new(&mut store, "probe", 2, 1, &mut rng)?;
    store.get_mut(layer.wq).value_mut().fill(0.0);
    store.get_mut(layer.mu).value_mut().fill(0.0);
    store.get_mut(layer.rho).value_mut().fill(rho_for_sigma(1.0));
    store.get_mut(layer.scale).value_mut().fill(1.0);
    store.get_mut(layer.shift).value_mut().fill(0.0);
    let delta_days = [0.0, 100.0];
    let weights = |use_bias: bool| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.4]])?);
        let out = layer.forward(&mut tape, &store, h, &delta_days, use_bias)?;
        Ok(tape.value(out.weights[0]).row(0).to_vec())
    };
    let with = weights(true)?;
    let without = weights(false)?;
    Ok((with[0] / with[1]) / (without[0] / without[1]))
}
