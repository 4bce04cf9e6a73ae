mod common;

use std::sync::Arc;

use common::{all_ids, hand_world, worst_grad_error};
use gelgt_core::attention::{gaussian_kernel, AttentionLayer};
use gelgt_core::encoders::{EncoderConfig, Encoders};
use gelgt_core::gnnbranch::{GnnBranch, SageLayer};
use gelgt_core::model::{fuse, loss, GelGTModel, ModelConfig, ModelSwitches};
use gelgt_core::relstore::{RelGraph, TaskKind};
use gelgt_core::sampler::{structural_sample, without_refinement, SampledSubgraph, SamplingConfig};
use gelgt_numcore::{Adjacency, ParamStore, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DAY: i64 = 86_400;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// seed 0 at day 100 ← 1 (day 90) ← 2 (day 50); 3 (day 80) → 0.
fn four_nodes() -> (RelGraph, gelgt_core::features::FeatureStore, SampledSubgraph) {
    let (g, f) = hand_world(&[None, Some(0), Some(1), Some(0)], &[100 * DAY, 90 * DAY, 50 * DAY, 80 * DAY]);
    let cfg = SamplingConfig {
        max_hop: 2,
        stage1_budget: 10,
        stage2_keep: 10,
    };
    let sub = without_refinement(&g, &structural_sample(&g, 0, 100 * DAY, &cfg), 100 * DAY);
    assert_eq!(sub.nodes, vec![0, 1, 3, 2]);
    (g, f, sub)
}

fn encoders(d: usize, features: &gelgt_core::features::FeatureStore) -> (ParamStore, Encoders) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = EncoderConfig {
        d,
        n_node_types: 1,
        max_hop: 2,
        pe_dim: 4,
        gin_layers: 2,
    };
    let enc = Encoders::new(&mut store, cfg, features, 17, &mut rng).unwrap();
    (store, enc)
}

#[test]
fn invalid_time_rows_are_exactly_the_mask() {
    let (_, f, _) = four_nodes();
    let (store, enc) = encoders(8, &f);
    let mut tape = Tape::new();
    let out = enc.time.forward(&mut tape, &store, &[-1.0, 3.0, f64::INFINITY, f64::NAN]).unwrap();
    let v = tape.value(out);
    let mask = store.value(enc.time.mask).row(0).to_vec();
    for r in [0, 2, 3] {
        assert_eq!(v.row(r), mask.as_slice());
    }
    assert_ne!(v.row(1), mask.as_slice());
}

#[test]
fn same_type_and_hop_give_identical_rows() {
    let (_, f, _) = four_nodes();
    let (store, enc) = encoders(8, &f);
    let mut tape = Tape::new();
    let t = enc.encode_type(&mut tape, &store, &[0, 0, 0]).unwrap();
    assert_eq!(tape.value(t).row(0), tape.value(t).row(2));
    let h = enc.encode_hop(&mut tape, &store, &[1, 2, 1]).unwrap();
    assert_eq!(tape.value(h).row(0), tape.value(h).row(2));
    assert_ne!(tape.value(h).row(0), tape.value(h).row(1));
}

#[test]
fn out_of_range_ids_are_errors() {
    let (_, f, _) = four_nodes();
    let (store, enc) = encoders(8, &f);
    let mut tape = Tape::new();
    assert!(enc.encode_type(&mut tape, &store, &[1]).is_err());
    assert!(enc.encode_hop(&mut tape, &store, &[3]).is_err());
    assert!(enc.encode_tabular(&mut tape, &store, &f, &[(1, 0)]).is_err());
}

#[test]
fn odd_width_is_rejected() {
    let (_, f, _) = four_nodes();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = EncoderConfig {
        d: 7,
        n_node_types: 1,
        max_hop: 2,
        pe_dim: 4,
        gin_layers: 1,
    };
    assert!(Encoders::new(&mut store, cfg, &f, 0, &mut rng).is_err());
}

#[test]
fn positional_code_follows_global_ids() {
    let (_, f, _) = four_nodes();
    let (_, enc) = encoders(8, &f);
    let a = enc.position.initial_features(&[5, 9]);
    let b = enc.position.initial_features(&[9, 5]);
    assert_eq!(a.row(0), b.row(1));
    assert!(a.data().iter().all(|x| (-1.0..1.0).contains(x)));
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let (g, f, sub) = four_nodes();
    let (store, enc) = encoders(8, &f);
    let err = worst_grad_error(&store, &all_ids(&store), 1e-3, |tape, s| {
        let h = enc.forward(tape, s, &g, &f, &sub).unwrap();
        let sq = tape.square(h);
        tape.mean_all(sq)
    });
    assert!(err < 1e-4, "{err}");
}

fn attention(d: usize, heads: usize) -> (ParamStore, AttentionLayer) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let layer = AttentionLayer::new(&mut store, "att", d, heads, &mut rng).unwrap();
    (store, layer)
}

#[test]
fn attention_rows_are_distributions() {
    let (store, layer) = attention(8, 2);
    let deltas = [0.0, 3.0, 30.0, 31.0, f64::INFINITY];
    let mut tape = Tape::new();
    let h = tape.constant(random_matrix(5, 8, 1));
    for use_bias in [true, false] {
        let out = layer.forward(&mut tape, &store, h, &deltas, use_bias).unwrap();
        assert_eq!(out.weights.len(), 2);
        for w in &out.weights {
            let w = tape.value(*w);
            for r in 0..5 {
                assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(w.row(r).iter().all(|&x| x >= 0.0));
            }
        }
    }
}

#[test]
fn zero_bias_parameters_reproduce_plain_attention_bitwise() {
    let (mut store, layer) = attention(8, 2);
    store.get_mut(layer.scale).value_mut().fill(0.0);
    store.get_mut(layer.shift).value_mut().fill(0.0);
    let deltas = [0.0, 1.0, 7.0];
    let mut tape = Tape::new();
    let h = tape.constant(random_matrix(3, 8, 2));
    let with = layer.forward(&mut tape, &store, h, &deltas, true).unwrap();
    let without = layer.forward(&mut tape, &store, h, &deltas, false).unwrap();
    assert_eq!(tape.value(with.out), tape.value(without.out));
}

#[test]
fn constant_bias_shift_leaves_weights_unchanged() {
    let (mut store, layer) = attention(8, 2);
    let deltas = [0.0, 1.0, 7.0, 40.0];
    let mut tape = Tape::new();
    let h = tape.constant(random_matrix(4, 8, 3));
    let base = layer.forward(&mut tape, &store, h, &deltas, true).unwrap();
    let base: Vec<Tensor> = base.weights.iter().map(|w| tape.value(*w).clone()).collect();
    store.get_mut(layer.shift).value_mut().fill(5.0);
    let shifted = layer.forward(&mut tape, &store, h, &deltas, true).unwrap();
    for (a, b) in base.iter().zip(&shifted.weights) {
        let diff = a.zip_map(tape.value(*b), |x, y| (x - y).abs()).unwrap();
        assert!(diff.data().iter().all(|&e| e < 1e-12));
    }
}

#[test]
fn single_node_attends_to_itself() {
    let (store, layer) = attention(8, 4);
    let mut tape = Tape::new();
    let h = tape.constant(random_matrix(1, 8, 4));
    let out = layer.forward(&mut tape, &store, h, &[0.0], true).unwrap();
    for w in out.weights {
        assert_eq!(tape.value(w).data(), &[1.0]);
    }
}

#[test]
fn bias_pulls_weight_toward_the_preferred_gap() {
    let (mut store, layer) = attention(4, 1);
    store.get_mut(layer.wq).value_mut().fill(0.0);
    store.get_mut(layer.mu).value_mut().fill(30.0);
    store.get_mut(layer.scale).value_mut().fill(3.0);
    let mut tape = Tape::new();
    let h = tape.constant(random_matrix(3, 4, 5));
    let out = layer.forward(&mut tape, &store, h, &[0.0, 30.0, 5.0], true).unwrap();
    let w = tape.value(out.weights[0]).row(0).to_vec();
    assert!(w[1] > w[2] && w[1] > w[0], "{w:?}");
}

#[test]
fn mismatched_gap_count_is_an_error() {
    let (store, layer) = attention(8, 2);
    let mut tape = Tape::new();
    let h = tape.constant(random_matrix(3, 8, 6));
    assert!(layer.forward(&mut tape, &store, h, &[0.0, 1.0], true).is_err());
    let mut s = ParamStore::new();
    assert!(AttentionLayer::new(&mut s, "x", 8, 3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn attention_gradients_match_finite_differences() {
    let (mut store, layer) = attention(8, 2);
    // centers near the gaps so the kernel gradients are not vanishingly small
    *store.get_mut(layer.mu).value_mut() = Tensor::row_vector(vec![2.0, 6.0]);
    let x = random_matrix(4, 8, 7);
    let err = worst_grad_error(&store, &all_ids(&store), 1e-3, |tape, s| {
        let h = tape.constant(x.clone());
        let out = layer.forward(tape, s, h, &[0.0, 1.5, 4.0, 9.0], true).unwrap();
        let sq = tape.square(out.out);
        tape.mean_all(sq)
    });
    assert!(err < 1e-4, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn kernel_peaks_at_its_center(delta in -50.0f64..50.0, mu in -50.0f64..50.0, sigma in 0.01f64..30.0) {
        let k = gaussian_kernel(delta, mu, sigma);
        prop_assert!((0.0..=1.0).contains(&k));
        prop_assert_eq!(gaussian_kernel(mu, mu, sigma), 1.0);
        prop_assert!((k - gaussian_kernel(2.0 * mu - delta, mu, sigma)).abs() < 1e-12);
        prop_assert!((gaussian_kernel(mu + sigma, mu, sigma) - (-0.5f64).exp()).abs() < 1e-12);
    }
}

fn identity_sage(d: usize) -> (ParamStore, SageLayer) {
    let mut store = ParamStore::new();
    let layer = SageLayer::new(&mut store, "s", d, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
    *store.get_mut(layer.w_self).value_mut() = Tensor::identity(d);
    *store.get_mut(layer.w_neigh).value_mut() = Tensor::identity(d);
    (store, layer)
}

#[test]
fn mean_aggregation_hand_example() {
    let (store, layer) = identity_sage(2);
    // path 0 − 1 − 2 and isolated 3
    let adj: Adjacency = Arc::new(vec![vec![1], vec![0, 2], vec![1], vec![]]);
    let mut tape = Tape::new();
    let h = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 8.0], vec![-1.0, 1.0]]).unwrap());
    let z = layer.aggregate(&mut tape, &store, h, &adj).unwrap();
    let z = tape.value(z);
    assert_eq!(z.row(0), &[4.0, 6.0]);
    assert_eq!(z.row(1), &[6.0, 9.0]);
    assert_eq!(z.row(2), &[8.0, 12.0]);
    assert_eq!(z.row(3), &[-1.0, 1.0]);
}

#[test]
fn relabeling_nodes_permutes_the_output() {
    let mut store = ParamStore::new();
    let branch = GnnBranch::new(&mut store, "g", 4, 2, &mut ChaCha8Rng::seed_from_u64(1));
    let x = random_matrix(4, 4, 9);
    let adj: Adjacency = Arc::new(vec![vec![1, 3], vec![0, 2], vec![1], vec![0]]);
    // new index of old node i is perm[i]
    let perm = [2, 0, 3, 1];
    let mut px = Tensor::zeros(&[4, 4]);
    let mut padj = vec![Vec::new(); 4];
    for i in 0..4 {
        px.row_mut(perm[i]).copy_from_slice(x.row(i));
        // neighbor lists in reverse order too
        padj[perm[i]] = adj[i].iter().rev().map(|&j| perm[j]).collect();
    }
    let mut tape = Tape::new();
    let h = tape.constant(x);
    let a = branch.forward(&mut tape, &store, h, &adj, None).unwrap();
    let ph = tape.constant(px);
    let b = branch.forward(&mut tape, &store, ph, &Arc::new(padj), None).unwrap();
    for i in 0..4 {
        for (u, v) in tape.value(a).row(i).iter().zip(tape.value(b).row(perm[i])) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn depth_bounds_the_receptive_field() {
    let mut store = ParamStore::new();
    let branch = GnnBranch::new(&mut store, "g", 4, 2, &mut ChaCha8Rng::seed_from_u64(2));
    let path: Adjacency = Arc::new(vec![vec![1], vec![0, 2], vec![1, 3], vec![2, 4], vec![3]]);
    let x = random_matrix(5, 4, 10);
    let mut far = x.clone();
    far.row_mut(3).fill(9.0);
    let mut near = x.clone();
    near.row_mut(2).fill(9.0);
    let mut tape = Tape::new();
    let run = |tape: &mut Tape, t: Tensor| {
        let h = tape.constant(t);
        let out = branch.forward(tape, &store, h, &path, None).unwrap();
        tape.value(out).row(0).to_vec()
    };
    let base = run(&mut tape, x);
    assert_eq!(run(&mut tape, far), base);
    assert_ne!(run(&mut tape, near), base);
}

#[test]
fn gnn_gradients_match_finite_differences() {
    let mut store = ParamStore::new();
    let branch = GnnBranch::new(&mut store, "g", 4, 2, &mut ChaCha8Rng::seed_from_u64(3));
    let adj: Adjacency = Arc::new(vec![vec![1, 2], vec![0], vec![0], vec![]]);
    let x = random_matrix(4, 4, 11);
    let err = worst_grad_error(&store, &all_ids(&store), 1e-3, |tape, s| {
        let h = tape.constant(x.clone());
        let out = branch.forward(tape, s, h, &adj, None).unwrap();
        let sq = tape.square(out);
        tape.mean_all(sq)
    });
    assert!(err < 1e-4, "{err}");
}

#[test]
fn fusion_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::row_vector(vec![1.0, 2.0]));
    let g = tape.constant(Tensor::row_vector(vec![3.0, 4.0]));
    for (eta, expect) in [(0.25, [2.5, 3.5]), (1.0, [1.0, 2.0]), (0.0, [3.0, 4.0])] {
        let e = tape.constant(Tensor::scalar(eta));
        let f = fuse(&mut tape, a, g, e).unwrap();
        assert_eq!(tape.value(f).data(), &expect);
    }
}

#[test]
fn loss_reference_values() {
    let mut tape = Tape::new();
    let zero = tape.constant(Tensor::scalar(0.0));
    for y in [0.0, 1.0] {
        let l = loss(&mut tape, zero, y, TaskKind::BinaryClassification).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }
    let s = tape.constant(Tensor::scalar(2.5));
    let l = loss(&mut tape, s, 4.0, TaskKind::Regression).unwrap();
    assert_eq!(tape.value(l).data()[0], 1.5);
}

fn tiny_model(g: &RelGraph, f: &gelgt_core::features::FeatureStore, switches: ModelSwitches) -> GelGTModel {
    let cfg = ModelConfig {
        d: 16,
        n_layers: 1,
        n_heads: 2,
        pe_dim: 4,
        gin_layers: 1,
        gnn_depth: 1,
        ffn_ratio: 2,
        dropout: 0.0,
    };
    GelGTModel::new(cfg, switches, TaskKind::BinaryClassification, g, f, 2, 21).unwrap()
}

#[test]
fn pinned_gate_ignores_the_gnn_branch() {
    let (g, f, sub) = four_nodes();
    let pinned = ModelSwitches {
        gaussian_bias: true,
        pinned_eta: Some(1.0),
    };
    let mut model = tiny_model(&g, &f, pinned);
    assert_eq!(model.eta(), 1.0);
    let before = model.predict(&g, &f, &sub).unwrap();
    let w = model.layers[0].gnn.layers[0].w_neigh;
    model.store.get_mut(w).value_mut().fill(3.0);
    assert_eq!(model.predict(&g, &f, &sub).unwrap(), before);

    let mut learned = tiny_model(&g, &f, ModelSwitches::default());
    assert_eq!(learned.eta(), 0.5);
    let before = learned.predict(&g, &f, &sub).unwrap();
    learned.store.get_mut(w).value_mut().fill(3.0);
    assert_ne!(learned.predict(&g, &f, &sub).unwrap(), before);
}

#[test]
fn bias_switch_changes_the_score() {
    let (g, f, sub) = four_nodes();
    let with = tiny_model(&g, &f, ModelSwitches::default());
    let without = tiny_model(
        &g,
        &f,
        ModelSwitches {
            gaussian_bias: false,
            pinned_eta: None,
        },
    );
    assert_ne!(with.predict(&g, &f, &sub).unwrap(), without.predict(&g, &f, &sub).unwrap());
    assert_eq!(with.mu_per_head(), vec![vec![0.0, 0.0]]);
    assert!(with.sigma_per_head()[0].iter().all(|s| (s - 10.0).abs() < 1e-9));
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let (g, f, sub) = four_nodes();
    let mut model = tiny_model(&g, &f, ModelSwitches::default());
    for layer in &model.layers {
        *model.store.get_mut(layer.attention.mu).value_mut() = Tensor::row_vector(vec![15.0, 40.0]);
    }
    let store = model.store.clone();
    let ids = all_ids(&store);
    let err = worst_grad_error(&store, &ids, 1e-3, |tape, s| {
        let mut m = model.clone();
        m.store = s.clone();
        let out = m.forward(tape, &g, &f, &sub, None).unwrap();
        loss(tape, out.score, 1.0, TaskKind::BinaryClassification).unwrap()
    });
    assert!(err < 1e-4, "{err}");
}
