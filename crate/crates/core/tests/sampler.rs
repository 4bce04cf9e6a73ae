use gelgt_core::relstore::{build_graph, task_rows, DatabaseSchema, RelGraph, Table, TableData};
use gelgt_core::sampler::{
    random_sample, sample, semantic_refine, structural_sample, without_refinement, Candidates, SamplerMode,
    SamplingConfig, Stage1,
};
use gelgt_core::synthgen::{generate_db, SynthConfig};
use gelgt_numcore::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NODES: &str = r#"{
  "tables": [
    {"name": "n", "columns": [
      {"name": "id", "kind": "primary_key"},
      {"name": "link", "kind": "foreign_key", "target_table": "n"},
      {"name": "ts", "kind": "timestamp"},
      {"name": "y", "kind": "numerical"}
    ]}
  ],
  "task": {"target_table": "n", "target_column": "y", "kind": "binary_classification", "seed_time_column": "ts"}
}"#;

/// One self-referencing table; row `i` is node `i`, linked to `links[i]` and stamped `times[i]`.
fn hand_graph(links: &[Option<usize>], times: &[i64]) -> RelGraph {
    let schema = DatabaseSchema::from_json(NODES).unwrap();
    let records: Vec<Vec<String>> = links
        .iter()
        .zip(times)
        .enumerate()
        .map(|(i, (l, t))| {
            vec![
                i.to_string(),
                l.map(|x| x.to_string()).unwrap_or_default(),
                t.to_string(),
                "0".into(),
            ]
        })
        .collect();
    let table = Table::from_records(&schema.tables[0], records).unwrap();
    build_graph(&schema, &TableData { tables: vec![table] }).unwrap()
}

fn cfg(max_hop: usize, stage1_budget: usize, stage2_keep: usize) -> SamplingConfig {
    SamplingConfig {
        max_hop,
        stage1_budget,
        stage2_keep,
    }
}

#[test]
fn chain_hops_follow_distance() {
    // seed 0 ← a 1 ← b 2
    let g = hand_graph(&[None, Some(0), Some(1)], &[100, 10, 5]);
    let c = structural_sample(&g, 0, 100, &cfg(2, 10, 10));
    assert_eq!(c.nodes, vec![0, 1, 2]);
    assert_eq!(c.hops, vec![0, 1, 2]);
    let sub = without_refinement(&g, &c, 100);
    assert_eq!(sub.edges, vec![(0, 1), (1, 2)]);
    assert_eq!(sub.delta_t, vec![0.0, 90.0, 95.0]);
    assert_eq!(structural_sample(&g, 0, 100, &cfg(1, 10, 10)).nodes, vec![0, 1]);
}

#[test]
fn star_budget_keeps_lowest_ids() {
    let mut links = vec![None; 10];
    for leaf in [3, 1, 4, 5, 9] {
        links[leaf] = Some(0);
    }
    let g = hand_graph(&links, &[50, 1, 1, 1, 1, 1, 1, 1, 1, 1]);
    let c = structural_sample(&g, 0, 50, &cfg(2, 3, 3));
    assert_eq!(c.nodes, vec![0, 1, 3]);
    let all = structural_sample(&g, 0, 50, &cfg(2, 100, 100));
    assert_eq!(all.nodes, vec![0, 1, 3, 4, 5, 9]);
}

#[test]
fn future_and_simultaneous_neighbors_are_excluded() {
    let g = hand_graph(&[None, Some(0), Some(0), Some(0)], &[100, 99, 100, 101]);
    let c = structural_sample(&g, 0, 100, &cfg(2, 10, 10));
    assert_eq!(c.nodes, vec![0, 1]);
    let r = random_sample(&g, 0, 100, &cfg(2, 10, 10), 7);
    assert_eq!(r.nodes, vec![0, 1]);
}

/// seed 0 ← hub 1 ← {2, 3}: two second-hop candidates competing for one slot.
fn fork() -> RelGraph {
    hand_graph(&[None, Some(0), Some(1), Some(1)], &[100, 50, 10, 10])
}

#[test]
fn refinement_ranks_by_similarity_to_the_seed() {
    let g = fork();
    let c = structural_sample(&g, 0, 100, &cfg(2, 10, 10));
    let keep3 = cfg(2, 10, 3);
    let prefer2 = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let prefer3 = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    assert_eq!(semantic_refine(&g, &c, &prefer2, 100, &keep3).unwrap().nodes, vec![0, 1, 2]);
    assert_eq!(semantic_refine(&g, &c, &prefer3, 100, &keep3).unwrap().nodes, vec![0, 1, 3]);
    // equal similarity: the smaller id wins
    let tie = Tensor::from_rows(&[vec![1.0], vec![0.0], vec![0.5], vec![0.5]]).unwrap();
    assert_eq!(semantic_refine(&g, &c, &tie, 100, &keep3).unwrap().nodes, vec![0, 1, 2]);
}

#[test]
fn refinement_with_room_for_everything_is_a_no_op() {
    let g = fork();
    let c = structural_sample(&g, 0, 100, &cfg(2, 10, 10));
    let emb = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![-3.0], vec![4.0]]).unwrap();
    for keep in [4, 10] {
        let refined = semantic_refine(&g, &c, &emb, 100, &cfg(2, 10, keep)).unwrap();
        assert_eq!(refined, without_refinement(&g, &c, 100));
    }
}

#[test]
fn hop_one_survives_even_past_the_keep_count() {
    let g = hand_graph(&[None, Some(0), Some(0), Some(0), Some(1)], &[100, 1, 1, 1, 1]);
    let c = structural_sample(&g, 0, 100, &cfg(2, 10, 10));
    let emb = Tensor::zeros(&[5, 2]);
    let sub = semantic_refine(&g, &c, &emb, 100, &cfg(2, 10, 2)).unwrap();
    assert_eq!(sub.nodes, vec![0, 1, 2, 3]);
}

fn synth_world() -> (RelGraph, Vec<usize>, Vec<i64>) {
    let cfg = SynthConfig {
        n_entities: 400,
        rng_seed: 3,
        ..SynthConfig::default()
    };
    let (schema, data) = generate_db(&cfg).unwrap();
    let g = build_graph(&schema, &data).unwrap();
    let rows = task_rows(&schema, &data, &g).unwrap();
    (g, rows.seeds, rows.seed_times)
}

fn random_embeddings(n: usize, width: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(n, width, data)
}

#[test]
fn ten_thousand_subgraphs_are_causal() {
    let (g, seeds, times) = synth_world();
    let emb = random_embeddings(g.num_nodes(), 4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let modes = [
        SamplerMode::default(),
        SamplerMode { stage1: Stage1::Random { run_seed: 5 }, refine: true },
        SamplerMode { stage1: Stage1::Bfs, refine: false },
    ];
    for k in 0..10_000 {
        let i = rng.random_range(0..seeds.len());
        // arbitrary seed times too, not only the row's own
        let t = if k % 2 == 0 { times[i] } else { times[i] - rng.random_range(0..90 * 86_400) };
        let config = cfg(2, rng.random_range(1..40), 0);
        let config = SamplingConfig { stage2_keep: config.stage1_budget / 2, ..config };
        let sub = sample(&g, seeds[i], t, &emb, &config, modes[k % 3]).unwrap();
        assert_eq!(sub.nodes[0], seeds[i]);
        assert!(sub.len() <= config.stage1_budget);
        for (j, &v) in sub.nodes.iter().enumerate().skip(1) {
            assert!(g.node_time[v].is_none_or(|x| x < t));
            assert!(sub.delta_t[j] > 0.0);
        }
    }
}

#[test]
fn sampling_is_deterministic() {
    let (g, seeds, times) = synth_world();
    let emb = random_embeddings(g.num_nodes(), 4, 2);
    let c = cfg(2, 30, 12);
    for mode in [SamplerMode::default(), SamplerMode { stage1: Stage1::Random { run_seed: 9 }, refine: true }] {
        for i in 0..50 {
            let a = sample(&g, seeds[i], times[i], &emb, &c, mode).unwrap();
            let b = sample(&g, seeds[i], times[i], &emb, &c, mode).unwrap();
            assert_eq!(a, b);
        }
    }
}

fn hop_one(c: &Candidates) -> Vec<usize> {
    c.nodes.iter().zip(&c.hops).filter(|(_, &h)| h == 1).map(|(&v, _)| v).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn refinement_preserves_hop_one_and_only_removes(
        links in proptest::collection::vec(proptest::option::of(0usize..30), 30),
        times in proptest::collection::vec(0i64..100, 30),
        budget in 1usize..30,
        keep_frac in 0.0f64..1.0,
        emb_seed in any::<u64>(),
    ) {
        let links: Vec<Option<usize>> = links.into_iter().enumerate().map(|(i, l)| l.filter(|&x| x != i)).collect();
        let g = hand_graph(&links, &times);
        let seed_time = 100;
        let keep = ((budget as f64) * keep_frac) as usize;
        let config = cfg(2, budget, keep);
        let c = structural_sample(&g, 0, seed_time, &config);
        prop_assert!(c.nodes.len() <= budget);
        prop_assert!(c.hops.windows(2).all(|w| w[0] <= w[1]));
        let emb = random_embeddings(g.num_nodes(), 3, emb_seed);
        let refined = semantic_refine(&g, &c, &emb, seed_time, &config).unwrap();
        let plain = without_refinement(&g, &c, seed_time);
        prop_assert!(refined.len() <= plain.len());
        prop_assert!(refined.nodes.iter().all(|v| plain.nodes.contains(v)));
        prop_assert!(hop_one(&c).iter().all(|v| refined.nodes.contains(v)));
        prop_assert!(refined.len() <= keep.max(1 + hop_one(&c).len()));
        // edges are the induced subgraph
        for &(i, j) in &refined.edges {
            prop_assert!(i < j);
            prop_assert!(g.all_neighbors(refined.nodes[i]).contains(&refined.nodes[j]));
        }
        let induced: usize = (0..refined.len())
            .map(|i| g.all_neighbors(refined.nodes[i]).iter().filter(|v| refined.nodes[i + 1..].contains(v)).count())
            .sum();
        prop_assert_eq!(induced, refined.edges.len());
    }
}
