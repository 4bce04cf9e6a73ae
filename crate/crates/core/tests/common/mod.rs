#![allow(dead_code)]

use gelgt_core::features::FeatureStore;
use gelgt_core::relstore::{build_graph, DatabaseSchema, RelGraph, Table, TableData};
use gelgt_numcore::finite_diff::{finite_diff_grad, max_rel_error};
use gelgt_numcore::{ParamId, ParamStore, Tape, Var};

pub const NODES: &str = r#"{
  "tables": [
    {"name": "n", "columns": [
      {"name": "id", "kind": "primary_key"},
      {"name": "link", "kind": "foreign_key", "target_table": "n"},
      {"name": "ts", "kind": "timestamp"},
      {"name": "kind", "kind": "categorical"},
      {"name": "y", "kind": "numerical"}
    ]}
  ],
  "task": {"target_table": "n", "target_column": "y", "kind": "binary_classification", "seed_time_column": "ts"}
}"#;

/// One self-referencing table; row `i` is node `i`, linked to `links[i]`
/// and stamped `times[i]` (seconds).
pub fn hand_world(links: &[Option<usize>], times: &[i64]) -> (RelGraph, FeatureStore) {
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
                ["a", "b", "c"][i % 3].to_string(),
                (i % 2).to_string(),
            ]
        })
        .collect();
    let table = Table::from_records(&schema.tables[0], records).unwrap();
    let data = TableData { tables: vec![table] };
    (build_graph(&schema, &data).unwrap(), FeatureStore::build(&schema, &data))
}

/// Tape gradients of `f` against central differences for every listed
/// parameter; returns the worst relative error.
pub fn worst_grad_error(
    store: &ParamStore,
    ids: &[ParamId],
    floor: f64,
    f: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    let mut analytic = store.clone();
    analytic.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, &analytic);
    tape.backward(loss, &mut analytic).unwrap();
    let mut worst: f64 = 0.0;
    for &id in ids {
        let numeric = finite_diff_grad(
            |theta| {
                let mut probe = store.clone();
                *probe.get_mut(id).value_mut() = theta.clone();
                let mut tape = Tape::new();
                let l = f(&mut tape, &probe);
                tape.value(l).data()[0]
            },
            store.value(id),
            1e-5,
        );
        let e = max_rel_error(analytic.grad(id), &numeric, floor);
        assert!(e.is_finite(), "{}", store.get(id).name);
        worst = worst.max(e);
    }
    worst
}

pub fn all_ids(store: &ParamStore) -> Vec<ParamId> {
    store.iter().map(|(id, _)| id).collect()
}
