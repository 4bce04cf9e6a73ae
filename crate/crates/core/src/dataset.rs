//! Everything a training run reads: graph, features, targets and split.

use gelgt_numcore::Tensor;

use crate::error::Result;
use crate::features::FeatureStore;
use crate::relstore::{build_graph, task_rows, DatabaseSchema, RelGraph, TableData, TaskRows};
use crate::sampler::{sample, SampledSubgraph, SamplerMode, SamplingConfig};
use crate::synthgen::{temporal_split, Split};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: RelGraph,
    pub features: FeatureStore,
    pub rows: TaskRows,
    pub split: Split,
}

impl Dataset {
    pub fn build(schema: &DatabaseSchema, data: &TableData, fractions: [f64; 3]) -> Result<Self> {
        let graph = build_graph(schema, data)?;
        let features = FeatureStore::build(schema, data);
        let rows = task_rows(schema, data, &graph)?;
        let split = temporal_split(&rows.seed_times, fractions)?;
        Ok(Self {
            graph,
            features,
            rows,
            split,
        })
    }

    /// Subgraphs for the given task rows, in order.
    pub fn sample_rows(
        &self,
        rows: &[usize],
        embeddings: &Tensor,
        config: &SamplingConfig,
        mode: SamplerMode,
    ) -> Result<Vec<SampledSubgraph>> {
        rows.iter()
            .map(|&r| {
                sample(
                    &self.graph,
                    self.rows.seeds[r],
                    self.rows.seed_times[r],
                    embeddings,
                    config,
                    mode,
                )
            })
            .collect()
    }

    pub fn targets(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.rows.targets[r]).collect()
    }
}
