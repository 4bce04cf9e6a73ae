//! Encoder-ready feature matrices per table.
//!
//! Numerical feature columns are standardized with their observed mean and
//! standard deviation; missing cells become 0 afterwards. Categorical codes
//! shift by one so that index 0 is the missing/unknown slot. Keys,
//! timestamps and the task target never appear as features.

use gelgt_numcore::Tensor;

use crate::relstore::{Column, ColumnKind, DatabaseSchema, TableData};

#[derive(Debug, Clone, PartialEq)]
pub struct TableFeatures {
    /// `[rows, numeric columns]`
    pub numeric: Tensor,
    /// `categorical[c][row]`, 0 for missing.
    pub categorical: Vec<Vec<usize>>,
    /// Embedding rows needed per categorical column (vocabulary + 1).
    pub cardinalities: Vec<usize>,
    pub numeric_names: Vec<String>,
    pub categorical_names: Vec<String>,
}

impl TableFeatures {
    pub fn n_rows(&self) -> usize {
        self.numeric.rows()
    }

    pub fn numeric_width(&self) -> usize {
        self.numeric.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub tables: Vec<TableFeatures>,
}

/// Mean and standard deviation of the present values; unit scale when flat.
pub fn column_stats(values: &[Option<f64>]) -> (f64, f64) {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return (0.0, 1.0);
    }
    let n = present.len() as f64;
    let mean = present.iter().sum::<f64>() / n;
    let var = present.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl FeatureStore {
    pub fn build(schema: &DatabaseSchema, data: &TableData) -> Self {
        let target = schema.target_table_index();
        let tables = schema
            .tables
            .iter()
            .zip(&data.tables)
            .enumerate()
            .map(|(t, (spec, table))| {
                let mut numeric_cols = Vec::new();
                let mut numeric_names = Vec::new();
                let mut categorical = Vec::new();
                let mut cardinalities = Vec::new();
                let mut categorical_names = Vec::new();
                for (c, col) in spec.columns.iter().enumerate() {
                    let is_target = t == target && col.name == schema.task.target_column;
                    match (&table.columns[c], col.kind) {
                        (Column::Numerical(v), ColumnKind::Numerical) if !is_target => {
                            let (mean, std) = column_stats(v);
                            numeric_cols.push(
                                v.iter()
                                    .map(|x| x.map_or(0.0, |x| (x - mean) / std))
                                    .collect::<Vec<_>>(),
                            );
                            numeric_names.push(col.name.clone());
                        }
                        (Column::Categorical { codes, vocab }, _) => {
                            categorical
                                .push(codes.iter().map(|c| c.map_or(0, |c| c as usize + 1)).collect());
                            cardinalities.push(vocab.len() + 1);
                            categorical_names.push(col.name.clone());
                        }
                        _ => {}
                    }
                }
                let k = numeric_cols.len();
                let mut data = Vec::with_capacity(table.n_rows * k);
                for r in 0..table.n_rows {
                    data.extend(numeric_cols.iter().map(|col| col[r]));
                }
                TableFeatures {
                    numeric: Tensor::new(vec![table.n_rows, k], data).expect("sized"),
                    categorical,
                    cardinalities,
                    numeric_names,
                    categorical_names,
                }
            })
            .collect();
        Self { tables }
    }
}
