//! Relational tables and the heterogeneous temporal graph built from them.
//!
//! Rows become nodes, numbered densely by table order then row order. Every
//! foreign-key column `e` (in schema order) owns the directed edge types `2e`
//! (row holding the key → referenced row) and `2e + 1` (the reverse).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numerical,
    Categorical,
    Timestamp,
    PrimaryKey,
    ForeignKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_table: Option<String>,
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            target_table: None,
        }
    }

    pub fn foreign_key(name: &str, target: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: ColumnKind::ForeignKey,
            target_table: Some(target.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
}

impl TableSpec {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn primary_key(&self) -> usize {
        self.columns
            .iter()
            .position(|c| c.kind == ColumnKind::PrimaryKey)
            .expect("validated schema has a primary key")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    BinaryClassification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub target_table: String,
    pub target_column: String,
    pub kind: TaskKind,
    pub seed_time_column: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatabaseSchema {
    pub tables: Vec<TableSpec>,
    pub task: TaskSpec,
}

impl DatabaseSchema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn target_table_index(&self) -> usize {
        self.table_index(&self.task.target_table)
            .expect("validated schema has its target table")
    }

    /// Number of foreign-key columns, i.e. undirected relation types.
    pub fn relation_count(&self) -> usize {
        self.tables
            .iter()
            .flat_map(|t| &t.columns)
            .filter(|c| c.kind == ColumnKind::ForeignKey)
            .count()
    }

    /// Column holding a table's node time: the seed-time column for the
    /// target table, otherwise the first timestamp column, if any.
    pub fn time_column(&self, table: usize) -> Option<usize> {
        let spec = &self.tables[table];
        if spec.name == self.task.target_table {
            return spec.column_index(&self.task.seed_time_column);
        }
        spec.columns
            .iter()
            .position(|c| c.kind == ColumnKind::Timestamp)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(CoreError::Schema(format!("duplicate table name {:?}", t.name)));
            }
        }
        for t in &self.tables {
            let pks = t
                .columns
                .iter()
                .filter(|c| c.kind == ColumnKind::PrimaryKey)
                .count();
            if pks != 1 {
                return Err(CoreError::Schema(format!(
                    "table {:?} has {pks} primary key columns, expected exactly 1",
                    t.name
                )));
            }
            let mut cols = HashSet::new();
            for c in &t.columns {
                if !cols.insert(c.name.as_str()) {
                    return Err(CoreError::Schema(format!(
                        "duplicate column {:?} in table {:?}",
                        c.name, t.name
                    )));
                }
                if c.kind == ColumnKind::ForeignKey {
                    let target = c.target_table.as_deref().unwrap_or("");
                    if !names.contains(target) {
                        return Err(CoreError::Schema(format!(
                            "unresolved foreign key {}.{} -> {target:?}",
                            t.name, c.name
                        )));
                    }
                }
            }
        }
        let task = &self.task;
        let target = self
            .tables
            .iter()
            .find(|t| t.name == task.target_table)
            .ok_or_else(|| {
                CoreError::Schema(format!("unknown target table {:?}", task.target_table))
            })?;
        match target.column_index(&task.target_column) {
            Some(i) if target.columns[i].kind == ColumnKind::Numerical => {}
            Some(_) => {
                return Err(CoreError::Schema(format!(
                    "target column {:?} must be numerical",
                    task.target_column
                )))
            }
            None => {
                return Err(CoreError::Schema(format!(
                    "target column {:?} not in table {:?}",
                    task.target_column, task.target_table
                )))
            }
        }
        match target.column_index(&task.seed_time_column) {
            Some(i) if target.columns[i].kind == ColumnKind::Timestamp => Ok(()),
            _ => Err(CoreError::Schema(format!(
                "seed time column {:?} must be a timestamp column of {:?}",
                task.seed_time_column, task.target_table
            ))),
        }
    }
}

pub fn load_schema(path: &Path) -> Result<DatabaseSchema> {
    DatabaseSchema::from_json(&fs::read_to_string(path)?)
}

/// Typed storage for one column. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Column {
    Numerical(Vec<Option<f64>>),
    Categorical {
        codes: Vec<Option<u32>>,
        vocab: Vec<String>,
    },
    Timestamp(Vec<Option<i64>>),
    Key(Vec<Option<String>>),
}

impl Column {
    fn empty(kind: ColumnKind) -> Self {
        match kind {
            ColumnKind::Numerical => Column::Numerical(Vec::new()),
            ColumnKind::Categorical => Column::Categorical {
                codes: Vec::new(),
                vocab: Vec::new(),
            },
            ColumnKind::Timestamp => Column::Timestamp(Vec::new()),
            ColumnKind::PrimaryKey | ColumnKind::ForeignKey => Column::Key(Vec::new()),
        }
    }

    pub fn as_numerical(&self) -> Option<&[Option<f64>]> {
        match self {
            Column::Numerical(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_timestamp(&self) -> Option<&[Option<i64>]> {
        match self {
            Column::Timestamp(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_key(&self) -> Option<&[Option<String>]> {
        match self {
            Column::Key(v) => Some(v),
            _ => None,
        }
    }

    fn cell(&self, row: usize) -> String {
        match self {
            Column::Numerical(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            Column::Categorical { codes, vocab } => codes[row]
                .map(|c| vocab[c as usize].clone())
                .unwrap_or_default(),
            Column::Timestamp(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            Column::Key(v) => v[row].clone().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub n_rows: usize,
    /// Aligned with the table's `ColumnSpec` list.
    pub columns: Vec<Column>,
}

impl Table {
    /// Parses string records laid out in schema column order.
    pub fn from_records<I, R, S>(spec: &TableSpec, records: I) -> Result<Self>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut columns: Vec<Column> = spec.columns.iter().map(|c| Column::empty(c.kind)).collect();
        let mut interners: Vec<HashMap<String, u32>> = vec![HashMap::new(); columns.len()];
        let pk = spec.primary_key();
        let mut seen_pk = HashSet::new();
        let mut n_rows = 0;
        for (r, record) in records.into_iter().enumerate() {
            let mut width = 0;
            for (c, cell) in record.into_iter().enumerate() {
                width += 1;
                if c >= columns.len() {
                    continue;
                }
                let cell = cell.as_ref().trim();
                let missing = cell.is_empty();
                let col_name = &spec.columns[c].name;
                match &mut columns[c] {
                    Column::Numerical(v) => {
                        let x = if missing {
                            None
                        } else {
                            let x: f64 = cell.parse().map_err(|_| {
                                CoreError::Data(format!(
                                    "{}.{col_name} row {r}: not a number: {cell:?}",
                                    spec.name
                                ))
                            })?;
                            x.is_finite().then_some(x)
                        };
                        v.push(x);
                    }
                    Column::Categorical { codes, vocab } => {
                        if missing {
                            codes.push(None);
                        } else {
                            let next = vocab.len() as u32;
                            let code = *interners[c].entry(cell.to_string()).or_insert_with(|| {
                                vocab.push(cell.to_string());
                                next
                            });
                            codes.push(Some(code));
                        }
                    }
                    Column::Timestamp(v) => {
                        let t = if missing {
                            None
                        } else {
                            Some(parse_timestamp(cell).ok_or_else(|| {
                                CoreError::Data(format!(
                                    "{}.{col_name} row {r}: unparseable timestamp {cell:?}",
                                    spec.name
                                ))
                            })?)
                        };
                        v.push(t);
                    }
                    Column::Key(v) => {
                        if c == pk {
                            if missing {
                                return Err(CoreError::Data(format!(
                                    "{} row {r}: empty primary key",
                                    spec.name
                                )));
                            }
                            if !seen_pk.insert(cell.to_string()) {
                                return Err(CoreError::Data(format!(
                                    "duplicate primary key {cell:?} in table {}",
                                    spec.name
                                )));
                            }
                        }
                        v.push((!missing).then(|| cell.to_string()));
                    }
                }
            }
            if width != columns.len() {
                return Err(CoreError::Data(format!(
                    "{} row {r}: {width} cells, expected {}",
                    spec.name,
                    columns.len()
                )));
            }
            n_rows += 1;
        }
        Ok(Self {
            name: spec.name.clone(),
            n_rows,
            columns,
        })
    }

    pub fn column(&self, spec: &TableSpec, name: &str) -> Option<&Column> {
        spec.column_index(name).map(|i| &self.columns[i])
    }
}

/// Integer epoch seconds, RFC 3339, or a naive date-time / date read as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if let Ok(t) = s.parse::<i64>() {
        return Some(t);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc().timestamp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableData {
    /// Aligned with `DatabaseSchema::tables`.
    pub tables: Vec<Table>,
}

impl TableData {
    pub fn total_rows(&self) -> usize {
        self.tables.iter().map(|t| t.n_rows).sum()
    }
}

/// Reads `<dir>/<table>.csv` for every table. Headers must list the schema
/// columns in order.
pub fn load_tables(schema: &DatabaseSchema, dir: &Path) -> Result<TableData> {
    let mut tables = Vec::with_capacity(schema.tables.len());
    for spec in &schema.tables {
        let path = dir.join(format!("{}.csv", spec.name));
        if !path.exists() {
            return Err(CoreError::Data(format!("missing file {}", path.display())));
        }
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(&path)?;
        let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let expected: Vec<&str> = spec.columns.iter().map(|c| c.name.as_str()).collect();
        if header != expected {
            return Err(CoreError::Data(format!(
                "header mismatch in {}: got {header:?}, expected {expected:?}",
                path.display()
            )));
        }
        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            records.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
        }
        tables.push(Table::from_records(spec, records)?);
    }
    Ok(TableData { tables })
}

/// Writes `schema.json` and one CSV per table; the inverse of
/// [`load_schema`] + [`load_tables`].
pub fn write_database(schema: &DatabaseSchema, data: &TableData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("schema.json"), schema.to_json() + "\n")?;
    for (spec, table) in schema.tables.iter().zip(&data.tables) {
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", spec.name)))?;
        w.write_record(spec.columns.iter().map(|c| c.name.as_str()))?;
        for r in 0..table.n_rows {
            w.write_record(table.columns.iter().map(|c| c.cell(r)))?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Compressed neighbor lists; each list is ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    /// Builds from directed pairs; duplicates are kept unless `dedup`.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)], dedup: bool) -> Self {
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in pairs {
            lists[u].push(v);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::with_capacity(pairs.len());
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            if dedup {
                l.dedup();
            }
            targets.extend(l);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.targets[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn num_entries(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EdgeType {
    pub name: String,
    pub from_table: usize,
    pub to_table: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelGraph {
    /// Table index of every node.
    pub node_type: Vec<usize>,
    /// Node timestamp in epoch seconds; `None` is an always-past static row.
    pub node_time: Vec<Option<i64>>,
    pub node_row: Vec<usize>,
    pub type_names: Vec<String>,
    /// First node id of each table; the last entry is the node count.
    pub type_offsets: Vec<usize>,
    pub edge_types: Vec<EdgeType>,
    adjacency: Vec<Csr>,
    merged: Csr,
    /// Relational (undirected) edges actually materialized.
    pub relational_edges: usize,
    /// Foreign-key values without a matching primary key.
    pub dangling: usize,
}

impl RelGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_type.len()
    }

    pub fn node_count(&self, table: usize) -> usize {
        self.type_offsets[table + 1] - self.type_offsets[table]
    }

    pub fn node_id(&self, table: usize, row: usize) -> usize {
        self.type_offsets[table] + row
    }

    pub fn num_edge_types(&self) -> usize {
        self.edge_types.len()
    }

    pub fn neighbors(&self, node: usize, edge_type: usize) -> Result<&[usize]> {
        let adj = self
            .adjacency
            .get(edge_type)
            .ok_or_else(|| CoreError::Data(format!("unknown edge type {edge_type}")))?;
        if node >= self.num_nodes() {
            return Err(CoreError::Data(format!("node {node} out of range")));
        }
        Ok(adj.neighbors(node))
    }

    /// Neighbors over all edge types and directions, ascending and deduplicated.
    pub fn all_neighbors(&self, node: usize) -> &[usize] {
        self.merged.neighbors(node)
    }

    /// Whether `node` may be observed from a seed at `seed_time`.
    pub fn is_before(&self, node: usize, seed_time: i64) -> bool {
        self.node_time[node].is_none_or(|t| t < seed_time)
    }
}

pub fn build_graph(schema: &DatabaseSchema, data: &TableData) -> Result<RelGraph> {
    if data.tables.len() != schema.tables.len() {
        return Err(CoreError::Data("table count differs from schema".into()));
    }
    let mut type_offsets = vec![0];
    let mut node_type = Vec::new();
    let mut node_row = Vec::new();
    let mut node_time = Vec::new();
    let target = schema.target_table_index();
    for (t, table) in data.tables.iter().enumerate() {
        let times = schema
            .time_column(t)
            .map(|c| table.columns[c].as_timestamp().expect("timestamp column"));
        for r in 0..table.n_rows {
            let time = times.and_then(|ts| ts[r]);
            if t == target && time.is_none() {
                return Err(CoreError::Data(format!(
                    "row {r} of target table {} has no seed time",
                    table.name
                )));
            }
            node_type.push(t);
            node_row.push(r);
            node_time.push(time);
        }
        type_offsets.push(node_type.len());
    }
    let n = node_type.len();

    let pk_index: Vec<HashMap<&str, usize>> = schema
        .tables
        .iter()
        .zip(&data.tables)
        .map(|(spec, table)| {
            let keys = table.columns[spec.primary_key()].as_key().expect("key column");
            keys.iter()
                .enumerate()
                .filter_map(|(r, k)| k.as_deref().map(|k| (k, r)))
                .collect()
        })
        .collect();

    let mut edge_types = Vec::new();
    let mut adjacency = Vec::new();
    let mut all_pairs = Vec::new();
    let mut dangling = 0;
    let mut relational_edges = 0;
    for (t, spec) in schema.tables.iter().enumerate() {
        for (c, col) in spec.columns.iter().enumerate() {
            if col.kind != ColumnKind::ForeignKey {
                continue;
            }
            let dst_table = schema
                .table_index(col.target_table.as_deref().unwrap_or(""))
                .expect("validated foreign key");
            let keys = data.tables[t].columns[c].as_key().expect("key column");
            let mut fwd = Vec::new();
            let mut rev = Vec::new();
            for (r, k) in keys.iter().enumerate() {
                let Some(k) = k else { continue };
                match pk_index[dst_table].get(k.as_str()) {
                    Some(&dr) => {
                        let (u, v) = (type_offsets[t] + r, type_offsets[dst_table] + dr);
                        fwd.push((u, v));
                        rev.push((v, u));
                    }
                    None => dangling += 1,
                }
            }
            relational_edges += fwd.len();
            all_pairs.extend_from_slice(&fwd);
            all_pairs.extend_from_slice(&rev);
            edge_types.push(EdgeType {
                name: format!("{}.{}", spec.name, col.name),
                from_table: t,
                to_table: dst_table,
            });
            edge_types.push(EdgeType {
                name: format!("rev_{}.{}", spec.name, col.name),
                from_table: dst_table,
                to_table: t,
            });
            adjacency.push(Csr::from_pairs(n, &fwd, false));
            adjacency.push(Csr::from_pairs(n, &rev, false));
        }
    }
    if dangling > 0 {
        log::warn!("{dangling} foreign-key values reference missing rows; edges skipped");
    }
    let merged = Csr::from_pairs(n, &all_pairs, true);
    Ok(RelGraph {
        node_type,
        node_time,
        node_row,
        type_names: schema.tables.iter().map(|t| t.name.clone()).collect(),
        type_offsets,
        edge_types,
        adjacency,
        merged,
        relational_edges,
        dangling,
    })
}

/// Prediction targets: one seed node per target-table row.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRows {
    pub kind: TaskKind,
    pub seeds: Vec<usize>,
    pub seed_times: Vec<i64>,
    pub targets: Vec<f64>,
}

impl TaskRows {
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

pub fn task_rows(schema: &DatabaseSchema, data: &TableData, graph: &RelGraph) -> Result<TaskRows> {
    let t = schema.target_table_index();
    let spec = &schema.tables[t];
    let table = &data.tables[t];
    let targets = table
        .column(spec, &schema.task.target_column)
        .and_then(Column::as_numerical)
        .expect("validated target column");
    let times = table
        .column(spec, &schema.task.seed_time_column)
        .and_then(Column::as_timestamp)
        .expect("validated seed time column");
    let mut out = TaskRows {
        kind: schema.task.kind,
        seeds: Vec::with_capacity(table.n_rows),
        seed_times: Vec::with_capacity(table.n_rows),
        targets: Vec::with_capacity(table.n_rows),
    };
    for r in 0..table.n_rows {
        let y = targets[r].ok_or_else(|| CoreError::Data(format!("row {r} has no target")))?;
        if schema.task.kind == TaskKind::BinaryClassification && y != 0.0 && y != 1.0 {
            return Err(CoreError::Data(format!("row {r}: binary target {y} is not 0 or 1")));
        }
        out.seeds.push(graph.node_id(t, r));
        out.seed_times.push(times[r].expect("checked in build_graph"));
        out.targets.push(y);
    }
    Ok(out)
}
