//! Synthetic two-table databases with a planted temporal-window signal.
//!
//! `entities` rows carry a seed time and a binary label; `events` rows point
//! at their entity. An event is *relevant* when its lag before the entity's
//! seed time lies within `window_width` of `window_center` and its `signal`
//! is positive. The label is 1 iff an entity has at least `k_min` relevant
//! events. Entities also reference a recent earlier entity, so an entity's
//! 2-hop neighborhood holds another entity's events.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::relstore::{
    ColumnKind, ColumnSpec, DatabaseSchema, Table, TableData, TableSpec, TaskKind, TaskSpec,
};

pub const DAY: i64 = 86_400;
const HOUR: i64 = 3_600;
const REGIONS: [&str; 4] = ["north", "south", "east", "west"];
const CHANNELS: [&str; 3] = ["web", "store", "app"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_entities: usize,
    /// Mean events per entity.
    pub n_events_per_entity: usize,
    /// Center of the relevance window, as a lag in seconds before the seed time.
    pub window_center: i64,
    /// Half-width of the relevance window in seconds.
    pub window_width: i64,
    pub k_min: usize,
    pub noise_event_fraction: f64,
    pub noise_feature_dim_shift: f64,
    pub rng_seed: u64,
    /// Oldest event lag in seconds.
    pub history_span: i64,
    pub start_time: i64,
    /// Gap between consecutive entity seed times.
    pub seed_spacing: i64,
    /// Referrers are drawn from this many immediately preceding entities.
    pub referrer_lookback: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_entities: 2000,
            n_events_per_entity: 8,
            window_center: 30 * DAY,
            window_width: 5 * DAY,
            k_min: 2,
            noise_event_fraction: 0.5,
            noise_feature_dim_shift: 1.5,
            rng_seed: 7,
            history_span: 60 * DAY,
            start_time: 1_600_000_000,
            seed_spacing: 6 * HOUR,
            referrer_lookback: 20,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.to_string()));
        if self.window_width <= 0 {
            return bad("window_width must be positive");
        }
        if !(0.0..=1.0).contains(&self.noise_event_fraction) {
            return bad("noise_event_fraction must lie in [0, 1]");
        }
        if !self.noise_feature_dim_shift.is_finite() {
            return bad("noise_feature_dim_shift must be finite");
        }
        if self.n_entities == 0 {
            return bad("n_entities must be positive");
        }
        if self.k_min == 0 {
            return bad("k_min must be at least 1");
        }
        if self.history_span <= HOUR {
            return bad("history_span must exceed one hour");
        }
        if self.seed_spacing < 2 {
            return bad("seed_spacing must be at least 2 seconds");
        }
        Ok(())
    }

    pub fn in_window(&self, lag: i64) -> bool {
        (lag - self.window_center).abs() <= self.window_width
    }

    /// Lags an event may take: at least one hour, at most `history_span`.
    fn lag_range(&self) -> (i64, i64) {
        (HOUR, self.history_span)
    }

    fn window_range(&self) -> Option<(i64, i64)> {
        let (lo, hi) = self.lag_range();
        let a = (self.window_center - self.window_width).max(lo);
        let b = (self.window_center + self.window_width).min(hi);
        (a <= b).then_some((a, b))
    }
}

/// The planted labeling rule over `(event_time, signal)` pairs of one entity.
pub fn planted_label(cfg: &SynthConfig, seed_time: i64, events: &[(i64, f64)]) -> bool {
    events
        .iter()
        .filter(|&&(t, s)| s > 0.0 && cfg.in_window(seed_time - t))
        .count()
        >= cfg.k_min
}

pub fn synth_schema() -> DatabaseSchema {
    use ColumnKind::*;
    DatabaseSchema {
        tables: vec![
            TableSpec {
                name: "entities".into(),
                columns: vec![
                    ColumnSpec::new("entity_id", PrimaryKey),
                    ColumnSpec::new("region", Categorical),
                    ColumnSpec::new("score", Numerical),
                    ColumnSpec::foreign_key("referrer_id", "entities"),
                    ColumnSpec::new("seed_time", Timestamp),
                    ColumnSpec::new("label", Numerical),
                ],
            },
            TableSpec {
                name: "events".into(),
                columns: vec![
                    ColumnSpec::new("event_id", PrimaryKey),
                    ColumnSpec::foreign_key("entity_id", "entities"),
                    ColumnSpec::new("event_time", Timestamp),
                    ColumnSpec::new("signal", Numerical),
                    ColumnSpec::new("amount", Numerical),
                    ColumnSpec::new("channel", Categorical),
                ],
            },
        ],
        task: TaskSpec {
            target_table: "entities".into(),
            target_column: "label".into(),
            kind: TaskKind::BinaryClassification,
            seed_time_column: "seed_time".into(),
        },
    }
}

struct Gen<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
}

impl Gen<'_> {
    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn uniform_lag(&mut self, lo: i64, hi: i64) -> i64 {
        self.rng.random_range(lo..=hi)
    }

    fn in_window_lag(&mut self) -> i64 {
        match self.cfg.window_range() {
            Some((a, b)) => self.uniform_lag(a, b),
            None => self.out_of_window_lag(),
        }
    }

    /// Uniform over the admissible lags outside the window; falls back to any
    /// admissible lag when the window covers the whole history.
    fn out_of_window_lag(&mut self) -> i64 {
        let (lo, hi) = self.cfg.lag_range();
        let (wa, wb) = (
            self.cfg.window_center - self.cfg.window_width,
            self.cfg.window_center + self.cfg.window_width,
        );
        let left = (lo, (wa - 1).min(hi));
        let right = ((wb + 1).max(lo), hi);
        let len = |(a, b): (i64, i64)| if a <= b { b - a + 1 } else { 0 };
        let (nl, nr) = (len(left), len(right));
        if nl + nr == 0 {
            return self.uniform_lag(lo, hi);
        }
        let pick = self.rng.random_range(0..nl + nr);
        if pick < nl {
            left.0 + pick
        } else {
            right.0 + (pick - nl)
        }
    }

    fn positive_signal(&mut self) -> f64 {
        (1.0 + 0.3 * self.normal()).max(0.05)
    }

    fn negative_signal(&mut self, center: f64) -> f64 {
        (-center + 0.3 * self.normal()).min(-0.05)
    }
}

struct Event {
    lag: i64,
    signal: f64,
    amount: f64,
}

/// Generates the schema and tables. Identical configs give identical data.
pub fn generate_db(cfg: &SynthConfig) -> Result<(DatabaseSchema, TableData)> {
    cfg.validate()?;
    let schema = synth_schema();
    let mut g = Gen {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
    };
    let shift = cfg.noise_feature_dim_shift;
    let mut entity_rows = Vec::with_capacity(cfg.n_entities);
    let mut event_rows = Vec::new();
    for e in 0..cfg.n_entities {
        let jitter = g.rng.random_range(0..cfg.seed_spacing / 2);
        let seed_time = cfg.start_time + e as i64 * cfg.seed_spacing + jitter;
        let positive = g.rng.random_bool(0.5);

        let mut events = Vec::new();
        for _ in 0..cfg.k_min {
            let lag = if positive {
                g.in_window_lag()
            } else {
                g.out_of_window_lag()
            };
            let signal = g.positive_signal();
            let amount = g.normal();
            events.push(Event { lag, signal, amount });
        }
        let extra_mean = cfg.n_events_per_entity.saturating_sub(cfg.k_min);
        let n_background = if extra_mean == 0 {
            0
        } else {
            g.rng.random_range(0..=2 * extra_mean)
        };
        for _ in 0..n_background {
            let ev = if g.rng.random_bool(cfg.noise_event_fraction) {
                if g.rng.random_bool(0.5) {
                    // looks relevant but sits outside the window
                    let lag = g.out_of_window_lag();
                    let signal = g.positive_signal();
                    let amount = g.normal();
                    Event { lag, signal, amount }
                } else {
                    // sits in the window with shifted, non-signal features
                    let lag = g.in_window_lag();
                    let signal = g.negative_signal(shift);
                    let amount = g.normal() + shift;
                    Event { lag, signal, amount }
                }
            } else {
                let (lo, hi) = cfg.lag_range();
                let lag = g.uniform_lag(lo, hi);
                let signal = g.negative_signal(1.0);
                let amount = g.normal();
                Event { lag, signal, amount }
            };
            events.push(ev);
        }

        let mut timed = Vec::with_capacity(events.len());
        for ev in &events {
            let channel = *CHANNELS.choose(&mut g.rng).expect("non-empty");
            let time = seed_time - ev.lag;
            let signal = round6(ev.signal);
            timed.push((time, signal));
            event_rows.push(vec![
                format!("ev{}", event_rows.len()),
                format!("e{e}"),
                time.to_string(),
                format!("{signal:.6}"),
                format!("{:.6}", ev.amount),
                channel.to_string(),
            ]);
        }
        let label = planted_label(cfg, seed_time, &timed);
        let referrer = if e == 0 {
            String::new()
        } else {
            let lo = e.saturating_sub(cfg.referrer_lookback.max(1));
            format!("e{}", g.rng.random_range(lo..e))
        };
        let region = *REGIONS.choose(&mut g.rng).expect("non-empty");
        let score = g.normal();
        entity_rows.push(vec![
            format!("e{e}"),
            region.to_string(),
            format!("{score:.6}"),
            referrer,
            seed_time.to_string(),
            if label { "1" } else { "0" }.to_string(),
        ]);
    }
    let tables = vec![
        Table::from_records(&schema.tables[0], entity_rows)?,
        Table::from_records(&schema.tables[1], event_rows)?,
    ];
    Ok((schema, TableData { tables }))
}

fn round6(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Orders rows by `(time, row index)` and cuts them into consecutive
/// train / validation / test blocks.
pub fn temporal_split(times: &[i64], fractions: [f64; 3]) -> Result<Split> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(CoreError::Config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (times[i], i));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let split = Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(CoreError::Config(format!(
            "split of {n} rows by {fractions:?} leaves an empty part"
        )));
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts() {
        let times: Vec<i64> = (0..10).rev().collect();
        let s = temporal_split(&times, [0.6, 0.2, 0.2]).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        assert_eq!(s.train[0], 9);
    }

    #[test]
    fn split_ties_break_by_row() {
        let s = temporal_split(&[5; 5], [0.6, 0.2, 0.2]).unwrap();
        assert_eq!(s.train, vec![0, 1, 2]);
        assert_eq!(s.val, vec![3]);
        assert_eq!(s.test, vec![4]);
    }

    #[test]
    fn empty_split_is_an_error() {
        assert!(temporal_split(&[1, 2], [0.5, 0.5, 0.0]).is_err());
        assert!(temporal_split(&[1, 2, 3], [0.5, 0.6, 0.1]).is_err());
    }

    #[test]
    fn out_of_window_lags_avoid_the_window() {
        let cfg = SynthConfig::default();
        let mut g = Gen {
            cfg: &cfg,
            rng: ChaCha8Rng::seed_from_u64(1),
        };
        for _ in 0..2000 {
            let lag = g.out_of_window_lag();
            assert!(!cfg.in_window(lag));
            assert!((HOUR..=cfg.history_span).contains(&lag));
            assert!(cfg.in_window(g.in_window_lag()));
        }
    }
}
