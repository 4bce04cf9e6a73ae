use std::path::Path;

use gelgt_core::model::{ModelConfig, ModelSwitches};
use gelgt_core::sampler::{SamplerMode, SamplingConfig, Stage1};
use gelgt_core::synthgen::SynthConfig;
use gelgt_core::trainer::{SamplerSetup, TrainConfig};
use gelgt_core::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Component switches; each one is independent of the others.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Uniform random candidates instead of breadth-first expansion.
    pub no_structural_sampling: bool,
    pub no_semantic_refinement: bool,
    pub no_gaussian_bias: bool,
    /// Pins the fusion weight to the attention branch.
    pub no_gnn_branch: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 4] = [
        "no_structural_sampling",
        "no_semantic_refinement",
        "no_gaussian_bias",
        "no_gnn_branch",
    ];

    /// `full`, or the enabled switches joined by `+`.
    pub fn variant(&self) -> String {
        let on = [
            self.no_structural_sampling,
            self.no_semantic_refinement,
            self.no_gaussian_bias,
            self.no_gnn_branch,
        ];
        let names: Vec<&str> = Self::NAMES
            .iter()
            .zip(on)
            .filter_map(|(n, b)| b.then_some(*n))
            .collect();
        if names.is_empty() {
            "full".to_string()
        } else {
            names.join("+")
        }
    }

    /// The single-switch ablation called `name`.
    pub fn single(name: &str) -> Option<Self> {
        let mut a = Self::default();
        match name {
            "full" => {}
            "no_structural_sampling" => a.no_structural_sampling = true,
            "no_semantic_refinement" => a.no_semantic_refinement = true,
            "no_gaussian_bias" => a.no_gaussian_bias = true,
            "no_gnn_branch" => a.no_gnn_branch = true,
            _ => return None,
        }
        Some(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub sampling: SamplingConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablations: Ablations,
    /// Train, validation and test fractions over seed times.
    pub split: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            sampling: SamplingConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablations: Ablations::default(),
            split: [0.7, 0.15, 0.15],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.sampling.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let s = self.split;
        if s.iter().any(|f| !(0.0..=1.0).contains(f)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CoreError::Config(format!(
                "split fractions {s:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Sets every seed of the run.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.rng_seed = seed;
        self
    }

    pub fn switches(&self) -> ModelSwitches {
        ModelSwitches {
            gaussian_bias: !self.ablations.no_gaussian_bias,
            pinned_eta: self.ablations.no_gnn_branch.then_some(1.0),
        }
    }

    pub fn sampler(&self) -> SamplerSetup {
        let stage1 = if self.ablations.no_structural_sampling {
            Stage1::Random {
                run_seed: self.train.rng_seed,
            }
        } else {
            Stage1::Bfs
        };
        SamplerSetup {
            config: self.sampling.clone(),
            mode: SamplerMode {
                stage1,
                refine: !self.ablations.no_semantic_refinement,
            },
        }
    }
}
