//! Experiment configuration: a flat `key = value` file (TOML syntax).

use crate::arena::{NoiseLevels, ZoneMap};
use crate::dynmodel::{EnsembleConfig, DEFAULT_CAPACITY};
use crate::navigation::MAX_ACTIONS;
use crate::par::Exec;
use crate::rfqd::{Ablation, Prioritisation, RunConfig};
use crate::variation::VariationParams;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Every tunable of an experiment. Defaults follow the physical-robot setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub ablation: Ablation,
    pub seed: u64,
    /// Number of training seeds for `ablate`, counting up from `seed`.
    pub seeds: usize,
    pub eval_budget: usize,
    pub init_controllers: usize,
    pub imagination_iters: usize,
    pub batch_per_cycle: usize,
    pub train_every: usize,

    pub r_exploration: f64,
    pub r_recovery: f64,
    pub beta: f64,
    pub alpha: f64,

    pub archive_l: f64,
    pub novelty_k: usize,
    pub prioritisation: Prioritisation,
    pub sigma_iso: f64,
    pub sigma_line: f64,

    pub ensemble_members: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub buffer_capacity: usize,

    pub surrogate_seed: u64,
    pub sigma_v: f64,
    pub sigma_omega: f64,

    pub maze: PathBuf,
    pub nav_trials: usize,
    pub max_actions: usize,

    pub output_dir: PathBuf,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let noise = NoiseLevels::default();
        let var = VariationParams::default();
        Self {
            ablation: Ablation::RfQd,
            seed: 1,
            seeds: 4,
            eval_budget: 1000,
            init_controllers: 10,
            imagination_iters: 200,
            batch_per_cycle: 10,
            train_every: 10,
            r_exploration: 0.5,
            r_recovery: 0.75,
            beta: 0.3,
            alpha: 0.8,
            archive_l: 0.05,
            novelty_k: 15,
            prioritisation: Prioritisation::Novelty,
            sigma_iso: var.sigma_iso,
            sigma_line: var.sigma_line,
            ensemble_members: 4,
            hidden_width: 500,
            hidden_layers: 2,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 20,
            buffer_capacity: DEFAULT_CAPACITY,
            surrogate_seed: DEFAULT_SURROGATE_SEED,
            sigma_v: noise.sigma_v,
            sigma_omega: noise.sigma_omega,
            maze: PathBuf::from("maps/default_maze.json"),
            nav_trials: 5,
            max_actions: MAX_ACTIONS,
            output_dir: PathBuf::from("runs"),
            parallel: true,
        }
    }
}

/// Master seed of the surrogate field used unless configured otherwise.
pub const DEFAULT_SURROGATE_SEED: u64 = 4;

pub const KEYS: [&str; 32] = [
    "ablation",
    "seed",
    "seeds",
    "eval_budget",
    "init_controllers",
    "imagination_iters",
    "batch_per_cycle",
    "train_every",
    "r_exploration",
    "r_recovery",
    "beta",
    "alpha",
    "archive_l",
    "novelty_k",
    "prioritisation",
    "sigma_iso",
    "sigma_line",
    "ensemble_members",
    "hidden_width",
    "hidden_layers",
    "learning_rate",
    "batch_size",
    "epochs",
    "buffer_capacity",
    "surrogate_seed",
    "sigma_v",
    "sigma_omega",
    "maze",
    "nav_trials",
    "max_actions",
    "output_dir",
    "parallel",
];

impl ExperimentConfig {
    /// Parses a config file body; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for (key, value) in &table {
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::UnknownKey(key.clone()));
            }
            if value.is_table() || value.is_array() {
                return Err(Error::InvalidValue { key: key.clone(), reason: "expected a single value".into() });
            }
        }
        let cfg = Self::deserialize(toml::Value::Table(table.clone())).map_err(|e| {
            let key = table.keys().find(|k| e.to_string().contains(k.as_str())).cloned();
            match key {
                Some(key) => Error::InvalidValue { key, reason: e.message().to_string() },
                None => Error::Config(e.message().to_string()),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Missing(format!("config file {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Serialises back to the file format; `parse(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| Err(Error::InvalidValue { key: key.into(), reason: reason.into() });
        self.zones()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha", "must lie in [0, 1]");
        }
        if !(self.beta >= 0.0 && self.beta < self.r_exploration) {
            return bad("beta", "must lie in [0, r_exploration)");
        }
        if !(self.archive_l > 0.0) {
            return bad("archive_l", "must be positive");
        }
        for (key, v) in [
            ("seeds", self.seeds),
            ("novelty_k", self.novelty_k),
            ("batch_per_cycle", self.batch_per_cycle),
            ("train_every", self.train_every),
            ("ensemble_members", self.ensemble_members),
            ("hidden_width", self.hidden_width),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
        }
        for (key, v) in [
            ("sigma_iso", self.sigma_iso),
            ("sigma_line", self.sigma_line),
            ("sigma_v", self.sigma_v),
            ("sigma_omega", self.sigma_omega),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, "must be a finite non-negative number");
            }
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        Ok(())
    }

    pub fn zones(&self) -> Result<ZoneMap> {
        ZoneMap::new([0.0, 0.0], self.r_exploration, self.r_recovery)
    }

    pub fn noise(&self) -> NoiseLevels {
        NoiseLevels { sigma_v: self.sigma_v, sigma_omega: self.sigma_omega }
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn training_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.seed + i).collect()
    }

    pub fn run_config(&self, ablation: Ablation, seed: u64) -> RunConfig {
        RunConfig {
            dynamics_awareness: ablation.dynamics_awareness(),
            recovery_enabled: ablation.recovery(),
            eval_budget: self.eval_budget,
            init_controllers: self.init_controllers,
            imagination_iters: self.imagination_iters,
            batch_per_cycle: self.batch_per_cycle,
            train_every: self.train_every,
            alpha: self.alpha,
            beta: self.beta,
            archive_l: self.archive_l,
            novelty_k: self.novelty_k,
            prioritisation: self.prioritisation,
            variation: VariationParams { sigma_iso: self.sigma_iso, sigma_line: self.sigma_line },
            ensemble: EnsembleConfig {
                members: self.ensemble_members,
                hidden: self.hidden_width,
                hidden_layers: self.hidden_layers,
                lr: self.learning_rate,
                batch_size: self.batch_size,
                epochs: self.epochs,
            },
            buffer_capacity: self.buffer_capacity,
            seed,
            exec: self.exec(),
        }
    }
}
