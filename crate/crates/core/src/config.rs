//! Experiment configuration with desk-scale defaults.

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::baselines::DefenseKind;
use crate::data;
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// Gaussian-mixture data; `samples` is the size before the train/test split.
    Synthetic {
        classes: usize,
        dim: usize,
        samples: usize,
        class_sep: f64,
    },
    /// IDX image/label pair.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        max_samples: usize,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic {
            classes: 10,
            dim: 20,
            samples: 5000,
            class_sep: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_clients: usize,
    pub zones_m: usize,
    pub global_epochs: usize,
    pub local_epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub alpha: f64,
    pub xi: usize,
    pub tau: usize,
    pub queue_capacity: usize,
    /// Number of most recent rounds replayed when scoring a candidate zone set.
    pub replay_window: usize,
    pub defense: DefenseKind,
    pub attack: AttackKind,
    /// Percentage of malicious clients; 0 selects the single `attack_client`.
    pub attack_pct: f64,
    pub attack_client: usize,
    pub poison_rate: f64,
    pub msimba_epsilon: f64,
    pub msimba_queries: usize,
    pub beta: f64,
    pub dataset: DatasetConfig,
    pub hidden_dims: Vec<usize>,
    pub test_fraction: f64,
    pub rs_fraction: f64,
    /// Krum's assumed attacker count; defaults to the configured attacker count
    /// or `n/4` without an attack.
    pub krum_f: Option<usize>,
    /// Values trimmed per side by the trimmed mean; defaults to `n/10`.
    pub trim_k: Option<usize>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_clients: 40,
            zones_m: 5,
            global_epochs: 60,
            local_epochs: 5,
            eta: 0.01,
            batch_size: 64,
            alpha: 0.97,
            xi: 5,
            tau: 50,
            queue_capacity: 32,
            replay_window: 1,
            defense: DefenseKind::Fedzz,
            attack: AttackKind::None,
            attack_pct: 0.0,
            attack_client: 0,
            poison_rate: data::poison_rate_default(),
            msimba_epsilon: 0.3,
            msimba_queries: 50,
            beta: 1.0,
            dataset: DatasetConfig::default(),
            hidden_dims: Vec::new(),
            test_fraction: 0.2,
            rs_fraction: 0.5,
            krum_f: None,
            trim_k: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.n_clients < 2 {
            return fail("n_clients must be >= 2".into());
        }
        if self.defense == DefenseKind::Fedzz {
            if self.zones_m < 2 {
                return fail("zones_m must be >= 2".into());
            }
            if !self.n_clients.is_multiple_of(self.zones_m) {
                return fail(format!(
                    "m must divide n (n_clients={}, zones_m={})",
                    self.n_clients, self.zones_m
                ));
            }
        }
        if self.global_epochs == 0 {
            return fail("global_epochs must be >= 1".into());
        }
        if !(self.eta > 0.0) {
            return fail("eta must be > 0".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(-1.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must be in [-1, 1], got {}", self.alpha));
        }
        if self.xi == 0 || self.tau == 0 || self.replay_window == 0 {
            return fail("xi, tau and replay_window must be >= 1".into());
        }
        if !(0.0..=100.0).contains(&self.attack_pct) {
            return fail("attack_pct must be in [0, 100]".into());
        }
        if self.attack != AttackKind::None && self.attack_pct == 0.0 && self.attack_client >= self.n_clients {
            return fail(format!("attack_client {} out of range", self.attack_client));
        }
        if !(self.beta > 0.0) {
            return fail("beta must be > 0".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail("test_fraction must be in (0, 1)".into());
        }
        if !(self.rs_fraction > 0.0 && self.rs_fraction <= 1.0) {
            return fail("rs_fraction must be in (0, 1]".into());
        }
        if self.hidden_dims.contains(&0) {
            return fail("hidden dims must be >= 1".into());
        }
        if let DatasetConfig::Synthetic { classes, dim, samples, class_sep } = &self.dataset {
            if *classes < 2 || *dim < 2 || *samples < *classes || !(*class_sep >= 0.0) {
                return fail("synthetic dataset needs classes >= 2, dim >= 2, samples >= classes, class_sep >= 0".into());
            }
        }
        self.attack_config().validate(self.n_clients)
    }

    /// Malicious client ids. Multi-client selections take a prefix of one
    /// seeded permutation, so higher percentages contain lower ones.
    pub fn malicious_clients(&self) -> BTreeSet<usize> {
        if self.attack == AttackKind::None {
            return BTreeSet::new();
        }
        if self.attack_pct == 0.0 {
            return [self.attack_client].into();
        }
        let count = ((self.attack_pct / 100.0 * self.n_clients as f64).round() as usize).min(self.n_clients);
        let mut order: Vec<usize> = (0..self.n_clients).collect();
        order.shuffle(&mut seed::derived_rng(self.seed, Stream::Malicious, &[]));
        order.into_iter().take(count).collect()
    }

    pub fn attack_config(&self) -> AttackConfig {
        AttackConfig {
            kind: self.attack,
            malicious_clients: self.malicious_clients(),
            poison_rate: match self.attack {
                AttackKind::Msimba => self.poison_rate,
                _ => 1.0,
            },
            epsilon: self.msimba_epsilon,
            max_queries: self.msimba_queries,
        }
    }

    pub fn krum_f(&self) -> usize {
        self.krum_f.unwrap_or_else(|| match self.attack {
            AttackKind::None => self.n_clients / 4,
            _ => self.malicious_clients().len(),
        })
    }

    pub fn trim_k(&self) -> usize {
        self.trim_k.unwrap_or(self.n_clients / 10)
    }
}
