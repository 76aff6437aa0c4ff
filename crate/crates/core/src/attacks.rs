//! Data-poisoning attacks run by compromised clients.
//!
//! Attackers only touch their local data. They may query the local model for
//! predictions but never see or change training code or parameters.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::poisoned_per_batch;
use crate::error::{Error, Result};
use crate::nn::{self, argmax, argmin, LabeledDataset, ModelSpec, ParamVector, SgdConfig};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Msimba,
    DpaSlf,
    DpaDlf,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Msimba => "msimba",
            AttackKind::DpaSlf => "dpa_slf",
            AttackKind::DpaDlf => "dpa_dlf",
        }
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttackKind::None),
            "msimba" => Ok(AttackKind::Msimba),
            "dpa_slf" => Ok(AttackKind::DpaSlf),
            "dpa_dlf" => Ok(AttackKind::DpaDlf),
            other => Err(Error::Config(format!("unknown attack '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub malicious_clients: BTreeSet<usize>,
    /// Fraction of each mini-batch perturbed by the query attack.
    pub poison_rate: f64,
    /// Per-step perturbation size of the query attack.
    pub epsilon: f64,
    pub max_queries: usize,
}

impl AttackConfig {
    pub fn none() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            malicious_clients: BTreeSet::new(),
            poison_rate: 1.0,
            epsilon: 0.3,
            max_queries: 50,
        }
    }

    pub fn validate(&self, n_clients: usize) -> Result<()> {
        if let Some(&c) = self.malicious_clients.iter().find(|&&c| c >= n_clients) {
            return Err(Error::Config(format!(
                "malicious client {c} out of range for {n_clients} clients"
            )));
        }
        if !(0.0..=1.0).contains(&self.poison_rate) {
            return Err(Error::Config("poison_rate must be in [0, 1]".into()));
        }
        if self.kind == AttackKind::Msimba && !(self.epsilon > 0.0) {
            return Err(Error::Config("msimba epsilon must be > 0".into()));
        }
        Ok(())
    }

    pub fn is_malicious(&self, client: usize) -> bool {
        self.kind != AttackKind::None && self.malicious_clients.contains(&client)
    }
}

/// Static label flip: `C-1-y` for even `C`, `(C-y) mod C` for odd `C`.
pub fn static_label_flip(y: usize, classes: usize) -> Result<usize> {
    if y >= classes {
        return Err(Error::LabelOutOfRange { label: y, classes });
    }
    if classes.is_multiple_of(2) {
        Ok(classes - 1 - y)
    } else {
        Ok((classes - y) % classes)
    }
}

/// Least probable class under the surrogate model.
pub fn dynamic_label_flip(sample: &[f64], surrogate: &ParamVector, spec: &ModelSpec) -> Result<usize> {
    let probs = nn::forward(surrogate, spec, sample)?;
    Ok(argmin(&probs))
}

/// Hyperparameters used to fit the label-flip surrogate.
pub const SURROGATE_SGD: SgdConfig = SgdConfig {
    learning_rate: 0.05,
    batch_size: 64,
    local_epochs: 20,
};

/// Fits a surrogate model on benign data from a fresh initialization.
pub fn train_surrogate(
    benign_data: &LabeledDataset,
    spec: &ModelSpec,
    seed: u64,
) -> Result<ParamVector> {
    if benign_data.is_empty() {
        return Err(Error::EmptyData);
    }
    let init = nn::init_model(spec, seed::derive(seed, Stream::Surrogate, &[0]));
    nn::sgd_train(
        &init,
        spec,
        benign_data,
        &SURROGATE_SGD,
        seed::derive(seed, Stream::Surrogate, &[1]),
    )
}

/// Black-box query attack in the style of SimBA.
///
/// Finds the most confused wrong class `m*` (highest probability other than
/// `true_label`), then for up to `max_queries` iterations tries `±epsilon` along
/// a random coordinate and keeps a step only if it strictly raises the
/// probability of `m*`. Coordinates are clamped to `bounds`.
pub fn msimba_poison<F>(
    sample: &[f64],
    true_label: usize,
    predict: F,
    epsilon: f64,
    max_queries: usize,
    bounds: (f64, f64),
    rng_seed: u64,
) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut current = sample.to_vec();
    if max_queries == 0 || current.is_empty() {
        return current;
    }
    let probs = predict(&current);
    let target = most_confused_class(&probs, true_label);
    let mut best = probs[target];
    let mut rng = seed::rng_from(rng_seed);
    let (lo, hi) = bounds;
    for _ in 0..max_queries {
        let i = rng.random_range(0..current.len());
        let original = current[i];
        for step in [epsilon, -epsilon] {
            current[i] = (original + step).clamp(lo, hi);
            if current[i] == original {
                continue;
            }
            let p = predict(&current)[target];
            if p > best {
                best = p;
                break;
            }
            current[i] = original;
        }
    }
    current
}

/// Highest-probability class other than `true_label`; ties to the lowest index.
pub fn most_confused_class(probs: &[f64], true_label: usize) -> usize {
    let masked: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(k, &p)| if k == true_label { f64::NEG_INFINITY } else { p })
        .collect();
    argmax(&masked)
}

/// Applies the configured attack to compromised clients' data.
#[derive(Debug, Clone)]
pub struct Attacker {
    pub config: AttackConfig,
    pub spec: ModelSpec,
    /// Required for `dpa_dlf`.
    pub surrogate: Option<ParamVector>,
    /// Mini-batch size used to spread query-attack poisoning.
    pub batch_size: usize,
}

impl Attacker {
    pub fn new(config: AttackConfig, spec: ModelSpec, surrogate: Option<ParamVector>, batch_size: usize) -> Result<Self> {
        if config.kind == AttackKind::DpaDlf && surrogate.is_none() {
            return Err(Error::Config("dpa_dlf requires a surrogate model".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(Attacker {
            config,
            spec,
            surrogate,
            batch_size,
        })
    }

    /// Poisoned copy of `data`, or `None` when `client` is benign or the
    /// attack is disabled.
    pub fn poison(
        &self,
        client: usize,
        data: &LabeledDataset,
        local_model: &ParamVector,
        round: usize,
        rng_seed: u64,
    ) -> Result<Option<LabeledDataset>> {
        if !self.config.is_malicious(client) || data.is_empty() {
            return Ok(None);
        }
        let classes = self.spec.num_classes;
        let mut poisoned = data.clone();
        match self.config.kind {
            AttackKind::None => return Ok(None),
            AttackKind::DpaSlf => {
                for y in poisoned.labels_mut() {
                    *y = static_label_flip(*y, classes)?;
                }
            }
            AttackKind::DpaDlf => {
                let surrogate = self.surrogate.as_ref().expect("checked in new");
                for r in 0..data.len() {
                    poisoned.labels_mut()[r] = dynamic_label_flip(data.row(r), surrogate, &self.spec)?;
                }
            }
            AttackKind::Msimba => {
                let bounds = data.feature_range();
                let predict = |x: &[f64]| {
                    nn::forward(local_model, &self.spec, x).expect("dimension checked")
                };
                if data.dim() != self.spec.input_dim {
                    return Err(Error::DimensionMismatch {
                        expected: self.spec.input_dim,
                        actual: data.dim(),
                    });
                }
                let mut rng = seed::derived_rng(rng_seed, Stream::Attack, &[client as u64, round as u64]);
                let len = data.len();
                for (b, start) in (0..len).step_by(self.batch_size).enumerate() {
                    let batch_len = self.batch_size.min(len - start);
                    let k = poisoned_per_batch(self.config.poison_rate, batch_len);
                    let mut picks = sample(&mut rng, batch_len, k).into_vec();
                    picks.sort_unstable();
                    for (j, offset) in picks.into_iter().enumerate() {
                        let r = start + offset;
                        let step_seed = seed::derive(
                            rng_seed,
                            Stream::Attack,
                            &[client as u64, round as u64, b as u64, j as u64],
                        );
                        let x = msimba_poison(
                            data.row(r),
                            data.label(r),
                            predict,
                            self.config.epsilon,
                            self.config.max_queries,
                            bounds,
                            step_seed,
                        );
                        poisoned.row_mut(r).copy_from_slice(&x);
                    }
                }
            }
        }
        Ok(Some(poisoned))
    }

    /// Like [`Attacker::poison`] but always returns a dataset.
    pub fn apply(
        &self,
        client: usize,
        data: &LabeledDataset,
        local_model: &ParamVector,
        round: usize,
        rng_seed: u64,
    ) -> Result<LabeledDataset> {
        Ok(self
            .poison(client, data, local_model, round, rng_seed)?
            .unwrap_or_else(|| data.clone()))
    }
}
