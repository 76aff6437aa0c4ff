//! Desk-scale fixture shared by the end-to-end comparisons.
//!
//! Synthetic 10-class data, 40 clients in 5 zones, 60 epochs. The learning
//! rate, class separation and Dirichlet β were chosen so that label-flip
//! updates are separable by cosine similarity within 60 epochs; at the
//! default η = 0.01 every client cosine stays above 0.999.

use fedzz_core::attacks::AttackKind;
use fedzz_core::baselines::DefenseKind;
use fedzz_core::{DatasetConfig, ExperimentConfig};

pub const FIXTURE_ETA: f64 = 0.3;
pub const FIXTURE_BETA: f64 = 0.5;
pub const FIXTURE_CLASS_SEP: f64 = 3.0;

/// Share of clients running the label-flip attack in multi-client runs.
pub const FIXTURE_ATTACK_PCT: f64 = 30.0;

/// Comparison config for one defense, attack and seed. Label-flip attacks
/// use [`FIXTURE_ATTACK_PCT`]; other attacks target client 0 alone.
pub fn desk_fixture(defense: DefenseKind, attack: AttackKind, seed: u64) -> ExperimentConfig {
    let multi = matches!(attack, AttackKind::DpaSlf | AttackKind::DpaDlf);
    ExperimentConfig {
        n_clients: 40,
        zones_m: 5,
        xi: 5,
        alpha: 0.97,
        global_epochs: 60,
        eta: FIXTURE_ETA,
        beta: FIXTURE_BETA,
        dataset: DatasetConfig::Synthetic {
            classes: 10,
            dim: 20,
            samples: 5000,
            class_sep: FIXTURE_CLASS_SEP,
        },
        defense,
        attack,
        attack_pct: if multi { FIXTURE_ATTACK_PCT } else { 0.0 },
        attack_client: 0,
        seed,
        ..Default::default()
    }
}
