//! Round engine: client execution with discard flags, global and zone-level
//! aggregation, server-side replay for the calibrator, and the experiment loop.
//!
//! Each epoch a client receives a model (the fresh global model in the first
//! epoch, afterwards the aggregate of its discriminator zone, or the global
//! model for the baselines), trains on its possibly poisoned data, and raises
//! its discard flag when the trained parameters have cosine similarity below
//! `alpha` with the model it received.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::Attacker;
use crate::baselines::{self, renormalized_average, weighted_sum, DefenseKind};
use crate::config::{DatasetConfig, ExperimentConfig};
use crate::data::{self, PartitionPlan};
use crate::error::{Error, Result};
use crate::metrics::DropLog;
use crate::nn::{self, LabeledDataset, ModelSpec, ParamVector, SgdConfig};
use crate::seed::{self, Stream};
use crate::zones::{self, CalibratorConfig, ZoneSet, ZonesCalibrator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRoundResult {
    pub client_id: usize,
    pub update: ParamVector,
    pub discard: bool,
    pub data_size: usize,
    /// Cosine similarity between the update and the received model.
    pub cosine: f64,
}

/// Per-client training settings shared by every client in a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientSettings {
    pub alpha: f64,
    pub sgd: SgdConfig,
}

/// `true` when the update deviates from `reference` by more than `alpha` allows.
pub fn discard_flag(update: &[f64], reference: &[f64], alpha: f64) -> Result<bool> {
    Ok(nn::cosine_similarity(update, reference)? < alpha)
}

/// One client's local step: poison (if compromised), train from `incoming`,
/// compare the result to `incoming`.
///
/// A client without data returns `incoming` unchanged and never discards.
#[allow(clippy::too_many_arguments)]
pub fn client_round(
    client_data: &LabeledDataset,
    incoming: &ParamVector,
    spec: &ModelSpec,
    settings: &ClientSettings,
    attacker: Option<&Attacker>,
    client_id: usize,
    round: usize,
    seed: u64,
) -> Result<ClientRoundResult> {
    if incoming.len() != spec.param_count() {
        return Err(Error::DimensionMismatch {
            expected: spec.param_count(),
            actual: incoming.len(),
        });
    }
    if client_data.is_empty() {
        return Ok(ClientRoundResult {
            client_id,
            update: incoming.clone(),
            discard: false,
            data_size: 0,
            cosine: 1.0,
        });
    }
    let poisoned = match attacker {
        Some(a) => a.poison(client_id, client_data, incoming, round, seed)?,
        None => None,
    };
    let train_data = poisoned.as_ref().unwrap_or(client_data);
    let train_seed = seed::derive(seed, Stream::Training, &[client_id as u64, round as u64]);
    let update = nn::sgd_train(incoming, spec, train_data, &settings.sgd, train_seed)?;
    let cosine = nn::cosine_similarity(&update, incoming)?;
    Ok(ClientRoundResult {
        client_id,
        update,
        discard: cosine < settings.alpha,
        data_size: client_data.len(),
        cosine,
    })
}

/// Data-size weighted average of the updates that are neither discarded nor
/// empty, weights renormalized over that set. Falls back to `previous` when
/// nothing is left.
pub fn aggregate_global(results: &[ClientRoundResult], previous: &ParamVector) -> ParamVector {
    let flags: Vec<bool> = results.iter().map(|r| r.discard).collect();
    aggregate_with_flags(results, &flags, previous)
}

fn aggregate_with_flags(results: &[ClientRoundResult], discard: &[bool], previous: &ParamVector) -> ParamVector {
    let kept: Vec<&ClientRoundResult> = results
        .iter()
        .zip(discard)
        .filter(|(r, &d)| !d && r.data_size > 0)
        .map(|(r, _)| r)
        .collect();
    if kept.is_empty() {
        return previous.clone();
    }
    let total: f64 = kept.iter().map(|r| r.data_size as f64).sum();
    let weights: Vec<f64> = kept.iter().map(|r| r.data_size as f64 / total).collect();
    let updates: Vec<&ParamVector> = kept.iter().map(|r| &r.update).collect();
    weighted_sum(&updates, &weights)
}

/// Per-zone weighted average of member updates, discarded or not. Weights
/// are data sizes renormalized within the zone (equal if the zone has no data).
pub fn zone_aggregate(results: &[ClientRoundResult], z: &ZoneSet) -> Result<Vec<ParamVector>> {
    let mut by_client: Vec<Option<&ClientRoundResult>> = vec![None; z.n()];
    for r in results {
        if let Some(slot) = by_client.get_mut(r.client_id) {
            *slot = Some(r);
        }
    }
    z.zones()
        .iter()
        .map(|zone| {
            let members: Vec<&ClientRoundResult> = zone
                .iter()
                .map(|&c| by_client.get(c).copied().flatten().ok_or(Error::MissingUpdate(c)))
                .collect::<Result<_>>()?;
            let updates: Vec<ParamVector> = members.iter().map(|r| r.update.clone()).collect();
            let sizes: Vec<f64> = members.iter().map(|r| r.data_size as f64).collect();
            let all: Vec<usize> = (0..members.len()).collect();
            renormalized_average(&updates, &sizes, &all).ok_or(Error::InvalidZoneSet("empty zone".into()))
        })
        .collect()
}

/// What the clients compared their updates against in a recorded round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReplayReference {
    /// First round: every client received the same model.
    Bootstrap(ParamVector),
    /// Zone aggregates are rebuilt from the previous round's updates.
    Previous(Vec<ClientRoundResult>),
}

/// Everything the server keeps about one round to replay it under another
/// zone set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRound {
    pub reference: ReplayReference,
    pub current: Vec<ClientRoundResult>,
    /// Global model before the round; the fallback when every update is discarded.
    pub previous_global: ParamVector,
}

/// Server-side replay of a round under `candidate`: rebuild the zone
/// aggregates the clients would have received, recompute every discard flag
/// with the candidate's adjacency, and aggregate the survivors.
///
/// Returns the aggregate and the recomputed flags.
pub fn mimic_aggregate(candidate: &ZoneSet, replay: &ReplayRound, alpha: f64) -> Result<(ParamVector, Vec<bool>)> {
    let references: Vec<ParamVector> = match &replay.reference {
        ReplayReference::Bootstrap(w) => vec![w.clone()],
        ReplayReference::Previous(prev) => zone_aggregate(prev, candidate)?,
    };
    let owner = candidate.assignment();
    let flags = replay
        .current
        .iter()
        .map(|r| {
            if r.data_size == 0 {
                return Ok(false);
            }
            let reference = match &replay.reference {
                ReplayReference::Bootstrap(_) => &references[0],
                ReplayReference::Previous(_) => {
                    let zone = owner.get(r.client_id).copied().filter(|&z| z != usize::MAX);
                    let zone = zone.ok_or(Error::UnknownClient(r.client_id))?;
                    &references[(zone + 1) % candidate.m()]
                }
            };
            discard_flag(&r.update, reference, alpha)
        })
        .collect::<Result<Vec<bool>>>()?;
    let agg = aggregate_with_flags(&replay.current, &flags, &replay.previous_global);
    Ok((agg, flags))
}

/// Accuracy of the replayed aggregate on `test`.
pub fn mimic_server(
    candidate: &ZoneSet,
    replay: &ReplayRound,
    spec: &ModelSpec,
    alpha: f64,
    test: &LabeledDataset,
) -> Result<f64> {
    let (agg, _) = mimic_aggregate(candidate, replay, alpha)?;
    nn::accuracy(&agg, spec, test)
}

/// Per-epoch record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based.
    pub epoch: usize,
    pub gta: f64,
    pub df_flags: Vec<bool>,
    pub dropped_ids: Vec<usize>,
    pub calibrated: bool,
    /// Cross-entropy of the new global model on the clean training set.
    pub train_loss: f64,
}

/// Data and model shared by every round of an experiment.
#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: ModelSpec,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub plan: PartitionPlan,
    pub client_data: Vec<LabeledDataset>,
}

impl Workload {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let full = match &cfg.dataset {
            DatasetConfig::Synthetic {
                classes,
                dim,
                samples,
                class_sep,
            } => data::generate_synthetic(*classes, *dim, *samples, *class_sep, seed::derive(cfg.seed, Stream::Data, &[]))?,
            DatasetConfig::Idx {
                images,
                labels,
                max_samples,
            } => data::load_idx(images, labels, *max_samples)?,
        };
        let classes = match &cfg.dataset {
            DatasetConfig::Synthetic { classes, .. } => *classes,
            DatasetConfig::Idx { .. } => full.labels().iter().max().map_or(0, |m| m + 1).max(2),
        };
        let spec = ModelSpec::new(full.dim(), cfg.hidden_dims.clone(), classes)?;
        let (train, test) = data::train_test_split(&full, cfg.test_fraction, seed::derive(cfg.seed, Stream::Split, &[]))?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Config("train and test sets must both be non-empty".into()));
        }
        let plan = data::dirichlet_partition(&train, cfg.n_clients, cfg.beta, seed::derive(cfg.seed, Stream::Partition, &[]))?;
        let client_data = (0..cfg.n_clients).map(|k| plan.client_data(&train, k)).collect();
        Ok(Workload {
            spec,
            train,
            test,
            plan,
            client_data,
        })
    }
}

/// Server-side state between rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_params: ParamVector,
    /// Only used by the zone defense.
    pub zone_set: Option<ZoneSet>,
    /// Model each client receives next epoch.
    pub outgoing: Vec<ParamVector>,
    pub stored_updates: Vec<ClientRoundResult>,
    pub epoch: usize,
}

/// A running experiment, advanced one epoch at a time.
pub struct Experiment {
    cfg: ExperimentConfig,
    workload: Workload,
    attacker: Option<Attacker>,
    calibrator: Option<ZonesCalibrator>,
    state: ServerState,
    replay: VecDeque<ReplayRound>,
    round_zone_set: Option<ZoneSet>,
    drop_log: DropLog,
    pool: Option<rayon::ThreadPool>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        Self::with_threads(cfg, 1)
    }

    /// `threads > 1` trains clients in parallel; results are identical.
    pub fn with_threads(cfg: ExperimentConfig, threads: usize) -> Result<Self> {
        cfg.validate()?;
        let workload = Workload::build(&cfg)?;
        let spec = workload.spec.clone();
        let attack = cfg.attack_config();
        let attacker = if attack.kind == crate::attacks::AttackKind::None {
            None
        } else {
            let surrogate = match attack.kind {
                crate::attacks::AttackKind::DpaDlf => Some(crate::attacks::train_surrogate(
                    &workload.train,
                    &spec,
                    seed::derive(cfg.seed, Stream::Surrogate, &[]),
                )?),
                _ => None,
            };
            Some(Attacker::new(attack, spec.clone(), surrogate, cfg.batch_size)?)
        };

        let global = nn::init_model(&spec, seed::derive(cfg.seed, Stream::Init, &[]));
        let (zone_set, calibrator) = if cfg.defense == DefenseKind::Fedzz {
            let z = zones::random_zone_set(cfg.n_clients, cfg.zones_m, seed::derive(cfg.seed, Stream::Zones, &[]))?;
            let cal = ZonesCalibrator::new(CalibratorConfig {
                iterations: cfg.tau,
                interval: cfg.xi,
                queue_capacity: cfg.queue_capacity,
                seed: seed::derive(cfg.seed, Stream::Calibrator, &[]),
                ..CalibratorConfig::default()
            })?;
            (Some(z), Some(cal))
        } else {
            (None, None)
        };

        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Config(e.to_string()))?,
            )
        } else {
            None
        };

        let drop_log = DropLog::new(cfg.global_epochs, cfg.malicious_clients().len());
        Ok(Experiment {
            state: ServerState {
                outgoing: vec![global.clone(); cfg.n_clients],
                global_params: global,
                zone_set,
                stored_updates: Vec::new(),
                epoch: 0,
            },
            cfg,
            workload,
            attacker,
            calibrator,
            replay: VecDeque::new(),
            round_zone_set: None,
            drop_log,
            pool,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn drop_log(&self) -> &DropLog {
        &self.drop_log
    }

    /// Replay record of the most recent round.
    pub fn last_replay(&self) -> Option<&ReplayRound> {
        self.replay.back()
    }

    /// Zone set that was live during the most recent round (before any
    /// calibration at its end).
    pub fn last_round_zone_set(&self) -> Option<&ZoneSet> {
        self.round_zone_set.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.cfg.global_epochs
    }

    fn run_clients(&self, round: usize) -> Result<Vec<ClientRoundResult>> {
        let settings = ClientSettings {
            alpha: self.cfg.alpha,
            sgd: SgdConfig {
                learning_rate: self.cfg.eta,
                batch_size: self.cfg.batch_size,
                local_epochs: self.cfg.local_epochs,
            },
        };
        let one = |k: usize| {
            client_round(
                &self.workload.client_data[k],
                &self.state.outgoing[k],
                &self.workload.spec,
                &settings,
                self.attacker.as_ref(),
                k,
                round,
                self.cfg.seed,
            )
        };
        match &self.pool {
            Some(pool) => pool.install(|| (0..self.cfg.n_clients).into_par_iter().map(one).collect()),
            None => (0..self.cfg.n_clients).map(one).collect(),
        }
    }

    /// Server aggregation for the configured defense: new global model and
    /// per-client exclusion flags.
    fn aggregate(&self, results: &[ClientRoundResult], round: usize) -> Result<(ParamVector, Vec<bool>)> {
        let n = results.len();
        let prev = &self.state.global_params;
        let updates: Vec<ParamVector> = results.iter().map(|r| r.update.clone()).collect();
        let weights = self.workload.plan.lambdas();
        let from_kept = |kept: &[usize]| {
            let mut flags = vec![true; n];
            kept.iter().for_each(|&k| flags[k] = false);
            flags
        };
        Ok(match self.cfg.defense {
            DefenseKind::Fedzz => (aggregate_global(results, prev), results.iter().map(|r| r.discard).collect()),
            DefenseKind::Fedavg => (baselines::fedavg_aggregate(&updates, &weights)?, vec![false; n]),
            DefenseKind::Fl100 => {
                let malicious = self.cfg.malicious_clients();
                let agg = baselines::fl100_aggregate(&updates, &weights, &malicious)?.unwrap_or_else(|| prev.clone());
                (agg, (0..n).map(|k| malicious.contains(&k)).collect())
            }
            DefenseKind::RandomSampling => {
                let s = seed::derive(self.cfg.seed, Stream::Sampling, &[round as u64]);
                let (agg, picked) = baselines::random_sampling_aggregate(&updates, &weights, self.cfg.rs_fraction, s)?;
                (agg, from_kept(&picked))
            }
            DefenseKind::NWay => {
                let (agg, kept) = baselines::n_way_aggregate(&updates, &weights, self.cfg.alpha, prev)?;
                (agg, from_kept(&kept))
            }
            DefenseKind::Krum => {
                let chosen = baselines::krum_select(&updates, self.cfg.krum_f())?;
                (updates[chosen].clone(), from_kept(&[chosen]))
            }
            DefenseKind::TrimmedMean => (baselines::trimmed_mean_aggregate(&updates, self.cfg.trim_k())?, vec![false; n]),
            DefenseKind::Median => (baselines::median_aggregate(&updates)?, vec![false; n]),
        })
    }

    /// Runs one global epoch.
    pub fn step(&mut self) -> Result<RoundReport> {
        if self.is_finished() {
            return Err(Error::Config("experiment already finished".into()));
        }
        let epoch = self.state.epoch + 1;
        let results = self.run_clients(epoch)?;
        let (global, flags) = self.aggregate(&results, epoch)?;
        if !global.is_finite() {
            return Err(Error::InvalidParameter(format!("non-finite global model at epoch {epoch}")));
        }
        let gta = nn::accuracy(&global, &self.workload.spec, &self.workload.test)?;
        let train_loss = nn::loss(&global, &self.workload.spec, &self.workload.train)?;

        let reference = if epoch == 1 {
            ReplayReference::Bootstrap(self.state.outgoing[0].clone())
        } else {
            ReplayReference::Previous(std::mem::take(&mut self.state.stored_updates))
        };
        self.replay.push_back(ReplayRound {
            reference,
            current: results.clone(),
            previous_global: self.state.global_params.clone(),
        });
        while self.replay.len() > self.cfg.replay_window {
            self.replay.pop_front();
        }

        self.round_zone_set = self.state.zone_set.clone();
        let mut calibrated = false;
        if let (Some(z), Some(cal)) = (self.state.zone_set.clone(), self.calibrator.as_mut()) {
            if epoch.is_multiple_of(self.cfg.xi) {
                let replay = &self.replay;
                let spec = &self.workload.spec;
                let test = &self.workload.test;
                let alpha = self.cfg.alpha;
                let fitness = |cand: &ZoneSet| {
                    let total: f64 = replay
                        .iter()
                        .map(|r| mimic_server(cand, r, spec, alpha, test).expect("replay covers every client"))
                        .sum();
                    total / replay.len() as f64
                };
                let current_fitness = fitness(&z);
                let (best, _) = cal.calibrate(&z, current_fitness, fitness);
                self.state.zone_set = Some(best);
                calibrated = true;
            }
        }

        self.state.outgoing = match &self.state.zone_set {
            Some(z) => {
                let az = zone_aggregate(&results, z)?;
                (0..self.cfg.n_clients)
                    .map(|k| z.discriminator_of(k).map(|j| az[j].clone()))
                    .collect::<Result<_>>()?
            }
            None => vec![global.clone(); self.cfg.n_clients],
        };

        let dropped_ids: Vec<usize> = (0..flags.len()).filter(|&k| flags[k]).collect();
        let malicious = self.cfg.malicious_clients();
        self.drop_log.record(dropped_ids.iter().map(|&k| (k, malicious.contains(&k))).collect());

        self.state.global_params = global;
        self.state.stored_updates = results;
        self.state.epoch = epoch;
        Ok(RoundReport {
            epoch,
            gta,
            df_flags: flags,
            dropped_ids,
            calibrated,
            train_loss,
        })
    }
}

/// Finished run: per-epoch reports and the drop log.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub reports: Vec<RoundReport>,
    pub drop_log: DropLog,
}

impl ExperimentOutcome {
    pub fn final_gta(&self) -> f64 {
        self.reports.last().map_or(0.0, |r| r.gta)
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_experiment_with_threads(cfg, 1)
}

pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentOutcome> {
    let mut exp = Experiment::with_threads(cfg.clone(), threads)?;
    let mut reports = Vec::with_capacity(cfg.global_epochs);
    while !exp.is_finished() {
        reports.push(exp.step()?);
    }
    Ok(ExperimentOutcome {
        reports,
        drop_log: exp.drop_log().clone(),
    })
}
