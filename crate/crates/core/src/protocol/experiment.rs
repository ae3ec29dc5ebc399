use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::stages::{fedavg_rounds, finetuning_stage, preprocessing_iteration, usual_training_stage};
use super::{
    clients_per_round, planned_comm_cost, Federation, IterationSnapshot, RelabelEvent, RoundRecord, ServerState, Stage,
    StageConfig,
};
use crate::config::{DatasetKind, ExperimentConfig, Mode, PartitionMode};
use crate::datagen::{
    apply_noise_model, partition_iid, partition_noniid, BlobGenerator, Dataset, NoiseAssignment, PartitionAssignment,
};
use crate::error::{Error, Result};
use crate::io::ingest_csv;
use crate::metrics::{ground_truth_noise, relabel_report, RelabelReport};
use crate::model::{evaluate, Architecture, WeightVector};
use crate::seed::SeedTree;

/// Everything drawn from the master seed before training starts.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    /// Training data with the injected label noise.
    pub train: Dataset,
    pub test: Dataset,
    pub partition: PartitionAssignment,
    pub noise: NoiseAssignment,
    pub architecture: Architecture,
    pub init_weights: WeightVector,
}

impl Prepared {
    /// Given labels right after noise injection.
    pub fn initial_labels(&self) -> &[usize] {
        &self.train.given_labels
    }
}

/// Builds data, partition, noise and initial weights for `config`.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let seeds = SeedTree::new(config.seed);
    let (mut train, test) = match config.dataset {
        DatasetKind::Blobs => {
            let gen = BlobGenerator::new(
                config.n_classes,
                config.dim,
                config.cluster_std,
                config.center_scale,
                seeds.child("data").value(),
            )?;
            let train = gen.sample(config.n_samples, seeds.child("data").child("train").value())?;
            let test = gen.sample(config.n_test, seeds.child("data").child("test").value())?;
            (train, test)
        }
        DatasetKind::Csv => {
            let path = config
                .csv_path
                .as_ref()
                .ok_or_else(|| Error::config("csv_path", "required when dataset = \"csv\""))?;
            let all = ingest_csv(path, config.n_classes)?;
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.shuffle(&mut seeds.child("data").child("split").rng());
            let n_test = (config.csv_test_fraction * all.len() as f64).round() as usize;
            if n_test == 0 || n_test >= all.len() {
                return Err(Error::config(
                    "csv_test_fraction",
                    format!("leaves {n_test} of {} rows for testing", all.len()),
                ));
            }
            let (test_idx, train_idx) = order.split_at(n_test);
            let (mut test_idx, mut train_idx) = (test_idx.to_vec(), train_idx.to_vec());
            test_idx.sort_unstable();
            train_idx.sort_unstable();
            (all.subset(&train_idx), all.subset(&test_idx))
        }
    };
    let partition = match config.partition {
        PartitionMode::Iid => partition_iid(&train, config.n_clients, seeds.child("partition").value())?,
        PartitionMode::Noniid => partition_noniid(
            &train,
            config.n_clients,
            config.noniid_p,
            config.dirichlet_alpha,
            seeds.child("partition").value(),
        )?,
    };
    let noise = apply_noise_model(&mut train, &partition, config.rho, config.tau, seeds.child("noise").value())?;
    let architecture = config.architecture(train.dim());
    let init_weights = architecture.build().init_weights(seeds.child("init").value());
    Ok(Prepared {
        config: config.clone(),
        train,
        test,
        partition,
        noise,
        architecture,
        init_weights,
    })
}

/// Outcome of one run, FedCorr or FedAvg.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub final_accuracy: f64,
    /// Running maximum over every round's test accuracy and the final one.
    pub best_accuracy: f64,
    pub comm_cost: usize,
    pub rounds: Vec<RoundRecord>,
    pub iterations: Vec<IterationSnapshot>,
    pub relabels: Vec<RelabelEvent>,
    /// Label-quality checkpoints; empty for FedAvg.
    pub reports: Vec<RelabelReport>,
    /// Injected per-client noise levels.
    pub injected_noise: Vec<f64>,
    /// Per-client fraction of wrong labels before training.
    pub initial_noise: Vec<f64>,
    /// Per-client fraction of wrong labels at the end of the run.
    pub final_noise: Vec<f64>,
    pub estimated_noise: Vec<f64>,
    pub noisy_flags: Vec<bool>,
    /// Number of clients with estimated noise below `kappa` after stage 1.
    pub clean_set_size: Option<usize>,
    pub final_weights: WeightVector,
    pub wall_clock_secs: f64,
    /// Log-likelihood trace of every GMM fitted during the run.
    #[serde(skip)]
    pub gmm_traces: Vec<Vec<f64>>,
}

impl ExperimentResult {
    pub fn report(&self, checkpoint: &str) -> Option<&RelabelReport> {
        self.reports.iter().find(|r| r.checkpoint == checkpoint)
    }
}

/// Runs the mode selected in the configuration.
pub fn run_prepared(prepared: &Prepared) -> Result<ExperimentResult> {
    match prepared.config.mode {
        Mode::Fedcorr => run_fedcorr_prepared(prepared),
        Mode::Fedavg => run_fedavg_prepared(prepared),
    }
}

pub fn run_fedcorr(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_fedcorr_prepared(&prepare(config)?)
}

pub fn run_fedavg(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_fedavg_prepared(&prepare(config)?)
}

fn checkpoint(fed: &Federation<'_>, p: &Prepared, name: &str, state: &ServerState) -> Result<RelabelReport> {
    let detected: Vec<Vec<usize>> = state.clients.iter().map(|c| c.detected_noisy.clone()).collect();
    relabel_report(name, &fed.dataset, &fed.partition, p.initial_labels(), &p.noise.flipped, &detected)
}

/// FedCorr: pre-processing, finetuning, usual training.
pub fn run_fedcorr_prepared(p: &Prepared) -> Result<ExperimentResult> {
    let started = Instant::now();
    let cfg = StageConfig::from_experiment(&p.config);
    let model = p.architecture.build();
    let seeds = SeedTree::new(p.config.seed).child("protocol");
    let mut fed = Federation::new(model.as_ref(), p.train.clone(), p.partition.clone(), Some(&p.test), seeds)?;
    let mut state = ServerState::new(p.init_weights.clone(), &p.partition);

    let mut reports = vec![checkpoint(&fed, p, "pre_training", &state)?];
    for it in 0..cfg.t1 {
        preprocessing_iteration(&mut fed, &mut state, &cfg, it)?;
    }
    reports.push(checkpoint(&fed, p, "after_preprocessing", &state)?);
    let clean_set_size = state.clients.iter().filter(|c| c.estimated_noise < cfg.kappa).count();
    finetuning_stage(&mut fed, &mut state, &cfg)?;
    reports.push(checkpoint(&fed, p, "after_finetuning", &state)?);
    usual_training_stage(&mut fed, &mut state, &cfg)?;
    reports.push(checkpoint(&fed, p, "final", &state)?);

    finish(p, fed, state, reports, Some(clean_set_size), started)
}

/// Rounds FedAvg runs when `fedavg_rounds` is omitted: the planned FedCorr
/// budget with every client counted as clean, divided by the per-round cost.
pub fn default_fedavg_rounds(config: &ExperimentConfig) -> usize {
    let n = config.n_clients;
    let budget = planned_comm_cost(n, config.fraction, config.t1, config.t2, config.t3, n);
    budget.div_ceil(clients_per_round(config.fraction, n))
}

/// Plain FedAvg with cross-entropy on the noisy labels.
pub fn run_fedavg_prepared(p: &Prepared) -> Result<ExperimentResult> {
    let started = Instant::now();
    let cfg = StageConfig::from_experiment(&p.config);
    let model = p.architecture.build();
    let seeds = SeedTree::new(p.config.seed).child("protocol");
    let mut fed = Federation::new(model.as_ref(), p.train.clone(), p.partition.clone(), Some(&p.test), seeds)?;
    let mut state = ServerState::new(p.init_weights.clone(), &p.partition);
    state.stage = Stage::FedAvg;
    let rounds = p.config.fedavg_rounds.unwrap_or_else(|| default_fedavg_rounds(&p.config));
    fedavg_rounds(&mut fed, &mut state, &cfg, rounds, "fedavg")?;
    finish(p, fed, state, Vec::new(), None, started)
}

fn finish(
    p: &Prepared,
    fed: Federation<'_>,
    state: ServerState,
    reports: Vec<RelabelReport>,
    clean_set_size: Option<usize>,
    started: Instant,
) -> Result<ExperimentResult> {
    let final_accuracy = evaluate(fed.model, &state.global_weights, &p.test, &(0..p.test.len()).collect::<Vec<_>>())?;
    let best_accuracy = fed
        .log
        .rounds
        .iter()
        .filter_map(|r| r.test_accuracy)
        .fold(final_accuracy, f64::max);
    Ok(ExperimentResult {
        mode: p.config.mode,
        seed: p.config.seed,
        config_hash: p.config.hash(),
        final_accuracy,
        best_accuracy,
        comm_cost: state.comm_cost,
        injected_noise: p.noise.noise_levels.clone(),
        initial_noise: ground_truth_noise(&p.train, &p.partition),
        final_noise: ground_truth_noise(&fed.dataset, &fed.partition),
        estimated_noise: state.estimated_noise(),
        noisy_flags: state.noisy_flags(),
        clean_set_size,
        final_weights: state.global_weights,
        rounds: fed.log.rounds,
        iterations: fed.log.iterations,
        relabels: fed.log.relabels,
        gmm_traces: fed.log.gmm_traces,
        reports,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n_samples: 600,
            n_test: 200,
            n_clients: 6,
            dim: 5,
            hidden: 8,
            rho: 0.5,
            tau: 0.5,
            t1: 2,
            t2: 3,
            t3: 3,
            fraction: 0.34,
            local_epochs: 1,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn fedcorr_cost_matches_accounting() {
        let r = run_fedcorr(&small()).unwrap();
        let n_clean = r.clean_set_size.unwrap();
        assert_eq!(r.comm_cost, planned_comm_cost(6, 0.34, 2, 3, 3, n_clean));
        assert_eq!(r.rounds.len(), 6 * 2 + 3 + 3);
        assert_eq!(r.reports.len(), 4);
        assert!(r.best_accuracy >= r.final_accuracy);
    }

    #[test]
    fn fedavg_has_no_reports_and_default_budget() {
        let mut cfg = small();
        cfg.mode = Mode::Fedavg;
        let r = run_fedavg(&cfg).unwrap();
        assert!(r.reports.is_empty());
        assert_eq!(r.rounds.len(), default_fedavg_rounds(&cfg));
        assert_eq!(r.comm_cost, r.rounds.len() * 2);
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run_fedcorr(&small()).unwrap();
        let b = run_fedcorr(&small()).unwrap();
        assert_eq!(a.final_weights, b.final_weights);
        assert_eq!(a.rounds, b.rounds);
        assert_eq!(a.relabels, b.relabels);
    }

    #[test]
    fn empty_clean_set_names_kappa() {
        let mut cfg = small();
        cfg.kappa = 0.0;
        let err = run_fedcorr(&cfg).unwrap_err();
        assert!(matches!(err.root(), Error::Config { key, .. } if key == "kappa"), "{err}");
    }
}
