//! The three-stage training protocol and the FedAvg baseline.
//!
//! The server and clients are in-process actors. A client only ever hands
//! the server its trained weights, its dataset size and (in pre-processing)
//! one LID score; everything else a client computes stays on the client.

mod experiment;
mod stages;

pub use experiment::{
    default_fedavg_rounds, prepare, run_fedavg, run_fedavg_prepared, run_fedcorr, run_fedcorr_prepared, run_prepared,
    ExperimentResult, Prepared,
};
pub use stages::{finetuning_stage, preprocessing_iteration, usual_training_stage};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::datagen::{Dataset, PartitionAssignment};
use crate::error::{Error, Result};
use crate::gmm::GmmOptions;
use crate::model::{evaluate, local_train, Classifier, LocalTrainConfig, PredictionVector, WeightVector};
use crate::seed::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreProcessing,
    Finetuning,
    UsualTraining,
    FedAvg,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PreProcessing => "preprocessing",
            Stage::Finetuning => "finetuning",
            Stage::UsualTraining => "usual_training",
            Stage::FedAvg => "fedavg",
        }
    }
}

/// Component switches for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    pub no_correction: bool,
    pub no_fraction_scheduling: bool,
    pub no_proximal: bool,
    pub no_finetuning: bool,
    pub no_usual_training: bool,
    pub no_mixup: bool,
}

/// SGD settings shared by every local update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
    pub fraction: f64,
    pub theta: f64,
    pub pi: f64,
    pub kappa: f64,
    pub lid_k: usize,
    pub mixup_alpha: f64,
    pub prox_beta: f64,
    pub local: LocalHyper,
    pub ablation: Ablation,
    pub averaged_preprocessing: bool,
    pub gmm: GmmOptions,
}

impl StageConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        StageConfig {
            t1: cfg.t1,
            t2: cfg.t2,
            t3: cfg.t3,
            fraction: cfg.fraction,
            theta: cfg.theta,
            pi: cfg.relabel_ratio,
            kappa: cfg.kappa,
            lid_k: cfg.lid_k,
            mixup_alpha: cfg.mixup_alpha,
            prox_beta: cfg.prox_beta,
            local: LocalHyper {
                epochs: cfg.local_epochs,
                batch_size: cfg.batch_size,
                learning_rate: cfg.learning_rate,
                momentum: cfg.momentum,
            },
            ablation: Ablation {
                no_correction: cfg.no_correction,
                no_fraction_scheduling: cfg.no_fraction_scheduling,
                no_proximal: cfg.no_proximal,
                no_finetuning: cfg.no_finetuning,
                no_usual_training: cfg.no_usual_training,
                no_mixup: cfg.no_mixup,
            },
            averaged_preprocessing: cfg.experimental_averaged_preprocessing,
            gmm: GmmOptions::default(),
        }
    }

    fn effective_mixup(&self) -> f64 {
        if self.ablation.no_mixup {
            0.0
        } else {
            self.mixup_alpha
        }
    }

    fn effective_beta(&self) -> f64 {
        if self.ablation.no_proximal {
            0.0
        } else {
            self.prox_beta
        }
    }

    fn plain_local(&self, seed: u64) -> LocalTrainConfig {
        LocalTrainConfig::plain(
            self.local.epochs,
            self.local.batch_size,
            self.local.learning_rate,
            self.local.momentum,
            seed,
        )
    }
}

/// Clients selected per round at fraction `fraction` of `pool` clients.
pub fn clients_per_round(fraction: f64, pool: usize) -> usize {
    ((fraction * pool as f64).round() as usize).clamp(1, pool.max(1))
}

/// Communication cost of a full three-stage run, from the accounting
/// identity alone: `N*T1 + sel(|S_c|)*T2 + sel(N)*T3`.
pub fn planned_comm_cost(n_clients: usize, fraction: f64, t1: usize, t2: usize, t3: usize, n_clean: usize) -> usize {
    n_clients * t1 + clients_per_round(fraction, n_clean) * t2 + clients_per_round(fraction, n_clients) * t3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientState {
    pub client_id: usize,
    pub sample_indices: Vec<usize>,
    pub lid_history: Vec<f64>,
    pub cumulative_lid: f64,
    /// Estimated noise level from the most recent GMM verdict.
    pub estimated_noise: f64,
    pub is_noisy_flag: bool,
    /// LID score reported after the client's most recent local training.
    pub last_lid: Option<f64>,
    /// Per-sample losses of the client's latest local model, aligned with
    /// `sample_indices`. Never leaves the client.
    #[serde(skip)]
    pub last_losses: Vec<f64>,
    /// Samples the latest loss GMM put in the noisy component.
    pub detected_noisy: Vec<usize>,
}

impl ClientState {
    pub fn new(client_id: usize, sample_indices: Vec<usize>) -> Self {
        ClientState {
            client_id,
            sample_indices,
            lid_history: Vec::new(),
            cumulative_lid: 0.0,
            estimated_noise: 0.0,
            is_noisy_flag: false,
            last_lid: None,
            last_losses: Vec::new(),
            detected_noisy: Vec::new(),
        }
    }

    fn push_lid(&mut self, lid: f64) {
        self.lid_history.push(lid);
        self.cumulative_lid = self.lid_history.iter().sum();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub global_weights: WeightVector,
    pub round_index: usize,
    pub stage: Stage,
    pub clients: Vec<ClientState>,
    pub comm_cost: usize,
}

impl ServerState {
    pub fn new(global_weights: WeightVector, partition: &PartitionAssignment) -> Self {
        ServerState {
            global_weights,
            round_index: 0,
            stage: Stage::PreProcessing,
            clients: partition
                .client_indices
                .iter()
                .enumerate()
                .map(|(k, set)| ClientState::new(k, set.clone()))
                .collect(),
            comm_cost: 0,
        }
    }

    pub fn estimated_noise(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.estimated_noise).collect()
    }

    pub fn noisy_flags(&self) -> Vec<bool> {
        self.clients.iter().map(|c| c.is_noisy_flag).collect()
    }
}

/// One communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub stage: Stage,
    pub iteration: Option<usize>,
    pub selected: Vec<usize>,
    pub comm_cost: usize,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSnapshot {
    pub client_id: usize,
    pub lid: f64,
    pub cumulative_lid: f64,
    pub estimated_noise: f64,
    pub is_noisy: bool,
    pub detected_noisy: usize,
    pub relabeled: usize,
    /// Mislabel fraction when the estimate was made.
    pub true_noise_at_estimate: f64,
    /// Mislabel fraction after this iteration's relabeling.
    pub true_noise_after: f64,
}

/// Client states at the end of one pre-processing iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSnapshot {
    pub iteration: usize,
    pub clients: Vec<ClientSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelEvent {
    pub stage: Stage,
    pub iteration: Option<usize>,
    pub client_id: usize,
    pub sample: usize,
    pub old_label: usize,
    pub new_label: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub rounds: Vec<RoundRecord>,
    pub iterations: Vec<IterationSnapshot>,
    pub relabels: Vec<RelabelEvent>,
    /// Log-likelihood trace of every GMM fitted during the run.
    #[serde(skip)]
    pub gmm_traces: Vec<Vec<f64>>,
}

/// Everything a protocol run reads and mutates besides the server state.
pub struct Federation<'a> {
    pub model: &'a dyn Classifier,
    /// Training data; stages rewrite `given_labels` as they correct them.
    pub dataset: Dataset,
    pub partition: PartitionAssignment,
    pub test: Option<&'a Dataset>,
    pub seeds: SeedTree,
    pub log: RunLog,
    test_indices: Vec<usize>,
}

impl<'a> Federation<'a> {
    pub fn new(
        model: &'a dyn Classifier,
        dataset: Dataset,
        partition: PartitionAssignment,
        test: Option<&'a Dataset>,
        seeds: SeedTree,
    ) -> Result<Self> {
        partition.validate(dataset.len())?;
        Ok(Federation {
            model,
            test_indices: test.map(|t| (0..t.len()).collect()).unwrap_or_default(),
            dataset,
            partition,
            test,
            seeds,
            log: RunLog::default(),
        })
    }

    pub fn test_accuracy(&self, weights: &WeightVector) -> Result<Option<f64>> {
        match self.test {
            Some(t) => evaluate(self.model, weights, t, &self.test_indices).map(Some),
            None => Ok(None),
        }
    }

    fn record_round(&mut self, state: &mut ServerState, iteration: Option<usize>, selected: Vec<usize>) -> Result<()> {
        state.round_index += 1;
        state.comm_cost += selected.len();
        let test_accuracy = self.test_accuracy(&state.global_weights)?;
        self.log.rounds.push(RoundRecord {
            round: state.round_index,
            stage: state.stage,
            iteration,
            selected,
            comm_cost: state.comm_cost,
            test_accuracy,
        });
        Ok(())
    }

    /// One FedAvg round: every selected client trains from the global
    /// weights, then the server takes the size-weighted mean.
    fn fedavg_round(
        &mut self,
        state: &mut ServerState,
        selected: Vec<usize>,
        iteration: Option<usize>,
        local_for: impl Fn(usize) -> LocalTrainConfig + Sync,
    ) -> Result<()> {
        let start = &state.global_weights;
        let dataset = &self.dataset;
        let model = self.model;
        let updates: Vec<(usize, WeightVector, usize)> = selected
            .par_iter()
            .map(|&k| {
                let idx = &state.clients[k].sample_indices;
                local_train(model, start, dataset, idx, &local_for(k))
                    .map(|w| (k, w, idx.len()))
                    .map_err(|e| e.context(format!("client {k}, round {}", state.round_index + 1)))
            })
            .collect::<Result<_>>()?;
        state.global_weights = aggregate(&updates)?;
        self.record_round(state, iteration, selected)
    }
}

/// Size-weighted mean of client weights, summed in ascending client order.
pub fn aggregate(updates: &[(usize, WeightVector, usize)]) -> Result<WeightVector> {
    let Some((_, first, _)) = updates.first() else {
        return Err(Error::param("aggregation needs at least one update"));
    };
    if updates.iter().any(|(_, w, _)| w.layout != first.layout) {
        return Err(Error::param("client updates have different layouts"));
    }
    let total: usize = updates.iter().map(|&(_, _, n)| n).sum();
    if total == 0 {
        return Err(Error::param("total dataset size of the updates is zero"));
    }
    let mut order: Vec<&(usize, WeightVector, usize)> = updates.iter().collect();
    order.sort_by_key(|(k, _, _)| *k);
    let mut out = WeightVector::zeros(first.layout.clone());
    for (_, w, n) in order {
        let share = *n as f64 / total as f64;
        for (o, v) in out.params.iter_mut().zip(&w.params) {
            *o += share * v;
        }
    }
    Ok(out)
}

/// Picks relabel candidates in a client's noisy subset: the
/// `floor(pi * |subset|)` largest-loss samples (ties to the smaller sample
/// index), kept only if the global model's top probability reaches `theta`.
/// `losses` and `global_preds` are aligned with `noisy_subset`. Returns
/// `(sample, new_label)` pairs in sample order.
pub fn relabel_selection(
    losses: &[f64],
    noisy_subset: &[usize],
    global_preds: &[PredictionVector],
    pi: f64,
    theta: f64,
) -> Vec<(usize, usize)> {
    let count = (pi * noisy_subset.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..noisy_subset.len()).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(noisy_subset[a].cmp(&noisy_subset[b])));
    let mut picked: Vec<(usize, usize)> = order
        .into_iter()
        .take(count)
        .filter(|&pos| global_preds[pos].max_prob() >= theta)
        .map(|pos| (noisy_subset[pos], global_preds[pos].argmax()))
        .collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layout;

    fn wv(params: Vec<f64>) -> WeightVector {
        let layout = Layout::from_blocks(&[("w", params.len(), 1)]);
        WeightVector { params, layout }
    }

    fn pv(max: f64, arg: usize) -> PredictionVector {
        let mut probs = vec![(1.0 - max) / 2.0; 3];
        probs[arg] = max;
        PredictionVector { probs }
    }

    #[test]
    fn aggregate_examples() {
        let single = aggregate(&[(3, wv(vec![1.5, -2.0]), 7)]).unwrap();
        assert_eq!(single.params, vec![1.5, -2.0]);
        let equal = aggregate(&[(0, wv(vec![0.0, 2.0]), 5), (1, wv(vec![2.0, 0.0]), 5)]).unwrap();
        assert_eq!(equal.params, vec![1.0, 1.0]);
        let weighted = aggregate(&[(0, wv(vec![4.0, 0.0]), 1), (1, wv(vec![0.0, 4.0]), 3)]).unwrap();
        assert_eq!(weighted.params, vec![1.0, 3.0]);
    }

    #[test]
    fn aggregate_rejects_bad_input() {
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[(0, wv(vec![1.0]), 0)]).is_err());
        assert!(aggregate(&[(0, wv(vec![1.0]), 1), (1, wv(vec![1.0, 2.0]), 1)]).is_err());
    }

    #[test]
    fn aggregate_ignores_submission_order() {
        let a = (2, wv(vec![0.1, 0.7]), 3);
        let b = (0, wv(vec![0.3, 0.2]), 5);
        let c = (1, wv(vec![0.9, 0.4]), 2);
        let x = aggregate(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let y = aggregate(&[c, a, b]).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn relabel_hand_example() {
        let subset = vec![10, 11, 12, 13];
        let losses = vec![3.0, 1.0, 4.0, 2.0];
        let preds = vec![pv(0.9, 1), pv(0.5, 2), pv(0.7, 0), pv(0.9, 2)];
        let picked = relabel_selection(&losses, &subset, &preds, 0.5, 0.6);
        assert_eq!(picked, vec![(10, 1), (12, 0)]);
    }

    #[test]
    fn relabel_degenerate_ratios() {
        let subset = vec![0, 1, 2];
        let losses = vec![1.0, 2.0, 3.0];
        let preds = vec![pv(0.4, 1), pv(0.4, 2), pv(0.4, 0)];
        assert!(relabel_selection(&losses, &subset, &preds, 0.0, 0.0).is_empty());
        assert_eq!(relabel_selection(&losses, &subset, &preds, 1.0, 0.0).len(), 3);
        assert!(relabel_selection(&losses, &subset, &preds, 1.0, 0.5).is_empty());
    }

    #[test]
    fn relabel_ties_prefer_smaller_index() {
        let subset = vec![7, 3, 5];
        let losses = vec![1.0, 1.0, 1.0];
        let preds = vec![pv(0.9, 0), pv(0.9, 1), pv(0.9, 2)];
        assert_eq!(relabel_selection(&losses, &subset, &preds, 0.67, 0.5), vec![(3, 1), (5, 2)]);
    }

    #[test]
    fn accounting_identity() {
        assert_eq!(planned_comm_cost(100, 0.1, 5, 500, 450, 100), 10_000);
        assert_eq!(planned_comm_cost(20, 0.1, 5, 50, 50, 20), 300);
        assert_eq!(clients_per_round(0.1, 3), 1);
        assert_eq!(clients_per_round(1.0, 7), 7);
    }
}
