use rand::seq::{index, SliceRandom};

use super::{
    aggregate, clients_per_round, relabel_selection, ClientSnapshot, Federation, IterationSnapshot, RelabelEvent,
    ServerState, Stage, StageConfig,
};
use crate::error::{Error, Result};
use crate::gmm;
use crate::lid;
use crate::metrics::ground_truth_noise;
use crate::model::{local_train, per_sample_loss, predict, LocalTrainConfig, WeightVector};

/// LID score and per-sample losses of a freshly trained local model.
fn client_report(fed: &Federation<'_>, indices: &[usize], weights: &WeightVector, k: usize) -> Result<(f64, Vec<f64>)> {
    let preds = predict(fed.model, weights, &fed.dataset, indices)?;
    let lid = if indices.len() < 2 {
        0.0
    } else {
        lid::lid_score(&preds, k.min(indices.len() - 1))?.score
    };
    let losses = per_sample_loss(fed.model, weights, &fed.dataset, indices)?;
    Ok((lid, losses))
}

/// Stage-1 local objective; the proximal anchor is the starting weights.
fn stage1_local(cfg: &StageConfig, mu_hat: f64, seed: u64) -> LocalTrainConfig {
    LocalTrainConfig {
        epochs: cfg.local.epochs,
        batch_size: cfg.local.batch_size,
        learning_rate: cfg.local.learning_rate,
        momentum: cfg.local.momentum,
        mixup_alpha: cfg.effective_mixup(),
        prox_beta: cfg.effective_beta(),
        prox_mu_hat: mu_hat,
        anchor_weights: None,
        seed,
    }
}

/// One pre-processing iteration: every client trains once (chained through
/// the intermediary weights, one client per round), reports its LID score,
/// and then the server and noisy clients run identification, noise
/// estimation and relabeling.
pub fn preprocessing_iteration(fed: &mut Federation<'_>, state: &mut ServerState, cfg: &StageConfig, it: usize) -> Result<()> {
    state.stage = Stage::PreProcessing;
    let n = state.clients.len();
    let seeds = fed.seeds.child("preprocessing").index(it as u64);

    if cfg.ablation.no_fraction_scheduling {
        fraction_rounds(fed, state, cfg, it)?;
    } else if cfg.averaged_preprocessing {
        let start = state.global_weights.clone();
        let mut updates = Vec::with_capacity(n);
        for k in 0..n {
            let idx = state.clients[k].sample_indices.clone();
            let local = stage1_local(cfg, state.clients[k].estimated_noise, seeds.index(k as u64).value());
            let w = local_train(fed.model, &start, &fed.dataset, &idx, &local)
                .map_err(|e| e.context(format!("pre-processing iteration {it}, client {k}")))?;
            let (lid, losses) = client_report(fed, &idx, &w, cfg.lid_k)?;
            state.clients[k].last_lid = Some(lid);
            state.clients[k].last_losses = losses;
            updates.push((k, w, idx.len()));
        }
        state.global_weights = aggregate(&updates)?;
        fed.record_round(state, Some(it), (0..n).collect())?;
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeds.child("order").rng());
        for k in order {
            let idx = state.clients[k].sample_indices.clone();
            let local = stage1_local(cfg, state.clients[k].estimated_noise, seeds.index(k as u64).value());
            let w = local_train(fed.model, &state.global_weights, &fed.dataset, &idx, &local)
                .map_err(|e| e.context(format!("pre-processing iteration {it}, client {k}")))?;
            let (lid, losses) = client_report(fed, &idx, &w, cfg.lid_k)?;
            state.clients[k].last_lid = Some(lid);
            state.clients[k].last_losses = losses;
            // Singleton aggregation: the upload becomes the intermediary model.
            state.global_weights = w;
            fed.record_round(state, Some(it), vec![k])?;
        }
    }
    finish_iteration(fed, state, cfg, it)
}

/// Stage-1 training without fraction scheduling: ceil(1/fraction) ordinary
/// rounds at the usual fraction, clients drawn anew each round.
fn fraction_rounds(fed: &mut Federation<'_>, state: &mut ServerState, cfg: &StageConfig, it: usize) -> Result<()> {
    let n = state.clients.len();
    let per_round = clients_per_round(cfg.fraction, n);
    let rounds = (1.0 / cfg.fraction).ceil() as usize;
    let seeds = fed.seeds.child("preprocessing-fraction").index(it as u64);
    for r in 0..rounds {
        let round_seeds = seeds.index(r as u64);
        let mut selected = index::sample(&mut round_seeds.child("select").rng(), n, per_round).into_vec();
        selected.sort_unstable();
        let start = state.global_weights.clone();
        let mut updates = Vec::with_capacity(selected.len());
        for &k in &selected {
            let idx = state.clients[k].sample_indices.clone();
            let local = stage1_local(cfg, state.clients[k].estimated_noise, round_seeds.index(k as u64).value());
            let w = local_train(fed.model, &start, &fed.dataset, &idx, &local)
                .map_err(|e| e.context(format!("pre-processing iteration {it}, round {r}, client {k}")))?;
            let (lid, losses) = client_report(fed, &idx, &w, cfg.lid_k)?;
            state.clients[k].last_lid = Some(lid);
            state.clients[k].last_losses = losses;
            updates.push((k, w, idx.len()));
        }
        state.global_weights = aggregate(&updates)?;
        fed.record_round(state, Some(it), selected)?;
    }
    Ok(())
}

fn finish_iteration(fed: &mut Federation<'_>, state: &mut ServerState, cfg: &StageConfig, it: usize) -> Result<()> {
    for c in &mut state.clients {
        // Clients never selected (fraction ablation) contribute zero.
        c.push_lid(c.last_lid.unwrap_or(0.0));
    }

    // Server: split clients on cumulative LID.
    let cumulative: Vec<f64> = state.clients.iter().map(|c| c.cumulative_lid).collect();
    let (split, fit) = gmm::separate_with_fit(&cumulative, cfg.gmm)?;
    fed.log.gmm_traces.extend(fit.map(|f| f.trace));
    let truth_before = ground_truth_noise(&fed.dataset, &fed.partition);

    // Noisy clients: split samples on local loss, estimate noise level.
    let traces = &mut fed.log.gmm_traces;
    for c in &mut state.clients {
        c.is_noisy_flag = split.high.contains(&c.client_id);
        c.detected_noisy.clear();
        c.estimated_noise = 0.0;
        if !c.is_noisy_flag || c.last_losses.is_empty() {
            continue;
        }
        let (loss_split, fit) = gmm::separate_with_fit(&c.last_losses, cfg.gmm)?;
        traces.extend(fit.map(|f| f.trace));
        c.detected_noisy = loss_split.high.iter().map(|&pos| c.sample_indices[pos]).collect();
        c.estimated_noise = c.detected_noisy.len() as f64 / c.sample_indices.len() as f64;
    }

    // Noisy clients: relabel confident large-loss samples with the global model.
    let mut relabeled = vec![0usize; state.clients.len()];
    if !cfg.ablation.no_correction {
        for c in state.clients.iter().filter(|c| c.is_noisy_flag && !c.detected_noisy.is_empty()) {
            let subset = &c.detected_noisy;
            let preds = predict(fed.model, &state.global_weights, &fed.dataset, subset)?;
            let losses = per_sample_loss(fed.model, &state.global_weights, &fed.dataset, subset)?;
            for (i, label) in relabel_selection(&losses, subset, &preds, cfg.pi, cfg.theta) {
                let old = fed.dataset.given_label(i);
                if old == label {
                    continue;
                }
                fed.dataset.set_given_label(i, label)?;
                relabeled[c.client_id] += 1;
                fed.log.relabels.push(RelabelEvent {
                    stage: Stage::PreProcessing,
                    iteration: Some(it),
                    client_id: c.client_id,
                    sample: i,
                    old_label: old,
                    new_label: label,
                });
            }
        }
    }

    let truth_after = ground_truth_noise(&fed.dataset, &fed.partition);
    fed.log.iterations.push(IterationSnapshot {
        iteration: it,
        clients: state
            .clients
            .iter()
            .map(|c| ClientSnapshot {
                client_id: c.client_id,
                lid: *c.lid_history.last().unwrap_or(&0.0),
                cumulative_lid: c.cumulative_lid,
                estimated_noise: c.estimated_noise,
                is_noisy: c.is_noisy_flag,
                detected_noisy: c.detected_noisy.len(),
                relabeled: relabeled[c.client_id],
                true_noise_at_estimate: truth_before[c.client_id],
                true_noise_after: truth_after[c.client_id],
            })
            .collect(),
    });
    Ok(())
}

/// FedAvg over clients whose estimated noise is below `kappa`, then
/// relabeling of every remaining client's samples with the finetuned model.
pub fn finetuning_stage(fed: &mut Federation<'_>, state: &mut ServerState, cfg: &StageConfig) -> Result<()> {
    state.stage = Stage::Finetuning;
    if cfg.ablation.no_finetuning {
        return Ok(());
    }
    let eligible: Vec<usize> = state
        .clients
        .iter()
        .filter(|c| c.estimated_noise < cfg.kappa)
        .map(|c| c.client_id)
        .collect();
    if eligible.is_empty() {
        return Err(Error::config(
            "kappa",
            format!("no client has estimated noise below {}; use a larger kappa", cfg.kappa),
        ));
    }
    let per_round = clients_per_round(cfg.fraction, eligible.len());
    let seeds = fed.seeds.child("finetuning");
    for r in 0..cfg.t2 {
        let round_seeds = seeds.index(r as u64);
        let mut selected: Vec<usize> = index::sample(&mut round_seeds.child("select").rng(), eligible.len(), per_round)
            .into_iter()
            .map(|pos| eligible[pos])
            .collect();
        selected.sort_unstable();
        fed.fedavg_round(state, selected, None, |k| cfg.plain_local(round_seeds.index(k as u64).value()))
            .map_err(|e| e.context("finetuning stage"))?;
    }

    if cfg.ablation.no_correction {
        return Ok(());
    }
    let noisy: Vec<usize> = state
        .clients
        .iter()
        .filter(|c| c.estimated_noise >= cfg.kappa)
        .map(|c| c.client_id)
        .collect();
    for k in noisy {
        let idx = &state.clients[k].sample_indices;
        let preds = predict(fed.model, &state.global_weights, &fed.dataset, idx)?;
        for (&i, p) in idx.iter().zip(&preds) {
            if p.max_prob() < cfg.theta {
                continue;
            }
            let label = p.argmax();
            let old = fed.dataset.given_label(i);
            if label != old {
                fed.dataset.set_given_label(i, label)?;
                fed.log.relabels.push(RelabelEvent {
                    stage: Stage::Finetuning,
                    iteration: None,
                    client_id: k,
                    sample: i,
                    old_label: old,
                    new_label: label,
                });
            }
        }
    }
    Ok(())
}

/// FedAvg over all clients on the corrected labels.
pub fn usual_training_stage(fed: &mut Federation<'_>, state: &mut ServerState, cfg: &StageConfig) -> Result<()> {
    state.stage = Stage::UsualTraining;
    let rounds = if cfg.ablation.no_usual_training { 0 } else { cfg.t3 };
    fedavg_rounds(fed, state, cfg, rounds, "usual-training")
}

/// `rounds` FedAvg rounds over every client with plain cross-entropy.
pub(crate) fn fedavg_rounds(fed: &mut Federation<'_>, state: &mut ServerState, cfg: &StageConfig, rounds: usize, label: &str) -> Result<()> {
    let n = state.clients.len();
    let per_round = clients_per_round(cfg.fraction, n);
    let seeds = fed.seeds.child(label);
    for r in 0..rounds {
        let round_seeds = seeds.index(r as u64);
        let mut selected = index::sample(&mut round_seeds.child("select").rng(), n, per_round).into_vec();
        selected.sort_unstable();
        fed.fedavg_round(state, selected, None, |k| cfg.plain_local(round_seeds.index(k as u64).value()))
            .map_err(|e| e.context(label.replace('-', " ")))?;
    }
    Ok(())
}
