use rand::seq::SliceRandom;

use super::mixup::{mixup_batch, LambdaSource};
use super::{check_dataset, check_weights, Classifier, WeightVector};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::seed::SeedTree;

/// Settings for one client's local optimisation.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Zero disables mixup.
    pub mixup_alpha: f64,
    pub prox_beta: f64,
    /// Estimated noise level scaling the proximal term.
    pub prox_mu_hat: f64,
    /// Proximal reference point; `None` anchors at the starting weights.
    pub anchor_weights: Option<WeightVector>,
    pub seed: u64,
}

impl LocalTrainConfig {
    /// Plain cross-entropy SGD with momentum: no mixup, no proximal term.
    pub fn plain(epochs: usize, batch_size: usize, learning_rate: f64, momentum: f64, seed: u64) -> Self {
        LocalTrainConfig {
            epochs,
            batch_size,
            learning_rate,
            momentum,
            mixup_alpha: 0.0,
            prox_beta: 0.0,
            prox_mu_hat: 0.0,
            anchor_weights: None,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::param("momentum must lie in [0, 1)"));
        }
        if self.mixup_alpha.is_nan() || self.mixup_alpha < 0.0 || self.prox_beta.is_nan() || self.prox_beta < 0.0 {
            return Err(Error::param("mixup_alpha and prox_beta must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.prox_mu_hat) {
            return Err(Error::param("prox_mu_hat must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// The proximal penalty `coef * ||w - anchor||^2`.
#[derive(Debug, Clone, Copy)]
pub struct Proximal<'a> {
    pub coef: f64,
    pub anchor: &'a [f64],
}

/// Mean soft-target cross-entropy over a batch plus the proximal penalty,
/// and the gradient of that total with respect to `params`.
pub fn objective_and_gradient<X: AsRef<[f64]>, Y: AsRef<[f64]>>(
    model: &dyn Classifier,
    params: &[f64],
    xs: &[X],
    ys: &[Y],
    prox: Option<Proximal<'_>>,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.len()];
    let scale = 1.0 / xs.len() as f64;
    let mut loss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        loss += model.accumulate_gradient(params, x.as_ref(), y.as_ref(), scale, &mut grad);
    }
    loss *= scale;
    if let Some(p) = prox.filter(|p| p.coef != 0.0) {
        for ((g, w), a) in grad.iter_mut().zip(params).zip(p.anchor) {
            let diff = w - a;
            loss += p.coef * diff * diff;
            *g += 2.0 * p.coef * diff;
        }
    }
    (loss, grad)
}

/// SGD with momentum over shuffled mini-batches of `indices`, using the
/// given labels. Each batch minimises mixup cross-entropy (or plain
/// cross-entropy when mixup is off) plus `beta * mu_hat * ||w - anchor||^2`.
pub fn local_train(
    model: &dyn Classifier,
    start: &WeightVector,
    dataset: &Dataset,
    indices: &[usize],
    cfg: &LocalTrainConfig,
) -> Result<WeightVector> {
    if indices.is_empty() {
        return Err(Error::param("local training needs at least one sample"));
    }
    cfg.validate()?;
    check_weights(model, start)?;
    check_dataset(model, dataset, indices)?;
    let anchor = cfg.anchor_weights.as_ref().unwrap_or(start);
    check_weights(model, anchor)?;

    let m = model.n_classes();
    let tree = SeedTree::new(cfg.seed);
    let mut shuffle_rng = tree.child("shuffle").rng();
    let mut mixup_rng = tree.child("mixup").rng();
    let lambda = if cfg.mixup_alpha > 0.0 {
        Some(LambdaSource::beta(cfg.mixup_alpha)?)
    } else {
        None
    };
    let prox = Proximal {
        coef: cfg.prox_beta * cfg.prox_mu_hat,
        anchor: &anchor.params,
    };

    let mut w = start.clone();
    let mut velocity = vec![0.0; w.len()];
    let mut order = indices.to_vec();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| dataset.x(i)).collect();
            let ys: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&i| {
                    let mut v = vec![0.0; m];
                    v[dataset.given_label(i)] = 1.0;
                    v
                })
                .collect();
            let (loss, grad) = match &lambda {
                Some(src) => {
                    let mixed = mixup_batch(&xs, &ys, src, &mut mixup_rng)?;
                    objective_and_gradient(model, &w.params, &mixed.x, &mixed.y, Some(prox))
                }
                None => objective_and_gradient(model, &w.params, &xs, &ys, Some(prox)),
            };
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    context: "local training".into(),
                    epoch,
                    batch,
                    loss,
                });
            }
            for ((p, v), g) in w.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
        }
    }
    if w.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence {
            context: "local training (non-finite weights)".into(),
            epoch: cfg.epochs.saturating_sub(1),
            batch: 0,
            loss: f64::NAN,
        });
    }
    Ok(w)
}
