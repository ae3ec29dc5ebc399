//! Classifier contract, reference models and local training.

mod mixup;
mod mlp;
mod softmax;
mod train;

pub use mixup::{mixup_batch, LambdaSource, MixedBatch};
pub use mlp::{Mlp, DEFAULT_HIDDEN};
pub use softmax::SoftmaxRegression;
pub use train::{local_train, objective_and_gradient, LocalTrainConfig, Proximal};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::seed::SeedTree;

/// A named contiguous slice of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Fan-in used by the default initialiser.
    pub fan_in: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    pub blocks: Vec<Block>,
}

impl Layout {
    pub(crate) fn from_blocks(spec: &[(&str, usize, usize)]) -> Self {
        let mut offset = 0;
        let blocks = spec
            .iter()
            .map(|&(name, len, fan_in)| {
                let b = Block {
                    name: name.to_string(),
                    offset,
                    len,
                    fan_in,
                };
                offset += len;
                b
            })
            .collect();
        Layout { blocks }
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.len).sum()
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// Flat model parameters plus the layout they follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub params: Vec<f64>,
    pub layout: Layout,
}

impl WeightVector {
    pub fn zeros(layout: Layout) -> Self {
        WeightVector {
            params: vec![0.0; layout.n_params()],
            layout,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.params[b.offset..b.offset + b.len])
    }

    fn check_same_layout(&self, other: &WeightVector) -> Result<()> {
        if self.layout != other.layout {
            return Err(Error::param("weight vectors have different layouts"));
        }
        Ok(())
    }
}

/// Squared Euclidean distance between two weight vectors of the same layout.
pub fn weight_distance_sq(a: &WeightVector, b: &WeightVector) -> Result<f64> {
    a.check_same_layout(b)?;
    Ok(a.params.iter().zip(&b.params).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Class-probability vector produced by a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    pub probs: Vec<f64>,
}

impl PredictionVector {
    /// Most probable class; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl AsRef<[f64]> for PredictionVector {
    fn as_ref(&self) -> &[f64] {
        &self.probs
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Log-sum-exp with max subtraction.
pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    hi + z.iter().map(|&v| (v - hi).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - hi).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// Cross-entropy of a probability vector against a hard label.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].ln()
}

/// A differentiable classifier over fixed-size real inputs.
///
/// Implementations map a flat parameter slice and an input to logits, and
/// accumulate the cross-entropy gradient for a soft target.
pub trait Classifier: Send + Sync {
    fn input_dim(&self) -> usize;

    fn n_classes(&self) -> usize;

    fn layout(&self) -> Layout;

    fn logits(&self, params: &[f64], x: &[f64], out: &mut [f64]);

    /// Adds `scale * d CE(softmax(logits(x)), target) / d params` to `grad`
    /// and returns the cross-entropy. `target` must sum to one.
    fn accumulate_gradient(&self, params: &[f64], x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64;

    /// Uniform in `±1/sqrt(fan_in)` per block.
    fn init_weights(&self, seed: u64) -> WeightVector {
        let layout = self.layout();
        let mut rng = SeedTree::new(seed).rng();
        let mut params = Vec::with_capacity(layout.n_params());
        for b in &layout.blocks {
            let bound = 1.0 / (b.fan_in.max(1) as f64).sqrt();
            params.extend((0..b.len).map(|_| rng.random_range(-bound..=bound)));
        }
        WeightVector { params, layout }
    }
}

/// The two reference architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Softmax { input_dim: usize, n_classes: usize },
    Mlp { input_dim: usize, hidden: usize, n_classes: usize },
}

impl Architecture {
    pub fn build(self) -> Box<dyn Classifier> {
        match self {
            Architecture::Softmax { input_dim, n_classes } => Box::new(SoftmaxRegression::new(input_dim, n_classes)),
            Architecture::Mlp {
                input_dim,
                hidden,
                n_classes,
            } => Box::new(Mlp::new(input_dim, hidden, n_classes)),
        }
    }
}

fn check_weights(model: &dyn Classifier, weights: &WeightVector) -> Result<()> {
    if weights.layout != model.layout() {
        return Err(Error::param("weights do not match the model layout"));
    }
    Ok(())
}

fn check_input(model: &dyn Classifier, x: &[f64]) -> Result<()> {
    if x.len() != model.input_dim() {
        return Err(Error::param(format!(
            "input has dimension {}, model expects {}",
            x.len(),
            model.input_dim()
        )));
    }
    Ok(())
}

fn check_dataset(model: &dyn Classifier, dataset: &Dataset, indices: &[usize]) -> Result<()> {
    if dataset.dim() != model.input_dim() || dataset.n_classes() != model.n_classes() {
        return Err(Error::param(format!(
            "dataset is {}-dimensional with {} classes; model expects {} and {}",
            dataset.dim(),
            dataset.n_classes(),
            model.input_dim(),
            model.n_classes()
        )));
    }
    if let Some(&i) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::param(format!("sample index {i} out of range")));
    }
    Ok(())
}

/// Softmax of the network output.
pub fn forward(model: &dyn Classifier, weights: &WeightVector, x: &[f64]) -> Result<PredictionVector> {
    check_weights(model, weights)?;
    check_input(model, x)?;
    let mut z = vec![0.0; model.n_classes()];
    model.logits(&weights.params, x, &mut z);
    softmax_in_place(&mut z);
    Ok(PredictionVector { probs: z })
}

/// Predictions for the listed samples, in index order.
pub fn predict(model: &dyn Classifier, weights: &WeightVector, dataset: &Dataset, indices: &[usize]) -> Result<Vec<PredictionVector>> {
    check_weights(model, weights)?;
    check_dataset(model, dataset, indices)?;
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let mut z = vec![0.0; model.n_classes()];
        model.logits(&weights.params, dataset.x(i), &mut z);
        softmax_in_place(&mut z);
        out.push(PredictionVector { probs: z });
    }
    Ok(out)
}

/// Plain cross-entropy against the given labels, one value per index.
pub fn per_sample_loss(model: &dyn Classifier, weights: &WeightVector, dataset: &Dataset, indices: &[usize]) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(Error::param("per-sample loss needs at least one index"));
    }
    check_weights(model, weights)?;
    check_dataset(model, dataset, indices)?;
    let mut z = vec![0.0; model.n_classes()];
    Ok(indices
        .iter()
        .map(|&i| {
            model.logits(&weights.params, dataset.x(i), &mut z);
            (log_sum_exp(&z) - z[dataset.given_label(i)]).max(0.0)
        })
        .collect())
}

/// Fraction of samples whose predicted class equals the true label.
pub fn evaluate(model: &dyn Classifier, weights: &WeightVector, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::param("evaluation needs at least one index"));
    }
    check_weights(model, weights)?;
    check_dataset(model, dataset, indices)?;
    let mut z = vec![0.0; model.n_classes()];
    let correct = indices
        .iter()
        .filter(|&&i| {
            model.logits(&weights.params, dataset.x(i), &mut z);
            argmax(&z) == dataset.true_label(i)
        })
        .count();
    Ok(correct as f64 / indices.len() as f64)
}
