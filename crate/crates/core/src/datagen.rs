//! Synthetic datasets, client partitions and the federated label-noise model.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SeedTree;

/// Feature vectors with immutable true labels and mutable given labels.
///
/// Features are stored row-major in a flat buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    true_labels: Vec<usize>,
    /// Labels seen by training. Noise injection and correction rewrite these.
    pub given_labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    /// Builds a dataset whose given labels equal the true labels.
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::param("n_classes must be positive"));
        }
        if dim == 0 {
            return Err(Error::param("feature dimension must be positive"));
        }
        if labels.is_empty() {
            return Err(Error::param("dataset must contain at least one sample"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::param(format!(
                "{} feature values cannot form {} rows of dimension {dim}",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::param(format!("label {bad} outside [0, {n_classes})")));
        }
        Ok(Dataset {
            features,
            dim,
            given_labels: labels.clone(),
            true_labels: labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn true_label(&self, i: usize) -> usize {
        self.true_labels[i]
    }

    pub fn given_label(&self, i: usize) -> usize {
        self.given_labels[i]
    }

    /// Overwrites a given label, checking the class range.
    pub fn set_given_label(&mut self, i: usize, label: usize) -> Result<()> {
        if label >= self.n_classes {
            return Err(Error::param(format!("label {label} outside [0, {})", self.n_classes)));
        }
        self.given_labels[i] = label;
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.true_labels {
            counts[l] += 1;
        }
        counts
    }

    /// Copies out the listed rows, keeping both label sets.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.x(i));
        }
        Dataset {
            features,
            dim: self.dim,
            true_labels: indices.iter().map(|&i| self.true_labels[i]).collect(),
            given_labels: indices.iter().map(|&i| self.given_labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

/// Isotropic Gaussian clusters, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobGenerator {
    centers: Vec<Vec<f64>>,
    cluster_std: f64,
}

impl BlobGenerator {
    /// Draws `n_classes` distinct centers uniformly in `[-scale, scale]^dim`.
    pub fn new(n_classes: usize, dim: usize, cluster_std: f64, class_center_scale: f64, seed: u64) -> Result<Self> {
        if n_classes == 0 || dim == 0 {
            return Err(Error::param("n_classes and dim must be positive"));
        }
        if !(cluster_std >= 0.0 && cluster_std.is_finite()) {
            return Err(Error::param("cluster_std must be a non-negative finite real"));
        }
        if !(class_center_scale > 0.0 && class_center_scale.is_finite()) {
            return Err(Error::param("class_center_scale must be positive"));
        }
        let mut rng = SeedTree::new(seed).child("centers").rng();
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
        while centers.len() < n_classes {
            let c: Vec<f64> = (0..dim)
                .map(|_| rng.random_range(-class_center_scale..class_center_scale))
                .collect();
            if centers.iter().all(|other| other != &c) {
                centers.push(c);
            }
        }
        Ok(BlobGenerator { centers, cluster_std })
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    /// Draws `n` samples with class counts balanced to within one.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        let n_classes = self.centers.len();
        if n < n_classes {
            return Err(Error::param(format!("n_samples = {n} is below n_classes = {n_classes}")));
        }
        let dim = self.centers[0].len();
        let mut rng = SeedTree::new(seed).rng();
        let mut labels: Vec<usize> = (0..n).map(|i| i % n_classes).collect();
        labels.shuffle(&mut rng);
        let mut features = Vec::with_capacity(n * dim);
        for &l in &labels {
            for &c in &self.centers[l] {
                let z: f64 = rng.sample(StandardNormal);
                features.push(c + self.cluster_std * z);
            }
        }
        Dataset::new(features, dim, labels, n_classes)
    }
}

/// Samples a blob dataset; given labels start equal to the true labels.
pub fn generate_blobs(
    n_samples: usize,
    n_classes: usize,
    dim: usize,
    cluster_std: f64,
    class_center_scale: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_samples == 0 || n_classes == 0 || dim == 0 {
        return Err(Error::param("n_samples, n_classes and dim must be positive"));
    }
    let gen = BlobGenerator::new(n_classes, dim, cluster_std, class_center_scale, seed)?;
    gen.sample(n_samples, SeedTree::new(seed).child("samples").value())
}

/// Which samples each client holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionAssignment {
    pub client_indices: Vec<Vec<usize>>,
}

impl PartitionAssignment {
    pub fn n_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.client_indices.iter().map(Vec::len).collect()
    }

    /// Checks disjointness, range and non-emptiness.
    pub fn validate(&self, n_samples: usize) -> Result<()> {
        let mut seen = vec![false; n_samples];
        for (k, set) in self.client_indices.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::param(format!("client {k} holds no samples")));
            }
            for &i in set {
                if i >= n_samples {
                    return Err(Error::param(format!("client {k} holds index {i} >= {n_samples}")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::param(format!("index {i} assigned twice")));
                }
            }
        }
        Ok(())
    }
}

/// Uniformly random split into `n_clients` sets whose sizes differ by at most one.
pub fn partition_iid(dataset: &Dataset, n_clients: usize, seed: u64) -> Result<PartitionAssignment> {
    let n = dataset.len();
    if n_clients == 0 {
        return Err(Error::param("n_clients must be positive"));
    }
    if n_clients > n {
        return Err(Error::param(format!("{n_clients} clients cannot share {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut SeedTree::new(seed).rng());
    let base = n / n_clients;
    let extra = n % n_clients;
    let mut client_indices = Vec::with_capacity(n_clients);
    let mut start = 0;
    for k in 0..n_clients {
        let len = base + usize::from(k < extra);
        let mut set = order[start..start + len].to_vec();
        set.sort_unstable();
        client_indices.push(set);
        start += len;
    }
    Ok(PartitionAssignment { client_indices })
}

/// Binary client-by-class ownership matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorMatrix {
    n_clients: usize,
    n_classes: usize,
    entries: Vec<bool>,
}

impl IndicatorMatrix {
    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, client: usize, class: usize) -> bool {
        self.entries[client * self.n_classes + class]
    }

    fn set(&mut self, client: usize, class: usize) {
        self.entries[client * self.n_classes + class] = true;
    }

    /// Clients owning `class`, ascending.
    pub fn owners(&self, class: usize) -> Vec<usize> {
        (0..self.n_clients).filter(|&i| self.get(i, class)).collect()
    }

    pub fn column_sum(&self, class: usize) -> usize {
        (0..self.n_clients).filter(|&i| self.get(i, class)).count()
    }

    pub fn row_sum(&self, client: usize) -> usize {
        (0..self.n_classes).filter(|&j| self.get(client, j)).count()
    }

    fn draw(n_clients: usize, n_classes: usize, p: f64, rng: &mut impl Rng) -> Self {
        let entries = (0..n_clients * n_classes).map(|_| rng.random::<f64>() < p).collect();
        IndicatorMatrix {
            n_clients,
            n_classes,
            entries,
        }
    }

    /// Gives every ownerless class one uniformly chosen client, then every
    /// classless client one uniformly chosen class.
    fn repair(&mut self, rng: &mut impl Rng) {
        for j in 0..self.n_classes {
            if self.column_sum(j) == 0 {
                let i = rng.random_range(0..self.n_clients);
                self.set(i, j);
            }
        }
        for i in 0..self.n_clients {
            if self.row_sum(i) == 0 {
                let j = rng.random_range(0..self.n_classes);
                self.set(i, j);
            }
        }
    }
}

pub fn sample_indicator_matrix(n_clients: usize, n_classes: usize, p: f64, seed: u64) -> Result<IndicatorMatrix> {
    if n_clients == 0 || n_classes == 0 {
        return Err(Error::param("n_clients and n_classes must be positive"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param(format!("class-ownership probability p = {p} must lie in (0, 1]")));
    }
    let mut rng = SeedTree::new(seed).rng();
    let mut phi = IndicatorMatrix::draw(n_clients, n_classes, p, &mut rng);
    phi.repair(&mut rng);
    Ok(phi)
}

/// Draws from a symmetric Dirichlet by normalising independent Gamma draws.
fn symmetric_dirichlet(len: usize, alpha: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::param(format!("dirichlet alpha = {alpha}: {e}")))?;
    let mut q: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let total: f64 = q.iter().sum();
    if total > 0.0 && total.is_finite() {
        q.iter_mut().for_each(|v| *v /= total);
    } else {
        // Every Gamma draw underflowed (tiny alpha): all mass on one owner.
        q.iter_mut().for_each(|v| *v = 0.0);
        q[rng.random_range(0..len)] = 1.0;
    }
    Ok(q)
}

/// Non-IID split: Bernoulli(p) class ownership, then per-class Dirichlet
/// proportions over the owners, with a categorical draw per sample.
pub fn partition_noniid(
    dataset: &Dataset,
    n_clients: usize,
    p: f64,
    alpha_dir: f64,
    seed: u64,
) -> Result<PartitionAssignment> {
    let n = dataset.len();
    let m = dataset.n_classes();
    if n_clients == 0 || n_clients > n {
        return Err(Error::param(format!("{n_clients} clients cannot share {n} samples")));
    }
    if !(alpha_dir > 0.0 && alpha_dir.is_finite()) {
        return Err(Error::param(format!("dirichlet alpha = {alpha_dir} must be positive")));
    }
    let counts = dataset.class_counts();
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::param(format!("class {j} has no samples")));
    }
    let tree = SeedTree::new(seed);
    let phi = sample_indicator_matrix(n_clients, m, p, tree.child("indicator").value())?;
    let mut rng = tree.child("allocation").rng();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); m];
    for i in 0..n {
        by_class[dataset.true_label(i)].push(i);
    }
    // holdings[client][class] = sample indices
    let mut holdings: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); m]; n_clients];
    for (j, members) in by_class.iter().enumerate() {
        let owners = phi.owners(j);
        let q = symmetric_dirichlet(owners.len(), alpha_dir, &mut rng)?;
        let pick = WeightedIndex::new(&q).map_err(|e| Error::param(format!("class {j} proportions: {e}")))?;
        for &i in members {
            holdings[owners[pick.sample(&mut rng)]][j].push(i);
        }
    }

    for k in 0..n_clients {
        if holdings[k].iter().any(|h| !h.is_empty()) {
            continue;
        }
        // Donor: the largest holder of any class k owns, among clients that
        // keep at least one sample after giving one away.
        let mut best: Option<(usize, usize, usize)> = None; // (count, donor, class)
        for j in (0..m).filter(|&j| phi.get(k, j)) {
            for (donor, held_by) in holdings.iter().enumerate() {
                let held = held_by[j].len();
                let total: usize = held_by.iter().map(Vec::len).sum();
                if held > 0 && total > 1 && best.is_none_or(|(c, _, _)| held > c) {
                    best = Some((held, donor, j));
                }
            }
        }
        let (_, donor, j) = best.ok_or_else(|| {
            Error::param(format!("client {k} cannot be given a sample of any class it owns"))
        })?;
        let moved = holdings[donor][j].pop().expect("donor holds a sample");
        holdings[k][j].push(moved);
    }

    let client_indices = holdings
        .into_iter()
        .map(|per_class| {
            let mut set: Vec<usize> = per_class.into_iter().flatten().collect();
            set.sort_unstable();
            set
        })
        .collect();
    Ok(PartitionAssignment { client_indices })
}

/// Ground truth of the injected label noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseAssignment {
    /// Per-client noise level; zero for clean clients.
    pub noise_levels: Vec<f64>,
    /// Per-client dataset indices whose given label was resampled, ascending.
    pub flipped: Vec<Vec<usize>>,
}

impl NoiseAssignment {
    pub fn is_noisy(&self, client: usize) -> bool {
        self.noise_levels[client] > 0.0
    }
}

/// Marks each client noisy with probability `rho`; a noisy client draws its
/// noise level from U(tau, 1) and resamples that fraction of its given labels
/// uniformly from all classes (the true class included).
pub fn apply_noise_model(
    dataset: &mut Dataset,
    partition: &PartitionAssignment,
    rho: f64,
    tau: f64,
    seed: u64,
) -> Result<NoiseAssignment> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param(format!("rho = {rho} must lie in [0, 1]")));
    }
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::param(format!("tau = {tau} must lie in [0, 1)")));
    }
    let m = dataset.n_classes();
    let tree = SeedTree::new(seed);
    let mut noise_levels = Vec::with_capacity(partition.n_clients());
    let mut flipped = Vec::with_capacity(partition.n_clients());
    for (k, members) in partition.client_indices.iter().enumerate() {
        let mut rng = tree.index(k as u64).rng();
        let noisy = rng.random::<f64>() < rho;
        let mu = if noisy { tau + (1.0 - tau) * rng.random::<f64>() } else { 0.0 };
        let count = ((mu * members.len() as f64).round() as usize).min(members.len());
        let mut chosen: Vec<usize> = index::sample(&mut rng, members.len(), count)
            .into_iter()
            .map(|pos| members[pos])
            .collect();
        chosen.sort_unstable();
        for &i in &chosen {
            dataset.given_labels[i] = rng.random_range(0..m);
        }
        noise_levels.push(mu);
        flipped.push(chosen);
    }
    Ok(NoiseAssignment { noise_levels, flipped })
}
