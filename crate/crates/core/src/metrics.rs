//! Noise-estimation error, sample-identification confusion, relabel quality
//! and label confusion matrices.

use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, PartitionAssignment};
use crate::error::{Error, Result};

/// Per-client fraction of samples whose given label differs from the truth.
pub fn ground_truth_noise(dataset: &Dataset, partition: &PartitionAssignment) -> Vec<f64> {
    partition
        .client_indices
        .iter()
        .map(|set| {
            if set.is_empty() {
                return 0.0;
            }
            let wrong = set.iter().filter(|&&i| dataset.given_label(i) != dataset.true_label(i)).count();
            wrong as f64 / set.len() as f64
        })
        .collect()
}

/// Keeps per-client mislabel counts current as labels change.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTracker {
    owner: Vec<Option<usize>>,
    wrong: Vec<usize>,
    sizes: Vec<usize>,
}

impl NoiseTracker {
    pub fn new(dataset: &Dataset, partition: &PartitionAssignment) -> Self {
        let mut owner = vec![None; dataset.len()];
        let mut wrong = vec![0; partition.n_clients()];
        for (k, set) in partition.client_indices.iter().enumerate() {
            for &i in set {
                owner[i] = Some(k);
                if dataset.given_label(i) != dataset.true_label(i) {
                    wrong[k] += 1;
                }
            }
        }
        NoiseTracker {
            owner,
            wrong,
            sizes: partition.sizes(),
        }
    }

    /// Sets `dataset.given_labels[i] = label`, updating the counts.
    pub fn relabel(&mut self, dataset: &mut Dataset, i: usize, label: usize) -> Result<()> {
        let was_wrong = dataset.given_label(i) != dataset.true_label(i);
        dataset.set_given_label(i, label)?;
        let is_wrong = label != dataset.true_label(i);
        if let Some(k) = self.owner[i] {
            match (was_wrong, is_wrong) {
                (true, false) => self.wrong[k] -= 1,
                (false, true) => self.wrong[k] += 1,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> Vec<f64> {
        self.wrong
            .iter()
            .zip(&self.sizes)
            .map(|(&w, &n)| if n == 0 { 0.0 } else { w as f64 / n as f64 })
            .collect()
    }
}

/// Mean absolute error between two per-client noise vectors.
pub fn noise_estimation_error(true_levels: &[f64], estimated_levels: &[f64]) -> Result<f64> {
    if true_levels.len() != estimated_levels.len() {
        return Err(Error::param("noise vectors differ in length"));
    }
    if true_levels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = true_levels.iter().zip(estimated_levels).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / true_levels.len() as f64)
}

/// A ratio whose denominator may be zero. Empty denominators report 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    fn of(num: usize, den: usize) -> Self {
        if den == 0 {
            Ratio {
                value: 1.0,
                undefined: true,
            }
        } else {
            Ratio {
                value: num as f64 / den as f64,
                undefined: false,
            }
        }
    }
}

/// Sample-level counts for "flipped" (positive) against "detected".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision(&self) -> Ratio {
        Ratio::of(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Ratio {
        Ratio::of(self.tp, self.tp + self.fn_)
    }

    fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub per_client: Vec<Confusion>,
    pub pooled: Confusion,
}

/// Compares true noisy samples with detected ones, client by client.
/// `client_sizes[k]` supplies the true-negative denominator.
pub fn sample_identification_confusion(
    flipped_truth: &[Vec<usize>],
    detected_noisy: &[Vec<usize>],
    client_sizes: &[usize],
) -> Result<IdentificationReport> {
    if flipped_truth.len() != detected_noisy.len() || flipped_truth.len() != client_sizes.len() {
        return Err(Error::param("per-client inputs differ in length"));
    }
    let mut per_client = Vec::with_capacity(client_sizes.len());
    let mut pooled = Confusion::default();
    for ((truth, detected), &size) in flipped_truth.iter().zip(detected_noisy).zip(client_sizes) {
        let truth: std::collections::BTreeSet<usize> = truth.iter().copied().collect();
        let detected: std::collections::BTreeSet<usize> = detected.iter().copied().collect();
        let tp = truth.intersection(&detected).count();
        let fp = detected.len() - tp;
        let fn_ = truth.len() - tp;
        let tn = size
            .checked_sub(tp + fp + fn_)
            .ok_or_else(|| Error::param("client size smaller than its labelled sets"))?;
        let c = Confusion { tp, fp, tn, fn_ };
        pooled.add(&c);
        per_client.push(c);
    }
    Ok(IdentificationReport { per_client, pooled })
}

/// Row = true class, column = label from `labels` (indexed like the dataset).
pub fn confusion_matrix(dataset: &Dataset, indices: &[usize], labels: &[usize]) -> Vec<Vec<usize>> {
    let m = dataset.n_classes();
    let mut mat = vec![vec![0usize; m]; m];
    for &i in indices {
        mat[dataset.true_label(i)][labels[i]] += 1;
    }
    mat
}

/// Label quality of one client at a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientLabelReport {
    pub client_id: usize,
    pub size: usize,
    pub initial_noise: f64,
    pub noise: f64,
    /// Flipped (ground truth) vs. detected-noisy samples.
    pub identification: Confusion,
    /// Labels that differ from the initial given labels.
    pub labels_changed: usize,
    /// Changed labels that now equal the truth.
    pub changed_to_true: usize,
    pub relabel_precision: Ratio,
    /// Share of initially wrong labels that are now right.
    pub relabel_recall: Ratio,
}

/// All per-client label statistics at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelabelReport {
    pub checkpoint: String,
    pub clients: Vec<ClientLabelReport>,
    pub pooled_identification: Confusion,
    /// Rows: true class, columns: given label at this checkpoint.
    pub confusion_matrix: Vec<Vec<usize>>,
}

impl RelabelReport {
    pub fn mean_noise(&self) -> f64 {
        if self.clients.is_empty() {
            return 0.0;
        }
        self.clients.iter().map(|c| c.noise).sum::<f64>() / self.clients.len() as f64
    }
}

/// Builds a checkpoint report from the initial labels, the current labels
/// held in `dataset`, ground-truth flips and the detected-noisy sets.
pub fn relabel_report(
    checkpoint: &str,
    dataset: &Dataset,
    partition: &PartitionAssignment,
    initial_labels: &[usize],
    flipped_truth: &[Vec<usize>],
    detected_noisy: &[Vec<usize>],
) -> Result<RelabelReport> {
    let ident = sample_identification_confusion(flipped_truth, detected_noisy, &partition.sizes())?;
    let mut clients = Vec::with_capacity(partition.n_clients());
    for (k, set) in partition.client_indices.iter().enumerate() {
        let mut init_wrong = 0;
        let mut now_wrong = 0;
        let mut changed = 0;
        let mut changed_to_true = 0;
        let mut fixed = 0;
        for &i in set {
            let truth = dataset.true_label(i);
            let now = dataset.given_label(i);
            let was = initial_labels[i];
            init_wrong += usize::from(was != truth);
            now_wrong += usize::from(now != truth);
            if now != was {
                changed += 1;
                changed_to_true += usize::from(now == truth);
            }
            fixed += usize::from(was != truth && now == truth);
        }
        let size = set.len().max(1) as f64;
        clients.push(ClientLabelReport {
            client_id: k,
            size: set.len(),
            initial_noise: init_wrong as f64 / size,
            noise: now_wrong as f64 / size,
            identification: ident.per_client[k],
            labels_changed: changed,
            changed_to_true,
            relabel_precision: Ratio::of(changed_to_true, changed),
            relabel_recall: Ratio::of(fixed, init_wrong),
        });
    }
    let all: Vec<usize> = partition.client_indices.iter().flatten().copied().collect();
    Ok(RelabelReport {
        checkpoint: checkpoint.to_string(),
        clients,
        pooled_identification: ident.pooled,
        confusion_matrix: confusion_matrix(dataset, &all, &dataset.given_labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{apply_noise_model, partition_iid};

    fn toy(n: usize, m: usize) -> Dataset {
        Dataset::new(vec![0.0; n], 1, (0..n).map(|i| i % m).collect(), m).unwrap()
    }

    #[test]
    fn untouched_dataset_has_zero_noise() {
        let ds = toy(40, 4);
        let p = partition_iid(&ds, 4, 0).unwrap();
        assert_eq!(ground_truth_noise(&ds, &p), vec![0.0; 4]);
    }

    #[test]
    fn fully_wrong_client_has_noise_one() {
        let mut ds = toy(10, 2);
        for i in 0..10 {
            let wrong = 1 - ds.true_label(i);
            ds.set_given_label(i, wrong).unwrap();
        }
        let p = PartitionAssignment {
            client_indices: vec![(0..10).collect()],
        };
        assert_eq!(ground_truth_noise(&ds, &p), vec![1.0]);
    }

    #[test]
    fn measured_noise_near_expected_flip_rate() {
        let mut levels = Vec::new();
        for seed in 0..40 {
            let mut ds = toy(1000, 10);
            let p = PartitionAssignment {
                client_indices: vec![(0..1000).collect()],
            };
            let noise = apply_noise_model(&mut ds, &p, 1.0, 0.6, seed).unwrap();
            levels.push(ground_truth_noise(&ds, &p)[0] / noise.noise_levels[0] * 0.6);
        }
        let mean = levels.iter().sum::<f64>() / levels.len() as f64;
        assert!((mean - 0.54).abs() < 0.05, "{mean}");
    }

    #[test]
    fn tracker_agrees_with_recomputation() {
        let mut ds = toy(60, 3);
        let p = partition_iid(&ds, 3, 1).unwrap();
        apply_noise_model(&mut ds, &p, 1.0, 0.3, 2).unwrap();
        let mut tracker = NoiseTracker::new(&ds, &p);
        for (step, i) in (0..60).step_by(7).enumerate() {
            tracker.relabel(&mut ds, i, step % 3).unwrap();
            assert_eq!(tracker.levels(), ground_truth_noise(&ds, &p));
        }
    }

    #[test]
    fn mae_examples() {
        assert_eq!(noise_estimation_error(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert_eq!(noise_estimation_error(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(noise_estimation_error(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn identification_examples() {
        let exact = sample_identification_confusion(&[vec![1, 2, 3]], &[vec![1, 2, 3]], &[10]).unwrap();
        assert_eq!(exact.pooled.precision().value, 1.0);
        assert_eq!(exact.pooled.recall().value, 1.0);

        let none = sample_identification_confusion(&[vec![1, 2]], &[vec![]], &[10]).unwrap();
        assert_eq!(none.pooled.recall().value, 0.0);
        let p = none.pooled.precision();
        assert!(p.undefined && p.value == 1.0);

        // 10 samples: 7 flipped (0..7), detected = 6 of them plus 2 clean.
        let crafted = sample_identification_confusion(&[(0..7).collect()], &[vec![0, 1, 2, 3, 4, 5, 7, 8]], &[10]).unwrap();
        let c = crafted.per_client[0];
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (6, 2, 1, 1));
        assert!((c.precision().value - 6.0 / 8.0).abs() < 1e-15);
        assert!((c.recall().value - 6.0 / 7.0).abs() < 1e-15);
        assert_eq!(c.total(), 10);
    }

    #[test]
    fn confusion_matrix_examples() {
        let mut ds = toy(9, 3);
        let idx: Vec<usize> = (0..9).collect();
        let clean = confusion_matrix(&ds, &idx, &ds.given_labels);
        assert_eq!(clean, vec![vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3]]);
        for i in 0..9 {
            ds.set_given_label(i, 0).unwrap();
        }
        let collapsed = confusion_matrix(&ds, &idx, &ds.given_labels);
        assert_eq!(collapsed, vec![vec![3, 0, 0], vec![3, 0, 0], vec![3, 0, 0]]);
        let row_sums = |m: &Vec<Vec<usize>>| m.iter().map(|r| r.iter().sum::<usize>()).collect::<Vec<_>>();
        assert_eq!(row_sums(&clean), row_sums(&collapsed));
    }

    #[test]
    fn report_counts_changes() {
        let mut ds = toy(6, 2);
        let initial = ds.given_labels.clone();
        ds.set_given_label(0, 1).unwrap(); // now wrong
        let p = PartitionAssignment {
            client_indices: vec![vec![0, 1, 2], vec![3, 4, 5]],
        };
        let initial_wrong = initial.clone();
        let r = relabel_report("x", &ds, &p, &initial_wrong, &[vec![], vec![]], &[vec![0], vec![]]).unwrap();
        assert_eq!(r.clients[0].labels_changed, 1);
        assert_eq!(r.clients[0].changed_to_true, 0);
        assert_eq!(r.clients[0].relabel_precision.value, 0.0);
        assert!((r.clients[0].noise - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.pooled_identification.fp, 1);
        assert_eq!(r.confusion_matrix.iter().flatten().sum::<usize>(), 6);
    }
}
