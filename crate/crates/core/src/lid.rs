//! Maximum-likelihood estimate of local intrinsic dimensionality (LID) and
//! the LID score of a set of prediction vectors.
//!
//! For a reference point with ascending neighbour distances `r_1..r_k`,
//!
//! ```text
//! LID = -( (1/k) * sum_i ln(r_i / r_k) )^-1
//! ```
//!
//! Neighbours at distance zero (exact duplicates) are skipped and the next
//! nearest neighbours are used instead. When every neighbour sits at the
//! same distance the sum vanishes and the estimator returns a fixed cap.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 20;

/// Multiplier on the point dimension giving the degenerate-estimator cap.
pub const CAP_PER_DIMENSION: f64 = 10.0;

pub fn default_cap(dim: usize) -> f64 {
    CAP_PER_DIMENSION * dim as f64
}

/// Ascending, strictly positive distances to the `k` nearest neighbours.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborDistances {
    distances: Vec<f64>,
}

impl NeighborDistances {
    /// Validates that `distances` is non-empty, ascending and positive.
    pub fn new(distances: Vec<f64>) -> Result<Self> {
        if distances.is_empty() {
            return Err(Error::param("at least one neighbour distance is required"));
        }
        if distances.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::param("neighbour distances must be positive and finite"));
        }
        if distances.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::param("neighbour distances must be sorted ascending"));
        }
        Ok(NeighborDistances { distances })
    }

    pub fn k(&self) -> usize {
        self.distances.len()
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn r_max(&self) -> f64 {
        *self.distances.last().expect("non-empty")
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact k-NN distances from `points[reference]` to the other points.
pub fn knn_distances<P: AsRef<[f64]>>(points: &[P], reference: usize, k: usize) -> Result<NeighborDistances> {
    if k == 0 {
        return Err(Error::param("k must be positive"));
    }
    if points.len() < k + 1 {
        return Err(Error::param(format!("{} points are too few for k = {k}", points.len())));
    }
    if reference >= points.len() {
        return Err(Error::param(format!("reference index {reference} out of range")));
    }
    let origin = points[reference].as_ref();
    let mut dists: Vec<f64> = points
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != reference)
        .map(|(_, p)| euclidean(origin, p.as_ref()))
        .filter(|&d| d > 0.0)
        .collect();
    if dists.len() < k {
        return Err(Error::DegenerateGeometry {
            available: dists.len(),
            k,
        });
    }
    dists.sort_unstable_by(f64::total_cmp);
    dists.truncate(k);
    NeighborDistances::new(dists)
}

/// The MLE estimate; `cap` is returned when all distances equal `r_max`.
pub fn lid_mle(nd: &NeighborDistances, cap: f64) -> f64 {
    let r_max = nd.r_max();
    let mean_log = nd.distances.iter().map(|&r| (r / r_max).ln()).sum::<f64>() / nd.k() as f64;
    if mean_log < 0.0 {
        -1.0 / mean_log
    } else {
        cap
    }
}

/// Mean LID over a prediction set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidScore {
    pub score: f64,
    /// Points with fewer than `k` positive-distance neighbours. They are left
    /// out of the mean; if every point is skipped the score is the cap.
    pub skipped: usize,
}

/// LID score with the default cap for the prediction dimension.
pub fn lid_score<P: AsRef<[f64]> + Sync>(predictions: &[P], k: usize) -> Result<LidScore> {
    let dim = predictions.first().map_or(0, |p| p.as_ref().len());
    lid_score_with_cap(predictions, k, default_cap(dim))
}

pub fn lid_score_with_cap<P: AsRef<[f64]> + Sync>(predictions: &[P], k: usize, cap: f64) -> Result<LidScore> {
    if k == 0 {
        return Err(Error::param("k must be positive"));
    }
    if predictions.len() < k + 1 {
        return Err(Error::param(format!(
            "{} prediction vectors are too few for k = {k}",
            predictions.len()
        )));
    }
    let per_point: Vec<Option<f64>> = (0..predictions.len())
        .into_par_iter()
        .map(|i| match knn_distances(predictions, i, k) {
            Ok(nd) => Ok(Some(lid_mle(&nd, cap))),
            Err(Error::DegenerateGeometry { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;

    // Sequential reduction in point order keeps the sum bitwise stable.
    let mut sum = 0.0;
    let mut used = 0usize;
    for v in per_point.iter().flatten() {
        sum += v;
        used += 1;
    }
    let skipped = predictions.len() - used;
    let score = if used == 0 { cap } else { sum / used as f64 };
    Ok(LidScore { score, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> Vec<Vec<f64>> {
        xs.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn knn_on_a_line() {
        let nd = knn_distances(&line(&[0.0, 1.0, 3.0, 7.0]), 0, 2).unwrap();
        assert_eq!(nd.distances(), &[1.0, 3.0]);
    }

    #[test]
    fn knn_skips_duplicates_of_the_reference() {
        let nd = knn_distances(&line(&[0.0, 0.0, 1.0, 3.0]), 0, 2).unwrap();
        assert_eq!(nd.distances(), &[1.0, 3.0]);
    }

    #[test]
    fn knn_equidistant_neighbours() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        let nd = knn_distances(&pts, 0, 3).unwrap();
        assert!(nd.distances().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn knn_degenerate_when_neighbours_collapse() {
        let err = knn_distances(&line(&[1.0, 1.0, 1.0, 2.0]), 0, 2).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry { available: 1, k: 2 }));
    }

    #[test]
    fn single_neighbour_hits_cap() {
        let nd = NeighborDistances::new(vec![0.7]).unwrap();
        assert_eq!(lid_mle(&nd, 50.0), 50.0);
    }

    #[test]
    fn mle_reference_value() {
        let nd = NeighborDistances::new(vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        let direct = -1.0 / ((0.25f64.ln() + 0.5f64.ln() + 0.75f64.ln() + 1.0f64.ln()) / 4.0);
        assert!((lid_mle(&nd, 1e9) - direct).abs() < 1e-12);
        assert!((direct - 1.689_814_581_765_053_6).abs() < 1e-12);
        // The commonly quoted 1.68975 agrees only to four decimals.
        assert!((direct - 1.689_75).abs() < 1e-4);
    }

    #[test]
    fn segment_in_five_dimensions_is_one_dimensional() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dir: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let pts: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                let t: f64 = rng.random();
                dir.iter().map(|d| 3.0 + t * d / norm).collect()
            })
            .collect();
        let mut total = 0.0;
        for i in 0..pts.len() {
            total += lid_mle(&knn_distances(&pts, i, 20).unwrap(), 50.0);
        }
        let mean = total / pts.len() as f64;
        assert!((0.8..=1.3).contains(&mean), "mean LID {mean}");
    }

    #[test]
    fn collapsed_predictions_score_the_cap() {
        let preds = vec![vec![0.2, 0.8]; 30];
        let s = lid_score(&preds, 5).unwrap();
        assert_eq!(s.skipped, 30);
        assert_eq!(s.score, default_cap(2));
    }

    fn jittered_one_hots(n: usize, m: usize, jitter: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut v: Vec<f64> = (0..m).map(|_| jitter * rng.random::<f64>()).collect();
                v[i % m] += 1.0;
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            })
            .collect()
    }

    #[test]
    fn diffuse_predictions_score_higher() {
        for seed in 0..5 {
            let tight = lid_score(&jittered_one_hots(300, 5, 0.01, seed), 20).unwrap();
            let loose = lid_score(&jittered_one_hots(300, 5, 0.5, seed), 20).unwrap();
            assert!(tight.score < loose.score, "{} vs {}", tight.score, loose.score);
        }
    }

    #[test]
    fn rejects_too_few_points() {
        assert!(lid_score(&line(&[0.0, 1.0]), 2).is_err());
        assert!(knn_distances(&line(&[0.0, 1.0]), 0, 0).is_err());
    }
}
