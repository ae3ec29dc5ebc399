//! Two-component, one-dimensional Gaussian mixture fitted by EM.
//!
//! Used twice by the protocol: over cumulative LID scores to separate noisy
//! from clean clients, and over per-sample losses to separate noisy from
//! clean samples. In both cases the component with the larger mean is the
//! noisy ("high") side.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    /// Log-likelihood of the data under the returned parameters.
    pub log_likelihood: f64,
    pub n_iters: usize,
    /// Log-likelihood before each M-step, in iteration order.
    pub trace: Vec<f64>,
}

impl GmmFit {
    fn log_joint(&self, x: f64) -> [f64; 2] {
        std::array::from_fn(|c| {
            let var = self.variances[c];
            self.weights[c].ln() - 0.5 * (2.0 * PI * var).ln() - (x - self.means[c]).powi(2) / (2.0 * var)
        })
    }

    /// Posterior probability of each component for `x`; sums to one.
    pub fn responsibilities(&self, x: f64) -> [f64; 2] {
        let lj = self.log_joint(x);
        let hi = lj[0].max(lj[1]);
        let e = [(lj[0] - hi).exp(), (lj[1] - hi).exp()];
        let z = e[0] + e[1];
        [e[0] / z, e[1] / z]
    }

    /// Index of the component with the larger mean.
    pub fn high_component(&self) -> usize {
        usize::from(self.means[1] > self.means[0])
    }

    pub fn log_likelihood_of(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .map(|&x| {
                let lj = self.log_joint(x);
                let hi = lj[0].max(lj[1]);
                hi + ((lj[0] - hi).exp() + (lj[1] - hi).exp()).ln()
            })
            .sum()
    }
}

fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Linear-interpolation percentile of an ascending slice, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Initial means at the 10th and 90th percentiles, equal weights and the
/// sample variance for both components.
fn initial_fit(values: &[f64], variance: f64) -> GmmFit {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    GmmFit {
        weights: [0.5, 0.5],
        means: [percentile(&sorted, 0.1), percentile(&sorted, 0.9)],
        variances: [variance, variance],
        log_likelihood: f64::NEG_INFINITY,
        n_iters: 0,
        trace: Vec::new(),
    }
}

/// Fits the mixture. Fewer than two distinct values is reported as
/// [`Error::Parameter`]; use [`is_degenerate`] to detect that case up front.
pub fn fit_gmm2(values: &[f64], opts: GmmOptions) -> Result<GmmFit> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("GMM input contains non-finite values"));
    }
    if is_degenerate(values) {
        return Err(Error::param("GMM input needs at least two distinct values"));
    }
    let (_, variance) = mean_and_variance(values);
    let init = initial_fit(values, variance);
    Ok(run_em(values, init, variance, opts))
}

/// True when `values` has fewer than two distinct entries.
pub fn is_degenerate(values: &[f64]) -> bool {
    match values.first() {
        None => true,
        Some(&first) => values.iter().all(|&v| v == first),
    }
}

fn run_em(values: &[f64], mut fit: GmmFit, sample_variance: f64, opts: GmmOptions) -> GmmFit {
    let floor = 1e-6 * (sample_variance + 1e-12);
    let n = values.len() as f64;
    let mut resp = vec![[0.0f64; 2]; values.len()];
    let mut prev_ll = f64::NEG_INFINITY;

    for iter in 0..opts.max_iters {
        // E-step
        let mut ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(values) {
            let lj = fit.log_joint(x);
            let hi = lj[0].max(lj[1]);
            let e = [(lj[0] - hi).exp(), (lj[1] - hi).exp()];
            let z = e[0] + e[1];
            ll += hi + z.ln();
            *r = [e[0] / z, e[1] / z];
        }
        fit.trace.push(ll);
        fit.n_iters = iter + 1;
        if (ll - prev_ll).abs() < opts.tol {
            break;
        }
        prev_ll = ll;

        // M-step
        for c in 0..2 {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            // Keep an emptied component alive at a tiny weight.
            let nk_safe = nk.max(f64::MIN_POSITIVE);
            let mean = resp.iter().zip(values).map(|(r, &x)| r[c] * x).sum::<f64>() / nk_safe;
            let var = resp.iter().zip(values).map(|(r, &x)| r[c] * (x - mean).powi(2)).sum::<f64>() / nk_safe;
            fit.weights[c] = (nk / n).clamp(1e-12, 1.0 - 1e-12);
            fit.means[c] = mean;
            fit.variances[c] = var.max(floor);
        }
        let wsum = fit.weights[0] + fit.weights[1];
        fit.weights[0] /= wsum;
        fit.weights[1] = 1.0 - fit.weights[0];
    }
    fit.log_likelihood = fit.log_likelihood_of(values);
    fit
}

/// Index sets for the low-mean (clean) and high-mean (noisy) components.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Split {
    pub low: Vec<usize>,
    pub high: Vec<usize>,
}

/// Assigns each value to the component of larger posterior; ties go low.
pub fn split_by_gmm(values: &[f64], fit: &GmmFit) -> Split {
    let high_c = fit.high_component();
    let mut split = Split::default();
    for (i, &x) in values.iter().enumerate() {
        let r = fit.responsibilities(x);
        if r[high_c] > r[1 - high_c] {
            split.high.push(i);
        } else {
            split.low.push(i);
        }
    }
    split
}

/// Fits and splits in one go. Degenerate input puts every index low.
pub fn separate(values: &[f64], opts: GmmOptions) -> Result<Split> {
    separate_with_fit(values, opts).map(|(split, _)| split)
}

/// As [`separate`], also returning the fit (`None` on degenerate input).
pub fn separate_with_fit(values: &[f64], opts: GmmOptions) -> Result<(Split, Option<GmmFit>)> {
    if is_degenerate(values) {
        let split = Split {
            low: (0..values.len()).collect(),
            high: Vec::new(),
        };
        return Ok((split, None));
    }
    let fit = fit_gmm2(values, opts)?;
    Ok((split_by_gmm(values, &fit), Some(fit)))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEPARATED: [f64; 6] = [0.1, 0.15, 0.2, 4.9, 5.0, 5.1];

    /// Textbook EM with min/max initialisation and unit variances, written
    /// against the densities directly.
    fn oracle_em(xs: &[f64]) -> ([f64; 2], [f64; 2]) {
        let mut mu = [xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)];
        let mut var = [1.0, 1.0];
        let mut w = [0.5, 0.5];
        for _ in 0..2000 {
            let resp: Vec<[f64; 2]> = xs
                .iter()
                .map(|&x| {
                    let p: Vec<f64> = (0..2)
                        .map(|c| w[c] * (-(x - mu[c]).powi(2) / (2.0 * var[c])).exp() / (2.0 * PI * var[c]).sqrt())
                        .collect();
                    [p[0] / (p[0] + p[1]), p[1] / (p[0] + p[1])]
                })
                .collect();
            for c in 0..2 {
                let nk: f64 = resp.iter().map(|r| r[c]).sum();
                mu[c] = resp.iter().zip(xs).map(|(r, x)| r[c] * x).sum::<f64>() / nk;
                var[c] = (resp.iter().zip(xs).map(|(r, x)| r[c] * (x - mu[c]).powi(2)).sum::<f64>() / nk).max(1e-9);
                w[c] = nk / xs.len() as f64;
            }
        }
        (mu, w)
    }

    #[test]
    fn separated_clusters_match_oracle() {
        let fit = fit_gmm2(&SEPARATED, GmmOptions::default()).unwrap();
        let (omu, ow) = oracle_em(&SEPARATED);
        let mut means = fit.means;
        means.sort_by(f64::total_cmp);
        assert!((means[0] - 0.15).abs() < 0.05 && (means[1] - 5.0).abs() < 0.05, "{means:?}");
        assert!((means[0] - omu[0]).abs() < 0.05 && (means[1] - omu[1]).abs() < 0.05);
        for (w, o) in fit.weights.iter().zip(&ow) {
            assert!((w - 0.5).abs() < 0.05);
            assert!((o - 0.5).abs() < 0.05);
        }
        assert!((fit.weights[0] + fit.weights[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let values: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 10.0 + if i % 3 == 0 { 20.0 } else { 0.0 }).collect();
        let fit = fit_gmm2(&values, GmmOptions::default()).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn identical_values_are_degenerate() {
        assert!(is_degenerate(&[2.5; 4]));
        assert!(fit_gmm2(&[2.5; 4], GmmOptions::default()).is_err());
        let split = separate(&[2.5; 4], GmmOptions::default()).unwrap();
        assert_eq!(split.low, vec![0, 1, 2, 3]);
        assert!(split.high.is_empty());
    }

    #[test]
    fn responsibilities_normalised() {
        let fit = fit_gmm2(&SEPARATED, GmmOptions::default()).unwrap();
        for x in [-3.0, 0.1, 2.5, 5.0, 100.0] {
            let r = fit.responsibilities(x);
            assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_split() {
        let split = separate(&SEPARATED, GmmOptions::default()).unwrap();
        assert_eq!(split.low, vec![0, 1, 2]);
        assert_eq!(split.high, vec![3, 4, 5]);
    }

    #[test]
    fn far_value_goes_to_nearer_mean_with_equal_variances() {
        let fit = GmmFit {
            weights: [0.5, 0.5],
            means: [0.0, 10.0],
            variances: [1.0, 1.0],
            log_likelihood: 0.0,
            n_iters: 0,
            trace: vec![],
        };
        assert_eq!(split_by_gmm(&[-50.0, 3.0, 7.0, 60.0], &fit), Split { low: vec![0, 1], high: vec![2, 3] });
        // exact midpoint is a tie and goes low
        assert_eq!(split_by_gmm(&[5.0], &fit).low, vec![0]);
    }

    #[test]
    fn swapped_initialisation_gives_same_partition() {
        let values = [0.3, 0.1, 0.5, 2.0, 2.4, 2.2, 0.2, 3.9, 0.4];
        let (_, var) = mean_and_variance(&values);
        let a = initial_fit(&values, var);
        let mut b = a.clone();
        b.means.swap(0, 1);
        let fa = run_em(&values, a, var, GmmOptions::default());
        let fb = run_em(&values, b, var, GmmOptions::default());
        assert_eq!(split_by_gmm(&values, &fa), split_by_gmm(&values, &fb));
        assert!((fa.means[0] - fb.means[1]).abs() < 1e-9);
    }
}
