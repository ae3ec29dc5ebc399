use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

/// Where mixing coefficients come from.
#[derive(Debug, Clone, Copy)]
pub enum LambdaSource {
    Beta(Beta<f64>),
    /// Every pair uses this coefficient.
    Fixed(f64),
}

impl LambdaSource {
    /// `Beta(alpha, alpha)`; alpha = 1 is the uniform distribution.
    pub fn beta(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::param(format!("mixup alpha = {alpha} must be positive")));
        }
        Beta::new(alpha, alpha)
            .map(LambdaSource::Beta)
            .map_err(|e| Error::param(format!("mixup alpha = {alpha}: {e}")))
    }

    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        match self {
            LambdaSource::Beta(b) => b.sample(rng),
            LambdaSource::Fixed(l) => *l,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    /// Partner of each row.
    pub partners: Vec<usize>,
    pub lambdas: Vec<f64>,
}

/// Mixes each row `i` with partner `perm[i]` of a uniform permutation,
/// drawing one coefficient per pair:
/// `x~ = l x_i + (1 - l) x_j`, `y~ = l y_i + (1 - l) y_j`.
pub fn mixup_batch<X: AsRef<[f64]>, Y: AsRef<[f64]>>(
    batch_x: &[X],
    batch_y: &[Y],
    lambda: &LambdaSource,
    rng: &mut impl Rng,
) -> Result<MixedBatch> {
    if batch_x.is_empty() {
        return Err(Error::param("mixup needs a non-empty batch"));
    }
    if batch_x.len() != batch_y.len() {
        return Err(Error::param("mixup inputs and labels differ in length"));
    }
    let n = batch_x.len();
    let mut partners: Vec<usize> = (0..n).collect();
    partners.shuffle(rng);
    let mut out = MixedBatch {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        partners,
        lambdas: Vec::with_capacity(n),
    };
    for i in 0..n {
        let j = out.partners[i];
        let l = lambda.draw(rng);
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| l * u + (1.0 - l) * v).collect::<Vec<_>>();
        out.x.push(mix(batch_x[i].as_ref(), batch_x[j].as_ref()));
        out.y.push(mix(batch_y[i].as_ref(), batch_y[j].as_ref()));
        out.lambdas.push(l);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn one_hot(c: usize, m: usize) -> Vec<f64> {
        let mut v = vec![0.0; m];
        v[c] = 1.0;
        v
    }

    #[test]
    fn lambda_one_returns_original_rows() {
        let xs = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let ys = vec![one_hot(0, 3), one_hot(1, 3), one_hot(2, 3)];
        let mixed = mixup_batch(&xs, &ys, &LambdaSource::Fixed(1.0), &mut rng_from(0)).unwrap();
        assert_eq!(mixed.x, xs);
        assert_eq!(mixed.y, ys);
    }

    #[test]
    fn midpoint_mix() {
        let xs = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let ys = vec![one_hot(0, 4), one_hot(1, 4)];
        // find a seed whose permutation swaps the pair
        let mixed = (0..100)
            .map(|s| mixup_batch(&xs, &ys, &LambdaSource::Fixed(0.5), &mut rng_from(s)).unwrap())
            .find(|m| m.partners == vec![1, 0])
            .unwrap();
        assert_eq!(mixed.x[0], vec![1.0, 1.0]);
        assert_eq!(mixed.y[0], vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn uniform_lambda_moments() {
        let src = LambdaSource::beta(1.0).unwrap();
        let mut rng = rng_from(42);
        let draws: Vec<f64> = (0..100_000).map(|_| src.draw(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
        assert!((var - 1.0 / 12.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn rejects_bad_alpha_and_empty_batch() {
        assert!(LambdaSource::beta(0.0).is_err());
        assert!(LambdaSource::beta(-1.0).is_err());
        let empty: Vec<Vec<f64>> = vec![];
        assert!(mixup_batch(&empty, &empty, &LambdaSource::Fixed(0.5), &mut rng_from(0)).is_err());
    }
}
