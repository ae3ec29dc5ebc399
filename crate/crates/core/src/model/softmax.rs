use super::{log_sum_exp, Classifier, Layout};

/// Multinomial logistic regression: `logits = W x + b`.
///
/// Layout: `weight` (`n_classes x input_dim`, row-major) then `bias`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftmaxRegression {
    input_dim: usize,
    n_classes: usize,
}

impl SoftmaxRegression {
    pub fn new(input_dim: usize, n_classes: usize) -> Self {
        SoftmaxRegression { input_dim, n_classes }
    }
}

impl Classifier for SoftmaxRegression {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn layout(&self) -> Layout {
        let (d, m) = (self.input_dim, self.n_classes);
        Layout::from_blocks(&[("weight", m * d, d), ("bias", m, d)])
    }

    fn logits(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let (d, m) = (self.input_dim, self.n_classes);
        let (w, b) = params.split_at(m * d);
        for c in 0..m {
            let row = &w[c * d..(c + 1) * d];
            out[c] = b[c] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        }
    }

    fn accumulate_gradient(&self, params: &[f64], x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let (d, m) = (self.input_dim, self.n_classes);
        let mut z = vec![0.0; m];
        self.logits(params, x, &mut z);
        let lse = log_sum_exp(&z);
        let mut loss = 0.0;
        let (gw, gb) = grad.split_at_mut(m * d);
        for c in 0..m {
            let log_p = z[c] - lse;
            loss -= target[c] * log_p;
            let delta = scale * (log_p.exp() - target[c]);
            gb[c] += delta;
            for (g, v) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                *g += delta * v;
            }
        }
        loss
    }
}
