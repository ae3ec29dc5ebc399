use super::{log_sum_exp, Classifier, Layout};

/// One hidden ReLU layer: `logits = W2 relu(W1 x + b1) + b2`.
///
/// Layout: `hidden.weight` (`hidden x input_dim`), `hidden.bias`,
/// `output.weight` (`n_classes x hidden`), `output.bias`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    input_dim: usize,
    hidden: usize,
    n_classes: usize,
}

pub const DEFAULT_HIDDEN: usize = 64;

impl Mlp {
    pub fn new(input_dim: usize, hidden: usize, n_classes: usize) -> Self {
        Mlp {
            input_dim,
            hidden,
            n_classes,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Returns pre-activations of the hidden layer and fills `out` with logits.
    fn forward_parts(&self, params: &[f64], x: &[f64], pre: &mut [f64], out: &mut [f64]) {
        let (d, h, m) = (self.input_dim, self.hidden, self.n_classes);
        let (w1, rest) = params.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(m * h);
        for j in 0..h {
            pre[j] = b1[j] + w1[j * d..(j + 1) * d].iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        }
        for c in 0..m {
            out[c] = b2[c]
                + w2[c * h..(c + 1) * h]
                    .iter()
                    .zip(pre.iter())
                    .map(|(a, &p)| a * p.max(0.0))
                    .sum::<f64>();
        }
    }
}

impl Classifier for Mlp {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn layout(&self) -> Layout {
        let (d, h, m) = (self.input_dim, self.hidden, self.n_classes);
        Layout::from_blocks(&[
            ("hidden.weight", h * d, d),
            ("hidden.bias", h, d),
            ("output.weight", m * h, h),
            ("output.bias", m, h),
        ])
    }

    fn logits(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let mut pre = vec![0.0; self.hidden];
        self.forward_parts(params, x, &mut pre, out);
    }

    fn accumulate_gradient(&self, params: &[f64], x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let (d, h, m) = (self.input_dim, self.hidden, self.n_classes);
        let mut pre = vec![0.0; h];
        let mut z = vec![0.0; m];
        self.forward_parts(params, x, &mut pre, &mut z);
        let lse = log_sum_exp(&z);

        let w2 = &params[h * d + h..h * d + h + m * h];
        let (gw1, rest) = grad.split_at_mut(h * d);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(m * h);

        let mut loss = 0.0;
        let mut dh = vec![0.0; h];
        for c in 0..m {
            let log_p = z[c] - lse;
            loss -= target[c] * log_p;
            let delta = scale * (log_p.exp() - target[c]);
            gb2[c] += delta;
            let row = &w2[c * h..(c + 1) * h];
            for j in 0..h {
                gw2[c * h + j] += delta * pre[j].max(0.0);
                dh[j] += delta * row[j];
            }
        }
        for j in 0..h {
            if pre[j] <= 0.0 {
                continue;
            }
            gb1[j] += dh[j];
            for (g, v) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                *g += dh[j] * v;
            }
        }
        loss
    }
}
