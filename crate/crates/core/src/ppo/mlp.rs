//! Fully connected network with tanh hidden layers and a linear output.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Parameters are stored flat: for each layer the row-major weight matrix
/// (`out x in`) followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Gaussian weights with standard deviation `gain / sqrt(fan_in)` and
    /// zero biases; the output layer uses `out_gain` instead.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], gain: f64, out_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (i, o) = (sizes[l], sizes[l + 1]);
            let g = if l + 1 == layers { out_gain } else { gain };
            let std = g / (i as f64).sqrt();
            for w in &mut net.params[off..off + i * o] {
                *w = std * rng.sample::<f64, _>(StandardNormal);
            }
            off += i * o + o;
        }
        net
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_count(&sizes)).then_some(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("nonempty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).pop().expect("output layer")
    }

    /// Activations of every layer, input first and output last.
    pub fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        debug_assert_eq!(x.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + i * o];
            let b = &self.params[off + i * o..off + i * o + o];
            let input = &acts[l];
            let mut out: Vec<f64> = (0..o)
                .map(|r| b[r] + w[r * i..(r + 1) * i].iter().zip(input).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
            off += i * o + o;
        }
        acts
    }

    /// Adds `d(output . dout) / d(params)` into `grad`.
    pub fn backward(&self, acts: &[Vec<f64>], dout: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = dout.to_vec();
        for l in (0..layers).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for r in 0..o {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + r * i..off + (r + 1) * i];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[off + i * o + r] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + i * o];
                delta = (0..i)
                    .map(|c| {
                        let s: f64 = (0..o).map(|r| w[r * i + c] * delta[r]).sum();
                        s * (1.0 - input[c] * input[c])
                    })
                    .collect();
            }
        }
    }
}
