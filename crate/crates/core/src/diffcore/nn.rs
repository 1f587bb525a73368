//! Small dense networks recorded on the tape.
//!
//! Parameters live as one flat vector per network (layout `[W1, b1, W2,
//! b2, ...]`, `W` row-major) so a whole network is a single [`ParamStore`]
//! group and a single tape leaf.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::tape::{Tape, VecVar};
use crate::error::Result;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Act {
    Relu,
    LeakyRelu,
    Tanh,
}

/// Layer sizes and activation for a fully connected network. The output
/// layer is linear; heads (sigmoid, exp, clamps) are applied by callers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub sizes: Vec<usize>,
    pub act: Act,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, act: Act) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        MlpSpec { sizes, act }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum::<usize>()
    }

    /// Offset of the output-layer bias within the flat parameter vector,
    /// so callers can seed head biases with informed values.
    pub fn output_bias_offset(&self) -> usize {
        self.param_count() - self.output_dim()
    }

    /// He-style initialization scaled by fan-in; biases start at zero.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_count());
        let gain = match self.act {
            Act::Relu | Act::LeakyRelu => 2.0f64,
            Act::Tanh => 1.0,
        };
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (gain / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            for _ in 0..fan_in * fan_out {
                params.push(normal.sample(rng));
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        params
    }

    /// Forward pass. `params` is the flat leaf for this network; weight and
    /// bias views are sliced out of it on the tape.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: VecVar<'t>,
        x: VecVar<'t>,
    ) -> Result<VecVar<'t>> {
        let views = self.slice_params(params);
        self.forward_with_views(tape, &views, x)
    }

    /// Pre-sliced weight/bias views, reusable across the patients of a
    /// batch so each layer's view is recorded once per tape.
    pub fn slice_params<'t>(&self, params: VecVar<'t>) -> Vec<(VecVar<'t>, VecVar<'t>)> {
        let mut views = Vec::with_capacity(self.sizes.len() - 1);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wv = params.slice(off, fan_in * fan_out);
            off += fan_in * fan_out;
            let bv = params.slice(off, fan_out);
            off += fan_out;
            views.push((wv, bv));
        }
        views
    }

    pub fn forward_with_views<'t>(
        &self,
        tape: &'t Tape,
        views: &[(VecVar<'t>, VecVar<'t>)],
        x: VecVar<'t>,
    ) -> Result<VecVar<'t>> {
        let n_layers = views.len();
        let mut h = x;
        for (li, (wv, bv)) in views.iter().enumerate() {
            let rows = self.sizes[li + 1];
            let cols = self.sizes[li];
            h = tape.affine(*wv, h, *bv, rows, cols)?;
            if li + 1 < n_layers {
                h = match self.act {
                    Act::Relu => h.map_relu(),
                    Act::LeakyRelu => h.map_leaky_relu(),
                    Act::Tanh => h.map_tanh(),
                };
            }
        }
        Ok(h)
    }

    /// Plain `f64` forward pass for inference paths that need no gradients.
    pub fn forward_f64(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(params.len(), self.param_count());
        let n_layers = self.sizes.len() - 1;
        let mut h = x.to_vec();
        let mut off = 0;
        for li in 0..n_layers {
            let (cols, rows) = (self.sizes[li], self.sizes[li + 1]);
            let w = &params[off..off + rows * cols];
            off += rows * cols;
            let b = &params[off..off + rows];
            off += rows;
            let mut out = Vec::with_capacity(rows);
            for i in 0..rows {
                let mut acc = b[i];
                for j in 0..cols {
                    acc += w[i * cols + j] * h[j];
                }
                out.push(acc);
            }
            if li + 1 < n_layers {
                for v in &mut out {
                    *v = match self.act {
                        Act::Relu => v.max(0.0),
                        Act::LeakyRelu => {
                            if *v > 0.0 {
                                *v
                            } else {
                                0.01 * *v
                            }
                        }
                        Act::Tanh => v.tanh(),
                    };
                }
            }
            h = out;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tape_and_f64_forward_agree() {
        let spec = MlpSpec::new(4, &[7, 5], 3, Act::Relu);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = spec.init_params(&mut rng);
        assert_eq!(params.len(), spec.param_count());

        let x = [0.3, -1.2, 0.7, 2.0];
        let plain = spec.forward_f64(&params, &x);

        let tape = Tape::new();
        let p = tape.vector(&params);
        let xv = tape.vector(&x);
        let out = spec.forward(&tape, p, xv).unwrap();
        for (a, b) in plain.iter().zip(out.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Tanh keeps the check away from relu kinks. The numeric side uses
        // the independent forward_f64 path.
        let spec = MlpSpec::new(3, &[6], 1, Act::Tanh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = spec.init_params(&mut rng);
        let x = [0.5, -0.25, 1.5];

        let tape = Tape::new();
        let p = tape.vector(&params);
        let xv = tape.vector(&x);
        let out = spec.forward(&tape, p, xv).unwrap().get(0);
        let grads = tape.backward(out).unwrap();
        let gp = grads.wrt_slice(p);

        let h = 1e-6;
        for i in 0..params.len() {
            let mut pp = params.clone();
            pp[i] += h;
            let fp = spec.forward_f64(&pp, &x)[0];
            pp[i] -= 2.0 * h;
            let fm = spec.forward_f64(&pp, &x)[0];
            let numeric = (fp - fm) / (2.0 * h);
            assert!(
                (gp[i] - numeric).abs() < 1e-6,
                "param {i}: analytic {} vs numeric {numeric}",
                gp[i]
            );
        }
    }
}
