//! Multilayer perceptron with tanh hidden layers and a linear output layer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::tape::{NodeId, PMatId, PVecId, Tape, TapeGrads};

#[derive(Debug, Clone)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Fully connected network; tanh on every layer except the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Tape handles of a registered [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpTapeIds {
    pub layers: Vec<(PMatId, PVecId)>,
}

/// Forward-pass values needed by [`Mlp::backward`]: the input of each layer
/// plus the final output.
pub struct MlpCache {
    xs: Vec<DVector<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; `dims` lists layer widths from
    /// input to output.
    pub fn new_glorot(dims: &[usize], rng: &mut RngStream) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: rng.uniform_matrix(fan_out, fan_in, -limit, limit),
                    b: DVector::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|d| Layer { w: DMatrix::zeros(d[1], d[0]), b: DVector::zeros(d[1]) })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { w: DMatrix::zeros(l.w.nrows(), l.w.ncols()), b: DVector::zeros(l.b.len()) })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    /// Zeroes the final layer's weights and bias; earlier layers untouched.
    /// A network treated this way evaluates to exactly zero.
    pub fn zero_final_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b.fill(0.0);
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dim(format!("input has {} entries, expected {}", x.len(), self.input_dim())));
        }
        let last = self.layers.len() - 1;
        let mut a = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * &a + &l.b;
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            a = z;
        }
        Ok(a)
    }

    /// Forward pass retaining per-layer inputs for the reverse sweep.
    pub fn forward_cache(&self, x: &DVector<f64>) -> Result<(DVector<f64>, MlpCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::Dim(format!("input has {} entries, expected {}", x.len(), self.input_dim())));
        }
        let last = self.layers.len() - 1;
        let mut xs = Vec::with_capacity(self.layers.len() + 1);
        xs.push(x.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * xs.last().unwrap() + &l.b;
            if i < last {
                z.apply(|v| *v = v.tanh());
            }
            xs.push(z);
        }
        let out = xs.last().unwrap().clone();
        Ok((out, MlpCache { xs }))
    }

    /// Gradients of `<output_grad, forward(x)>` with respect to parameters and
    /// the input. Accumulates into `grads` (shaped like `self`).
    pub fn backward(&self, cache: &MlpCache, output_grad: &DVector<f64>, grads: &mut Mlp) -> DVector<f64> {
        let last = self.layers.len() - 1;
        let mut g = output_grad.clone();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                // arriving gradient is w.r.t. tanh output stored at xs[i+1]
                let t = &cache.xs[i + 1];
                for r in 0..g.len() {
                    g[r] *= 1.0 - t[r] * t[r];
                }
            }
            grads.layers[i].w.ger(1.0, &g, &cache.xs[i], 1.0);
            grads.layers[i].b += &g;
            g = self.layers[i].w.tr_mul(&g);
        }
        g
    }

    pub fn register(&self, tape: &mut Tape) -> MlpTapeIds {
        MlpTapeIds {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.add_param_mat(&l.w), tape.add_param_vec(&l.b)))
                .collect(),
        }
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, ids: &MlpTapeIds, x: NodeId) -> NodeId {
        let last = self.layers.len() - 1;
        let mut a = x;
        for (i, (w, b)) in ids.layers.iter().enumerate() {
            let z = tape.matvec_param(*w, a);
            let z = tape.add_pvec(*b, z);
            a = if i < last { tape.tanh(z) } else { z };
        }
        a
    }

    /// Adds the tape-accumulated gradients for this network into `grads`.
    pub fn collect_tape_grads(&self, ids: &MlpTapeIds, src: &TapeGrads, grads: &mut Mlp) {
        for (i, (w, b)) in ids.layers.iter().enumerate() {
            grads.layers[i].w += &src.mats[w.0];
            grads.layers[i].b += &src.vecs[b.0];
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Appends parameters in canonical order (per layer: weights
    /// column-major, then bias).
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(l.b.as_slice());
        }
    }

    /// Reads parameters written by [`Mlp::write_flat`]; returns the slice tail.
    pub fn read_flat<'a>(&mut self, src: &'a [f64]) -> &'a [f64] {
        let mut rest = src;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.as_mut_slice().copy_from_slice(&rest[..nw]);
            rest = &rest[nw..];
            let nb = l.b.len();
            l.b.as_mut_slice().copy_from_slice(&rest[..nb]);
            rest = &rest[nb..];
        }
        rest
    }
}

/// Glorot-initialised network: the paper's random baseline initialisation.
pub fn init_random(dims: &[usize], rng: &mut RngStream) -> Mlp {
    Mlp::new_glorot(dims, rng)
}
