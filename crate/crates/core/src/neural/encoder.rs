//! The subspace encoder: a linear bypass over lagged I/O windows plus an MLP
//! residual, estimating the model state from past data.

use nalgebra::{DMatrix, DVector};

use crate::data::StackedWindow;
use crate::error::{Error, Result};
use crate::rng::RngStream;

use super::mlp::{Mlp, MlpCache, MlpTapeIds};
use super::tape::{NodeId, PMatId, PVecId, Tape, TapeGrads};

/// State estimator `x_hat = W_y ylags + W_u ulags + bias + residual([ylags; ulags])`.
///
/// The lag windows are stacked newest-first and end at sample `k-1` when the
/// encoder estimates `x_k`. With the residual's final layer zeroed the
/// encoder is exactly the affine map `(W_y, W_u, bias)`, which is how the
/// model-based and least-squares initialisations install their solutions.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    pub w_y: DMatrix<f64>,
    pub w_u: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub residual: Mlp,
    pub n_a: usize,
    pub n_b: usize,
    pub ny: usize,
    pub nu: usize,
}

/// Tape handles of a registered [`EncoderNet`].
pub struct EncoderTapeIds {
    pub w_y: PMatId,
    pub w_u: PMatId,
    pub bias: PVecId,
    pub residual: MlpTapeIds,
}

/// Cache for the direct backward pass.
pub struct EncoderCache {
    ylags: DVector<f64>,
    ulags: DVector<f64>,
    residual: MlpCache,
}

impl EncoderNet {
    /// Encoder with zero linear part and a Glorot residual whose final layer
    /// is zeroed, so the fresh encoder evaluates to zero.
    pub fn new(nx: usize, ny: usize, nu: usize, n_a: usize, n_b: usize, hidden: &[usize], rng: &mut RngStream) -> Self {
        let in_dim = n_a * ny + n_b * nu;
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(nx);
        let mut residual = Mlp::new_glorot(&dims, rng);
        residual.zero_final_layer();
        Self {
            w_y: DMatrix::zeros(nx, n_a * ny),
            w_u: DMatrix::zeros(nx, n_b * nu),
            bias: DVector::zeros(nx),
            residual,
            n_a,
            n_b,
            ny,
            nu,
        }
    }

    pub fn nx(&self) -> usize {
        self.bias.len()
    }

    pub fn forward(&self, ylags: &DVector<f64>, ulags: &DVector<f64>) -> Result<DVector<f64>> {
        if ylags.len() != self.w_y.ncols() || ulags.len() != self.w_u.ncols() {
            return Err(Error::Dim(format!(
                "lag windows ({}, {}) do not match encoder ({}, {})",
                ylags.len(),
                ulags.len(),
                self.w_y.ncols(),
                self.w_u.ncols()
            )));
        }
        let mut out = &self.w_y * ylags + &self.w_u * ulags + &self.bias;
        out += self.residual.forward(&cat(ylags, ulags))?;
        Ok(out)
    }

    /// Applies the encoder to a stacked window, consuming the newest `n_a`
    /// output blocks and `n_b` input blocks.
    pub fn forward_window(&self, w: &StackedWindow) -> Result<DVector<f64>> {
        let (ny_need, nu_need) = (self.n_a * self.ny, self.n_b * self.nu);
        if w.y_stack.len() < ny_need || w.u_stack.len() < nu_need {
            return Err(Error::Dim(format!(
                "window stacks ({}, {}) shorter than encoder lags ({}, {})",
                w.y_stack.len(),
                w.u_stack.len(),
                ny_need,
                nu_need
            )));
        }
        self.forward(&w.y_stack.rows(0, ny_need).into_owned(), &w.u_stack.rows(0, nu_need).into_owned())
    }

    pub fn forward_cache(&self, ylags: &DVector<f64>, ulags: &DVector<f64>) -> Result<(DVector<f64>, EncoderCache)> {
        let lin = &self.w_y * ylags + &self.w_u * ulags + &self.bias;
        let (res, cache) = self.residual.forward_cache(&cat(ylags, ulags))?;
        Ok((
            lin + res,
            EncoderCache { ylags: ylags.clone(), ulags: ulags.clone(), residual: cache },
        ))
    }

    /// Accumulates gradients of `<output_grad, forward(...)>` into `grads`.
    pub fn backward(&self, cache: &EncoderCache, output_grad: &DVector<f64>, grads: &mut EncoderNet) {
        grads.w_y.ger(1.0, output_grad, &cache.ylags, 1.0);
        grads.w_u.ger(1.0, output_grad, &cache.ulags, 1.0);
        grads.bias += output_grad;
        self.residual.backward(&cache.residual, output_grad, &mut grads.residual);
    }

    pub fn zeros_like(&self) -> EncoderNet {
        EncoderNet {
            w_y: DMatrix::zeros(self.w_y.nrows(), self.w_y.ncols()),
            w_u: DMatrix::zeros(self.w_u.nrows(), self.w_u.ncols()),
            bias: DVector::zeros(self.bias.len()),
            residual: self.residual.zeros_like(),
            ..*self
        }
    }

    pub fn register(&self, tape: &mut Tape) -> EncoderTapeIds {
        EncoderTapeIds {
            w_y: tape.add_param_mat(&self.w_y),
            w_u: tape.add_param_mat(&self.w_u),
            bias: tape.add_param_vec(&self.bias),
            residual: self.residual.register(tape),
        }
    }

    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        ids: &EncoderTapeIds,
        ylags: &DVector<f64>,
        ulags: &DVector<f64>,
    ) -> NodeId {
        let yn = tape.leaf(ylags.clone());
        let un = tape.leaf(ulags.clone());
        let ly = tape.matvec_param(ids.w_y, yn);
        let lu = tape.matvec_param(ids.w_u, un);
        let lin = tape.add(ly, lu);
        let lin = tape.add_pvec(ids.bias, lin);
        let catn = tape.concat(yn, un);
        let res = self.residual.forward_on_tape(tape, &ids.residual, catn);
        tape.add(lin, res)
    }

    pub fn collect_tape_grads(&self, ids: &EncoderTapeIds, src: &TapeGrads, grads: &mut EncoderNet) {
        grads.w_y += &src.mats[ids.w_y.0];
        grads.w_u += &src.mats[ids.w_u.0];
        grads.bias += &src.vecs[ids.bias.0];
        self.residual.collect_tape_grads(&ids.residual, src, &mut grads.residual);
    }

    pub fn param_count(&self) -> usize {
        self.w_y.len() + self.w_u.len() + self.bias.len() + self.residual.param_count()
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.w_y.as_slice());
        out.extend_from_slice(self.w_u.as_slice());
        out.extend_from_slice(self.bias.as_slice());
        self.residual.write_flat(out);
    }

    pub fn read_flat<'a>(&mut self, src: &'a [f64]) -> &'a [f64] {
        let nwy = self.w_y.len();
        self.w_y.as_mut_slice().copy_from_slice(&src[..nwy]);
        let mut rest = &src[nwy..];
        let nwu = self.w_u.len();
        self.w_u.as_mut_slice().copy_from_slice(&rest[..nwu]);
        rest = &rest[nwu..];
        let nb = self.bias.len();
        self.bias.as_mut_slice().copy_from_slice(&rest[..nb]);
        self.residual.read_flat(&rest[nb..])
    }
}

fn cat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(a.len() + b.len());
    v.rows_mut(0, a.len()).copy_from(a);
    v.rows_mut(a.len(), b.len()).copy_from(b);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn test_encoder(rng: &mut RngStream) -> EncoderNet {
        let mut enc = EncoderNet::new(2, 1, 1, 3, 3, &[8], rng);
        enc.w_y = rng.normal_matrix(2, 3) * 0.5;
        enc.w_u = rng.normal_matrix(2, 3) * 0.5;
        enc.bias = rng.normal_vector(2) * 0.1;
        enc
    }

    #[test]
    fn fresh_encoder_is_zero() {
        let mut rng = RngStream::new(10, 0);
        let enc = EncoderNet::new(2, 1, 1, 3, 2, &[8, 8], &mut rng);
        let out = enc.forward(&rng.normal_vector(3), &rng.normal_vector(2)).unwrap();
        assert_eq!(out, DVector::zeros(2));
    }

    #[test]
    fn zeroed_residual_leaves_linear_map() {
        let mut rng = RngStream::new(11, 0);
        let enc = test_encoder(&mut rng);
        let y = rng.normal_vector(3);
        let u = rng.normal_vector(3);
        let expected = &enc.w_y * &y + &enc.w_u * &u + &enc.bias;
        assert_abs_diff_eq!(enc.forward(&y, &u).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn zeroed_residual_encoder_is_affine() {
        // forward(a w1 + b w2) = a forward(w1) + b forward(w2) + (1-a-b) bias
        let mut rng = RngStream::new(12, 0);
        let enc = test_encoder(&mut rng);
        let (y1, u1) = (rng.normal_vector(3), rng.normal_vector(3));
        let (y2, u2) = (rng.normal_vector(3), rng.normal_vector(3));
        let (alpha, beta) = (0.3, -1.2);
        let mixed = enc
            .forward(&(&y1 * alpha + &y2 * beta), &(&u1 * alpha + &u2 * beta))
            .unwrap();
        let combo = enc.forward(&y1, &u1).unwrap() * alpha
            + enc.forward(&y2, &u2).unwrap() * beta
            + &enc.bias * (1.0 - alpha - beta);
        assert_abs_diff_eq!(mixed, combo, epsilon = 1e-12);
    }

    #[test]
    fn tape_and_direct_forward_agree() {
        let mut rng = RngStream::new(13, 0);
        let mut enc = test_encoder(&mut rng);
        // activate the residual path
        enc.residual = Mlp::new_glorot(&[6, 8, 2], &mut rng);
        let y = rng.normal_vector(3);
        let u = rng.normal_vector(3);
        let mut tape = Tape::new();
        let ids = enc.register(&mut tape);
        let out = enc.forward_on_tape(&mut tape, &ids, &y, &u);
        assert_abs_diff_eq!(tape.value(out).clone(), enc.forward(&y, &u).unwrap(), epsilon = 1e-14);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngStream::new(14, 0);
        let mut enc = test_encoder(&mut rng);
        enc.residual = Mlp::new_glorot(&[6, 8, 2], &mut rng);
        let y = rng.normal_vector(3);
        let u = rng.normal_vector(3);
        let g = rng.normal_vector(2);
        let (_, cache) = enc.forward_cache(&y, &u).unwrap();
        let mut grads = enc.zeros_like();
        enc.backward(&cache, &g, &mut grads);

        let mut theta = Vec::new();
        enc.write_flat(&mut theta);
        let mut gflat = Vec::new();
        grads.write_flat(&mut gflat);
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut scratch = enc.clone();
            let mut tp = theta.clone();
            tp[i] += h;
            scratch.read_flat(&tp);
            let fp = scratch.forward(&y, &u).unwrap().dot(&g);
            let mut tm = theta.clone();
            tm[i] -= h;
            scratch.read_flat(&tm);
            let fm = scratch.forward(&y, &u).unwrap().dot(&g);
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(gflat[i].abs()).max(1e-6);
            assert!((fd - gflat[i]).abs() / denom <= 1e-5, "param {i}: ad {} vs fd {fd}", gflat[i]);
        }
    }
}
