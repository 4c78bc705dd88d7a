//! Static parallel model augmentation and its truncated-rollout trainer.
//!
//! The augmented transition adds a learned correction to the baseline,
//! `x_{k+1} = f_base(x, u) + f_aug(x, u)`, keeping the baseline's output map.
//! The encoder estimates the rollout's initial state from a window of lagged
//! I/O data, which lets training average a short-horizon squared output error
//! over many trajectory sections. Encoder and augmentation are updated
//! jointly with Adam; gradients flow through the full rollout on a tape.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;

use crate::baseline::TapeBaseline;
use crate::data::{fmt_f64, IoDataset};
use crate::encoder_init::lag_windows;
use crate::error::{Error, Result};
use crate::neural::encoder::EncoderNet;
use crate::neural::tape::Tape;
use crate::neural::{Adam, Mlp};
use crate::rng::RngStream;

/// Baseline with a static parallel correction and a state encoder.
pub struct AugmentedModel {
    pub baseline: Box<dyn TapeBaseline>,
    pub f_aug: Mlp,
    pub encoder: EncoderNet,
}

/// Training settings; defaults follow the benchmark's hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Rollout horizon T.
    pub horizon: usize,
    pub epochs: usize,
    /// Sections per batch, sampled uniformly with replacement each epoch.
    pub batch_size: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub lr: f64,
    pub seed: u64,
    /// Horizons of the per-epoch validation RMSE.
    pub val_horizons: [usize; 3],
    /// Validation sections, evenly spaced over the validation record.
    pub val_sections: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            horizon: 200,
            epochs: 2000,
            batch_size: 3000,
            n_a: 9,
            n_b: 9,
            lr: 1e-3,
            seed: 0,
            val_horizons: [5, 20, 100],
            val_sections: 128,
        }
    }
}

/// Per-epoch training record. Metrics are evaluated at the parameters the
/// epoch started with; the last row holds the final parameters' metrics.
#[derive(Debug, Clone)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: [f64; 3],
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
    pub val_horizons: [usize; 3],
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "epoch,train_loss,val_rmse_T{},val_rmse_T{},val_rmse_T{},wall_ms",
            self.val_horizons[0], self.val_horizons[1], self.val_horizons[2]
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{}",
                r.epoch,
                fmt_f64(r.train_loss),
                fmt_f64(r.val_rmse[0]),
                fmt_f64(r.val_rmse[1]),
                fmt_f64(r.val_rmse[2]),
                r.wall_ms
            )?;
        }
        Ok(())
    }
}

impl AugmentedModel {
    /// Wraps a baseline with a fresh encoder and a zero-initialised
    /// augmentation network (Glorot hidden layers, zeroed final layer).
    pub fn new(baseline: Box<dyn TapeBaseline>, encoder: EncoderNet, hidden: &[usize], rng: &mut RngStream) -> Self {
        let mut dims = vec![baseline.nx() + baseline.nu()];
        dims.extend_from_slice(hidden);
        dims.push(baseline.nx());
        let mut f_aug = Mlp::new_glorot(&dims, rng);
        f_aug.zero_final_layer();
        Self { baseline, f_aug, encoder }
    }

    /// Wraps pre-built components (used when loading a stored model).
    pub fn from_parts(baseline: Box<dyn TapeBaseline>, encoder: EncoderNet, f_aug: Mlp) -> Self {
        Self { baseline, f_aug, encoder }
    }

    fn aug_input(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(x.len() + u.len());
        v.rows_mut(0, x.len()).copy_from(x);
        v.rows_mut(x.len(), u.len()).copy_from(u);
        v
    }

    /// One augmented step: `x' = f_base(x, u) + f_aug(x, u)`, `y = h_base(x, u)`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let y = self.baseline.output(x, u);
        let x_next = self.baseline.step(x, u) + self.f_aug.forward(&self.aug_input(x, u))?;
        if !x_next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("augmented state".into()));
        }
        Ok((x_next, y))
    }

    /// Encoder state estimate at sample `k` from the lag window ending at `k-1`.
    pub fn encode_at(&self, data: &IoDataset, k: usize) -> Result<DVector<f64>> {
        let (ylags, ulags) = lag_windows(&data.y, &data.u, k, self.encoder.n_a, self.encoder.n_b)?;
        self.encoder.forward(&ylags, &ulags)
    }

    /// T-step prediction from an encoded initial state: returns
    /// `y_hat_k .. y_hat_{k+T-1}`.
    pub fn rollout(&self, data: &IoDataset, start: usize, horizon: usize) -> Result<Vec<DVector<f64>>> {
        if start + horizon > data.len() {
            return Err(Error::IndexOutOfRange(format!(
                "rollout [{start}, {}) exceeds data length {}",
                start + horizon,
                data.len()
            )));
        }
        let mut x = self.encode_at(data, start)?;
        let mut out = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let u = &data.u[start + t];
            let (x_next, y) = self.step(&x, u)?;
            out.push(y);
            x = x_next;
        }
        Ok(out)
    }

    /// Mean squared output error over sections and steps:
    /// `1/(B T) sum_sections sum_steps ||y - y_hat||^2`.
    ///
    /// Sections are summed in sorted order, so the value is invariant under
    /// permutations of `starts`.
    pub fn loss_tstep(&self, data: &IoDataset, starts: &[usize], horizon: usize) -> Result<f64> {
        if starts.is_empty() {
            return Err(Error::InvalidArg("empty batch".into()));
        }
        let mut order: Vec<usize> = starts.to_vec();
        order.sort_unstable();
        let mut sum = 0.0;
        for &k in &order {
            let pred = self.rollout(data, k, horizon)?;
            for (t, yhat) in pred.iter().enumerate() {
                sum += (yhat - &data.y[k + t]).norm_squared();
            }
        }
        Ok(sum / (starts.len() * horizon) as f64)
    }

    /// Open-loop simulation RMSE: encode once at the first valid sample, then
    /// simulate to the end of the record.
    pub fn rmse_simulation(&self, data: &IoDataset) -> Result<f64> {
        let k0 = self.encoder.n_a.max(self.encoder.n_b);
        if data.len() <= k0 {
            return Err(Error::InsufficientData { needed: k0 + 1, got: data.len() });
        }
        let horizon = data.len() - k0;
        let pred = self.rollout(data, k0, horizon)?;
        let sum: f64 = pred
            .iter()
            .enumerate()
            .map(|(t, yhat)| (yhat - &data.y[k0 + t]).norm_squared())
            .sum();
        Ok((sum / horizon as f64).sqrt())
    }

    /// Loss and flat gradient of `loss_tstep` over the given sections,
    /// differentiated through encoder, augmentation and baseline rollout.
    ///
    /// The gradient layout matches [`AugmentedModel::flat_params`].
    pub fn loss_and_grad(&self, data: &IoDataset, starts: &[usize], horizon: usize) -> Result<(f64, DVector<f64>)> {
        if starts.is_empty() {
            return Err(Error::InvalidArg("empty batch".into()));
        }
        let mut tape = Tape::new();
        let enc_ids = self.encoder.register(&mut tape);
        let aug_ids = self.f_aug.register(&mut tape);
        let stepper = self.baseline.prepare(&mut tape);
        let mut grads = tape.new_grads();
        let weight = 1.0 / (starts.len() * horizon) as f64;
        let mut loss = 0.0;
        let mut seeds = Vec::with_capacity(horizon);
        for &k in starts {
            if k + horizon > data.len() {
                return Err(Error::IndexOutOfRange(format!(
                    "rollout [{k}, {}) exceeds data length {}",
                    k + horizon,
                    data.len()
                )));
            }
            tape.reset();
            seeds.clear();
            let (ylags, ulags) = lag_windows(&data.y, &data.u, k, self.encoder.n_a, self.encoder.n_b)?;
            let mut x = self.encoder.forward_on_tape(&mut tape, &enc_ids, &ylags, &ulags);
            for t in 0..horizon {
                let u = &data.u[k + t];
                let y_node = stepper.output(&mut tape, x, u);
                let err = tape.value(y_node) - &data.y[k + t];
                loss += weight * err.norm_squared();
                seeds.push((y_node, err * (2.0 * weight)));
                if t + 1 < horizon {
                    let base_next = stepper.step(&mut tape, x, u);
                    let aug_in = {
                        let u_leaf = tape.leaf(u.clone());
                        let x_node = x;
                        tape.concat(x_node, u_leaf)
                    };
                    let aug_out = self.f_aug.forward_on_tape(&mut tape, &aug_ids, aug_in);
                    x = tape.add(base_next, aug_out);
                }
            }
            tape.backward(&seeds, &mut grads);
        }
        let mut genc = self.encoder.zeros_like();
        let mut gaug = self.f_aug.zeros_like();
        self.encoder.collect_tape_grads(&enc_ids, &grads, &mut genc);
        self.f_aug.collect_tape_grads(&aug_ids, &grads, &mut gaug);
        let mut flat = Vec::with_capacity(self.param_count());
        genc.write_flat(&mut flat);
        gaug.write_flat(&mut flat);
        Ok((loss, DVector::from_vec(flat)))
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.f_aug.param_count()
    }

    /// Trainable parameters (encoder then augmentation) as one flat vector.
    pub fn flat_params(&self) -> DVector<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        self.encoder.write_flat(&mut flat);
        self.f_aug.write_flat(&mut flat);
        DVector::from_vec(flat)
    }

    pub fn set_flat_params(&mut self, flat: &DVector<f64>) {
        let rest = self.encoder.read_flat(flat.as_slice());
        let rest = self.f_aug.read_flat(rest);
        debug_assert!(rest.is_empty());
    }

    /// Validation T-step RMSE (square root of `loss_tstep`) over evenly
    /// spaced sections.
    pub fn val_rmse(&self, data: &IoDataset, horizon: usize, sections: usize) -> Result<f64> {
        let starts = spaced_starts(self.encoder.n_a.max(self.encoder.n_b), data.len(), horizon, sections)?;
        Ok(self.loss_tstep(data, &starts, horizon)?.sqrt())
    }

    /// Joint training of encoder and augmentation on truncated rollouts.
    ///
    /// Per epoch: sample `batch_size` section starts uniformly with
    /// replacement, take one Adam step on the batch loss gradient, and record
    /// the batch loss plus validation RMSE at the three configured horizons
    /// (both evaluated at the epoch's starting parameters). A final row
    /// reports the trained parameters.
    pub fn train(&mut self, est: &IoDataset, val: &IoDataset, cfg: &TrainConfig) -> Result<TrainHistory> {
        if cfg.n_a != self.encoder.n_a || cfg.n_b != self.encoder.n_b {
            return Err(Error::InvalidArg(format!(
                "config lags ({}, {}) do not match encoder ({}, {})",
                cfg.n_a, cfg.n_b, self.encoder.n_a, self.encoder.n_b
            )));
        }
        let k0 = cfg.n_a.max(cfg.n_b);
        let needed = k0 + cfg.horizon + 1;
        if est.len() < needed {
            return Err(Error::InsufficientData { needed, got: est.len() });
        }
        let max_val_h = *cfg.val_horizons.iter().max().unwrap();
        if val.len() < k0 + max_val_h + 1 {
            return Err(Error::InsufficientData { needed: k0 + max_val_h + 1, got: val.len() });
        }
        let start_range = est.len() - cfg.horizon - k0 + 1;

        let mut history = TrainHistory { rows: Vec::with_capacity(cfg.epochs + 1), val_horizons: cfg.val_horizons };
        if cfg.epochs == 0 {
            return Ok(history);
        }

        let mut rng = RngStream::new(cfg.seed, 40);
        let mut params = self.flat_params();
        let mut adam = Adam::new(params.len(), cfg.lr);
        let clock = Instant::now();
        let mut batch = vec![0usize; cfg.batch_size];
        for epoch in 0..cfg.epochs {
            for slot in batch.iter_mut() {
                *slot = k0 + rng.index(start_range);
            }
            let (train_loss, grad) = self.loss_and_grad(est, &batch, cfg.horizon)?;
            if !train_loss.is_finite() {
                return Err(Error::Diverged { step: epoch });
            }
            let val_rmse = self.val_rmse_triple(val, cfg)?;
            history.rows.push(HistoryRow { epoch, train_loss, val_rmse, wall_ms: clock.elapsed().as_millis() });
            adam.step(&mut params, &grad)?;
            self.set_flat_params(&params);
        }
        // final parameters: probe batch for the loss, fresh validation metrics
        for slot in batch.iter_mut() {
            *slot = k0 + rng.index(start_range);
        }
        let final_loss = self.loss_tstep(est, &batch, cfg.horizon)?;
        let val_rmse = self.val_rmse_triple(val, cfg)?;
        history.rows.push(HistoryRow {
            epoch: cfg.epochs,
            train_loss: final_loss,
            val_rmse,
            wall_ms: clock.elapsed().as_millis(),
        });
        Ok(history)
    }

    fn val_rmse_triple(&self, val: &IoDataset, cfg: &TrainConfig) -> Result<[f64; 3]> {
        let mut out = [0.0; 3];
        for (i, h) in cfg.val_horizons.iter().enumerate() {
            out[i] = self.val_rmse(val, *h, cfg.val_sections)?;
        }
        Ok(out)
    }
}

/// Evenly spaced section starts in `[k0, len - horizon]`.
pub fn spaced_starts(k0: usize, len: usize, horizon: usize, sections: usize) -> Result<Vec<usize>> {
    if len < k0 + horizon {
        return Err(Error::InsufficientData { needed: k0 + horizon, got: len });
    }
    let last = len - horizon;
    let count = sections.max(1).min(last - k0 + 1);
    if count == 1 {
        return Ok(vec![k0]);
    }
    let span = (last - k0) as f64;
    Ok((0..count).map(|i| k0 + (span * i as f64 / (count - 1) as f64).round() as usize).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{Baseline, LtiBaseline};
    use crate::encoder_init::{init_model_based, BaselineModel};
    use crate::lti::LtiSS;
    use crate::msd::{MsdBaseline, MsdParams};
    use nalgebra::DMatrix;

    fn observable_lti(rng: &mut RngStream, nx: usize) -> LtiSS {
        loop {
            let a = rng.normal_matrix(nx, nx) * (0.6 / nx as f64);
            let b = rng.normal_matrix(nx, 1);
            let c = rng.normal_matrix(1, nx);
            let ss = LtiSS::new(a, b, c, DMatrix::zeros(1, 1)).unwrap();
            if crate::lti::observability_rank(&ss, nx) == nx {
                return ss;
            }
        }
    }

    fn lti_world(rng: &mut RngStream, len: usize) -> (LtiSS, IoDataset) {
        let ss = observable_lti(rng, 3);
        let u: Vec<DVector<f64>> = crate::msd::multisine(len, len / 4, (0.0, 5.0), 0.1, rng, 1.0)
            .unwrap()
            .into_iter()
            .map(|v| DVector::from_element(1, v))
            .collect();
        let (y, x) = ss.simulate(&u, &rng.normal_vector(3));
        let ds = IoDataset::new(u, y, 0.1).unwrap().with_traces(Some(x), None).unwrap();
        (ss, ds)
    }

    fn exact_lti_model(ss: &LtiSS, rng: &mut RngStream, n_a: usize) -> AugmentedModel {
        let template = crate::neural::EncoderNet::new(ss.nx(), 1, 1, n_a, n_a, &[8], rng);
        let enc = init_model_based(&template, &BaselineModel::Lti(ss), None, false).unwrap();
        AugmentedModel::new(Box::new(LtiBaseline::new(ss.clone())), enc, &[8], rng)
    }

    #[test]
    fn zero_augmentation_step_equals_baseline() {
        let mut rng = RngStream::new(80, 0);
        let base = MsdBaseline::new(MsdParams::baseline(), 0.1, 0.01).unwrap();
        let enc = crate::neural::EncoderNet::new(4, 1, 1, 3, 3, &[8], &mut rng);
        let model = AugmentedModel::new(Box::new(base.clone()), enc, &[16], &mut rng);
        let x = rng.normal_vector(4) * 0.1;
        let u = rng.normal_vector(1);
        let (x_next, y) = model.step(&x, &u).unwrap();
        assert_eq!(x_next, base.step(&x, &u));
        assert_eq!(y, base.output(&x, &u));
        // at the origin everything stays at the origin
        let (x0, y0) = model.step(&DVector::zeros(4), &DVector::zeros(1)).unwrap();
        assert_eq!(x0, DVector::zeros(4));
        assert_eq!(y0, DVector::zeros(1));
    }

    #[test]
    fn zero_augmentation_trajectories_match_baseline_bitwise() {
        let mut rng = RngStream::new(81, 0);
        let base = MsdBaseline::new(MsdParams::baseline(), 0.1, 0.01).unwrap();
        let enc = crate::neural::EncoderNet::new(4, 1, 1, 3, 3, &[8], &mut rng);
        let model = AugmentedModel::new(Box::new(base.clone()), enc, &[16], &mut rng);
        let mut x_model = rng.normal_vector(4) * 0.05;
        let mut x_base = x_model.clone();
        for k in 0..50 {
            let u = DVector::from_element(1, (0.3 * k as f64).sin());
            let (xn, _) = model.step(&x_model, &u).unwrap();
            x_model = xn;
            x_base = base.step(&x_base, &u);
            assert_eq!(x_model.as_slice(), x_base.as_slice(), "step {k}");
        }
    }

    #[test]
    fn fitted_counter_network_cancels_baseline_step() {
        // fit a small net to -f_base on a box, then check the augmented step
        // nearly vanishes there
        let mut rng = RngStream::new(82, 0);
        let base = MsdBaseline::new(MsdParams::baseline(), 0.1, 0.01).unwrap();
        let mut f_aug = Mlp::new_glorot(&[5, 16, 4], &mut rng);
        let samples: Vec<(DVector<f64>, DVector<f64>)> = (0..400)
            .map(|_| {
                let x = rng.normal_vector(4) * 0.05;
                let u = rng.normal_vector(1) * 0.05;
                let mut inp = DVector::zeros(5);
                inp.rows_mut(0, 4).copy_from(&x);
                inp[4] = u[0];
                (inp, -base.step(&x, &u))
            })
            .collect();
        let mut flat = Vec::new();
        f_aug.write_flat(&mut flat);
        let mut params = DVector::from_vec(flat);
        let mut adam = Adam::new(params.len(), 1e-2);
        for _ in 0..1500 {
            let mut grads = f_aug.zeros_like();
            for (inp, target) in &samples {
                let (out, cache) = f_aug.forward_cache(inp).unwrap();
                let err = (out - target) * (2.0 / samples.len() as f64);
                f_aug.backward(&cache, &err, &mut grads);
            }
            let mut gflat = Vec::new();
            grads.write_flat(&mut gflat);
            adam.step(&mut params, &DVector::from_vec(gflat)).unwrap();
            f_aug.read_flat(params.as_slice());
        }
        let enc = crate::neural::EncoderNet::new(4, 1, 1, 3, 3, &[8], &mut rng);
        let model = AugmentedModel::from_parts(Box::new(base.clone()), enc, f_aug);
        let mut reduction = 0.0;
        let mut count = 0.0;
        for _ in 0..50 {
            let x = rng.normal_vector(4) * 0.05;
            let u = rng.normal_vector(1) * 0.05;
            let (x_next, _) = model.step(&x, &u).unwrap();
            reduction += x_next.norm() / base.step(&x, &u).norm();
            count += 1.0;
        }
        assert!(reduction / count <= 0.25, "augmentation should cancel most of the step");
    }

    #[test]
    fn exact_encoder_rollout_reproduces_lti_world() {
        let mut rng = RngStream::new(83, 0);
        let (ss, ds) = lti_world(&mut rng, 300);
        let model = exact_lti_model(&ss, &mut rng, 5);
        let pred = model.rollout(&ds, 10, 60).unwrap();
        for (t, yhat) in pred.iter().enumerate() {
            let err = (yhat - &ds.y[10 + t]).norm();
            assert!(err <= 1e-7 * ds.y[10 + t].norm().max(1.0), "t = {t}, err = {err}");
        }
        // T = 1: single output from the encoded state
        let one = model.rollout(&ds, 10, 1).unwrap();
        assert_eq!(one.len(), 1);
        assert!((&one[0] - &ds.y[10]).norm() <= 1e-7);
    }

    #[test]
    fn loss_is_zero_for_perfect_predictions_and_shifts_by_offset() {
        let mut rng = RngStream::new(84, 0);
        let (ss, ds) = lti_world(&mut rng, 300);
        let model = exact_lti_model(&ss, &mut rng, 5);
        let starts = [10usize, 50, 120];
        let loss = model.loss_tstep(&ds, &starts, 30).unwrap();
        assert!(loss <= 1e-14, "perfect model loss = {loss}");

        // constant offset delta on every output => loss = delta^2
        let mut shifted = ds.clone();
        for y in &mut shifted.y {
            y.add_scalar_mut(0.1);
        }
        // rebuild windows consistently: use original data for encoding by
        // keeping starts deep enough; encoder sees shifted y, so compare
        // against a fresh exact model of the shifted world instead
        let loss_shift = model.loss_tstep(&shifted, &starts, 30).unwrap();
        // the encoder error also enters, so only a lower bound is exact-ish;
        // verify the dominant term
        assert!(loss_shift >= 0.005, "offset must show up in the loss");
    }

    #[test]
    fn loss_is_permutation_invariant_and_mean_of_sections() {
        let mut rng = RngStream::new(85, 0);
        let (ss, ds) = lti_world(&mut rng, 300);
        let mut model = exact_lti_model(&ss, &mut rng, 5);
        // perturb so the loss is nonzero
        model.encoder.bias.add_scalar_mut(0.05);
        let starts = [12usize, 90, 44, 200, 67];
        let perm = [200usize, 12, 67, 44, 90];
        let a = model.loss_tstep(&ds, &starts, 20).unwrap();
        let b = model.loss_tstep(&ds, &perm, 20).unwrap();
        assert_eq!(a.to_bits(), b.to_bits(), "sorted accumulation must be order-free");
        let mean_of_each: f64 = starts
            .iter()
            .map(|&k| model.loss_tstep(&ds, &[k], 20).unwrap())
            .sum::<f64>()
            / starts.len() as f64;
        approx::assert_abs_diff_eq!(a, mean_of_each, epsilon = 1e-12);
    }

    #[test]
    fn rmse_simulation_equals_sqrt_of_whole_record_loss() {
        let mut rng = RngStream::new(86, 0);
        let (ss, ds) = lti_world(&mut rng, 200);
        let mut model = exact_lti_model(&ss, &mut rng, 5);
        model.encoder.bias.add_scalar_mut(0.03);
        let k0 = 5;
        let horizon = ds.len() - k0;
        let loss = model.loss_tstep(&ds, &[k0], horizon).unwrap();
        let rmse = model.rmse_simulation(&ds).unwrap();
        approx::assert_abs_diff_eq!(rmse, loss.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn rollout_gradient_matches_finite_differences() {
        // 4-state MSD baseline, T = 5, one section; keep the trainable nets
        // small so the sweep stays quick
        let mut rng = RngStream::new(87, 0);
        let base = MsdBaseline::new(MsdParams::baseline(), 0.1, 0.01).unwrap();
        let u: Vec<f64> = (0..40).map(|_| 0.5 * rng.normal()).collect();
        let (y, _) = crate::msd::simulate_system(&MsdParams::system(), &u, 0.1, 0.01, &DVector::zeros(4)).unwrap();
        let uv: Vec<DVector<f64>> = u.iter().map(|&v| DVector::from_element(1, v)).collect();
        let mut rng_noise = RngStream::new(88, 0);
        let (y_noisy, _) = crate::msd::add_noise(&y, 20.0, &mut rng_noise);
        let ds = IoDataset::new(uv, y_noisy, 0.1).unwrap();

        let mut enc = crate::neural::EncoderNet::new(4, 1, 1, 3, 3, &[6], &mut rng);
        enc.w_y = rng.normal_matrix(4, 3) * 0.2;
        enc.w_u = rng.normal_matrix(4, 3) * 0.2;
        enc.bias = rng.normal_vector(4) * 0.05;
        enc.residual = Mlp::new_glorot(&[6, 6, 4], &mut rng);
        let mut model = AugmentedModel::new(Box::new(base), enc, &[6], &mut rng);
        model.f_aug = Mlp::new_glorot(&[5, 6, 4], &mut rng);
        for l in &mut model.f_aug.layers {
            l.w *= 0.3;
        }

        let starts = [7usize];
        let horizon = 5;
        let (loss0, grad) = model.loss_and_grad(&ds, &starts, horizon).unwrap();
        assert!(loss0.is_finite());

        let params = model.flat_params();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            model.set_flat_params(&p);
            let lp = model.loss_tstep(&ds, &starts, horizon).unwrap();
            p[i] -= 2.0 * h;
            model.set_flat_params(&p);
            let lm = model.loss_tstep(&ds, &starts, horizon).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max((fd - grad[i]).abs() / denom);
        }
        model.set_flat_params(&params);
        assert!(worst <= 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut rng = RngStream::new(89, 0);
        let (ss, ds) = lti_world(&mut rng, 260);
        let mut model = exact_lti_model(&ss, &mut rng, 5);
        let before = model.flat_params();
        let cfg = TrainConfig {
            horizon: 10,
            epochs: 3,
            batch_size: 8,
            n_a: 5,
            n_b: 5,
            lr: 0.0,
            seed: 1,
            val_horizons: [5, 10, 20],
            val_sections: 8,
        };
        let hist = model.train(&ds, &ds, &cfg).unwrap();
        assert_eq!(hist.rows.len(), 4);
        assert_eq!(model.flat_params(), before);
        let v0 = hist.rows[0].val_rmse;
        for r in &hist.rows {
            assert_eq!(r.val_rmse, v0, "flat history under lr = 0");
        }
    }

    #[test]
    fn self_consistent_world_keeps_tiny_validation_error() {
        // perfect baseline, exact encoder, no noise: training must not push
        // the validation RMSE above its initial near-zero value
        let mut rng = RngStream::new(90, 0);
        let (ss, ds) = lti_world(&mut rng, 300);
        let mut model = exact_lti_model(&ss, &mut rng, 5);
        let cfg = TrainConfig {
            horizon: 15,
            epochs: 20,
            batch_size: 16,
            n_a: 5,
            n_b: 5,
            lr: 1e-3,
            seed: 2,
            val_horizons: [5, 10, 15],
            val_sections: 16,
        };
        let hist = model.train(&ds, &ds, &cfg).unwrap();
        assert!(hist.rows[0].val_rmse[0] <= 1e-6);
        for r in &hist.rows {
            for v in r.val_rmse {
                assert!(v <= 1e-6, "validation RMSE must stay at the noise floor, got {v}");
            }
        }
    }

    #[test]
    fn training_is_deterministic_for_fixed_seed() {
        let mut rng = RngStream::new(91, 0);
        let (ss, ds) = lti_world(&mut rng, 260);
        let cfg = TrainConfig {
            horizon: 8,
            epochs: 4,
            batch_size: 8,
            n_a: 5,
            n_b: 5,
            lr: 1e-3,
            seed: 7,
            val_horizons: [2, 4, 8],
            val_sections: 8,
        };
        let run = |rng_seed: u64| {
            let mut rng = RngStream::new(rng_seed, 0);
            let mut model = exact_lti_model(&ss, &mut rng, 5);
            model.f_aug = Mlp::new_glorot(&[4, 6, 3], &mut rng);
            model.f_aug.zero_final_layer();
            let hist = model.train(&ds, &ds, &cfg).unwrap();
            (model.flat_params(), hist)
        };
        let (p1, h1) = run(5);
        let (p2, h2) = run(5);
        assert_eq!(p1, p2);
        for (a, b) in h1.rows.iter().zip(&h2.rows) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            for i in 0..3 {
                assert_eq!(a.val_rmse[i].to_bits(), b.val_rmse[i].to_bits());
            }
        }
    }

    #[test]
    fn epochs_zero_returns_empty_history() {
        let mut rng = RngStream::new(92, 0);
        let (ss, ds) = lti_world(&mut rng, 260);
        let mut model = exact_lti_model(&ss, &mut rng, 5);
        let before = model.flat_params();
        let cfg = TrainConfig {
            horizon: 10,
            epochs: 0,
            batch_size: 4,
            n_a: 5,
            n_b: 5,
            lr: 1e-3,
            seed: 1,
            val_horizons: [5, 10, 20],
            val_sections: 4,
        };
        let hist = model.train(&ds, &ds, &cfg).unwrap();
        assert!(hist.rows.is_empty());
        assert_eq!(model.flat_params(), before);
    }
}
