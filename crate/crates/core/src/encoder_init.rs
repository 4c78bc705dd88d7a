//! Encoder initialisation strategies: model-based reconstructability maps,
//! data-based linear least squares, data-based pretraining, and random.
//!
//! All strategies produce only the encoder; the augmentation network is left
//! untouched (it starts zeroed regardless of how the encoder is initialised).

use nalgebra::{DMatrix, DVector};

use crate::baseline::Baseline;
use crate::data::IoDataset;
use crate::error::{Error, Result};
use crate::linearize::{find_equilibrium, init_from_linearization};
use crate::lti::LtiSS;
use crate::neural::encoder::EncoderNet;
use crate::neural::Adam;
use crate::reconstruct::{build_stacked, left_inverse, noiseless_maps, noisy_maps, shift_to_past_window, ReconstructabilityMaps};
use crate::rng::RngStream;

/// The baseline handed to an initialisation strategy: either an explicit LTI
/// model (exact maps) or a general nonlinear model (maps via linearisation).
pub enum BaselineModel<'a> {
    Lti(&'a LtiSS),
    Nonlinear(&'a dyn Baseline),
}

/// Settings for data-based pretraining of the encoder.
#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 50, lr: 1e-3, hidden: vec![16, 16], seed: 0 }
    }
}

/// Which initialisation to run, with per-method options.
#[derive(Debug, Clone)]
pub enum InitMethod {
    Random,
    ModelBased {
        /// Window length of the maps; defaults to `max(n_a, n_b) - 1`.
        n: Option<usize>,
        /// Use the innovation gain when the LTI baseline has one.
        use_noise: bool,
    },
    DataBasedLls,
    DataBasedAnn(PretrainConfig),
}

impl InitMethod {
    pub fn name(&self) -> &'static str {
        match self {
            InitMethod::Random => "random",
            InitMethod::ModelBased { .. } => "model_based",
            InitMethod::DataBasedLls => "data_based_lls",
            InitMethod::DataBasedAnn(_) => "data_based_ann",
        }
    }
}

/// Baseline-simulated record: outputs and states of the baseline driven by
/// the measured input.
#[derive(Debug, Clone)]
pub struct ApproxDataset {
    pub y_hat: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub ts: f64,
}

impl ApproxDataset {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Builds the encoder input stacks ending at sample `k-1`: block `j` of the
/// output stack holds `y[k-1-j]`, likewise for the input stack.
pub fn lag_windows(
    y: &[DVector<f64>],
    u: &[DVector<f64>],
    k: usize,
    n_a: usize,
    n_b: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let lags = n_a.max(n_b);
    if k < lags {
        return Err(Error::IndexOutOfRange(format!("need k >= max(n_a, n_b) = {lags}, got {k}")));
    }
    if k > y.len() {
        return Err(Error::IndexOutOfRange(format!("k = {k} outside data of length {}", y.len())));
    }
    let (ny, nu) = (y[0].len(), u[0].len());
    let mut ylags = DVector::zeros(n_a * ny);
    for j in 0..n_a {
        ylags.rows_mut(j * ny, ny).copy_from(&y[k - 1 - j]);
    }
    let mut ulags = DVector::zeros(n_b * nu);
    for j in 0..n_b {
        ulags.rows_mut(j * nu, nu).copy_from(&u[k - 1 - j]);
    }
    Ok((ylags, ulags))
}

/// Copies shifted reconstructability maps into the encoder's linear part,
/// folding the equilibrium offsets into the bias and zeroing the residual's
/// final layer so the fresh encoder coincides with the map.
///
/// The maps' newest blocks are copied; when the encoder window is shorter on
/// one side the surplus map blocks are dropped, when longer the extra encoder
/// blocks stay zero.
fn load_maps(
    enc: &EncoderNet,
    maps: &ReconstructabilityMaps,
    y_star: &DVector<f64>,
    u_star: &DVector<f64>,
    x_star: &DVector<f64>,
) -> EncoderNet {
    let mut out = enc.clone();
    let (ny, nu, nx) = (enc.ny, enc.nu, enc.nx());
    out.w_y.fill(0.0);
    out.w_u.fill(0.0);
    let blocks_y = (maps.w_y.ncols() / ny).min(enc.n_a);
    for j in 0..blocks_y {
        out.w_y
            .view_mut((0, j * ny), (nx, ny))
            .copy_from(&maps.w_y.view((0, j * ny), (nx, ny)));
    }
    let blocks_u = (maps.w_u.ncols() / nu).min(enc.n_b);
    for j in 0..blocks_u {
        out.w_u
            .view_mut((0, j * nu), (nx, nu))
            .copy_from(&maps.w_u.view((0, j * nu), (nx, nu)));
    }
    // bias so that constant (y*, u*) windows map to x*
    let mut bias = x_star.clone();
    for j in 0..enc.n_a {
        bias -= out.w_y.view((0, j * ny), (nx, ny)) * y_star;
    }
    for j in 0..enc.n_b {
        bias -= out.w_u.view((0, j * nu), (nx, nu)) * u_star;
    }
    out.bias = bias;
    out.residual.zero_final_layer();
    out
}

/// Model-based initialisation: derives reconstructability maps from the
/// baseline (directly for LTI, via linearisation around the equilibrium at
/// zero input otherwise), shifts them to the encoder's past window and loads
/// them into the encoder's linear part.
pub fn init_model_based(
    enc: &EncoderNet,
    baseline: &BaselineModel,
    n: Option<usize>,
    use_noise: bool,
) -> Result<EncoderNet> {
    let n = n.unwrap_or(enc.n_a.max(enc.n_b) - 1);
    match baseline {
        BaselineModel::Lti(ss) => {
            let maps = if use_noise && ss.is_innovation() {
                noisy_maps(ss, n)?
            } else {
                noiseless_maps(ss, n)?
            };
            let shifted = shift_to_past_window(&maps, ss);
            let zero_y = DVector::zeros(ss.ny());
            let zero_u = DVector::zeros(ss.nu());
            let zero_x = DVector::zeros(ss.nx());
            Ok(load_maps(enc, &shifted, &zero_y, &zero_u, &zero_x))
        }
        BaselineModel::Nonlinear(model) => {
            let u_star = DVector::zeros(model.nu());
            let eq = find_equilibrium(*model, &u_star, &DVector::zeros(model.nx()))?;
            let (maps, x_star) = init_from_linearization(*model, &eq, n, None)?;
            let lin = crate::linearize::jacobians(*model, &eq)?;
            let shifted = shift_to_past_window(&maps, &lin.lti);
            Ok(load_maps(enc, &shifted, &eq.y_star, &eq.u_star, &x_star))
        }
    }
}

/// Open-loop simulation of the baseline over the measured input.
///
/// When `x0` is not given, an LTI baseline starts from the state
/// reconstructed out of the first window (`x_0 = O_n^+ (y_win - T_n u_win)`
/// over the window `[y_0 .. y_n]`), a nonlinear baseline from zero.
pub fn simulate_baseline(
    baseline: &BaselineModel,
    data: &IoDataset,
    x0: Option<DVector<f64>>,
) -> Result<ApproxDataset> {
    let lti_holder;
    let (model, x0): (&dyn Baseline, DVector<f64>) = match baseline {
        BaselineModel::Lti(ss) => {
            let x0 = match x0 {
                Some(x) => x,
                None => reconstruct_initial_state(ss, data)?,
            };
            lti_holder = crate::baseline::LtiBaseline::new((*ss).clone());
            (&lti_holder, x0)
        }
        BaselineModel::Nonlinear(model) => {
            let x0 = x0.unwrap_or_else(|| DVector::zeros(model.nx()));
            (*model, x0)
        }
    };
    let mut x = x0;
    let mut y_hat = Vec::with_capacity(data.len());
    let mut x_hat = Vec::with_capacity(data.len());
    for k in 0..data.len() {
        let y = model.output(&x, &data.u[k]);
        if !y.iter().all(|v| v.is_finite()) || !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { step: k });
        }
        y_hat.push(y);
        x_hat.push(x.clone());
        x = model.step(&x, &data.u[k]);
    }
    Ok(ApproxDataset { y_hat, x_hat, u: data.u.clone(), ts: data.ts })
}

fn reconstruct_initial_state(ss: &LtiSS, data: &IoDataset) -> Result<DVector<f64>> {
    let n = ss.nx().min(data.len().saturating_sub(1));
    let plain = LtiSS { k: None, sigma_e: None, ..ss.clone() };
    let ops = build_stacked(&plain, n);
    let o_inv = left_inverse(&ops.o_n)?;
    let w = crate::data::make_window(data, n, n)?;
    Ok(&o_inv * (&w.y_stack - &ops.t_n * &w.u_stack))
}

/// Result of the least-squares initialisation.
#[derive(Debug, Clone)]
pub struct LlsInit {
    pub encoder: EncoderNet,
    /// Mean squared fit residual per target row.
    pub residual_mse: f64,
    pub rank: usize,
    /// Set when the regressor was rank deficient and the minimum-norm
    /// solution was returned.
    pub warning: Option<String>,
}

/// Fits the encoder's linear part by least squares on baseline-simulated
/// data: regressor rows are lag windows of `(y_hat, u)` ending at `k-1`,
/// targets the baseline states `x_hat_k`. Minimum-norm solution via SVD;
/// the residual's final layer is zeroed.
pub fn init_lls(enc: &EncoderNet, approx: &ApproxDataset) -> Result<LlsInit> {
    let (n_a, n_b) = (enc.n_a, enc.n_b);
    let k0 = n_a.max(n_b);
    let n = approx.len();
    if n <= k0 {
        return Err(Error::InsufficientData { needed: k0 + 1, got: n });
    }
    let rows = n - k0;
    let cols = n_a * enc.ny + n_b * enc.nu;
    let mut phi = DMatrix::zeros(rows, cols);
    let mut targets = DMatrix::zeros(rows, enc.nx());
    for (r, k) in (k0..n).enumerate() {
        let (ylags, ulags) = lag_windows(&approx.y_hat, &approx.u, k, n_a, n_b)?;
        phi.view_mut((r, 0), (1, ylags.len())).copy_from(&ylags.transpose());
        phi.view_mut((r, ylags.len()), (1, ulags.len())).copy_from(&ulags.transpose());
        targets.view_mut((r, 0), (1, enc.nx())).copy_from(&approx.x_hat[k].transpose());
    }

    let svd = phi.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = (rows.max(cols)) as f64 * smax * 1e-12;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let theta = svd
        .solve(&targets, tol)
        .map_err(|e| Error::InvalidArg(format!("least squares solve failed: {e}")))?;
    let residual = &phi * &theta - &targets;
    let residual_mse = residual.norm_squared() / rows as f64;

    let mut out = enc.clone();
    // theta rows are [ylags; ulags] coefficients per state: transpose back
    let wt = theta.transpose();
    out.w_y.copy_from(&wt.view((0, 0), (enc.nx(), n_a * enc.ny)));
    out.w_u.copy_from(&wt.view((0, n_a * enc.ny), (enc.nx(), n_b * enc.nu)));
    out.bias.fill(0.0);
    out.residual.zero_final_layer();
    let warning = (rank < cols).then(|| {
        format!("regressor rank {rank} < {cols}; returned the minimum-norm solution")
    });
    Ok(LlsInit { encoder: out, residual_mse, rank, warning })
}

/// Mean squared encoder error over the baseline-simulated record: the
/// pretraining objective.
pub fn encoder_fit_mse(enc: &EncoderNet, approx: &ApproxDataset) -> Result<f64> {
    let k0 = enc.n_a.max(enc.n_b);
    if approx.len() <= k0 {
        return Err(Error::InsufficientData { needed: k0 + 1, got: approx.len() });
    }
    let mut sum = 0.0;
    for k in k0..approx.len() {
        let (ylags, ulags) = lag_windows(&approx.y_hat, &approx.u, k, enc.n_a, enc.n_b)?;
        sum += (enc.forward(&ylags, &ulags)? - &approx.x_hat[k]).norm_squared();
    }
    Ok(sum / (approx.len() - k0) as f64)
}

/// Fits a randomly initialised encoder to the baseline-simulated record with
/// full-batch Adam, minimising the mean squared state-prediction error.
/// Returns the trained encoder and the final objective value.
pub fn init_ann_pretrain(
    enc: &EncoderNet,
    approx: &ApproxDataset,
    cfg: &PretrainConfig,
) -> Result<(EncoderNet, f64)> {
    let k0 = enc.n_a.max(enc.n_b);
    if approx.len() <= k0 {
        return Err(Error::InsufficientData { needed: k0 + 1, got: approx.len() });
    }
    let mut rng = RngStream::new(cfg.seed, 7);
    let mut net = init_random_encoder(enc.nx(), enc.ny, enc.nu, enc.n_a, enc.n_b, &cfg.hidden, &mut rng);

    // materialise the windows once
    let mut samples = Vec::with_capacity(approx.len() - k0);
    for k in k0..approx.len() {
        let (ylags, ulags) = lag_windows(&approx.y_hat, &approx.u, k, enc.n_a, enc.n_b)?;
        samples.push((ylags, ulags, approx.x_hat[k].clone()));
    }
    let count = samples.len() as f64;

    let mut flat = Vec::with_capacity(net.param_count());
    net.write_flat(&mut flat);
    let mut params = DVector::from_vec(flat);
    let mut adam = Adam::new(params.len(), cfg.lr);
    for epoch in 0..cfg.epochs {
        let mut grads = net.zeros_like();
        let mut loss = 0.0;
        for (ylags, ulags, target) in &samples {
            let (out, cache) = net.forward_cache(ylags, ulags)?;
            let err = out - target;
            loss += err.norm_squared();
            net.backward(&cache, &(err * (2.0 / count)), &mut grads);
        }
        if !(loss / count).is_finite() {
            return Err(Error::Diverged { step: epoch });
        }
        let mut gflat = Vec::with_capacity(params.len());
        grads.write_flat(&mut gflat);
        adam.step(&mut params, &DVector::from_vec(gflat))?;
        net.read_flat(params.as_slice());
    }
    let venc = encoder_fit_mse(&net, approx)?;
    if !venc.is_finite() {
        return Err(Error::Diverged { step: cfg.epochs });
    }
    Ok((net, venc))
}

/// Fully random encoder: Glorot weights on every part, including the linear
/// bypass and bias.
pub fn init_random_encoder(
    nx: usize,
    ny: usize,
    nu: usize,
    n_a: usize,
    n_b: usize,
    hidden: &[usize],
    rng: &mut RngStream,
) -> EncoderNet {
    let mut enc = EncoderNet::new(nx, ny, nu, n_a, n_b, hidden, rng);
    let in_dim = (n_a * ny + n_b * nu) as f64;
    let limit = (6.0 / (in_dim + nx as f64)).sqrt();
    enc.w_y = rng.uniform_matrix(nx, n_a * ny, -limit, limit);
    enc.w_u = rng.uniform_matrix(nx, n_b * nu, -limit, limit);
    enc.bias = rng.uniform_matrix(nx, 1, -limit, limit).column(0).into_owned();
    let mut dims = vec![n_a * ny + n_b * nu];
    dims.extend_from_slice(hidden);
    dims.push(nx);
    enc.residual = crate::neural::Mlp::new_glorot(&dims, rng);
    enc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::LtiBaseline;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;

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

    fn multisine_input(rng: &mut RngStream, len: usize) -> Vec<DVector<f64>> {
        let u = crate::msd::multisine(len, len / 4, (0.0, 5.0), 0.1, rng, 1.0).unwrap();
        u.into_iter().map(|v| DVector::from_element(1, v)).collect()
    }

    #[test]
    fn model_based_init_is_exact_on_lti_trajectories() {
        let mut rng = RngStream::new(60, 0);
        let ss = observable_lti(&mut rng, 3);
        let u = multisine_input(&mut rng, 400);
        let (y, x) = ss.simulate(&u, &rng.normal_vector(3));
        let ds = IoDataset::new(u, y, 0.1).unwrap();

        let template = EncoderNet::new(3, 1, 1, 5, 5, &[8], &mut rng);
        let enc = init_model_based(&template, &BaselineModel::Lti(&ss), None, true).unwrap();
        for k in 5..400 {
            let (ylags, ulags) = lag_windows(&ds.y, &ds.u, k, 5, 5).unwrap();
            let xhat = enc.forward(&ylags, &ulags).unwrap();
            let scale = x[k].norm().max(1.0);
            assert!((&xhat - &x[k]).norm() <= 1e-8 * scale, "k = {k}");
        }
    }

    #[test]
    fn zero_gain_init_matches_noiseless_init() {
        let mut rng = RngStream::new(61, 0);
        let ss = observable_lti(&mut rng, 2);
        let ssk = ss.clone().with_gain(DMatrix::zeros(2, 1)).unwrap();
        let template = EncoderNet::new(2, 1, 1, 4, 4, &[8], &mut rng);
        let with_noise = init_model_based(&template, &BaselineModel::Lti(&ssk), None, true).unwrap();
        let without = init_model_based(&template, &BaselineModel::Lti(&ss), None, false).unwrap();
        assert!((&with_noise.w_y - &without.w_y).amax() <= 1e-12);
        assert!((&with_noise.w_u - &without.w_u).amax() <= 1e-12);
    }

    #[test]
    fn nonlinear_init_error_shrinks_with_amplitude() {
        // MSD baseline: exact at the equilibrium, O(amplitude^2) around it.
        let base = crate::msd::MsdBaseline::new(crate::msd::MsdParams::baseline(), 0.1, 0.01).unwrap();
        let mut rng = RngStream::new(62, 0);
        let template = EncoderNet::new(4, 1, 1, 6, 6, &[8], &mut rng);
        let enc = init_model_based(&template, &BaselineModel::Nonlinear(&base), None, false).unwrap();

        let err_at = |amp: f64, rng: &mut RngStream| -> f64 {
            let u: Vec<f64> = (0..150).map(|_| amp * rng.normal()).collect();
            let (y, x) = crate::msd::simulate_system(&base.params, &u, 0.1, 0.01, &DVector::zeros(4)).unwrap();
            let uv: Vec<DVector<f64>> = u.iter().map(|&v| DVector::from_element(1, v)).collect();
            let mut worst = 0.0f64;
            for k in 6..150 {
                let (ylags, ulags) = lag_windows(&y, &uv, k, 6, 6).unwrap();
                let xhat = enc.forward(&ylags, &ulags).unwrap();
                worst = worst.max((&xhat - &x[k]).norm());
            }
            worst
        };
        let mut rng_a = RngStream::new(63, 0);
        let mut rng_b = RngStream::new(63, 0);
        let e_full = err_at(2e-3, &mut rng_a);
        let e_half = err_at(1e-3, &mut rng_b);
        let ratio = e_full / e_half;
        assert!(ratio >= 3.0, "error must shrink at least quadratically, ratio {ratio}");
    }

    #[test]
    fn simulate_baseline_matches_closed_form_lti() {
        let mut rng = RngStream::new(64, 0);
        let ss = observable_lti(&mut rng, 2);
        let u = multisine_input(&mut rng, 60);
        let x0 = rng.normal_vector(2);
        let (y, _) = ss.simulate(&u, &x0);
        let ds = IoDataset::new(u.clone(), y, 0.1).unwrap();
        let approx = simulate_baseline(&BaselineModel::Lti(&ss), &ds, Some(x0.clone())).unwrap();
        // closed form x_k = A^k x0 + sum A^{k-1-j} B u_j
        for k in 0..60 {
            let mut xk = x0.clone();
            for j in 0..k {
                xk = &ss.a * xk + &ss.b * &u[j];
            }
            assert_abs_diff_eq!(approx.x_hat[k], xk, epsilon = 1e-9 * xk.norm().max(1.0));
        }
    }

    #[test]
    fn simulate_baseline_reconstructed_x0_matches_truth_on_clean_data() {
        let mut rng = RngStream::new(65, 0);
        let ss = observable_lti(&mut rng, 3);
        let u = multisine_input(&mut rng, 80);
        let x0 = rng.normal_vector(3);
        let (y, x) = ss.simulate(&u, &x0);
        let ds = IoDataset::new(u, y, 0.1).unwrap();
        let approx = simulate_baseline(&BaselineModel::Lti(&ss), &ds, None).unwrap();
        for k in 0..80 {
            assert!((&approx.x_hat[k] - &x[k]).norm() <= 1e-7 * x[k].norm().max(1.0));
        }
    }

    #[test]
    fn baseline_equal_to_system_reproduces_outputs() {
        let base = crate::msd::MsdBaseline::new(crate::msd::MsdParams::system(), 0.1, 0.01).unwrap();
        let mut rng = RngStream::new(66, 0);
        let u: Vec<f64> = (0..60).map(|_| rng.normal()).collect();
        let (y, _) = crate::msd::simulate_system(&base.params, &u, 0.1, 0.01, &DVector::zeros(4)).unwrap();
        let uv: Vec<DVector<f64>> = u.iter().map(|&v| DVector::from_element(1, v)).collect();
        let ds = IoDataset::new(uv, y.clone(), 0.1).unwrap();
        let approx =
            simulate_baseline(&BaselineModel::Nonlinear(&base), &ds, Some(DVector::zeros(4))).unwrap();
        for k in 0..60 {
            assert_abs_diff_eq!(approx.y_hat[k][0], y[k][0], epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_input_zero_state_msd_baseline_is_identically_zero() {
        let base = crate::msd::MsdBaseline::new(crate::msd::MsdParams::baseline(), 0.1, 0.01).unwrap();
        let u = vec![DVector::zeros(1); 30];
        let y = vec![DVector::zeros(1); 30];
        let ds = IoDataset::new(u, y, 0.1).unwrap();
        let approx = simulate_baseline(&BaselineModel::Nonlinear(&base), &ds, None).unwrap();
        assert!(approx.y_hat.iter().all(|v| v.norm() == 0.0));
        assert!(approx.x_hat.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn lls_zero_targets_give_zero_weights() {
        let mut rng = RngStream::new(67, 0);
        let approx = ApproxDataset {
            y_hat: (0..40).map(|_| rng.normal_vector(1)).collect(),
            x_hat: vec![DVector::zeros(2); 40],
            u: (0..40).map(|_| rng.normal_vector(1)).collect(),
            ts: 0.1,
        };
        let template = EncoderNet::new(2, 1, 1, 3, 3, &[8], &mut rng);
        let fit = init_lls(&template, &approx).unwrap();
        assert!(fit.encoder.w_y.amax() <= 1e-12);
        assert!(fit.encoder.w_u.amax() <= 1e-12);
        assert!(fit.residual_mse <= 1e-24);
    }

    #[test]
    fn lls_degenerate_excitation_warns_and_returns_min_norm() {
        let approx = ApproxDataset {
            y_hat: vec![DVector::from_element(1, 1.0); 50],
            x_hat: vec![DVector::from_element(2, 0.5); 50],
            u: vec![DVector::from_element(1, 1.0); 50],
            ts: 0.1,
        };
        let mut rng = RngStream::new(68, 0);
        let template = EncoderNet::new(2, 1, 1, 3, 3, &[8], &mut rng);
        let fit = init_lls(&template, &approx).unwrap();
        assert!(fit.warning.is_some());
        assert_eq!(fit.rank, 1);
        // minimum-norm solution still fits the constant data exactly
        let pred = fit.encoder.forward(&DVector::from_element(3, 1.0), &DVector::from_element(3, 1.0)).unwrap();
        assert_abs_diff_eq!(pred, DVector::from_element(2, 0.5), epsilon = 1e-10);
    }

    #[test]
    fn lls_predictions_match_model_based_on_held_out_windows() {
        let mut rng = RngStream::new(69, 0);
        let ss = observable_lti(&mut rng, 3);
        let base = LtiBaseline::new(ss.clone());
        let template = EncoderNet::new(3, 1, 1, 5, 5, &[8], &mut rng);

        // estimation data from the baseline itself
        let u_est = multisine_input(&mut rng, 600);
        let (y_est, _) = ss.simulate(&u_est, &DVector::zeros(3));
        let est = IoDataset::new(u_est, y_est, 0.1).unwrap();
        let approx = simulate_baseline(&BaselineModel::Lti(&ss), &est, None).unwrap();
        let fit = init_lls(&template, &approx).unwrap();
        assert!(fit.warning.is_none());

        let mb = init_model_based(&template, &BaselineModel::Lti(&ss), None, false).unwrap();

        // held-out windows from a fresh excitation
        let u_val = multisine_input(&mut rng, 200);
        let x0_val = rng.normal_vector(3) * 0.1;
        let (y_val, _) = ss.simulate(&u_val, &x0_val);
        let val = IoDataset::new(u_val, y_val, 0.1).unwrap();
        let val_approx = simulate_baseline(&BaselineModel::Lti(&ss), &val, None).unwrap();
        for k in 5..200 {
            let (ylags, ulags) = lag_windows(&val_approx.y_hat, &val_approx.u, k, 5, 5).unwrap();
            let p_lls = fit.encoder.forward(&ylags, &ulags).unwrap();
            let p_mb = mb.forward(&ylags, &ulags).unwrap();
            assert!((&p_lls - &p_mb).norm() <= 1e-6 * p_mb.norm().max(1.0), "k = {k}");
        }
        // the hidden baseline check: simulate_baseline used the same model
        assert!(base.nx() == 3);
    }

    #[test]
    fn pretrain_constant_target_converges_to_constant() {
        let mut rng = RngStream::new(70, 0);
        let c = DVector::from_row_slice(&[0.4, -0.2]);
        let approx = ApproxDataset {
            y_hat: (0..60).map(|_| rng.normal_vector(1) * 0.5).collect(),
            x_hat: vec![c.clone(); 60],
            u: (0..60).map(|_| rng.normal_vector(1) * 0.5).collect(),
            ts: 0.1,
        };
        let template = EncoderNet::new(2, 1, 1, 3, 3, &[8], &mut rng);
        let cfg = PretrainConfig { epochs: 3000, lr: 1e-2, hidden: vec![8], seed: 3 };
        let (net, venc) = init_ann_pretrain(&template, &approx, &cfg).unwrap();
        assert!(venc <= 1e-5, "V_enc = {venc}");
        let pred = net.forward(&DVector::zeros(3), &DVector::zeros(3)).unwrap();
        assert!((pred - c).norm() <= 0.05);
    }

    #[test]
    fn random_encoder_is_reproducible_and_finite() {
        let mut a = RngStream::new(71, 5);
        let mut b = RngStream::new(71, 5);
        let mut c = RngStream::new(71, 6);
        let e1 = init_random_encoder(3, 1, 1, 4, 4, &[16, 16], &mut a);
        let e2 = init_random_encoder(3, 1, 1, 4, 4, &[16, 16], &mut b);
        let e3 = init_random_encoder(3, 1, 1, 4, 4, &[16, 16], &mut c);
        assert_eq!(e1.w_y, e2.w_y);
        assert_ne!(e1.w_y, e3.w_y);
        let out = e1.forward(&DVector::from_element(4, 1.0), &DVector::from_element(4, 1.0)).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }
}
