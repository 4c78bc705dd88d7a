//! The 2-DOF mass-spring-damper benchmark: cubic-damped first body, cubic
//! hardening spring between the bodies, force input on mass 1, position of
//! mass 2 measured. Data generation integrates the ODE with classical RK4 at
//! a finer step than the sampling time, excites with a random-phase multisine
//! and perturbs the sampled output with white noise at a prescribed SNR.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::baseline::{Baseline, TapeBaseline, TapeStep};
use crate::data::IoDataset;
use crate::error::{Error, Result};
use crate::neural::tape::{CMatId, NodeId, Tape};
use crate::rng::RngStream;

/// Physical parameters. `d1` is the cubic damping on body 1, `a2` the cubic
/// hardening of the spring connecting body 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsdParams {
    pub m1: f64,
    pub m2: f64,
    pub k1: f64,
    pub k2: f64,
    pub c1: f64,
    pub c2: f64,
    pub a2: f64,
    pub d1: f64,
}

impl MsdParams {
    /// The data-generating system.
    pub fn system() -> Self {
        Self { m1: 0.5, m2: 0.4, k1: 100.0, k2: 100.0, c1: 0.5, c2: 0.5, a2: 1000.0, d1: 0.1 }
    }

    /// The baseline model: identical except for halved cubic damping.
    pub fn baseline() -> Self {
        Self { d1: 0.05, ..Self::system() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m1 <= 0.0 || self.m2 <= 0.0 {
            return Err(Error::InvalidArg("masses must be positive".into()));
        }
        if [self.k1, self.k2, self.c1, self.c2, self.a2.abs(), self.d1.abs()].iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidArg("stiffness/damping must be non-negative".into()));
        }
        Ok(())
    }

    /// Continuous-time matrices of the linear part and the cubic coupling:
    /// `dx/dt = A x + B u + N cube(S x)` with `S x = [v1, p2 - p1]`.
    pub fn continuous_matrices(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0,
                1.0,
                0.0,
                0.0,
                -(self.k1 + self.k2) / self.m1,
                -(self.c1 + self.c2) / self.m1,
                self.k2 / self.m1,
                self.c2 / self.m1,
                0.0,
                0.0,
                0.0,
                1.0,
                self.k2 / self.m2,
                self.c2 / self.m2,
                -self.k2 / self.m2,
                -self.c2 / self.m2,
            ],
        );
        let b = DVector::from_row_slice(&[0.0, 1.0 / self.m1, 0.0, 0.0]);
        let s = DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
        let n = DMatrix::from_row_slice(
            4,
            2,
            &[0.0, 0.0, -self.d1 / self.m1, 0.0, 0.0, 0.0, 0.0, -self.a2 / self.m2],
        );
        (a, b, s, n)
    }

    /// Mechanical energy, including the quartic potential of the hardening
    /// spring; dissipation makes it non-increasing along unforced motion.
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        let (p1, v1, p2, v2) = (x[0], x[1], x[2], x[3]);
        let dp = p2 - p1;
        0.5 * self.m1 * v1 * v1
            + 0.5 * self.m2 * v2 * v2
            + 0.5 * self.k1 * p1 * p1
            + 0.5 * self.k2 * dp * dp
            + 0.25 * self.a2 * dp * dp * dp * dp
    }
}

fn deriv_arr(x: &[f64; 4], u: f64, p: &MsdParams) -> [f64; 4] {
    let (p1, v1, p2, v2) = (x[0], x[1], x[2], x[3]);
    let dp = p2 - p1;
    let dv = v2 - v1;
    [
        v1,
        (-p.k1 * p1 - p.c1 * v1 - p.d1 * v1 * v1 * v1 + p.k2 * dp + p.c2 * dv + u) / p.m1,
        v2,
        (-p.k2 * dp - p.c2 * dv - p.a2 * dp * dp * dp) / p.m2,
    ]
}

/// Time derivative of the state `[p1, v1, p2, v2]` under input force `u`.
pub fn msd_derivative(x: &DVector<f64>, u: f64, p: &MsdParams) -> DVector<f64> {
    let arr = deriv_arr(&[x[0], x[1], x[2], x[3]], u, p);
    DVector::from_row_slice(&arr)
}

fn rk4_arr(x: &[f64; 4], u: f64, h: f64, p: &MsdParams) -> [f64; 4] {
    let k1 = deriv_arr(x, u, p);
    let mid1 = [x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1], x[2] + 0.5 * h * k1[2], x[3] + 0.5 * h * k1[3]];
    let k2 = deriv_arr(&mid1, u, p);
    let mid2 = [x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1], x[2] + 0.5 * h * k2[2], x[3] + 0.5 * h * k2[3]];
    let k3 = deriv_arr(&mid2, u, p);
    let end = [x[0] + h * k3[0], x[1] + h * k3[1], x[2] + h * k3[2], x[3] + h * k3[3]];
    let k4 = deriv_arr(&end, u, p);
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        x[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        x[3] + h / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    ]
}

/// One classical RK4 step of `dx/dt = f(x, u)` with `u` held over the step.
pub fn rk4_step<F>(f: F, x: &DVector<f64>, u: f64, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>, f64) -> DVector<f64>,
{
    let k1 = f(x, u);
    let k2 = f(&(x + &k1 * (0.5 * h)), u);
    let k3 = f(&(x + &k2 * (0.5 * h)), u);
    let k4 = f(&(x + &k3 * h), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Samples the MSD response to a zero-order-hold input: per output sample the
/// ODE advances through `round(ts/ti)` RK4 substeps of size `ti`. The output
/// is the position of mass 2. Returns the sampled outputs and state trace.
pub fn simulate_system(
    p: &MsdParams,
    u: &[f64],
    ts: f64,
    ti: f64,
    x0: &DVector<f64>,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let substeps = (ts / ti).round() as usize;
    if substeps == 0 || (ts / ti - substeps as f64).abs() > 1e-9 {
        return Err(Error::InvalidArg(format!("ts/ti = {} must be a positive integer", ts / ti)));
    }
    let mut x = [x0[0], x0[1], x0[2], x0[3]];
    let mut ys = Vec::with_capacity(u.len());
    let mut xs = Vec::with_capacity(u.len());
    for (k, &uk) in u.iter().enumerate() {
        ys.push(DVector::from_element(1, x[2]));
        xs.push(DVector::from_row_slice(&x));
        for _ in 0..substeps {
            x = rk4_arr(&x, uk, ti, p);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step: k });
        }
    }
    Ok((ys, xs))
}

/// A periodic random-phase multisine on the DFT grid of an `period`-sample
/// record: the first `n_freq` nonzero bins inside `band`, phases i.i.d.
/// uniform on `[0, 2pi)`, scaled to an exact target RMS over one period.
#[derive(Debug, Clone)]
pub struct Multisine {
    samples: Vec<f64>,
}

impl Multisine {
    pub fn new(
        period: usize,
        n_freq: usize,
        band: (f64, f64),
        ts: f64,
        rng: &mut RngStream,
        target_rms: f64,
    ) -> Result<Self> {
        let nyquist = 1.0 / (2.0 * ts);
        if band.1 > nyquist + 1e-12 {
            return Err(Error::InvalidArg(format!("band upper {} Hz exceeds Nyquist {} Hz", band.1, nyquist)));
        }
        if band.0 < 0.0 || band.0 > band.1 {
            return Err(Error::InvalidArg(format!("invalid band [{}, {}]", band.0, band.1)));
        }
        let df = 1.0 / (period as f64 * ts);
        let mut bins = Vec::with_capacity(n_freq);
        for j in 1..=period / 2 {
            let f = j as f64 * df;
            if f >= band.0 - 1e-12 && f <= band.1 + 1e-12 {
                bins.push(j);
                if bins.len() == n_freq {
                    break;
                }
            }
        }
        if bins.len() < n_freq {
            return Err(Error::InvalidArg(format!(
                "requested {} components but only {} grid bins inside [{}, {}] Hz",
                n_freq,
                bins.len(),
                band.0,
                band.1
            )));
        }
        let phases: Vec<f64> = (0..n_freq).map(|_| rng.uniform(0.0, 2.0 * std::f64::consts::PI)).collect();
        let mut samples = vec![0.0; period];
        for (j, phi) in bins.iter().zip(&phases) {
            let w = 2.0 * std::f64::consts::PI * *j as f64 / period as f64;
            for (k, s) in samples.iter_mut().enumerate() {
                *s += (w * k as f64 + phi).cos();
            }
        }
        let rms = (samples.iter().map(|s| s * s).sum::<f64>() / period as f64).sqrt();
        let scale = target_rms / rms;
        for s in &mut samples {
            *s *= scale;
        }
        Ok(Self { samples })
    }

    pub fn period(&self) -> usize {
        self.samples.len()
    }

    /// Periodic evaluation for any sample index.
    pub fn sample(&self, k: usize) -> f64 {
        self.samples[k % self.samples.len()]
    }
}

/// One period of a random-phase multisine; see [`Multisine`].
pub fn multisine(
    n: usize,
    n_freq: usize,
    band: (f64, f64),
    ts: f64,
    rng: &mut RngStream,
    target_rms: f64,
) -> Result<Vec<f64>> {
    Ok(Multisine::new(n, n_freq, band, ts, rng, target_rms)?.samples)
}

/// Adds i.i.d. Gaussian noise with standard deviation
/// `rms(y) * 10^(-snr_db/20)`; returns the noisy signal and the noise trace.
pub fn add_noise(
    y: &[DVector<f64>],
    snr_db: f64,
    rng: &mut RngStream,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n_total: usize = y.iter().map(|v| v.len()).sum();
    let power = y.iter().map(|v| v.norm_squared()).sum::<f64>() / n_total as f64;
    let sigma = power.sqrt() * 10f64.powf(-snr_db / 20.0);
    let e: Vec<DVector<f64>> = y.iter().map(|v| rng.normal_vector(v.len()) * sigma).collect();
    let noisy = y.iter().zip(&e).map(|(v, ek)| v + ek).collect();
    (noisy, e)
}

/// Data-generation settings for the benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub ts: f64,
    pub ti: f64,
    pub n_freq: usize,
    pub band: (f64, f64),
    pub snr_db: f64,
    pub n_est: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub transient_discard: usize,
    pub input_rms: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            ts: 0.1,
            ti: 0.01,
            n_freq: 1666,
            band: (0.0, 5.0),
            snr_db: 20.0,
            n_est: 20_000,
            n_val: 10_000,
            n_test: 10_000,
            transient_discard: 500,
            input_rms: 1.0,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let substeps = self.ts / self.ti;
        if (substeps - substeps.round()).abs() > 1e-9 || substeps < 1.0 {
            return Err(Error::InvalidArg(format!("ts/ti = {substeps} must be a positive integer")));
        }
        if self.band.1 > 1.0 / (2.0 * self.ts) + 1e-12 {
            return Err(Error::InvalidArg("band upper limit exceeds Nyquist".into()));
        }
        if self.n_est == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(Error::InvalidArg("dataset sizes must be positive".into()));
        }
        Ok(())
    }

    /// Period of the excitation grid: the shortest record whose DFT grid
    /// carries `n_freq` bins inside the excitation band, so the components
    /// tile the band exactly.
    pub fn multisine_period(&self) -> usize {
        ((self.n_freq as f64) / (self.band.1 * self.ts)).ceil() as usize
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "ts = {}", self.ts)?;
        writeln!(f, "ti = {}", self.ti)?;
        writeln!(f, "n_freq = {}", self.n_freq)?;
        writeln!(f, "band_low = {}", self.band.0)?;
        writeln!(f, "band_high = {}", self.band.1)?;
        writeln!(f, "snr_db = {}", self.snr_db)?;
        writeln!(f, "n_est = {}", self.n_est)?;
        writeln!(f, "n_val = {}", self.n_val)?;
        writeln!(f, "n_test = {}", self.n_test)?;
        writeln!(f, "transient_discard = {}", self.transient_discard)?;
        writeln!(f, "input_rms = {}", self.input_rms)?;
        writeln!(f, "seed = {}", self.seed)?;
        Ok(())
    }

    pub fn read_manifest(path: &Path) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut cfg = Self::default();
        for line in f.lines() {
            let line = line?;
            let Some((key, val)) = line.split_once('=') else { continue };
            let (key, val) = (key.trim(), val.trim());
            let fv = || val.parse::<f64>().map_err(|_| Error::Parse(format!("bad value for {key}: {val:?}")));
            let uv = || val.parse::<usize>().map_err(|_| Error::Parse(format!("bad value for {key}: {val:?}")));
            match key {
                "ts" => cfg.ts = fv()?,
                "ti" => cfg.ti = fv()?,
                "n_freq" => cfg.n_freq = uv()?,
                "band_low" => cfg.band.0 = fv()?,
                "band_high" => cfg.band.1 = fv()?,
                "snr_db" => cfg.snr_db = fv()?,
                "n_est" => cfg.n_est = uv()?,
                "n_val" => cfg.n_val = uv()?,
                "n_test" => cfg.n_test = uv()?,
                "transient_discard" => cfg.transient_discard = uv()?,
                "input_rms" => cfg.input_rms = fv()?,
                "seed" => cfg.seed = uv()? as u64,
                _ => {}
            }
        }
        Ok(cfg)
    }
}

/// The three benchmark splits.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub est: IoDataset,
    pub val: IoDataset,
    pub test: IoDataset,
}

fn generate_split(
    params: &MsdParams,
    cfg: &SimConfig,
    n_keep: usize,
    input_stream: u64,
    noise_stream: u64,
) -> Result<IoDataset> {
    let mut input_rng = RngStream::new(cfg.seed, input_stream);
    let ms = Multisine::new(cfg.multisine_period(), cfg.n_freq, cfg.band, cfg.ts, &mut input_rng, cfg.input_rms)?;
    let n_total = n_keep + cfg.transient_discard;
    let u_full: Vec<f64> = (0..n_total).map(|k| ms.sample(k)).collect();
    let (y_full, x_full) = simulate_system(params, &u_full, cfg.ts, cfg.ti, &DVector::zeros(4))?;

    let keep = cfg.transient_discard..n_total;
    let y_clean: Vec<DVector<f64>> = y_full[keep.clone()].to_vec();
    let mut noise_rng = RngStream::new(cfg.seed, noise_stream);
    let (y_noisy, e) = add_noise(&y_clean, cfg.snr_db, &mut noise_rng);
    let u: Vec<DVector<f64>> = u_full[keep.clone()].iter().map(|&v| DVector::from_element(1, v)).collect();
    IoDataset::new(u, y_noisy, cfg.ts)?.with_traces(Some(x_full[keep].to_vec()), Some(e))
}

/// Generates estimation, validation and test splits with independent
/// excitation phases and noise realisations, dropping the initial transient
/// from each record.
pub fn make_datasets(params: &MsdParams, cfg: &SimConfig) -> Result<Datasets> {
    cfg.validate()?;
    params.validate()?;
    Ok(Datasets {
        est: generate_split(params, cfg, cfg.n_est, 10, 11)?,
        val: generate_split(params, cfg, cfg.n_val, 20, 21)?,
        test: generate_split(params, cfg, cfg.n_test, 30, 31)?,
    })
}

/// The MSD as a discrete-time baseline: one step advances the ODE through
/// `ts/ti` RK4 substeps under held input; the output is the position of
/// mass 2.
#[derive(Debug, Clone)]
pub struct MsdBaseline {
    pub params: MsdParams,
    pub ts: f64,
    pub ti: f64,
    substeps: usize,
}

impl MsdBaseline {
    pub fn new(params: MsdParams, ts: f64, ti: f64) -> Result<Self> {
        let substeps = (ts / ti).round() as usize;
        if substeps == 0 || (ts / ti - substeps as f64).abs() > 1e-9 {
            return Err(Error::InvalidArg(format!("ts/ti = {} must be a positive integer", ts / ti)));
        }
        params.validate()?;
        Ok(Self { params, ts, ti, substeps })
    }
}

impl Baseline for MsdBaseline {
    fn nx(&self) -> usize {
        4
    }

    fn nu(&self) -> usize {
        1
    }

    fn ny(&self) -> usize {
        1
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut arr = [x[0], x[1], x[2], x[3]];
        for _ in 0..self.substeps {
            arr = rk4_arr(&arr, u[0], self.ti, &self.params);
        }
        DVector::from_row_slice(&arr)
    }

    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[2])
    }
}

struct MsdTapeStep {
    a: CMatId,
    s: CMatId,
    n: CMatId,
    c: CMatId,
    b: DVector<f64>,
    h: f64,
    substeps: usize,
}

impl MsdTapeStep {
    fn deriv(&self, tape: &mut Tape, x: NodeId, bu: NodeId) -> NodeId {
        let ax = tape.matvec_const(self.a, x);
        let sx = tape.matvec_const(self.s, x);
        let sx3 = tape.cube(sx);
        let nterm = tape.matvec_const(self.n, sx3);
        let lin = tape.add(ax, nterm);
        tape.add(lin, bu)
    }
}

impl TapeStep for MsdTapeStep {
    fn step(&self, tape: &mut Tape, x: NodeId, u: &DVector<f64>) -> NodeId {
        let bu = tape.leaf(&self.b * u[0]);
        let h = self.h;
        let mut x = x;
        for _ in 0..self.substeps {
            let k1 = self.deriv(tape, x, bu);
            let mid1 = tape.add_scaled(x, 0.5 * h, k1);
            let k2 = self.deriv(tape, mid1, bu);
            let mid2 = tape.add_scaled(x, 0.5 * h, k2);
            let k3 = self.deriv(tape, mid2, bu);
            let end = tape.add_scaled(x, h, k3);
            let k4 = self.deriv(tape, end, bu);
            let mut xn = tape.add_scaled(x, h / 6.0, k1);
            xn = tape.add_scaled(xn, h / 3.0, k2);
            xn = tape.add_scaled(xn, h / 3.0, k3);
            xn = tape.add_scaled(xn, h / 6.0, k4);
            x = xn;
        }
        x
    }

    fn output(&self, tape: &mut Tape, x: NodeId, _u: &DVector<f64>) -> NodeId {
        tape.matvec_const(self.c, x)
    }
}

impl TapeBaseline for MsdBaseline {
    fn prepare(&self, tape: &mut Tape) -> Box<dyn TapeStep> {
        let (a, b, s, n) = self.params.continuous_matrices();
        Box::new(MsdTapeStep {
            a: tape.add_const_mat(a),
            s: tape.add_const_mat(s),
            n: tape.add_const_mat(n),
            c: tape.add_const_mat(DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 1.0, 0.0])),
            b,
            h: self.ti,
            substeps: self.substeps,
        })
    }
}
