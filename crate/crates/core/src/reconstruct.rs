//! State reconstruction from stacked I/O windows.
//!
//! For an observable LTI model the current state is a linear function of the
//! last `n+1` inputs and outputs. This module assembles the stacked operators
//! of that relation, inverts the observability block to obtain the
//! reconstruction maps `(W_y, W_u)`, and extends the construction to
//! innovation-form models where lagged outputs re-enter the state update
//! through the gain `K`.
//!
//! All stacks follow the descending-time convention of
//! [`StackedWindow`](crate::data::StackedWindow): block 0 is the newest
//! sample, block `n` the oldest.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::StackedWindow;
use crate::error::{Error, Result};
use crate::lti::{numerical_rank, stacked_observability, LtiSS};

/// Stacked operators of the windowed output equation.
///
/// For a window `[y_k; ...; y_{k-n}]` (and the same layout for `u`):
///
/// ```text
/// y_window = O_n x_{k-n} + T_n u_window            (+ Lambda_n y_window + e_window)
/// x_k      = A^n x_{k-n} + r_n u_window            (+ lambda_n y_window)
/// ```
///
/// The parenthesised terms are present only for innovation-form models,
/// in which case every block is built from the predictor matrices
/// `A - KC` and `B - KD`.
#[derive(Debug, Clone)]
pub struct StackedOperators {
    /// `(n+1)ny x nx`; block row `j` is `C A^{n-j}`.
    pub o_n: DMatrix<f64>,
    /// `(n+1)ny x (n+1)nu`; block upper-triangular with `D` on the diagonal.
    pub t_n: DMatrix<f64>,
    /// `nx x (n+1)nu`; input-to-state convolution `[0, B, AB, ..., A^{n-1}B]`.
    pub r_n: DMatrix<f64>,
    /// `(n+1)ny` square; strictly block upper-triangular coupling of lagged
    /// outputs through `K`. Present iff the model has an innovation gain.
    pub lambda_stack: Option<DMatrix<f64>>,
    /// `nx x (n+1)ny`; output-to-state convolution `[0, K, AK, ..., A^{n-1}K]`.
    /// Present iff the model has an innovation gain.
    pub lambda_state: Option<DMatrix<f64>>,
    /// `A^n` (predictor-form `A` when a gain is present).
    pub a_pow_n: DMatrix<f64>,
    pub n: usize,
}

/// The linear maps reconstructing the state from a stacked window:
/// `x_k = W_y * y_stack + W_u * u_stack`.
#[derive(Debug, Clone)]
pub struct ReconstructabilityMaps {
    /// `nx x (n+1)ny`.
    pub w_y: DMatrix<f64>,
    /// `nx x (n+1)nu`.
    pub w_u: DMatrix<f64>,
    pub n: usize,
    /// Whether the maps were built from an innovation-form model.
    pub noisy: bool,
    /// Set when the predictor matrix is unstable and the error-amplification
    /// term `A^n` grows with the window length.
    pub warning: Option<String>,
}

/// Assembles the stacked operators for an `n+1`-sample window.
///
/// When the model carries an innovation gain the blocks use the predictor
/// matrices and the lagged-output couplings are populated.
pub fn build_stacked(ss: &LtiSS, n: usize) -> StackedOperators {
    let (nx, ny, nu) = (ss.nx(), ss.ny(), ss.nu());
    let a = ss.a_tilde();
    let b = ss.b_tilde();

    // powers[i] = A^i
    let mut powers = Vec::with_capacity(n + 1);
    powers.push(DMatrix::identity(nx, nx));
    for i in 1..=n {
        powers.push(&powers[i - 1] * &a);
    }

    let o_n = stacked_observability(&a, &ss.c, n);

    // Block row j of T_n maps u_{k-i} into y_{k-j}:
    //   i = j  -> D,   i > j -> C A^{i-j-1} B.
    let mut t_n = DMatrix::zeros((n + 1) * ny, (n + 1) * nu);
    for j in 0..=n {
        t_n.view_mut((j * ny, j * nu), (ny, nu)).copy_from(&ss.d);
        for i in (j + 1)..=n {
            let blk = &ss.c * &powers[i - j - 1] * &b;
            t_n.view_mut((j * ny, i * nu), (ny, nu)).copy_from(&blk);
        }
    }

    // r_n block i (i >= 1) is A^{i-1} B; block 0 is zero (u_k cannot reach x_k).
    let mut r_n = DMatrix::zeros(nx, (n + 1) * nu);
    for i in 1..=n {
        let blk = &powers[i - 1] * &b;
        r_n.view_mut((0, i * nu), (nx, nu)).copy_from(&blk);
    }

    let (lambda_stack, lambda_state) = match &ss.k {
        Some(k) => {
            let mut ls = DMatrix::zeros((n + 1) * ny, (n + 1) * ny);
            for j in 0..=n {
                for i in (j + 1)..=n {
                    let blk = &ss.c * &powers[i - j - 1] * k;
                    ls.view_mut((j * ny, i * ny), (ny, ny)).copy_from(&blk);
                }
            }
            let mut lst = DMatrix::zeros(nx, (n + 1) * ny);
            for i in 1..=n {
                let blk = &powers[i - 1] * k;
                lst.view_mut((0, i * ny), (nx, ny)).copy_from(&blk);
            }
            (Some(ls), Some(lst))
        }
        None => (None, None),
    };

    StackedOperators {
        o_n,
        t_n,
        r_n,
        lambda_stack,
        lambda_state,
        a_pow_n: powers[n].clone(),
        n,
    }
}

/// Moore-Penrose left inverse of a full-column-rank matrix via SVD.
///
/// Fails with the numerical rank found when the matrix does not have full
/// column rank under the tolerance `max(rows, cols) * sigma_max * 1e-12`.
pub fn left_inverse(o: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let needed = o.ncols();
    let rank = numerical_rank(o);
    if rank < needed {
        return Err(Error::Unobservable { rank, needed });
    }
    let svd = o.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = (o.nrows().max(o.ncols())) as f64 * smax * 1e-12;
    svd.pseudo_inverse(tol)
        .map_err(|e| Error::InvalidArg(format!("pseudo-inverse failed: {e}")))
}

fn stability_warning(a: &DMatrix<f64>, label: &str) -> Option<String> {
    let rho = LtiSS::spectral_radius(a);
    (rho >= 1.0).then(|| {
        format!("{label} has spectral radius {rho:.3} >= 1; reconstruction error amplification grows with n")
    })
}

/// Reconstruction maps for a noise-free model:
/// `W_y = A^n O_n^+`, `W_u = -A^n O_n^+ T_n + r_n`.
///
/// Any innovation gain on `ss` is ignored.
pub fn noiseless_maps(ss: &LtiSS, n: usize) -> Result<ReconstructabilityMaps> {
    let plain = LtiSS { k: None, sigma_e: None, ..ss.clone() };
    let ops = build_stacked(&plain, n);
    let o_inv = left_inverse(&ops.o_n)?;
    let an_oinv = &ops.a_pow_n * &o_inv;
    let w_u = -&an_oinv * &ops.t_n + &ops.r_n;
    Ok(ReconstructabilityMaps {
        w_y: an_oinv,
        w_u,
        n,
        noisy: false,
        warning: stability_warning(&plain.a, "A"),
    })
}

/// Reconstruction maps for an innovation-form model; the conditional
/// expectation of the state given the window:
/// `W_u = -A^n O_n^+ T_n + r_n`, `W_y = A^n O_n^+ (I - Lambda_n) + lambda_n`,
/// with every operator built from the predictor matrices.
pub fn noisy_maps(ss: &LtiSS, n: usize) -> Result<ReconstructabilityMaps> {
    if ss.k.is_none() {
        return Err(Error::InvalidArg("noisy_maps requires an innovation gain K".into()));
    }
    let ops = build_stacked(ss, n);
    let o_inv = left_inverse(&ops.o_n)?;
    let an_oinv = &ops.a_pow_n * &o_inv;
    let lambda_stack = ops.lambda_stack.as_ref().unwrap();
    let lambda_state = ops.lambda_state.as_ref().unwrap();
    let eye = DMatrix::identity(lambda_stack.nrows(), lambda_stack.ncols());
    let w_y = &an_oinv * (eye - lambda_stack) + lambda_state;
    let w_u = -&an_oinv * &ops.t_n + &ops.r_n;
    Ok(ReconstructabilityMaps {
        w_y,
        w_u,
        n,
        noisy: true,
        warning: stability_warning(&ss.a_tilde(), "A - KC"),
    })
}

/// Applies the maps to a stacked window: `W_y y_stack + W_u u_stack`.
pub fn reconstruct(maps: &ReconstructabilityMaps, w: &StackedWindow) -> Result<DVector<f64>> {
    if w.n != maps.n {
        return Err(Error::Dim(format!("window length n={} does not match maps n={}", w.n, maps.n)));
    }
    if maps.w_y.ncols() != w.y_stack.len() || maps.w_u.ncols() != w.u_stack.len() {
        return Err(Error::Dim(format!(
            "window stacks ({}, {}) do not match map columns ({}, {})",
            w.y_stack.len(),
            w.u_stack.len(),
            maps.w_y.ncols(),
            maps.w_u.ncols()
        )));
    }
    Ok(&maps.w_y * &w.y_stack + &maps.w_u * &w.u_stack)
}

/// Re-targets maps built for a window ending at `k` so that they estimate
/// `x_k` from the window ending at `k-1`.
///
/// Composes the one-step state update with the original maps. For a plain
/// model `x_k = A x_{k-1} + B u_{k-1}`; for an innovation-form model
/// `x_k = (A-KC) x_{k-1} + (B-KD) u_{k-1} + K y_{k-1}`, where `u_{k-1}` and
/// `y_{k-1}` are block 0 of the shifted window.
pub fn shift_to_past_window(maps: &ReconstructabilityMaps, ss: &LtiSS) -> ReconstructabilityMaps {
    let (ny, nu) = (ss.ny(), ss.nu());
    let (a, b, k) = if maps.noisy {
        (ss.a_tilde(), ss.b_tilde(), ss.k.clone())
    } else {
        (ss.a.clone(), ss.b.clone(), None)
    };
    let mut w_y = &a * &maps.w_y;
    let mut w_u = &a * &maps.w_u;
    // Block 0 of the past window holds u_{k-1} (and y_{k-1}).
    let mut bu = w_u.view_mut((0, 0), (ss.nx(), nu)).into_owned();
    bu += &b;
    w_u.view_mut((0, 0), (ss.nx(), nu)).copy_from(&bu);
    if let Some(k) = k {
        let mut ky = w_y.view_mut((0, 0), (ss.nx(), ny)).into_owned();
        ky += &k;
        w_y.view_mut((0, 0), (ss.nx(), ny)).copy_from(&ky);
    }
    ReconstructabilityMaps { w_y, w_u, n: maps.n, noisy: maps.noisy, warning: maps.warning.clone() }
}

impl ReconstructabilityMaps {
    /// Writes the maps as CSV: a dimension header followed by the rows of
    /// `W_y` and `W_u` (row-major).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "n,nx,ny_cols,nu_cols,noisy")?;
        writeln!(
            f,
            "{},{},{},{},{}",
            self.n,
            self.w_y.nrows(),
            self.w_y.ncols(),
            self.w_u.ncols(),
            self.noisy as u8
        )?;
        for (name, m) in [("W_y", &self.w_y), ("W_u", &self.w_u)] {
            writeln!(f, "{name}")?;
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| crate::data::fmt_f64(m[(r, c)])).collect();
                writeln!(f, "{}", row.join(","))?;
            }
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines().collect::<std::io::Result<Vec<_>>>()?.into_iter();
        let _hdr = lines.next().ok_or_else(|| Error::Parse("empty maps file".into()))?;
        let dims = lines.next().ok_or_else(|| Error::Parse("missing dims row".into()))?;
        let vals: Vec<usize> = dims
            .trim()
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad dim {s:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 5 {
            return Err(Error::Parse("dims row must have 5 entries".into()));
        }
        let (n, nx, nyc, nuc, noisy) = (vals[0], vals[1], vals[2], vals[3], vals[4] != 0);
        let mut read_matrix = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let tag = lines.next().ok_or_else(|| Error::Parse(format!("missing {name} section")))?;
            if tag.trim() != name {
                return Err(Error::Parse(format!("expected section {name}, found {tag:?}")));
            }
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                let line = lines.next().ok_or_else(|| Error::Parse(format!("{name} truncated at row {r}")))?;
                for (c, s) in line.trim().split(',').enumerate() {
                    if c >= cols {
                        return Err(Error::Parse(format!("{name} row {r} has too many columns")));
                    }
                    m[(r, c)] = s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {s:?}")))?;
                }
            }
            Ok(m)
        };
        let w_y = read_matrix("W_y", nx, nyc)?;
        let w_u = read_matrix("W_u", nx, nuc)?;
        Ok(Self { w_y, w_u, n, noisy, warning: None })
    }
}
