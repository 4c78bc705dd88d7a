//! Discrete-time LTI state-space models, optionally in innovation form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Discrete-time LTI state-space model
///
/// ```text
/// x_{k+1} = A x_k + B u_k            y_k = C x_k + D u_k
/// ```
///
/// With an innovation gain `K` (and innovation covariance `sigma_e`) the
/// model is in innovation form:
///
/// ```text
/// x_{k+1} = A x_k + B u_k + K e_k    y_k = C x_k + D u_k + e_k
/// ```
#[derive(Debug, Clone)]
pub struct LtiSS {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Innovation gain; present iff the model is in innovation form.
    pub k: Option<DMatrix<f64>>,
    /// Innovation covariance, symmetric positive semidefinite.
    pub sigma_e: Option<DMatrix<f64>>,
}

impl LtiSS {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let ss = Self { a, b, c, d, k: None, sigma_e: None };
        ss.validate()?;
        Ok(ss)
    }

    pub fn new_innovation(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        k: DMatrix<f64>,
        sigma_e: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let ss = Self { a, b, c, d, k: Some(k), sigma_e };
        ss.validate()?;
        Ok(ss)
    }

    /// Convenience constructor for single-input single-output scalar models.
    pub fn scalar(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            c: DMatrix::from_element(1, 1, c),
            d: DMatrix::from_element(1, 1, d),
            k: None,
            sigma_e: None,
        }
    }

    pub fn with_gain(mut self, k: DMatrix<f64>) -> Result<Self> {
        self.k = Some(k);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let (nx, ny, nu) = (self.nx(), self.ny(), self.nu());
        if self.a.ncols() != nx {
            return Err(Error::Dim(format!("A must be square, got {}x{}", nx, self.a.ncols())));
        }
        if self.b.nrows() != nx {
            return Err(Error::Dim(format!("B has {} rows, expected {}", self.b.nrows(), nx)));
        }
        if self.c.ncols() != nx {
            return Err(Error::Dim(format!("C has {} cols, expected {}", self.c.ncols(), nx)));
        }
        if self.d.nrows() != ny || self.d.ncols() != nu {
            return Err(Error::Dim(format!(
                "D is {}x{}, expected {}x{}",
                self.d.nrows(),
                self.d.ncols(),
                ny,
                nu
            )));
        }
        if let Some(k) = &self.k {
            if k.nrows() != nx || k.ncols() != ny {
                return Err(Error::Dim(format!(
                    "K is {}x{}, expected {}x{}",
                    k.nrows(),
                    k.ncols(),
                    nx,
                    ny
                )));
            }
        }
        if let Some(s) = &self.sigma_e {
            if s.nrows() != ny || s.ncols() != ny {
                return Err(Error::Dim(format!("sigma_e must be {}x{}", ny, ny)));
            }
            if (s - s.transpose()).amax() > 1e-10 * (1.0 + s.amax()) {
                return Err(Error::InvalidArg("sigma_e must be symmetric".into()));
            }
            let eig = s.clone().symmetric_eigenvalues();
            if eig.min() < -1e-10 * (1.0 + s.amax()) {
                return Err(Error::InvalidArg("sigma_e must be positive semidefinite".into()));
            }
        }
        let finite = self.a.iter().chain(self.b.iter()).chain(self.c.iter()).chain(self.d.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("state-space matrices".into()));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn is_innovation(&self) -> bool {
        self.k.is_some()
    }

    /// Predictor-form transition matrix `A - K C`; equals `A` when no gain is set.
    pub fn a_tilde(&self) -> DMatrix<f64> {
        match &self.k {
            Some(k) => &self.a - k * &self.c,
            None => self.a.clone(),
        }
    }

    /// Predictor-form input matrix `B - K D`; equals `B` when no gain is set.
    pub fn b_tilde(&self) -> DMatrix<f64> {
        match &self.k {
            Some(k) => &self.b - k * &self.d,
            None => self.b.clone(),
        }
    }

    /// Spectral radius of a matrix (largest eigenvalue modulus).
    pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
        m.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    /// Noise-free simulation from `x0`; returns outputs and the state trace.
    pub fn simulate(&self, u: &[DVector<f64>], x0: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut x = x0.clone();
        let mut ys = Vec::with_capacity(u.len());
        let mut xs = Vec::with_capacity(u.len());
        for uk in u {
            ys.push(&self.c * &x + &self.d * uk);
            xs.push(x.clone());
            x = &self.a * &x + &self.b * uk;
        }
        (ys, xs)
    }

    /// Innovation-form simulation with a given innovation sequence `e`.
    ///
    /// Returns outputs and the state trace; `y_k = C x_k + D u_k + e_k`,
    /// `x_{k+1} = A x_k + B u_k + K e_k`.
    pub fn simulate_innovation(
        &self,
        u: &[DVector<f64>],
        e: &[DVector<f64>],
        x0: &DVector<f64>,
    ) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        let k = self
            .k
            .as_ref()
            .ok_or_else(|| Error::InvalidArg("simulate_innovation requires an innovation gain K".into()))?;
        if e.len() != u.len() {
            return Err(Error::Dim(format!("e has {} samples, u has {}", e.len(), u.len())));
        }
        let mut x = x0.clone();
        let mut ys = Vec::with_capacity(u.len());
        let mut xs = Vec::with_capacity(u.len());
        for (uk, ek) in u.iter().zip(e) {
            ys.push(&self.c * &x + &self.d * uk + ek);
            xs.push(x.clone());
            x = &self.a * &x + &self.b * uk + k * ek;
        }
        Ok((ys, xs))
    }
}

/// Numerical rank of the stacked observability matrix
/// `[C A^n; ...; C A; C]` over an `n+1`-sample window.
///
/// A singular value counts toward the rank iff it exceeds
/// `max(rows, cols) * sigma_max * 1e-12`.
pub fn observability_rank(ss: &LtiSS, n: usize) -> usize {
    let o = stacked_observability(&ss.a, &ss.c, n);
    numerical_rank(&o)
}

/// `[C A^n; C A^{n-1}; ...; C]` — block `j` is `C A^{n-j}`.
pub(crate) fn stacked_observability(a: &DMatrix<f64>, c: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let (nx, ny) = (a.nrows(), c.nrows());
    let mut blocks = Vec::with_capacity(n + 1);
    let mut cai = c.clone();
    blocks.push(cai.clone());
    for _ in 0..n {
        cai = &cai * a;
        blocks.push(cai.clone());
    }
    // blocks[i] = C A^i; block row j of O_n is C A^{n-j}
    let mut o = DMatrix::zeros((n + 1) * ny, nx);
    for j in 0..=n {
        o.view_mut((j * ny, 0), (ny, nx)).copy_from(&blocks[n - j]);
    }
    o
}

pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let tol = (m.nrows().max(m.ncols())) as f64 * smax * 1e-12;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}
