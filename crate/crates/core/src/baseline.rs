//! Discrete-time baseline models: the physics prior being augmented.

use nalgebra::{DMatrix, DVector};

use crate::lti::LtiSS;
use crate::neural::tape::{NodeId, Tape};

/// A discrete-time nonlinear baseline model `x_{k+1} = f(x, u)`,
/// `y = h(x, u)` with fixed parameters.
pub trait Baseline: Send + Sync {
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn ny(&self) -> usize;

    /// State transition `f(x, u)`.
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// Output map `h(x, u)`.
    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// Analytic Jacobians `(A, B, C, D)` at `(x, u)` when the model provides
    /// them; linearisation falls back to finite differences otherwise.
    fn analytic_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        None
    }
}

/// Records one baseline step/output as tape operations so rollout losses can
/// be differentiated end to end. Handles returned by [`TapeBaseline::prepare`]
/// stay valid across [`Tape::reset`].
pub trait TapeStep: Send {
    fn step(&self, tape: &mut Tape, x: NodeId, u: &DVector<f64>) -> NodeId;
    fn output(&self, tape: &mut Tape, x: NodeId, u: &DVector<f64>) -> NodeId;
}

/// A baseline that can record itself on a [`Tape`].
pub trait TapeBaseline: Baseline {
    fn prepare(&self, tape: &mut Tape) -> Box<dyn TapeStep>;
}

/// An LTI model used as baseline; any innovation gain is ignored (the
/// baseline is simulated open loop).
#[derive(Debug, Clone)]
pub struct LtiBaseline {
    pub ss: LtiSS,
}

impl LtiBaseline {
    pub fn new(ss: LtiSS) -> Self {
        Self { ss }
    }
}

impl Baseline for LtiBaseline {
    fn nx(&self) -> usize {
        self.ss.nx()
    }

    fn nu(&self) -> usize {
        self.ss.nu()
    }

    fn ny(&self) -> usize {
        self.ss.ny()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.ss.a * x + &self.ss.b * u
    }

    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.ss.c * x + &self.ss.d * u
    }

    fn analytic_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        Some((self.ss.a.clone(), self.ss.b.clone(), self.ss.c.clone(), self.ss.d.clone()))
    }
}

struct LtiTapeStep {
    a: crate::neural::tape::CMatId,
    c: crate::neural::tape::CMatId,
    b: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl TapeStep for LtiTapeStep {
    fn step(&self, tape: &mut Tape, x: NodeId, u: &DVector<f64>) -> NodeId {
        let ax = tape.matvec_const(self.a, x);
        let bu = tape.leaf(&self.b * u);
        tape.add(ax, bu)
    }

    fn output(&self, tape: &mut Tape, x: NodeId, u: &DVector<f64>) -> NodeId {
        let cx = tape.matvec_const(self.c, x);
        let du = tape.leaf(&self.d * u);
        tape.add(cx, du)
    }
}

impl TapeBaseline for LtiBaseline {
    fn prepare(&self, tape: &mut Tape) -> Box<dyn TapeStep> {
        Box::new(LtiTapeStep {
            a: tape.add_const_mat(self.ss.a.clone()),
            c: tape.add_const_mat(self.ss.c.clone()),
            b: self.ss.b.clone(),
            d: self.ss.d.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lti_tape_step_matches_direct_step() {
        let mut rng = RngStream::new(17, 0);
        let ss = LtiSS::new(
            rng.normal_matrix(3, 3) * 0.4,
            rng.normal_matrix(3, 2),
            rng.normal_matrix(1, 3),
            rng.normal_matrix(1, 2),
        )
        .unwrap();
        let base = LtiBaseline::new(ss);
        let mut tape = Tape::new();
        let stepper = base.prepare(&mut tape);
        let x = rng.normal_vector(3);
        let u = rng.normal_vector(2);
        let xn = tape.leaf(x.clone());
        let next = stepper.step(&mut tape, xn, &u);
        let out = stepper.output(&mut tape, xn, &u);
        assert_abs_diff_eq!(tape.value(next).clone(), base.step(&x, &u), epsilon = 1e-14);
        assert_abs_diff_eq!(tape.value(out).clone(), base.output(&x, &u), epsilon = 1e-14);
    }
}
