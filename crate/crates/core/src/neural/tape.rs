//! Reverse-mode differentiation over vector-valued primitives.
//!
//! A [`Tape`] records the forward pass of an encoder evaluation followed by a
//! model rollout as a sequence of small vector operations (constant and
//! parameter matrix products, additions, tanh, elementwise cubes), then
//! back-propagates output seeds to every registered parameter in one reverse
//! sweep. Constant-matrix and parameter pools survive [`Tape::reset`] so one
//! tape can be reused across the sections of a batch.

use nalgebra::{DMatrix, DVector};

/// Index of a value node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Index of a constant (non-trainable) matrix.
#[derive(Debug, Clone, Copy)]
pub struct CMatId(usize);

/// Index of a trainable matrix parameter.
#[derive(Debug, Clone, Copy)]
pub struct PMatId(pub(crate) usize);

/// Index of a trainable vector parameter.
#[derive(Debug, Clone, Copy)]
pub struct PVecId(pub(crate) usize);

enum Op {
    Leaf,
    /// `M x` with constant `M`.
    MatVecConst(CMatId, NodeId),
    /// `W x` with trainable `W`.
    MatVecParam(PMatId, NodeId),
    /// `x + b` with trainable `b`.
    AddParamVec(PVecId, NodeId),
    Add(NodeId, NodeId),
    /// `a + s * b`.
    AddScaled(NodeId, f64, NodeId),
    Scale(f64, NodeId),
    Tanh(NodeId),
    /// Elementwise `x^3`.
    Cube(NodeId),
    /// `[a; b]`.
    Concat(NodeId, NodeId),
}

struct Node {
    value: DVector<f64>,
    op: Op,
}

/// Gradient accumulators mirroring the tape's parameter pools.
#[derive(Debug, Clone)]
pub struct TapeGrads {
    pub mats: Vec<DMatrix<f64>>,
    pub vecs: Vec<DVector<f64>>,
}

impl TapeGrads {
    pub fn zero(&mut self) {
        for m in &mut self.mats {
            m.fill(0.0);
        }
        for v in &mut self.vecs {
            v.fill(0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in &mut self.mats {
            *m *= s;
        }
        for v in &mut self.vecs {
            *v *= s;
        }
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    const_mats: Vec<DMatrix<f64>>,
    pmats: Vec<DMatrix<f64>>,
    pvecs: Vec<DVector<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops all recorded nodes, keeping constant and parameter pools.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    /// Drops parameters and constants as well; used when re-registering
    /// updated parameter values.
    pub fn reset_all(&mut self) {
        self.nodes.clear();
        self.const_mats.clear();
        self.pmats.clear();
        self.pvecs.clear();
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &DVector<f64> {
        &self.nodes[id.0].value
    }

    pub fn add_const_mat(&mut self, m: DMatrix<f64>) -> CMatId {
        self.const_mats.push(m);
        CMatId(self.const_mats.len() - 1)
    }

    pub fn add_param_mat(&mut self, m: &DMatrix<f64>) -> PMatId {
        self.pmats.push(m.clone());
        PMatId(self.pmats.len() - 1)
    }

    pub fn add_param_vec(&mut self, v: &DVector<f64>) -> PVecId {
        self.pvecs.push(v.clone());
        PVecId(self.pvecs.len() - 1)
    }

    /// Fresh gradient accumulators shaped like the registered parameters.
    pub fn new_grads(&self) -> TapeGrads {
        TapeGrads {
            mats: self.pmats.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect(),
            vecs: self.pvecs.iter().map(|v| DVector::zeros(v.len())).collect(),
        }
    }

    fn push(&mut self, value: DVector<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, v: DVector<f64>) -> NodeId {
        self.push(v, Op::Leaf)
    }

    pub fn matvec_const(&mut self, m: CMatId, x: NodeId) -> NodeId {
        let v = &self.const_mats[m.0] * &self.nodes[x.0].value;
        self.push(v, Op::MatVecConst(m, x))
    }

    pub fn matvec_param(&mut self, p: PMatId, x: NodeId) -> NodeId {
        let v = &self.pmats[p.0] * &self.nodes[x.0].value;
        self.push(v, Op::MatVecParam(p, x))
    }

    pub fn add_pvec(&mut self, p: PVecId, x: NodeId) -> NodeId {
        let v = &self.nodes[x.0].value + &self.pvecs[p.0];
        self.push(v, Op::AddParamVec(p, x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn add_scaled(&mut self, a: NodeId, s: f64, b: NodeId) -> NodeId {
        let mut v = self.nodes[a.0].value.clone();
        v.axpy(s, &self.nodes[b.0].value, 1.0);
        self.push(v, Op::AddScaled(a, s, b))
    }

    pub fn scale(&mut self, s: f64, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value * s;
        self.push(v, Op::Scale(s, a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn cube(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a.0].value.map(|x| x * x * x);
        self.push(v, Op::Cube(a))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut v = DVector::zeros(va.len() + vb.len());
        v.rows_mut(0, va.len()).copy_from(va);
        v.rows_mut(va.len(), vb.len()).copy_from(vb);
        self.push(v, Op::Concat(a, b))
    }

    /// Reverse sweep: propagates the seeded output adjoints back through the
    /// recorded ops, accumulating parameter gradients into `grads`.
    pub fn backward(&self, seeds: &[(NodeId, DVector<f64>)], grads: &mut TapeGrads) {
        let mut adj: Vec<Option<DVector<f64>>> = Vec::with_capacity(self.nodes.len());
        adj.resize_with(self.nodes.len(), || None);
        for (id, g) in seeds {
            accumulate(&mut adj[id.0], g);
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatVecConst(m, x) => {
                    let down = self.const_mats[m.0].tr_mul(&g);
                    accumulate(&mut adj[x.0], &down);
                }
                Op::MatVecParam(p, x) => {
                    grads.mats[p.0].ger(1.0, &g, &self.nodes[x.0].value, 1.0);
                    let down = self.pmats[p.0].tr_mul(&g);
                    accumulate(&mut adj[x.0], &down);
                }
                Op::AddParamVec(p, x) => {
                    grads.vecs[p.0] += &g;
                    accumulate(&mut adj[x.0], &g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], &g);
                    accumulate(&mut adj[b.0], &g);
                }
                Op::AddScaled(a, s, b) => {
                    accumulate(&mut adj[a.0], &g);
                    accumulate_scaled(&mut adj[b.0], *s, &g);
                }
                Op::Scale(s, a) => {
                    accumulate_scaled(&mut adj[a.0], *s, &g);
                }
                Op::Tanh(a) => {
                    let t = &self.nodes[i].value;
                    let down = DVector::from_fn(g.len(), |r, _| g[r] * (1.0 - t[r] * t[r]));
                    accumulate(&mut adj[a.0], &down);
                }
                Op::Cube(a) => {
                    let x = &self.nodes[a.0].value;
                    let down = DVector::from_fn(g.len(), |r, _| g[r] * 3.0 * x[r] * x[r]);
                    accumulate(&mut adj[a.0], &down);
                }
                Op::Concat(a, b) => {
                    let la = self.nodes[a.0].value.len();
                    let lb = self.nodes[b.0].value.len();
                    accumulate(&mut adj[a.0], &g.rows(0, la).into_owned());
                    accumulate(&mut adj[b.0], &g.rows(la, lb).into_owned());
                }
            }
        }
    }
}

fn accumulate(slot: &mut Option<DVector<f64>>, g: &DVector<f64>) {
    match slot {
        Some(v) => *v += g,
        None => *slot = Some(g.clone()),
    }
}

fn accumulate_scaled(slot: &mut Option<DVector<f64>>, s: f64, g: &DVector<f64>) {
    match slot {
        Some(v) => v.axpy(s, g, 1.0),
        None => *slot = Some(g * s),
    }
}
