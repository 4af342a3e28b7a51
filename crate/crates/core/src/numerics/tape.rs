use std::cell::RefCell;
use std::rc::Rc;

use super::ops;
use super::tensor::{self, axpy, dot, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Affine { w: usize, x: usize, b: usize },
    MatVec { w: usize, x: usize },
    TMatVec { m: usize, x: usize },
    MatMulNt { x: usize, w: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRows { m: usize, v: usize },
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Concat(Vec<usize>),
    Stack(Vec<usize>),
    Row { m: usize, i: usize },
    Rows { m: usize, start: usize },
    Scatter { v: usize, offset: usize },
    Softmax(usize),
    LogSoftmax(usize),
    Pick { v: usize, i: usize },
    Sum(usize),
    Conv { q: usize, a: usize, start: usize },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations for reverse-mode differentiation.
///
/// A tape is a single-threaded context. Nodes are appended in evaluation
/// order, so replaying them backwards visits every node after all of its
/// consumers.
///
/// An inference tape ([`Tape::inference`]) treats parameters as constants:
/// it computes values without keeping any node differentiable.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient accumulators produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the output.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grads_enabled: true }
    }

    pub fn inference() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grads_enabled: false }
    }

    pub fn grads_enabled(&self) -> bool {
        self.grads_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = match op {
            Op::Leaf => self.grads_enabled,
            Op::Constant => false,
            _ => inputs.iter().any(|&i| nodes[i].needs_grad),
        };
        nodes.push(Node { value: Rc::new(value), op, needs_grad });
        Var(nodes.len() - 1)
    }

    fn val(&self, v: Var) -> Rc<Tensor> {
        self.nodes.borrow()[v.0].value.clone()
    }

    /// Replays the tape in reverse from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.grads_enabled {
            return Err(Error::domain("backward on an inference tape"));
        }
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        if nodes[root.0].value.len() != 1 {
            return Err(Error::domain(format!(
                "backward needs a scalar output, got {:?}",
                nodes[root.0].value.dims()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(nodes[root.0].value.dims(), 1.0));

        for id in (0..=root.0).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let out = &node.value;
            let mut acc = |target: usize, f: &mut dyn FnMut(&mut Tensor)| {
                if !nodes[target].needs_grad {
                    return;
                }
                let slot = grads[target]
                    .get_or_insert_with(|| Tensor::zeros(nodes[target].value.dims()));
                f(slot);
            };
            match node.op {
                Op::Leaf | Op::Constant => unreachable!(),
                Op::Affine { w, x, b } => {
                    let (wv, xv) = (&nodes[w].value, &nodes[x].value);
                    acc(w, &mut |gw| outer_acc(gw, g.data(), xv.data()));
                    acc(x, &mut |gx| tmatvec_acc(gx, wv, g.data()));
                    acc(b, &mut |gb| gb.add_assign(&g));
                }
                Op::MatVec { w, x } => {
                    let (wv, xv) = (&nodes[w].value, &nodes[x].value);
                    acc(w, &mut |gw| outer_acc(gw, g.data(), xv.data()));
                    acc(x, &mut |gx| tmatvec_acc(gx, wv, g.data()));
                }
                Op::TMatVec { m, x } => {
                    let (mv, xv) = (&nodes[m].value, &nodes[x].value);
                    acc(m, &mut |gm| outer_acc(gm, xv.data(), g.data()));
                    acc(x, &mut |gx| {
                        for (i, gi) in gx.data_mut().iter_mut().enumerate() {
                            *gi += dot(mv.row(i), g.data());
                        }
                    });
                }
                Op::MatMulNt { x, w } => {
                    let (xv, wv) = (&nodes[x].value, &nodes[w].value);
                    let m = wv.rows();
                    acc(w, &mut |gw| {
                        for t in 0..xv.rows() {
                            outer_acc(gw, &g.data()[t * m..(t + 1) * m], xv.row(t));
                        }
                    });
                    acc(x, &mut |gx| {
                        let c = xv.cols();
                        for t in 0..xv.rows() {
                            let dst = &mut gx.data_mut()[t * c..(t + 1) * c];
                            for (i, &gti) in g.data()[t * m..(t + 1) * m].iter().enumerate() {
                                axpy(gti, wv.row(i), dst);
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    acc(a, &mut |ga| ga.add_assign(&g));
                    acc(b, &mut |gb| gb.add_assign(&g));
                }
                Op::Sub(a, b) => {
                    acc(a, &mut |ga| ga.add_assign(&g));
                    acc(b, &mut |gb| axpy(-1.0, g.data(), gb.data_mut()));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a].value, &nodes[b].value);
                    acc(a, &mut |ga| hadamard_acc(ga, g.data(), bv.data()));
                    acc(b, &mut |gb| hadamard_acc(gb, g.data(), av.data()));
                }
                Op::AddRows { m, v } => {
                    acc(m, &mut |gm| gm.add_assign(&g));
                    acc(v, &mut |gv| {
                        let c = gv.len();
                        for chunk in g.data().chunks_exact(c) {
                            axpy(1.0, chunk, gv.data_mut());
                        }
                    });
                }
                Op::Scale(a, c) => acc(a, &mut |ga| axpy(c, g.data(), ga.data_mut())),
                Op::Sigmoid(a) => acc(a, &mut |ga| {
                    for ((d, &gi), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *d += gi * y * (1.0 - y);
                    }
                }),
                Op::Tanh(a) => acc(a, &mut |ga| {
                    for ((d, &gi), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *d += gi * (1.0 - y * y);
                    }
                }),
                Op::Concat(ref parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = nodes[p].value.len();
                        acc(p, &mut |gp| axpy(1.0, &g.data()[off..off + len], gp.data_mut()));
                        off += len;
                    }
                }
                Op::Stack(ref rows) => {
                    for (i, &r) in rows.iter().enumerate() {
                        acc(r, &mut |gr| axpy(1.0, g.row(i), gr.data_mut()));
                    }
                }
                Op::Row { m, i } => acc(m, &mut |gm| {
                    let c = gm.cols();
                    axpy(1.0, g.data(), &mut gm.data_mut()[i * c..(i + 1) * c]);
                }),
                Op::Rows { m, start } => acc(m, &mut |gm| {
                    let c = gm.cols();
                    let len = g.len();
                    axpy(1.0, g.data(), &mut gm.data_mut()[start * c..start * c + len]);
                }),
                Op::Scatter { v, offset } => acc(v, &mut |gv| {
                    let len = gv.len();
                    axpy(1.0, &g.data()[offset..offset + len], gv.data_mut());
                }),
                Op::Softmax(a) => acc(a, &mut |ga| {
                    let gy = dot(g.data(), out.data());
                    for ((d, &gi), &y) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *d += y * (gi - gy);
                    }
                }),
                Op::LogSoftmax(a) => acc(a, &mut |ga| {
                    let gs: f64 = g.data().iter().sum();
                    for ((d, &gi), &ly) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *d += gi - ly.exp() * gs;
                    }
                }),
                Op::Pick { v, i } => acc(v, &mut |gv| gv.data_mut()[i] += g.item()),
                Op::Sum(a) => acc(a, &mut |ga| ga.data_mut().iter_mut().for_each(|d| *d += g.item())),
                Op::Conv { q, a, start } => {
                    let (qv, av) = (&nodes[q].value, &nodes[a].value);
                    let (f, k) = (qv.rows(), qv.cols());
                    let half = (k / 2) as isize;
                    let l = av.len() as isize;
                    let rows = g.rows();
                    let src = |r: usize, j: usize| -> Option<usize> {
                        let s = (start + r) as isize + j as isize - half;
                        (s >= 0 && s < l).then_some(s as usize)
                    };
                    acc(q, &mut |gq| {
                        for r in 0..rows {
                            for fi in 0..f {
                                let grf = g.data()[r * f + fi];
                                for j in 0..k {
                                    if let Some(s) = src(r, j) {
                                        gq.data_mut()[fi * k + j] += grf * av.data()[s];
                                    }
                                }
                            }
                        }
                    });
                    acc(a, &mut |ga| {
                        for r in 0..rows {
                            for fi in 0..f {
                                let grf = g.data()[r * f + fi];
                                for j in 0..k {
                                    if let Some(s) = src(r, j) {
                                        ga.data_mut()[s] += grf * qv.get(fi, j);
                                    }
                                }
                            }
                        }
                    });
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// `G += a bᵀ`.
fn outer_acc(gm: &mut Tensor, a: &[f64], b: &[f64]) {
    let c = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            axpy(ai, b, &mut gm.data_mut()[i * c..(i + 1) * c]);
        }
    }
}

/// `gx += Wᵀ g`.
fn tmatvec_acc(gx: &mut Tensor, w: &Tensor, g: &[f64]) {
    for (i, &gi) in g.iter().enumerate() {
        if gi != 0.0 {
            axpy(gi, w.row(i), gx.data_mut());
        }
    }
}

fn hadamard_acc(dst: &mut Tensor, g: &[f64], other: &[f64]) {
    for ((d, &gi), &o) in dst.data_mut().iter_mut().zip(g).zip(other) {
        *d += gi * o;
    }
}

impl Tape {
    /// Records a differentiable leaf (a model parameter).
    pub fn param(&self, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Leaf, &[])
    }

    /// Records a non-differentiable input.
    pub fn constant(&self, t: Tensor) -> Var {
        self.push(t, Op::Constant, &[])
    }

    pub fn value(&self, v: &Var) -> Rc<Tensor> {
        self.val(*v)
    }

    pub fn affine(&self, w: &Var, x: &Var, b: &Var) -> Result<Var> {
        let out = Tensor::affine(&self.val(*w), &self.val(*x), &self.val(*b))?;
        Ok(self.push(out, Op::Affine { w: w.0, x: x.0, b: b.0 }, &[w.0, x.0, b.0]))
    }

    pub fn matvec(&self, w: &Var, x: &Var) -> Result<Var> {
        let out = Tensor::matvec(&self.val(*w), &self.val(*x))?;
        Ok(self.push(out, Op::MatVec { w: w.0, x: x.0 }, &[w.0, x.0]))
    }

    /// `Mᵀ x`.
    pub fn tmatvec(&self, m: &Var, x: &Var) -> Result<Var> {
        let out = Tensor::tmatvec(&self.val(*m), &self.val(*x))?;
        Ok(self.push(out, Op::TMatVec { m: m.0, x: x.0 }, &[m.0, x.0]))
    }

    /// `X Wᵀ`: `W` applied to every row of `X`.
    pub fn matmul_nt(&self, x: &Var, w: &Var) -> Result<Var> {
        let out = Tensor::matmul_nt(&self.val(*x), &self.val(*w))?;
        Ok(self.push(out, Op::MatMulNt { x: x.0, w: w.0 }, &[x.0, w.0]))
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::zip_values(&self.val(*a), &self.val(*b), "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::zip_values(&self.val(*a), &self.val(*b), "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Result<Var> {
        let out = ops::zip_values(&self.val(*a), &self.val(*b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    /// Adds the vector `v` to every row of the matrix `m`.
    pub fn add_rows(&self, m: &Var, v: &Var) -> Result<Var> {
        let out = ops::add_rows_value(&self.val(*m), &self.val(*v))?;
        Ok(self.push(out, Op::AddRows { m: m.0, v: v.0 }, &[m.0, v.0]))
    }

    pub fn scale(&self, a: &Var, c: f64) -> Var {
        let out = self.val(*a).map(|v| v * c);
        self.push(out, Op::Scale(a.0, c), &[a.0])
    }

    pub fn sigmoid(&self, a: &Var) -> Var {
        let out = self.val(*a).map(tensor::sigmoid);
        self.push(out, Op::Sigmoid(a.0), &[a.0])
    }

    pub fn tanh(&self, a: &Var) -> Var {
        let out = self.val(*a).map(f64::tanh);
        self.push(out, Op::Tanh(a.0), &[a.0])
    }

    pub fn concat(&self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| self.val(*p)).collect();
        let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
        let out = ops::concat_values(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(out, Op::Concat(ids.clone()), &ids))
    }

    pub fn stack(&self, rows: &[Var]) -> Result<Var> {
        let vals: Vec<Rc<Tensor>> = rows.iter().map(|p| self.val(*p)).collect();
        let refs: Vec<&Tensor> = vals.iter().map(|v| v.as_ref()).collect();
        let out = ops::stack_values(&refs)?;
        let ids: Vec<usize> = rows.iter().map(|p| p.0).collect();
        Ok(self.push(out, Op::Stack(ids.clone()), &ids))
    }

    pub fn row(&self, m: &Var, i: usize) -> Result<Var> {
        let mv = self.val(*m);
        ops::check_row(&mv, i)?;
        let out = Tensor::vector(mv.row(i).to_vec());
        Ok(self.push(out, Op::Row { m: m.0, i }, &[m.0]))
    }

    pub fn rows(&self, m: &Var, start: usize, end: usize) -> Result<Var> {
        let out = ops::rows_value(&self.val(*m), start, end)?;
        Ok(self.push(out, Op::Rows { m: m.0, start }, &[m.0]))
    }

    /// Places vector `v` at `offset` inside a zero vector of length `len`.
    pub fn scatter(&self, v: &Var, offset: usize, len: usize) -> Result<Var> {
        let out = ops::scatter_value(&self.val(*v), offset, len)?;
        Ok(self.push(out, Op::Scatter { v: v.0, offset }, &[v.0]))
    }

    pub fn softmax(&self, e: &Var) -> Result<Var> {
        let out = Tensor::softmax(&self.val(*e))?;
        Ok(self.push(out, Op::Softmax(e.0), &[e.0]))
    }

    pub fn log_softmax(&self, e: &Var) -> Result<Var> {
        let out = Tensor::log_softmax(&self.val(*e))?;
        Ok(self.push(out, Op::LogSoftmax(e.0), &[e.0]))
    }

    /// Entry `i` of a vector, as a scalar.
    pub fn pick(&self, v: &Var, i: usize) -> Result<Var> {
        let out = ops::pick_value(&self.val(*v), i)?;
        Ok(self.push(out, Op::Pick { v: v.0, i }, &[v.0]))
    }

    pub fn sum(&self, v: &Var) -> Var {
        let out = Tensor::scalar(self.val(*v).data().iter().sum());
        self.push(out, Op::Sum(v.0), &[v.0])
    }

    /// Rows `start..end` of the time-axis convolution of `a` with the
    /// kernel bank `q`.
    pub fn conv1d_time(&self, q: &Var, a: &Var, start: usize, end: usize) -> Result<Var> {
        let out = Tensor::conv1d_time_rows(&self.val(*q), &self.val(*a), start, end)?;
        Ok(self.push(out, Op::Conv { q: q.0, a: a.0, start }, &[q.0, a.0]))
    }
}
