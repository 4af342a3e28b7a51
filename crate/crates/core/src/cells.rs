//! LSTMP and highway-LSTM transitions and full-sequence layer drivers.
//!
//! An LSTMP layer is a peephole LSTM whose cell output `m_t` is reduced
//! by a linear projection to the recurrent activation `r_t`. A highway
//! layer adds a carry gate `d_t` that feeds either the cell state of the
//! layer below (when that layer is itself recurrent) or the layer input
//! directly into the cell update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{params, Init};

/// Weights of one LSTMP layer in one direction.
///
/// Peepholes (`w_ci`, `w_cf`, `w_co`) are diagonal and stored as vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmpParams<T> {
    pub w_xi: T,
    pub w_xf: T,
    pub w_xc: T,
    pub w_xo: T,
    pub w_mi: T,
    pub w_mf: T,
    pub w_mc: T,
    pub w_mo: T,
    pub w_ci: T,
    pub w_cf: T,
    pub w_co: T,
    pub b_i: T,
    pub b_f: T,
    pub b_c: T,
    pub b_o: T,
    pub w_rm: T,
}

params!(LstmpParams {
    leaf w_xi, leaf w_xf, leaf w_xc, leaf w_xo,
    leaf w_mi, leaf w_mf, leaf w_mc, leaf w_mo,
    leaf w_ci, leaf w_cf, leaf w_co,
    leaf b_i, leaf b_f, leaf b_c, leaf b_o,
    leaf w_rm,
});

/// An LSTMP layer plus its carry gate. `w_d2` is present exactly when
/// the layer below is recurrent and the carry reads its cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct HlstmParams<T> {
    pub lstm: LstmpParams<T>,
    pub w_xd: T,
    pub w_d1: T,
    pub w_d2: Option<T>,
    pub b_d: T,
}

params!(HlstmParams { node lstm, leaf w_xd, leaf w_d1, opt w_d2, leaf b_d });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Lstmp,
    /// Carry from the lower layer's cell state.
    HighwayOverLstm,
    /// Carry from the layer input; requires input dim == cell dim.
    HighwayOverInput,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Lstmp(LstmpParams<T>),
    Highway(HlstmParams<T>),
}

impl<T> LayerParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> LayerParams<U> {
        match self {
            LayerParams::Lstmp(p) => LayerParams::Lstmp(p.map(prefix, f)),
            LayerParams::Highway(p) => LayerParams::Highway(p.map(prefix, f)),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        match self {
            LayerParams::Lstmp(p) => p.for_each_mut(prefix, f),
            LayerParams::Highway(p) => p.for_each_mut(prefix, f),
        }
    }

    pub fn lstm(&self) -> &LstmpParams<T> {
        match self {
            LayerParams::Lstmp(p) => p,
            LayerParams::Highway(p) => &p.lstm,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            LayerParams::Lstmp(_) => LayerKind::Lstmp,
            LayerParams::Highway(p) if p.w_d2.is_some() => LayerKind::HighwayOverLstm,
            LayerParams::Highway(_) => LayerKind::HighwayOverInput,
        }
    }
}

/// Dimensions of a layer: input, cell, projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerDims {
    pub input: usize,
    pub cell: usize,
    pub proj: usize,
}

impl LstmpParams<Tensor> {
    /// Uniform weights and peepholes, forget bias `forget_bias`, other
    /// biases zero.
    pub fn init(init: &mut Init<'_>, dims: LayerDims, forget_bias: f64) -> Self {
        let LayerDims { input, cell, proj } = dims;
        Self {
            w_xi: init.uniform(&[cell, input]),
            w_xf: init.uniform(&[cell, input]),
            w_xc: init.uniform(&[cell, input]),
            w_xo: init.uniform(&[cell, input]),
            w_mi: init.uniform(&[cell, proj]),
            w_mf: init.uniform(&[cell, proj]),
            w_mc: init.uniform(&[cell, proj]),
            w_mo: init.uniform(&[cell, proj]),
            w_ci: init.uniform(&[cell]),
            w_cf: init.uniform(&[cell]),
            w_co: init.uniform(&[cell]),
            b_i: init.constant(&[cell], 0.0),
            b_f: init.constant(&[cell], forget_bias),
            b_c: init.constant(&[cell], 0.0),
            b_o: init.constant(&[cell], 0.0),
            w_rm: init.uniform(&[proj, cell]),
        }
    }

    /// Checks every shape against the input matrices and returns the
    /// layer dimensions.
    pub fn dims(&self) -> Result<LayerDims> {
        let (cell, input) = self.w_xi.expect_matrix("w_xi")?;
        let (proj, cell2) = self.w_rm.expect_matrix("w_rm")?;
        let bad = |name: &str, t: &Tensor| {
            Error::config(format!("LSTMP parameter {name} has dims {:?}", t.dims()))
        };
        if cell2 != cell {
            return Err(bad("w_rm", &self.w_rm));
        }
        if proj > cell {
            return Err(Error::config(format!("projection {proj} exceeds cell {cell}")));
        }
        for (name, t) in [("w_xf", &self.w_xf), ("w_xc", &self.w_xc), ("w_xo", &self.w_xo)] {
            if t.dims() != [cell, input] {
                return Err(bad(name, t));
            }
        }
        for (name, t) in [("w_mi", &self.w_mi), ("w_mf", &self.w_mf), ("w_mc", &self.w_mc), ("w_mo", &self.w_mo)] {
            if t.dims() != [cell, proj] {
                return Err(bad(name, t));
            }
        }
        let vectors = [
            ("w_ci", &self.w_ci),
            ("w_cf", &self.w_cf),
            ("w_co", &self.w_co),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_c", &self.b_c),
            ("b_o", &self.b_o),
        ];
        for (name, t) in vectors {
            if t.dims() != [cell] {
                return Err(bad(name, t));
            }
        }
        Ok(LayerDims { input, cell, proj })
    }

    /// All parameters zero.
    pub fn zeros(dims: LayerDims) -> Self {
        let LayerDims { input, cell, proj } = dims;
        let z = Tensor::zeros;
        Self {
            w_xi: z(&[cell, input]),
            w_xf: z(&[cell, input]),
            w_xc: z(&[cell, input]),
            w_xo: z(&[cell, input]),
            w_mi: z(&[cell, proj]),
            w_mf: z(&[cell, proj]),
            w_mc: z(&[cell, proj]),
            w_mo: z(&[cell, proj]),
            w_ci: z(&[cell]),
            w_cf: z(&[cell]),
            w_co: z(&[cell]),
            b_i: z(&[cell]),
            b_f: z(&[cell]),
            b_c: z(&[cell]),
            b_o: z(&[cell]),
            w_rm: z(&[proj, cell]),
        }
    }
}

impl HlstmParams<Tensor> {
    pub fn init(init: &mut Init<'_>, dims: LayerDims, over_lstm: bool, forget_bias: f64, carry_bias: f64) -> Self {
        Self {
            lstm: LstmpParams::init(init, dims, forget_bias),
            w_xd: init.uniform(&[dims.cell, dims.input]),
            w_d1: init.uniform(&[dims.cell]),
            w_d2: over_lstm.then(|| init.uniform(&[dims.cell])),
            b_d: init.constant(&[dims.cell], carry_bias),
        }
    }

    pub fn zeros(dims: LayerDims, over_lstm: bool) -> Self {
        Self {
            lstm: LstmpParams::zeros(dims),
            w_xd: Tensor::zeros(&[dims.cell, dims.input]),
            w_d1: Tensor::zeros(&[dims.cell]),
            w_d2: over_lstm.then(|| Tensor::zeros(&[dims.cell])),
            b_d: Tensor::zeros(&[dims.cell]),
        }
    }

    pub fn dims(&self) -> Result<LayerDims> {
        let dims = self.lstm.dims()?;
        if self.w_xd.dims() != [dims.cell, dims.input] {
            return Err(Error::config(format!("carry weight w_xd has dims {:?}", self.w_xd.dims())));
        }
        for (name, t) in [("w_d1", Some(&self.w_d1)), ("w_d2", self.w_d2.as_ref()), ("b_d", Some(&self.b_d))] {
            if let Some(t) = t {
                if t.dims() != [dims.cell] {
                    return Err(Error::config(format!("carry parameter {name} has dims {:?}", t.dims())));
                }
            }
        }
        Ok(dims)
    }
}

impl LayerParams<Tensor> {
    pub fn dims(&self) -> Result<LayerDims> {
        let dims = match self {
            LayerParams::Lstmp(p) => p.dims()?,
            LayerParams::Highway(p) => p.dims()?,
        };
        if self.kind() == LayerKind::HighwayOverInput && dims.input != dims.cell {
            return Err(over_input_dims_error(dims));
        }
        Ok(dims)
    }

    pub fn bind(&self, tape: &Tape) -> LayerParams<Var> {
        self.map("", &mut |_, t| tape.param(t))
    }
}

fn over_input_dims_error(dims: LayerDims) -> Error {
    Error::config(format!(
        "a highway layer carrying its input needs input dim == cell dim (d ⊙ x), got input {} vs cell {}",
        dims.input, dims.cell
    ))
}

/// Recurrent state after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<T> {
    pub c: T,
    pub r: T,
    pub m: T,
}

impl CellState<Tensor> {
    pub fn zeros(cell: usize, proj: usize) -> Self {
        Self { c: Tensor::zeros(&[cell]), r: Tensor::zeros(&[proj]), m: Tensor::zeros(&[cell]) }
    }
}

impl CellState<Var> {
    pub fn zeros_on(tape: &Tape, cell: usize, proj: usize) -> Self {
        Self {
            c: tape.constant(Tensor::zeros(&[cell])),
            r: tape.constant(Tensor::zeros(&[proj])),
            m: tape.constant(Tensor::zeros(&[cell])),
        }
    }

    pub fn values(&self, tape: &Tape) -> CellState<Tensor> {
        CellState {
            c: tape.value(&self.c).as_ref().clone(),
            r: tape.value(&self.r).as_ref().clone(),
            m: tape.value(&self.m).as_ref().clone(),
        }
    }
}

/// Where the carry gate's highway input comes from.
pub enum CarrySource<'a> {
    None,
    /// Cell state `c_t` of the layer below.
    Below(&'a Var),
    /// The layer input `x_t`.
    Input(&'a Var),
}

/// Input-dependent gate pre-activations `W_x· x_t + b_·` for one step.
pub struct GateInputs {
    pub i: Var,
    pub f: Var,
    pub c: Var,
    pub o: Var,
    pub d: Option<Var>,
}

impl GateInputs {
    pub fn for_step(tape: &Tape, p: &LayerParams<Var>, x: &Var) -> Result<Self> {
        let l = p.lstm();
        let d = match p {
            LayerParams::Highway(h) => Some(tape.affine(&h.w_xd, x, &h.b_d)?),
            LayerParams::Lstmp(_) => None,
        };
        Ok(Self {
            i: tape.affine(&l.w_xi, x, &l.b_i)?,
            f: tape.affine(&l.w_xf, x, &l.b_f)?,
            c: tape.affine(&l.w_xc, x, &l.b_c)?,
            o: tape.affine(&l.w_xo, x, &l.b_o)?,
            d,
        })
    }
}

/// Gate pre-activations for a whole sequence, one row per frame.
struct SeqGateInputs {
    i: Var,
    f: Var,
    c: Var,
    o: Var,
    d: Option<Var>,
}

impl SeqGateInputs {
    fn new(tape: &Tape, p: &LayerParams<Var>, xs: &Var) -> Result<Self> {
        let l = p.lstm();
        let proj = |w: &Var, b: &Var| -> Result<Var> {
            let xw = tape.matmul_nt(xs, w)?;
            tape.add_rows(&xw, b)
        };
        let d = match p {
            LayerParams::Highway(h) => Some(proj(&h.w_xd, &h.b_d)?),
            LayerParams::Lstmp(_) => None,
        };
        Ok(Self {
            i: proj(&l.w_xi, &l.b_i)?,
            f: proj(&l.w_xf, &l.b_f)?,
            c: proj(&l.w_xc, &l.b_c)?,
            o: proj(&l.w_xo, &l.b_o)?,
            d,
        })
    }

    fn at(&self, tape: &Tape, t: usize) -> Result<GateInputs> {
        Ok(GateInputs {
            i: tape.row(&self.i, t)?,
            f: tape.row(&self.f, t)?,
            c: tape.row(&self.c, t)?,
            o: tape.row(&self.o, t)?,
            d: self.d.as_ref().map(|d| tape.row(d, t)).transpose()?,
        })
    }
}

/// One recurrent step given precomputed input contributions.
///
/// ```text
/// i = σ(gx_i + W_mi r + w_ci ⊙ c_prev)
/// f = σ(gx_f + W_mf r + w_cf ⊙ c_prev)
/// c = f ⊙ c_prev + i ⊙ tanh(gx_c + W_mc r) [+ d ⊙ carry]
/// o = σ(gx_o + W_mo r + w_co ⊙ c)
/// m = o ⊙ tanh(c),  r = W_rm m
/// ```
/// with `d = σ(gx_d + w_d1 ⊙ c_prev [+ w_d2 ⊙ c_below])` for highway layers.
pub fn step_with_inputs(
    tape: &Tape,
    p: &LayerParams<Var>,
    gx: GateInputs,
    prev: &CellState<Var>,
    carry: CarrySource<'_>,
) -> Result<CellState<Var>> {
    let l = p.lstm();
    let gate = |pre: &Var, w_m: &Var, peep: &Var, c: &Var| -> Result<Var> {
        let a = tape.add(pre, &tape.matvec(w_m, &prev.r)?)?;
        let a = tape.add(&a, &tape.mul(peep, c)?)?;
        Ok(tape.sigmoid(&a))
    };
    let i = gate(&gx.i, &l.w_mi, &l.w_ci, &prev.c)?;
    let f = gate(&gx.f, &l.w_mf, &l.w_cf, &prev.c)?;
    let g = tape.tanh(&tape.add(&gx.c, &tape.matvec(&l.w_mc, &prev.r)?)?);
    let mut c = tape.add(&tape.mul(&f, &prev.c)?, &tape.mul(&i, &g)?)?;

    match (p, carry) {
        (LayerParams::Lstmp(_), CarrySource::None) => {}
        (LayerParams::Highway(h), carry) => {
            let gd = gx.d.as_ref().ok_or_else(|| Error::config("highway step without carry input"))?;
            let mut a = tape.add(gd, &tape.mul(&h.w_d1, &prev.c)?)?;
            let src = match (carry, h.w_d2.as_ref()) {
                (CarrySource::Below(below), Some(w_d2)) => {
                    a = tape.add(&a, &tape.mul(w_d2, below)?)?;
                    below
                }
                (CarrySource::Input(x), None) => x,
                (CarrySource::Below(_), None) => {
                    return Err(Error::config("carry from the layer below needs the w_d2 peephole"))
                }
                (CarrySource::Input(_), Some(_)) => {
                    return Err(Error::config("a highway layer carrying its input must not have w_d2"))
                }
                (CarrySource::None, _) => return Err(Error::config("highway step without a carry source")),
            };
            let d = tape.sigmoid(&a);
            c = tape.add(&c, &tape.mul(&d, src)?)?;
        }
        (LayerParams::Lstmp(_), _) => return Err(Error::config("plain LSTMP layer given a carry source")),
    }

    let o = gate(&gx.o, &l.w_mo, &l.w_co, &c)?;
    let m = tape.mul(&o, &tape.tanh(&c))?;
    let r = tape.matvec(&l.w_rm, &m)?;
    Ok(CellState { c, r, m })
}

/// One step of any layer kind from the raw input `x_t`.
pub fn step_on(
    tape: &Tape,
    p: &LayerParams<Var>,
    x: &Var,
    prev: &CellState<Var>,
    below_c: Option<&Var>,
) -> Result<CellState<Var>> {
    let gx = GateInputs::for_step(tape, p, x)?;
    let carry = carry_source(p.kind(), x, below_c)?;
    step_with_inputs(tape, p, gx, prev, carry)
}

fn carry_source<'a>(kind: LayerKind, x: &'a Var, below_c: Option<&'a Var>) -> Result<CarrySource<'a>> {
    match (kind, below_c) {
        (LayerKind::Lstmp, None) => Ok(CarrySource::None),
        (LayerKind::HighwayOverInput, None) => Ok(CarrySource::Input(x)),
        (LayerKind::HighwayOverLstm, Some(b)) => Ok(CarrySource::Below(b)),
        (LayerKind::HighwayOverLstm, None) => {
            Err(Error::config("highway layer over an LSTM layer needs the lower cell state"))
        }
        (_, Some(_)) => Err(Error::config("lower cell state given to a layer without a cell carry")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Per-frame outputs of one layer run, indexed by frame (not by
/// processing order).
#[derive(Debug, Clone)]
pub struct LayerOutput<T> {
    pub r: Vec<T>,
    pub c: Vec<T>,
}

/// Runs a layer over the rows of `xs` (`L × in`) from a zero state.
/// The backward direction processes frames `L..1`.
pub fn run_layer_on(
    tape: &Tape,
    p: &LayerParams<Var>,
    xs: &Var,
    direction: Direction,
    below_c: Option<&[Var]>,
) -> Result<LayerOutput<Var>> {
    let xv = tape.value(xs);
    let (len, _) = xv.expect_matrix("layer input sequence")?;
    if let Some(b) = below_c {
        if b.len() != len {
            return Err(Error::shape(format!(
                "layer input has {len} frames but the lower cell sequence has {}",
                b.len()
            )));
        }
    }
    let kind = p.kind();
    if matches!(kind, LayerKind::HighwayOverLstm) != below_c.is_some() {
        return Err(Error::config(format!(
            "{kind:?} layer {} a lower cell sequence",
            if below_c.is_some() { "does not take" } else { "requires" }
        )));
    }
    let l = p.lstm();
    let cell = tape.value(&l.b_i).len();
    let proj = tape.value(&l.w_rm).rows();
    let seq = SeqGateInputs::new(tape, p, xs)?;

    let mut state = CellState::zeros_on(tape, cell, proj);
    let mut r: Vec<Option<Var>> = vec![None; len];
    let mut c: Vec<Option<Var>> = vec![None; len];
    let order: Box<dyn Iterator<Item = usize>> = match direction {
        Direction::Forward => Box::new(0..len),
        Direction::Backward => Box::new((0..len).rev()),
    };
    for t in order {
        let gx = seq.at(tape, t)?;
        let x_row;
        let carry = match kind {
            LayerKind::Lstmp => CarrySource::None,
            LayerKind::HighwayOverLstm => CarrySource::Below(&below_c.expect("checked")[t]),
            LayerKind::HighwayOverInput => {
                x_row = tape.row(xs, t)?;
                CarrySource::Input(&x_row)
            }
        };
        state = step_with_inputs(tape, p, gx, &state, carry)?;
        r[t] = Some(state.r);
        c[t] = Some(state.c);
    }
    Ok(LayerOutput {
        r: r.into_iter().map(|v| v.expect("every frame visited")).collect(),
        c: c.into_iter().map(|v| v.expect("every frame visited")).collect(),
    })
}

fn eval_step(
    p: &LayerParams<Tensor>,
    x: &Tensor,
    prev: &CellState<Tensor>,
    below_c: Option<&Tensor>,
) -> Result<CellState<Tensor>> {
    let tape = Tape::inference();
    let pv = p.bind(&tape);
    let xv = tape.constant(x.clone());
    let prev = CellState { c: tape.constant(prev.c.clone()), r: tape.constant(prev.r.clone()), m: tape.constant(prev.m.clone()) };
    let below = below_c.map(|b| tape.constant(b.clone()));
    Ok(step_on(&tape, &pv, &xv, &prev, below.as_ref())?.values(&tape))
}

/// One LSTMP step.
pub fn lstmp_step(p: &LstmpParams<Tensor>, x: &Tensor, prev: &CellState<Tensor>) -> Result<CellState<Tensor>> {
    eval_step(&LayerParams::Lstmp(p.clone()), x, prev, None)
}

/// One highway step whose carry gate reads the lower layer's cell state.
pub fn hlstm_step_over_lstm(
    p: &HlstmParams<Tensor>,
    x: &Tensor,
    prev: &CellState<Tensor>,
    below_c: &Tensor,
) -> Result<CellState<Tensor>> {
    if p.w_d2.is_none() {
        return Err(Error::config("carry from the layer below needs the w_d2 peephole"));
    }
    eval_step(&LayerParams::Highway(p.clone()), x, prev, Some(below_c))
}

/// One highway step whose carry gate passes the layer input through.
pub fn hlstm_step_over_input(p: &HlstmParams<Tensor>, x: &Tensor, prev: &CellState<Tensor>) -> Result<CellState<Tensor>> {
    if p.w_d2.is_some() {
        return Err(Error::config("a highway layer carrying its input must not have w_d2"));
    }
    let dims = p.dims()?;
    if dims.input != dims.cell {
        return Err(over_input_dims_error(dims));
    }
    eval_step(&LayerParams::Highway(p.clone()), x, prev, None)
}

/// Runs a layer over a frame sequence and returns per-frame projections
/// and cell states.
pub fn run_layer(
    p: &LayerParams<Tensor>,
    xs: &[Tensor],
    direction: Direction,
    below_c: Option<&[Tensor]>,
) -> Result<LayerOutput<Tensor>> {
    if xs.is_empty() {
        return Err(Error::shape("empty input sequence"));
    }
    p.dims()?;
    let tape = Tape::inference();
    let pv = p.bind(&tape);
    let rows: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let xm = tape.stack(&rows)?;
    let below: Option<Vec<Var>> = below_c.map(|b| b.iter().map(|c| tape.constant(c.clone())).collect());
    let out = run_layer_on(&tape, &pv, &xm, direction, below.as_deref())?;
    let vals = |v: Vec<Var>| v.iter().map(|x| tape.value(x).as_ref().clone()).collect();
    Ok(LayerOutput { r: vals(out.r), c: vals(out.c) })
}

/// Frame-wise concatenation, forward half first.
pub fn bidir_concat(fwd: &[Tensor], bwd: &[Tensor]) -> Result<Vec<Tensor>> {
    if fwd.len() != bwd.len() {
        return Err(Error::shape(format!(
            "forward sequence has {} frames, backward {}",
            fwd.len(),
            bwd.len()
        )));
    }
    fwd.iter()
        .zip(bwd)
        .map(|(f, b)| {
            f.expect_vector("forward frame")?;
            b.expect_vector("backward frame")?;
            Ok(Tensor::vector([f.data(), b.data()].concat()))
        })
        .collect()
}

pub(crate) fn bidir_concat_on(tape: &Tape, fwd: &[Var], bwd: &[Var]) -> Result<Vec<Var>> {
    if fwd.len() != bwd.len() {
        return Err(Error::shape(format!(
            "forward sequence has {} frames, backward {}",
            fwd.len(),
            bwd.len()
        )));
    }
    fwd.iter().zip(bwd).map(|(f, b)| tape.concat(&[*f, *b])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims1() -> LayerDims {
        LayerDims { input: 1, cell: 1, proj: 1 }
    }

    fn random_layer(seed: u64, dims: LayerDims, kind: LayerKind) -> LayerParams<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut rng, 0.8);
        match kind {
            LayerKind::Lstmp => LayerParams::Lstmp(LstmpParams::init(&mut init, dims, 0.3)),
            LayerKind::HighwayOverLstm => LayerParams::Highway(HlstmParams::init(&mut init, dims, true, 0.3, 0.5)),
            LayerKind::HighwayOverInput => LayerParams::Highway(HlstmParams::init(&mut init, dims, false, 0.3, 0.5)),
        }
    }

    #[test]
    fn zero_weight_lstmp_step() {
        let p = LstmpParams::zeros(dims1());
        let prev = CellState { c: Tensor::vector(vec![1.0]), r: Tensor::vector(vec![0.0]), m: Tensor::vector(vec![0.0]) };
        let s = lstmp_step(&p, &Tensor::vector(vec![0.7]), &prev).unwrap();
        assert!((s.c.item() - 0.5).abs() < 1e-15);
        assert!((s.m.item() - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        assert_eq!(s.r.item(), 0.0);
    }

    #[test]
    fn zero_weight_highway_steps() {
        let prev = CellState::zeros(1, 1);
        let over_lstm = HlstmParams::zeros(dims1(), true);
        let s = hlstm_step_over_lstm(&over_lstm, &Tensor::vector(vec![0.0]), &prev, &Tensor::vector(vec![2.0])).unwrap();
        assert!((s.c.item() - 1.0).abs() < 1e-15);

        let over_input = HlstmParams::zeros(dims1(), false);
        let s = hlstm_step_over_input(&over_input, &Tensor::vector(vec![4.0]), &prev).unwrap();
        assert!((s.c.item() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn closed_carry_reduces_to_lstmp() {
        let dims = LayerDims { input: 3, cell: 3, proj: 2 };
        for kind in [LayerKind::HighwayOverLstm, LayerKind::HighwayOverInput] {
            let LayerParams::Highway(mut h) = random_layer(7, dims, kind) else { unreachable!() };
            h.b_d = Tensor::filled(&[3], -1e6);
            let x = Tensor::vector(vec![0.3, -1.2, 0.8]);
            let prev = CellState {
                c: Tensor::vector(vec![0.5, -0.1, 0.2]),
                r: Tensor::vector(vec![0.1, 0.4]),
                m: Tensor::zeros(&[3]),
            };
            let plain = lstmp_step(&h.lstm, &x, &prev).unwrap();
            let hw = match kind {
                LayerKind::HighwayOverLstm => {
                    hlstm_step_over_lstm(&h, &x, &prev, &Tensor::vector(vec![1.0, 2.0, -3.0])).unwrap()
                }
                _ => hlstm_step_over_input(&h, &x, &prev).unwrap(),
            };
            assert!(plain.c.max_abs_diff(&hw.c) <= 1e-12);
            assert!(plain.r.max_abs_diff(&hw.r) <= 1e-12);
        }
    }

    #[test]
    fn carry_variant_errors() {
        let dims = LayerDims { input: 2, cell: 3, proj: 2 };
        let prev = CellState::zeros(3, 2);
        let no_d2 = HlstmParams::zeros(dims, false);
        let err = hlstm_step_over_lstm(&no_d2, &Tensor::zeros(&[2]), &prev, &Tensor::zeros(&[3])).unwrap_err();
        assert_eq!(err.category(), "config");
        let err = hlstm_step_over_input(&no_d2, &Tensor::zeros(&[2]), &prev).unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("input dim == cell dim"), "{err}");
    }

    #[test]
    fn run_layer_single_frame_is_one_step() {
        let dims = LayerDims { input: 2, cell: 3, proj: 2 };
        let p = random_layer(3, dims, LayerKind::Lstmp);
        let x = Tensor::vector(vec![0.5, -0.5]);
        let out = run_layer(&p, std::slice::from_ref(&x), Direction::Forward, None).unwrap();
        let step = lstmp_step(p.lstm(), &x, &CellState::zeros(3, 2)).unwrap();
        assert_eq!(out.r[0], step.r);
        assert_eq!(out.c[0], step.c);
    }

    #[test]
    fn backward_run_is_time_reversed_forward_run() {
        let dims = LayerDims { input: 2, cell: 4, proj: 3 };
        let p = random_layer(11, dims, LayerKind::Lstmp);
        let xs: Vec<Tensor> = (0..5).map(|t| Tensor::vector(vec![t as f64 * 0.3 - 0.5, (t as f64).sin()])).collect();
        let mut rev = xs.clone();
        rev.reverse();
        let fwd = run_layer(&p, &xs, Direction::Forward, None).unwrap();
        let bwd = run_layer(&p, &rev, Direction::Backward, None).unwrap();
        for t in 0..5 {
            assert_eq!(fwd.r[t], bwd.r[4 - t]);
        }
    }

    #[test]
    fn run_layer_length_mismatch() {
        let dims = LayerDims { input: 2, cell: 2, proj: 2 };
        let p = random_layer(1, dims, LayerKind::HighwayOverLstm);
        let xs = vec![Tensor::zeros(&[2]); 3];
        let below = vec![Tensor::zeros(&[2]); 2];
        let err = run_layer(&p, &xs, Direction::Forward, Some(&below)).unwrap_err();
        assert_eq!(err.category(), "shape");
        let err = run_layer(&p, &xs, Direction::Forward, None).unwrap_err();
        assert_eq!(err.category(), "config");
    }

    #[test]
    fn bidir_concat_examples() {
        let out = bidir_concat(&[Tensor::vector(vec![1.0])], &[Tensor::vector(vec![2.0])]).unwrap();
        assert_eq!(out, vec![Tensor::vector(vec![1.0, 2.0])]);
        let f: Vec<Tensor> = (0..4).map(|t| Tensor::vector(vec![t as f64, 1.0, 2.0])).collect();
        let b = vec![Tensor::zeros(&[3]); 4];
        let out = bidir_concat(&f, &b).unwrap();
        for (t, o) in out.iter().enumerate() {
            assert_eq!(o.dims(), &[6]);
            assert_eq!(&o.data()[..3], f[t].data());
            assert!(o.data()[3..].iter().all(|&v| v == 0.0));
        }
        assert!(bidir_concat(&f, &b[..3]).is_err());
    }

    #[test]
    fn gate_ranges() {
        let dims = LayerDims { input: 3, cell: 4, proj: 2 };
        let p = random_layer(5, dims, LayerKind::Lstmp);
        let xs: Vec<Tensor> = (0..6).map(|t| Tensor::vector(vec![3.0 * (t as f64).cos(), -2.0, 1.5])).collect();
        let out = run_layer(&p, &xs, Direction::Forward, None).unwrap();
        // |m| = |o ⊙ tanh(c)| < 1
        let tape = Tape::inference();
        let pv = p.bind(&tape);
        let mut st = CellState::zeros_on(&tape, 4, 2);
        for x in &xs {
            let xv = tape.constant(x.clone());
            st = step_on(&tape, &pv, &xv, &st, None).unwrap();
            assert!(tape.value(&st.m).data().iter().all(|v| v.abs() < 1.0));
        }
        assert_eq!(out.r.len(), 6);
    }
}
