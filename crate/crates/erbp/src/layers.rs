//! Network building blocks: dense layers, simple/GRU/LSTM recurrent cells,
//! weight initialisation schemes, and tensor checkpoints.

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::prior::DefaultMatrix;
use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    None,
}

fn apply_activation(tape: &mut Tape, x: NodeId, act: Activation) -> NodeId {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::None => x,
    }
}

/// Fully connected layer `activation(W·x + b)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub w: Tensor,
    pub b: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            w: Tensor::zeros(vec![output, input]),
            b: Tensor::zeros(vec![output]),
            activation,
        }
    }

    pub fn input_width(&self) -> usize {
        self.w.cols()
    }

    pub fn output_width(&self) -> usize {
        self.w.rows()
    }

    /// Push this layer's parameters onto a tape for one forward/backward pass.
    pub fn bind(&self, tape: &mut Tape) -> BoundDense {
        BoundDense {
            w: tape.param(self.w.clone()),
            b: tape.param(self.b.clone()),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDense {
    pub w: NodeId,
    pub b: NodeId,
    pub activation: Activation,
}

impl BoundDense {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let wx = tape.matmul(self.w, x)?;
        let z = tape.add(wx, self.b)?;
        Ok(apply_activation(tape, z, self.activation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Simple,
    Gru,
    Lstm,
}

impl CellKind {
    /// Gate blocks stacked in `w_in`/`w_rec`/`b`.
    pub fn gates(&self) -> usize {
        match self {
            CellKind::Simple => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

/// Recurrent cell with stacked gate parameters.
///
/// Gate block order: GRU `[update, reset, candidate]`, LSTM
/// `[input, forget, candidate, output]`.
#[derive(Debug, Clone)]
pub struct RecurrentCell {
    pub kind: CellKind,
    pub w_in: Tensor,
    pub w_rec: Tensor,
    pub b: Tensor,
    pub input: usize,
    pub hidden: usize,
}

impl RecurrentCell {
    pub fn new(kind: CellKind, input: usize, hidden: usize) -> Self {
        let g = kind.gates();
        RecurrentCell {
            kind,
            w_in: Tensor::zeros(vec![g * hidden, input]),
            w_rec: Tensor::zeros(vec![g * hidden, hidden]),
            b: Tensor::zeros(vec![g * hidden]),
            input,
            hidden,
        }
    }

    /// Row range of `w_in` holding the state-writing candidate block; this is
    /// where a relational weight prior attaches.
    pub fn candidate_rows(&self) -> (usize, usize) {
        match self.kind {
            CellKind::Simple => (0, self.hidden),
            CellKind::Gru | CellKind::Lstm => (2 * self.hidden, self.hidden),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundCell {
        BoundCell {
            kind: self.kind,
            w_in: tape.param(self.w_in.clone()),
            w_rec: Some(tape.param(self.w_rec.clone())),
            b: tape.param(self.b.clone()),
            hidden: self.hidden,
        }
    }

    /// Bind without the recurrent weights. For use where the cell is only
    /// ever stepped once from a zero state: the recurrent weights then
    /// receive an identically-zero gradient, so keeping them off the tape
    /// changes nothing numerically and avoids wasted optimiser work.
    pub fn bind_static_recurrence(&self, tape: &mut Tape) -> BoundCell {
        BoundCell {
            kind: self.kind,
            w_in: tape.param(self.w_in.clone()),
            w_rec: None,
            b: tape.param(self.b.clone()),
            hidden: self.hidden,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundCell {
    pub kind: CellKind,
    pub w_in: NodeId,
    /// Absent when bound via [`RecurrentCell::bind_static_recurrence`].
    pub w_rec: Option<NodeId>,
    pub b: NodeId,
    pub hidden: usize,
}

/// On-tape hidden state. `cell` is present only for LSTM.
#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub h: NodeId,
    pub cell: Option<NodeId>,
}

impl BoundCell {
    /// Fresh zero state; used at every sequence boundary.
    pub fn zero_state(&self, tape: &mut Tape) -> CellState {
        let h = tape.leaf(Tensor::zeros(vec![self.hidden]));
        let cell = match self.kind {
            CellKind::Lstm => Some(tape.leaf(Tensor::zeros(vec![self.hidden]))),
            _ => None,
        };
        CellState { h, cell }
    }

    pub fn state_from(&self, tape: &mut Tape, h: Vec<f64>, c: Option<Vec<f64>>) -> CellState {
        let h = tape.leaf(Tensor::vector(h));
        let cell = c.map(|v| tape.leaf(Tensor::vector(v)));
        CellState { h, cell }
    }

    /// One recurrent update; returns (output activation, next state).
    pub fn step(&self, tape: &mut Tape, x: NodeId, state: &CellState) -> Result<(NodeId, CellState)> {
        let w_rec = self.w_rec.ok_or_else(|| {
            Error::Contract("cell bound without recurrent weights can only step from zero".into())
        })?;
        let zh = tape.matmul(w_rec, state.h)?;
        self.step_with_recurrent(tape, x, state, zh)
    }

    /// One update from a known-zero state. The recurrent contribution is a
    /// zero vector, so the `w_rec` matvec (and its backward pass) is skipped;
    /// the result is identical to `step` from `zero_state`.
    pub fn step_from_zero(&self, tape: &mut Tape, x: NodeId) -> Result<(NodeId, CellState)> {
        let state = self.zero_state(tape);
        let zh = tape.leaf(Tensor::zeros(vec![self.kind.gates() * self.hidden]));
        self.step_with_recurrent(tape, x, &state, zh)
    }

    fn step_with_recurrent(
        &self,
        tape: &mut Tape,
        x: NodeId,
        state: &CellState,
        zh: NodeId,
    ) -> Result<(NodeId, CellState)> {
        if matches!(self.kind, CellKind::Lstm) != state.cell.is_some() {
            return Err(Error::Contract(
                "cell state does not match recurrent cell kind".into(),
            ));
        }
        let h = self.hidden;
        let zx = tape.matmul(self.w_in, x)?;
        match self.kind {
            CellKind::Simple => {
                let z = tape.add(zx, zh)?;
                let z = tape.add(z, self.b)?;
                let out = tape.tanh(z);
                Ok((out, CellState { h: out, cell: None }))
            }
            CellKind::Gru => {
                let bz = tape.slice(self.b, 0, h)?;
                let br = tape.slice(self.b, h, h)?;
                let bn = tape.slice(self.b, 2 * h, h)?;
                let zx_z = tape.slice(zx, 0, h)?;
                let zx_r = tape.slice(zx, h, h)?;
                let zx_n = tape.slice(zx, 2 * h, h)?;
                let zh_z = tape.slice(zh, 0, h)?;
                let zh_r = tape.slice(zh, h, h)?;
                let zh_n = tape.slice(zh, 2 * h, h)?;

                let zt = tape.add(zx_z, zh_z)?;
                let zt = tape.add(zt, bz)?;
                let update = tape.sigmoid(zt);
                let rt = tape.add(zx_r, zh_r)?;
                let rt = tape.add(rt, br)?;
                let reset = tape.sigmoid(rt);
                let gated = tape.mul(reset, zh_n)?;
                let nt = tape.add(zx_n, gated)?;
                let nt = tape.add(nt, bn)?;
                let cand = tape.tanh(nt);

                // h' = (1 - z)·n + z·h
                let zc = tape.mul(update, cand)?;
                let diff = tape.sub(cand, zc)?;
                let zh_keep = tape.mul(update, state.h)?;
                let out = tape.add(diff, zh_keep)?;
                Ok((out, CellState { h: out, cell: None }))
            }
            CellKind::Lstm => {
                let gate = |tape: &mut Tape, idx: usize| -> Result<NodeId> {
                    let bg = tape.slice(self.b, idx * h, h)?;
                    let gx = tape.slice(zx, idx * h, h)?;
                    let gh = tape.slice(zh, idx * h, h)?;
                    let s = tape.add(gx, gh)?;
                    tape.add(s, bg)
                };
                let zi = gate(tape, 0)?;
                let zf = gate(tape, 1)?;
                let zg = gate(tape, 2)?;
                let zo = gate(tape, 3)?;
                let input = tape.sigmoid(zi);
                let forget = tape.sigmoid(zf);
                let cand = tape.tanh(zg);
                let output = tape.sigmoid(zo);
                let prev_c = state.cell.expect("checked above");
                let keep = tape.mul(forget, prev_c)?;
                let write = tape.mul(input, cand)?;
                let c_next = tape.add(keep, write)?;
                let c_act = tape.tanh(c_next);
                let out = tape.mul(output, c_act)?;
                Ok((
                    out,
                    CellState {
                        h: out,
                        cell: Some(c_next),
                    },
                ))
            }
        }
    }
}

/// Weight initialisation scheme.
#[derive(Debug, Clone)]
pub enum InitScheme {
    /// Uniform over (-1/sqrt(fan_in), 1/sqrt(fan_in)).
    RandomUniform,
    Zero,
    /// Glorot uniform with gain 1.
    Xavier,
    /// Uniform noise, then populated default-matrix rows copied over and the
    /// bias set to zero.
    Erbp(DefaultMatrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    RandomUniform,
    Zero,
    Xavier,
    Erbp,
}

fn fill_uniform(t: &mut Tensor, bound: f64, rng: &mut impl Rng) {
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

fn init_weight(w: &mut Tensor, scheme: &InitScheme, rng: &mut impl Rng) -> Result<()> {
    let (fan_out, fan_in) = (w.rows(), w.cols());
    match scheme {
        InitScheme::RandomUniform => fill_uniform(w, 1.0 / (fan_in as f64).sqrt(), rng),
        InitScheme::Zero => w.data_mut().fill(0.0),
        InitScheme::Xavier => {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            fill_uniform(w, bound, rng);
        }
        InitScheme::Erbp(d) => {
            if w.shape() != d.matrix.shape() {
                return Err(Error::dims("erbp initialisation", w.shape(), d.matrix.shape()));
            }
            fill_uniform(w, 1.0 / (fan_in as f64).sqrt(), rng);
            overlay_default_rows(w, d);
        }
    }
    Ok(())
}

/// Copy every populated row of `d` over the matching row of `w`. Populated
/// rows carry the prior's zeros as well as its ±1 entries; all-zero filler
/// rows keep their noise.
fn overlay_default_rows(w: &mut Tensor, d: &DefaultMatrix) {
    let cols = d.input_width();
    for r in 0..d.rows {
        let row = &d.matrix.data()[r * cols..(r + 1) * cols];
        if row.iter().any(|&v| v != 0.0) {
            w.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(row);
        }
    }
}

/// Initialise a dense layer in place.
pub fn initialise_dense(layer: &mut DenseLayer, scheme: &InitScheme, rng: &mut impl Rng) -> Result<()> {
    init_weight(&mut layer.w, scheme, rng)?;
    match scheme {
        InitScheme::RandomUniform => {
            let bound = 1.0 / (layer.input_width() as f64).sqrt();
            fill_uniform(&mut layer.b, bound, rng);
        }
        _ => layer.b.data_mut().fill(0.0),
    }
    Ok(())
}

/// Initialise a recurrent cell in place. The relational prior applies to the
/// candidate block of `w_in`; every other block is drawn uniformly.
pub fn initialise_cell(cell: &mut RecurrentCell, scheme: &InitScheme, rng: &mut impl Rng) -> Result<()> {
    match scheme {
        InitScheme::Erbp(d) => {
            if d.rows != cell.hidden || d.input_width() != cell.input {
                return Err(Error::dims(
                    "erbp cell initialisation",
                    &[cell.hidden, cell.input],
                    d.matrix.shape(),
                ));
            }
            fill_uniform(&mut cell.w_in, 1.0 / (cell.input as f64).sqrt(), rng);
            let (start, _) = cell.candidate_rows();
            let cols = cell.input;
            for r in 0..d.rows {
                let row = &d.matrix.data()[r * cols..(r + 1) * cols];
                if row.iter().any(|&v| v != 0.0) {
                    let w_row = (start + r) * cols;
                    cell.w_in.data_mut()[w_row..w_row + cols].copy_from_slice(row);
                }
            }
            fill_uniform(&mut cell.w_rec, 1.0 / (cell.hidden as f64).sqrt(), rng);
            cell.b.data_mut().fill(0.0);
        }
        other => {
            init_weight(&mut cell.w_in, other, rng)?;
            init_weight(&mut cell.w_rec, other, rng)?;
            match other {
                InitScheme::RandomUniform => {
                    let bound = 1.0 / (cell.input as f64).sqrt();
                    fill_uniform(&mut cell.b, bound, rng);
                }
                _ => cell.b.data_mut().fill(0.0),
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    shape: Vec<usize>,
    /// f64 bit patterns; exact round-trip, no decimal formatting loss.
    bits: Vec<u64>,
}

/// Write named tensors to a JSON checkpoint that round-trips f64 bitwise.
pub fn save_checkpoint(path: &std::path::Path, tensors: &[(&str, &Tensor)]) -> Result<()> {
    let entries: Vec<CheckpointEntry> = tensors
        .iter()
        .map(|(name, t)| CheckpointEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            bits: t.data().iter().map(|v| v.to_bits()).collect(),
        })
        .collect();
    let body = serde_json::to_string(&entries)
        .map_err(|e| Error::Contract(format!("checkpoint serialisation: {e}")))?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(body.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<Vec<(String, Tensor)>> {
    let body =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let entries: Vec<CheckpointEntry> = serde_json::from_str(&body)
        .map_err(|e| Error::Parse {
            line: 0,
            message: format!("checkpoint: {e}"),
        })?;
    entries
        .into_iter()
        .map(|e| {
            let data: Vec<f64> = e.bits.into_iter().map(f64::from_bits).collect();
            Tensor::new(e.shape, data).map(|t| (e.name, t))
        })
        .collect()
}
