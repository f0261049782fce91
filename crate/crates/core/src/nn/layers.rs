use std::convert::Infallible;

use rand::Rng;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Weight `[out, in]` and bias `[out]` of a fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub w: T,
    pub b: T,
}

impl<T> Dense<T> {
    pub fn entries(&self) -> [(&'static str, &T); 2] {
        [("w", &self.w), ("b", &self.b)]
    }

    pub fn try_map<'s, U, E>(&'s self, mut f: impl FnMut(&'static str, &'s T) -> Result<U, E>) -> Result<Dense<U>, E> {
        Ok(Dense {
            w: f("w", &self.w)?,
            b: f("b", &self.b)?,
        })
    }

    pub fn map<'s, U>(&'s self, mut f: impl FnMut(&'static str, &'s T) -> U) -> Dense<U> {
        match self.try_map(|n, t| Ok::<_, Infallible>(f(n, t))) {
            Ok(v) => v,
        }
    }
}

/// Gate order throughout is input, forget, output, candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams<T> {
    pub w_i: T,
    pub w_f: T,
    pub w_o: T,
    pub w_g: T,
    pub u_i: T,
    pub u_f: T,
    pub u_o: T,
    pub u_g: T,
    pub b_i: T,
    pub b_f: T,
    pub b_o: T,
    pub b_g: T,
}

impl<T> LstmCellParams<T> {
    pub fn entries(&self) -> [(&'static str, &T); 12] {
        [
            ("w_i", &self.w_i),
            ("w_f", &self.w_f),
            ("w_o", &self.w_o),
            ("w_g", &self.w_g),
            ("u_i", &self.u_i),
            ("u_f", &self.u_f),
            ("u_o", &self.u_o),
            ("u_g", &self.u_g),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
            ("b_g", &self.b_g),
        ]
    }

    pub fn try_map<'s, U, E>(
        &'s self,
        mut f: impl FnMut(&'static str, &'s T) -> Result<U, E>,
    ) -> Result<LstmCellParams<U>, E> {
        Ok(LstmCellParams {
            w_i: f("w_i", &self.w_i)?,
            w_f: f("w_f", &self.w_f)?,
            w_o: f("w_o", &self.w_o)?,
            w_g: f("w_g", &self.w_g)?,
            u_i: f("u_i", &self.u_i)?,
            u_f: f("u_f", &self.u_f)?,
            u_o: f("u_o", &self.u_o)?,
            u_g: f("u_g", &self.u_g)?,
            b_i: f("b_i", &self.b_i)?,
            b_f: f("b_f", &self.b_f)?,
            b_o: f("b_o", &self.b_o)?,
            b_g: f("b_g", &self.b_g)?,
        })
    }

    pub fn map<'s, U>(&'s self, mut f: impl FnMut(&'static str, &'s T) -> U) -> LstmCellParams<U> {
        match self.try_map(|n, t| Ok::<_, Infallible>(f(n, t))) {
            Ok(v) => v,
        }
    }
}

impl LstmCellParams<Tensor> {
    pub fn hidden(&self) -> usize {
        self.b_i.len()
    }

    pub fn input(&self) -> usize {
        self.w_i.cols()
    }
}

pub fn dense(tape: &mut Tape<'_>, x: NodeId, layer: &Dense<NodeId>, act: Activation) -> Result<NodeId> {
    let z = tape.affine(x, layer.w, Some(layer.b))?;
    Ok(match act {
        Activation::Tanh => tape.tanh(z),
        Activation::Sigmoid => tape.sigmoid(z),
        Activation::Identity => z,
    })
}

/// Gate matrices stacked as `[W_i; W_f; W_o; W_g]` so one affine map yields
/// all four pre-activations.
struct StackedCell {
    w: NodeId,
    u: NodeId,
    b: NodeId,
    hidden: usize,
}

fn stack_cell(tape: &mut Tape<'_>, cell: &LstmCellParams<NodeId>) -> Result<StackedCell> {
    let hidden = tape.value(cell.b_i).len();
    for (name, id) in cell.entries() {
        let shape = tape.value(*id).shape();
        if shape.first() != Some(&hidden) {
            return Err(Error::input(format!(
                "lstm {name} has shape {shape:?}, hidden size is {hidden}"
            )));
        }
    }
    Ok(StackedCell {
        w: tape.concat(&[cell.w_i, cell.w_f, cell.w_o, cell.w_g])?,
        u: tape.concat(&[cell.u_i, cell.u_f, cell.u_o, cell.u_g])?,
        b: tape.concat(&[cell.b_i, cell.b_f, cell.b_o, cell.b_g])?,
        hidden,
    })
}

/// Gates from the stacked pre-activation `z`; returns `(h, c)`.
fn cell_update(tape: &mut Tape<'_>, z: NodeId, c_prev: Option<NodeId>, hidden: usize) -> Result<(NodeId, NodeId)> {
    let zi = tape.slice(z, 0, hidden)?;
    let zf = tape.slice(z, hidden, hidden)?;
    let zo = tape.slice(z, 2 * hidden, hidden)?;
    let zg = tape.slice(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(zi);
    let o = tape.sigmoid(zo);
    let g = tape.tanh(zg);
    let ig = tape.mul(i, g)?;
    let c = match c_prev {
        Some(c_prev) => {
            let f = tape.sigmoid(zf);
            let fc = tape.mul(f, c_prev)?;
            tape.add(fc, ig)?
        }
        None => ig,
    };
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One LSTM step from explicit previous state.
pub fn lstm_step(
    tape: &mut Tape<'_>,
    cell: &LstmCellParams<NodeId>,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let stacked = stack_cell(tape, cell)?;
    let hidden = stacked.hidden;
    if tape.value(h_prev).shape() != [hidden] || tape.value(c_prev).shape() != [hidden] {
        return Err(Error::input(format!("lstm state must have shape [{hidden}]")));
    }
    let zx = tape.affine(x, stacked.w, Some(stacked.b))?;
    let zh = tape.affine(h_prev, stacked.u, None)?;
    let z = tape.add(zx, zh)?;
    cell_update(tape, z, Some(c_prev), hidden)
}

/// Runs a cell over the rows of `seq` (`T x in`) from a zero state and
/// returns the `T x hidden` outputs. A backward run scans from the last row
/// to the first; row `t` of the output is still the state at frame `t`.
pub fn run_lstm(
    tape: &mut Tape<'_>,
    cell: &LstmCellParams<NodeId>,
    seq: NodeId,
    direction: Direction,
) -> Result<NodeId> {
    let sv = tape.value(seq);
    if sv.rank() != 2 || sv.rows() == 0 {
        return Err(Error::input("lstm input must be a nonempty T x d matrix"));
    }
    let steps = sv.rows();
    let stacked = stack_cell(tape, cell)?;
    let hidden = stacked.hidden;
    // All input projections at once: T x 4H.
    let zx = tape.affine(seq, stacked.w, Some(stacked.b))?;

    let order: Vec<usize> = match direction {
        Direction::Forward => (0..steps).collect(),
        Direction::Backward => (0..steps).rev().collect(),
    };
    let mut outputs = vec![None; steps];
    let mut state: Option<(NodeId, NodeId)> = None;
    for t in order {
        let zt = tape.row(zx, t)?;
        let z = match state {
            Some((h, _)) => {
                let zh = tape.affine(h, stacked.u, None)?;
                tape.add(zt, zh)?
            }
            // Zero initial state: the recurrent term vanishes.
            None => zt,
        };
        let (h, c) = cell_update(tape, z, state.map(|s| s.1), hidden)?;
        outputs[t] = Some(h);
        state = Some((h, c));
    }
    let rows: Vec<NodeId> = outputs.into_iter().map(|h| h.expect("every step visited")).collect();
    tape.stack_rows(&rows)
}

/// `keyᵀ W query`.
pub fn bilinear_score(tape: &mut Tape<'_>, key: NodeId, w: NodeId, query: NodeId) -> Result<NodeId> {
    let wq = tape.affine(query, w, None)?;
    tape.dot(key, wq)
}

pub fn softmax(tape: &mut Tape<'_>, scores: NodeId) -> Result<NodeId> {
    tape.softmax(scores)
}

/// Inverted dropout; identity when not training or when `rate` is zero.
pub fn dropout<R: Rng + ?Sized>(
    tape: &mut Tape<'_>,
    x: NodeId,
    rate: f64,
    rng: &mut R,
    training: bool,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    tape.dropout_mask(x, mask)
}
