use rand_chacha::ChaCha8Rng;

use super::attention::{attention_window, AttentionConfig, AttentionDump};
use super::params::{ModelParams, Params};
use crate::dsp::{FeatureSequence, GainSequence};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{dense, dropout, run_lstm, Activation, Direction, NodeId, Tape, Tensor};

/// Whether dropout is active for a pass.
pub enum RunMode<'r> {
    Inference,
    Training { dropout: f64, rng: &'r mut ChaCha8Rng },
}

/// Every intermediate of one forward pass, row `t` belonging to frame `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub config: AttentionConfig,
    /// Encoder output.
    pub encoded: Matrix,
    pub keys_f: Matrix,
    pub keys_b: Matrix,
    /// Queries after the pre-query dense layer.
    pub queries_f: Matrix,
    pub queries_b: Matrix,
    /// `attn_f[t][j]` weights frame `windows_f[t].0 + j`.
    pub attn_f: Vec<Vec<f64>>,
    pub attn_b: Vec<Vec<f64>>,
    pub windows_f: Vec<(usize, usize)>,
    pub windows_b: Vec<(usize, usize)>,
    /// Forward and backward contexts side by side, `T x 2H`.
    pub contexts: Matrix,
    pub enhancement: Matrix,
    pub gains: GainSequence,
    /// Masked features `x ⊙ g`.
    pub output: FeatureSequence,
}

impl ForwardTrace {
    pub fn n_frames(&self) -> usize {
        self.output.n_frames()
    }
}

pub(crate) struct Graph {
    pub encoded: NodeId,
    pub keys_f: NodeId,
    pub keys_b: NodeId,
    pub queries_f: NodeId,
    pub queries_b: NodeId,
    pub ctx_f: NodeId,
    pub ctx_b: NodeId,
    pub contexts: NodeId,
    pub enhancement: NodeId,
    pub gains: NodeId,
    pub output: NodeId,
    pub windows_f: Vec<(usize, usize)>,
    pub windows_b: Vec<(usize, usize)>,
}

pub(crate) fn bind<'a>(tape: &mut Tape<'a>, params: &'a ModelParams) -> Params<NodeId> {
    params.tensors().map(|_, t| tape.param(t))
}

pub(crate) fn build_graph(
    tape: &mut Tape<'_>,
    p: &Params<NodeId>,
    x: NodeId,
    cfg: &AttentionConfig,
    mode: &mut RunMode<'_>,
) -> Result<Graph> {
    let n = tape.value(x).rows();
    let mut drop = |tape: &mut Tape<'_>, node: NodeId| -> Result<NodeId> {
        match mode {
            RunMode::Inference => Ok(node),
            RunMode::Training { dropout: rate, rng } => dropout(tape, node, *rate, *rng, true),
        }
    };

    let encoded = dense(tape, x, &p.encoder, Activation::Tanh)?;
    let enc = drop(tape, encoded)?;

    let keys_f = run_lstm(tape, &p.lstm_fk, enc, Direction::Forward)?;
    let keys_b = run_lstm(tape, &p.lstm_bk, enc, Direction::Backward)?;
    let raw_q_f = run_lstm(tape, &p.lstm_fq, enc, Direction::Forward)?;
    let raw_q_b = run_lstm(tape, &p.lstm_bq, enc, Direction::Backward)?;
    let queries_f = dense(tape, raw_q_f, &p.query_f, Activation::Tanh)?;
    let queries_b = dense(tape, raw_q_b, &p.query_b, Activation::Tanh)?;

    // score(k, t) = keys[k]ᵀ W q_t = keys[k] · (W q_t)
    let proj_f = tape.affine(queries_f, p.score_f, None)?;
    let proj_b = tape.affine(queries_b, p.score_b, None)?;
    let mut windows_f = Vec::with_capacity(n);
    let mut windows_b = Vec::with_capacity(n);
    for t in 0..n {
        let w = attention_window(t, n, cfg)?;
        windows_f.push((*w.forward.start(), *w.forward.end()));
        windows_b.push((*w.backward.start(), *w.backward.end()));
    }
    let ctx_f = tape.windowed_attention(keys_f, proj_f, windows_f.clone())?;
    let ctx_b = tape.windowed_attention(keys_b, proj_b, windows_b.clone())?;
    let contexts = tape.concat_cols(&[ctx_f, ctx_b])?;

    let decoder_in = tape.concat_cols(&[contexts, queries_f, queries_b])?;
    let enhancement = dense(tape, decoder_in, &p.decoder, Activation::Tanh)?;
    let e = drop(tape, enhancement)?;
    let gains = dense(tape, e, &p.gain, Activation::Sigmoid)?;
    let output = tape.mul(x, gains)?;

    Ok(Graph {
        encoded,
        keys_f,
        keys_b,
        queries_f,
        queries_b,
        ctx_f,
        ctx_b,
        contexts,
        enhancement,
        gains,
        output,
        windows_f,
        windows_b,
    })
}

pub(crate) fn check_input(params: &ModelParams, x: &FeatureSequence) -> Result<()> {
    if x.dim() != params.dims().feature {
        return Err(Error::input(format!(
            "features have {} columns, model expects {}",
            x.dim(),
            params.dims().feature
        )));
    }
    Ok(())
}

fn to_matrix(t: &Tensor) -> Matrix {
    Matrix::new(t.rows(), t.cols(), t.data().to_vec()).expect("rank-2 node")
}

/// Runs the network on one utterance and records every intermediate.
pub fn forward(
    params: &ModelParams,
    x: &FeatureSequence,
    cfg: &AttentionConfig,
    mut mode: RunMode<'_>,
) -> Result<ForwardTrace> {
    check_input(params, x)?;
    let input = Tensor::from(x.values().clone());
    let mut tape = Tape::new();
    let p = bind(&mut tape, params);
    let xn = tape.constant_ref(&input);
    let g = build_graph(&mut tape, &p, xn, cfg, &mut mode)?;
    let m = |id: NodeId| to_matrix(tape.value(id));
    Ok(ForwardTrace {
        config: *cfg,
        encoded: m(g.encoded),
        keys_f: m(g.keys_f),
        keys_b: m(g.keys_b),
        queries_f: m(g.queries_f),
        queries_b: m(g.queries_b),
        attn_f: tape.attention_weights(g.ctx_f).expect("attention node").to_vec(),
        attn_b: tape.attention_weights(g.ctx_b).expect("attention node").to_vec(),
        windows_f: g.windows_f,
        windows_b: g.windows_b,
        contexts: m(g.contexts),
        enhancement: m(g.enhancement),
        gains: GainSequence::new(m(g.gains))?,
        output: FeatureSequence::new(m(g.output))?,
    })
}

/// Mean over all cells of `(y - clean)²`.
pub fn mse_loss(trace: &ForwardTrace, clean: &FeatureSequence) -> Result<f64> {
    let y = trace.output.values();
    let c = clean.values();
    if y.rows() != c.rows() || y.cols() != c.cols() {
        return Err(Error::input(format!(
            "output is {}x{}, clean target is {}x{}",
            y.rows(),
            y.cols(),
            c.rows(),
            c.cols()
        )));
    }
    let sum: f64 = y.data().iter().zip(c.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / y.data().len() as f64)
}

/// Inference-mode gains only.
pub fn predict_gains(params: &ModelParams, x: &FeatureSequence, cfg: &AttentionConfig) -> Result<GainSequence> {
    Ok(forward(params, x, cfg, RunMode::Inference)?.gains)
}

/// MSE of the masked output against `clean` and its gradient for every
/// parameter tensor.
pub fn loss_and_gradients(
    params: &ModelParams,
    noisy: &FeatureSequence,
    clean: &FeatureSequence,
    cfg: &AttentionConfig,
    mut mode: RunMode<'_>,
) -> Result<(f64, Params<Tensor>)> {
    check_input(params, noisy)?;
    if noisy.n_frames() != clean.n_frames() || noisy.dim() != clean.dim() {
        return Err(Error::input("noisy and clean feature shapes differ"));
    }
    let input = Tensor::from(noisy.values().clone());
    let target = Tensor::from(clean.values().clone());
    let mut tape = Tape::new();
    let p = bind(&mut tape, params);
    let xn = tape.constant_ref(&input);
    let g = build_graph(&mut tape, &p, xn, cfg, &mut mode)?;
    let loss = tape.mse(g.output, &target)?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss is {value}")));
    }
    let grads = tape.backward(loss)?;
    Ok((value, p.map(|_, &id| grads.get_or_zeros(id))))
}

pub fn export_attention(trace: &ForwardTrace) -> AttentionDump {
    AttentionDump::from_weights(trace.config, &trace.attn_f, &trace.attn_b)
}
