use std::convert::Infallible;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Dense, LstmCellParams, Tensor};

/// Layer sizes. `hidden` is the width of every LSTM and of the query layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub feature: usize,
    pub encoder_out: usize,
    pub hidden: usize,
    pub e_dim: usize,
}

impl ModelDims {
    /// 42 FBank bands, 128-wide encoder, 350 LSTM cells, 350-wide decoder.
    pub const fn full() -> Self {
        Self {
            feature: 42,
            encoder_out: 128,
            hidden: 350,
            e_dim: 350,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature == 0 || self.encoder_out == 0 || self.hidden == 0 || self.e_dim == 0 {
            return Err(Error::config(format!("all model dimensions must be positive: {self}")));
        }
        Ok(())
    }
}

impl Default for ModelDims {
    fn default() -> Self {
        Self::full()
    }
}

impl fmt::Display for ModelDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "feature={} encoder_out={} hidden={} e_dim={}",
            self.feature, self.encoder_out, self.hidden, self.e_dim
        )
    }
}

fn push_dense<'a, T>(out: &mut Vec<(String, &'a T)>, prefix: &str, d: &'a Dense<T>) {
    out.extend(d.entries().map(|(n, t)| (format!("{prefix}.{n}"), t)));
}

/// Every trainable tensor of the network, generic over what is stored per
/// slot: tensors for weights and gradients, node ids while on a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub encoder: Dense<T>,
    pub lstm_fk: LstmCellParams<T>,
    pub lstm_bk: LstmCellParams<T>,
    pub lstm_fq: LstmCellParams<T>,
    pub lstm_bq: LstmCellParams<T>,
    pub query_f: Dense<T>,
    pub query_b: Dense<T>,
    pub score_f: T,
    pub score_b: T,
    pub decoder: Dense<T>,
    pub gain: Dense<T>,
}

impl<T> Params<T> {
    /// `(qualified name, slot)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = Vec::with_capacity(56);
        push_dense(&mut out, "encoder", &self.encoder);
        for (prefix, cell) in [
            ("lstm_fk", &self.lstm_fk),
            ("lstm_bk", &self.lstm_bk),
            ("lstm_fq", &self.lstm_fq),
            ("lstm_bq", &self.lstm_bq),
        ] {
            out.extend(cell.entries().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        push_dense(&mut out, "query_f", &self.query_f);
        push_dense(&mut out, "query_b", &self.query_b);
        out.push(("score_f".into(), &self.score_f));
        out.push(("score_b".into(), &self.score_b));
        push_dense(&mut out, "decoder", &self.decoder);
        push_dense(&mut out, "gain", &self.gain);
        out
    }

    pub fn try_map<'s, U, E>(&'s self, mut f: impl FnMut(&str, &'s T) -> Result<U, E>) -> Result<Params<U>, E> {
        fn dense<'s, T, U, E>(
            prefix: &str,
            d: &'s Dense<T>,
            f: &mut impl FnMut(&str, &'s T) -> Result<U, E>,
        ) -> Result<Dense<U>, E> {
            d.try_map(|n, t| f(&format!("{prefix}.{n}"), t))
        }
        let encoder = dense("encoder", &self.encoder, &mut f)?;
        let mut cell = |prefix: &str, c: &'s LstmCellParams<T>| c.try_map(|n, t| f(&format!("{prefix}.{n}"), t));
        let lstm_fk = cell("lstm_fk", &self.lstm_fk)?;
        let lstm_bk = cell("lstm_bk", &self.lstm_bk)?;
        let lstm_fq = cell("lstm_fq", &self.lstm_fq)?;
        let lstm_bq = cell("lstm_bq", &self.lstm_bq)?;
        let query_f = dense("query_f", &self.query_f, &mut f)?;
        let query_b = dense("query_b", &self.query_b, &mut f)?;
        let score_f = f("score_f", &self.score_f)?;
        let score_b = f("score_b", &self.score_b)?;
        let decoder = dense("decoder", &self.decoder, &mut f)?;
        let gain = dense("gain", &self.gain, &mut f)?;
        Ok(Params {
            encoder,
            lstm_fk,
            lstm_bk,
            lstm_fq,
            lstm_bq,
            query_f,
            query_b,
            score_f,
            score_b,
            decoder,
            gain,
        })
    }

    pub fn map<'s, U>(&'s self, mut f: impl FnMut(&str, &'s T) -> U) -> Params<U> {
        match self.try_map(|n, t| Ok::<_, Infallible>(f(n, t))) {
            Ok(p) => p,
        }
    }

    /// Pairs up two parameter sets slot by slot.
    pub fn zip_map<U, V>(&self, other: &Params<U>, mut f: impl FnMut(&T, &U) -> V) -> Params<V> {
        let theirs: Vec<&U> = other.entries().into_iter().map(|(_, u)| u).collect();
        let mut i = 0;
        self.map(|_, t| {
            let v = f(t, theirs[i]);
            i += 1;
            v
        })
    }
}

impl Params<Vec<usize>> {
    /// Expected tensor shape of every slot.
    pub fn shapes(d: &ModelDims) -> Self {
        let dense = |out: usize, inp: usize| Dense {
            w: vec![out, inp],
            b: vec![out],
        };
        let cell = |inp: usize, h: usize| LstmCellParams {
            w_i: vec![h, inp],
            w_f: vec![h, inp],
            w_o: vec![h, inp],
            w_g: vec![h, inp],
            u_i: vec![h, h],
            u_f: vec![h, h],
            u_o: vec![h, h],
            u_g: vec![h, h],
            b_i: vec![h],
            b_f: vec![h],
            b_o: vec![h],
            b_g: vec![h],
        };
        let h = d.hidden;
        Params {
            encoder: dense(d.encoder_out, d.feature),
            lstm_fk: cell(d.encoder_out, h),
            lstm_bk: cell(d.encoder_out, h),
            lstm_fq: cell(d.encoder_out, h),
            lstm_bq: cell(d.encoder_out, h),
            query_f: dense(h, h),
            query_b: dense(h, h),
            score_f: vec![h, h],
            score_b: vec![h, h],
            decoder: dense(d.e_dim, 4 * h),
            gain: dense(d.feature, d.e_dim),
        }
    }
}

impl Params<Tensor> {
    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut Tensor)) {
        let Params {
            encoder,
            lstm_fk,
            lstm_bk,
            lstm_fq,
            lstm_bq,
            query_f,
            query_b,
            score_f,
            score_b,
            decoder,
            gain,
        } = self;
        f(&mut encoder.w);
        f(&mut encoder.b);
        for c in [lstm_fk, lstm_bk, lstm_fq, lstm_bq] {
            for t in [
                &mut c.w_i, &mut c.w_f, &mut c.w_o, &mut c.w_g, &mut c.u_i, &mut c.u_f, &mut c.u_o, &mut c.u_g,
                &mut c.b_i, &mut c.b_f, &mut c.b_o, &mut c.b_g,
            ] {
                f(t);
            }
        }
        for d in [query_f, query_b] {
            f(&mut d.w);
            f(&mut d.b);
        }
        f(score_f);
        f(score_b);
        for d in [decoder, gain] {
            f(&mut d.w);
            f(&mut d.b);
        }
    }

    /// Visits matching slots of `self` (mutably) and `other`.
    pub fn zip_apply(&mut self, other: &Params<Tensor>, mut f: impl FnMut(&mut Tensor, &Tensor)) {
        let theirs: Vec<&Tensor> = other.entries().into_iter().map(|(_, t)| t).collect();
        let mut i = 0;
        self.for_each_mut(|t| {
            f(t, theirs[i]);
            i += 1;
        });
    }

    pub fn add_assign(&mut self, other: &Params<Tensor>) {
        self.zip_apply(other, |a, b| {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        });
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_mut(|t| t.data_mut().iter_mut().for_each(|v| *v *= s));
    }

    pub fn global_norm(&self) -> f64 {
        self.entries().iter().map(|(_, t)| t.norm_sq()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|(_, t)| t.is_finite())
    }

    pub fn num_values(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Network weights together with the dimensions they were built for.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    tensors: Params<Tensor>,
}

impl ModelParams {
    /// Checks every slot against the shapes implied by `dims`.
    pub fn new(dims: ModelDims, tensors: Params<Tensor>) -> Result<Self> {
        dims.validate()?;
        let shapes = Params::shapes(&dims);
        for ((name, t), (_, s)) in tensors.entries().into_iter().zip(shapes.entries()) {
            if t.shape() != s.as_slice() {
                return Err(Error::input(format!("{name}: shape {:?}, expected {s:?}", t.shape())));
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn tensors(&self) -> &Params<Tensor> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut Params<Tensor> {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Params<Tensor> {
        self.tensors
    }
}

fn is_forget_bias(name: &str) -> bool {
    name.starts_with("lstm_") && name.ends_with(".b_f")
}

/// Glorot-uniform weights, zero biases except LSTM forget-gate biases of 1.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = Params::shapes(&dims).map(|name, shape| {
        let n: usize = shape.iter().product();
        let data = if shape.len() == 2 {
            let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-limit..limit)).collect()
        } else if is_forget_bias(name) {
            vec![1.0; n]
        } else {
            vec![0.0; n]
        };
        Tensor::new(shape.clone(), data).expect("shape and data built together")
    });
    ModelParams::new(dims, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelDims {
        ModelDims {
            feature: 8,
            encoder_out: 16,
            hidden: 12,
            e_dim: 12,
        }
    }

    #[test]
    fn same_seed_same_params() {
        assert_eq!(init_params(small(), 3).unwrap(), init_params(small(), 3).unwrap());
        assert_ne!(init_params(small(), 3).unwrap(), init_params(small(), 4).unwrap());
    }

    #[test]
    fn biases_zero_except_forget_gates() {
        let p = init_params(small(), 1).unwrap();
        for (name, t) in p.tensors().entries() {
            if t.rank() == 1 {
                let expect = if is_forget_bias(&name) { 1.0 } else { 0.0 };
                assert!(t.data().iter().all(|&v| v == expect), "{name}");
            }
        }
    }

    #[test]
    fn weight_mean_is_near_zero() {
        let p = init_params(ModelDims::full(), 0).unwrap();
        let weights: Vec<f64> = p
            .tensors()
            .entries()
            .into_iter()
            .filter(|(_, t)| t.rank() == 2)
            .flat_map(|(_, t)| t.data().to_vec())
            .collect();
        assert!(weights.len() >= 10_000);
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let dims = ModelDims { hidden: 0, ..small() };
        assert!(matches!(init_params(dims, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let p = init_params(small(), 0).unwrap();
        let names: Vec<String> = p.tensors().entries().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 2 + 4 * 12 + 4 + 2 + 4);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names[0], "encoder.w");
        assert_eq!(names.last().unwrap(), "gain.b");
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut t = init_params(small(), 0).unwrap().into_tensors();
        t.score_f = Tensor::zeros(&[3, 3]);
        assert!(ModelParams::new(small(), t).is_err());
    }
}
