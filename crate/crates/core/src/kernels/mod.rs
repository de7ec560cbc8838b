//! Aggregation-propagation (AP) convolution over the whole temporal
//! neighbourhood, and a direct oracle over the explicit message-passing
//! graph.
//!
//! Every kernel keeps an unnormalized running accumulator along each node's
//! propagation list and divides at readout:
//!
//! | kernel    | per-message weight          | accumulator        | readout             |
//! |-----------|-----------------------------|--------------------|---------------------|
//! | GCN       | `1 / sqrt(deg(sender))`     | `Σ w·z`            | `S / sqrt(deg(v))`  |
//! | MEAN      | 1                           | `Σ z`              | `S / deg(v)`        |
//! | POOL      | –                           | running max of `z` | `S`                 |
//! | ATTENTION | `exp(clamp(lrelu(score)))`  | `Σ w·z`, `Σ w`     | `S / Σ w`           |
//!
//! where `z = W m + b` is the transformed message (GCN has no bias).

mod ap;
mod check;
mod direct;

pub use ap::{ap_forward, ApOutput, ApVars};
pub use check::{check_equivalence, compare_tables, EquivalenceConfig, EquivalenceReport, Tolerance};
pub use direct::direct_forward;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamId, Scalar, Tape, Tensor};

/// Negative slope of every leaky rectifier in the model.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Attention scores are clamped to `[-ATTENTION_CLAMP, ATTENTION_CLAMP]`
/// before exponentiation.
pub const ATTENTION_CLAMP: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gcn,
    Mean,
    Pool,
    Attention,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [KernelKind::Gcn, KernelKind::Mean, KernelKind::Pool, KernelKind::Attention];

    pub fn has_bias(self) -> bool {
        !matches!(self, KernelKind::Gcn)
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Gcn => "gcn",
            KernelKind::Mean => "mean",
            KernelKind::Pool => "pool",
            KernelKind::Attention => "attention",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(KernelKind::Gcn),
            "mean" => Ok(KernelKind::Mean),
            "pool" => Ok(KernelKind::Pool),
            "attention" | "att" => Ok(KernelKind::Attention),
            other => Err(Error::Config(format!("unknown kernel {other:?} (expected gcn, mean, pool or attention)"))),
        }
    }
}

/// Concrete parameters of one AP block.
#[derive(Clone, Debug, PartialEq)]
pub struct ApParams<T = f64> {
    /// `message_dim × out_dim`.
    pub weight: Tensor<T>,
    /// `1 × out_dim`; absent for GCN.
    pub bias: Option<Tensor<T>>,
    /// Attention query over the message, `message_dim × 1`.
    pub query_src: Option<Tensor<T>>,
    /// Attention query over the receiving temporal node, `node_dim × 1`.
    pub query_dst: Option<Tensor<T>>,
}

/// Glorot-uniform matrix.
pub fn glorot<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let v = (0..rows * cols).map(|_| T::from_f64_lossy(rng.random_range(-limit..limit))).collect();
    Tensor::matrix(rows, cols, v).expect("sized")
}

impl<T: Scalar> ApParams<T> {
    /// Random parameters (Glorot weights; small random biases so that the
    /// bias path is exercised).
    pub fn random<R: Rng + ?Sized>(
        kernel: KernelKind,
        message_dim: usize,
        node_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let attention = kernel == KernelKind::Attention;
        Self {
            weight: glorot(rng, message_dim, out_dim),
            bias: kernel.has_bias().then(|| {
                let v = (0..out_dim).map(|_| T::from_f64_lossy(rng.random_range(-0.1..0.1))).collect();
                Tensor::row_vector(v)
            }),
            query_src: attention.then(|| glorot(rng, message_dim, 1)),
            query_dst: attention.then(|| glorot(rng, node_dim, 1)),
        }
    }

    /// Identity transform with zero bias and zero attention queries.
    pub fn identity(kernel: KernelKind, dim: usize) -> Self {
        let mut w = Tensor::zeros(&[dim, dim]);
        for i in 0..dim {
            w.data_mut()[i * dim + i] = T::one();
        }
        let attention = kernel == KernelKind::Attention;
        Self {
            weight: w,
            bias: kernel.has_bias().then(|| Tensor::zeros(&[1, dim])),
            query_src: attention.then(|| Tensor::zeros(&[dim, 1])),
            query_dst: attention.then(|| Tensor::zeros(&[dim, 1])),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ApParams<U> {
        ApParams {
            weight: self.weight.cast(),
            bias: self.bias.as_ref().map(Tensor::cast),
            query_src: self.query_src.as_ref().map(Tensor::cast),
            query_dst: self.query_dst.as_ref().map(Tensor::cast),
        }
    }

    /// Records the parameters on a tape as trainable, starting at `first_id`.
    /// Returns the handles and the next unused id.
    pub fn register(&self, tape: &mut Tape<T>, first_id: usize) -> (ApVars, usize) {
        let mut id = first_id;
        let mut next = |tape: &mut Tape<T>, t: &Tensor<T>| {
            let v = tape.param(ParamId(id), t.clone());
            id += 1;
            v
        };
        let weight = next(tape, &self.weight);
        let bias = self.bias.as_ref().map(|b| next(tape, b));
        let query_src = self.query_src.as_ref().map(|q| next(tape, q));
        let query_dst = self.query_dst.as_ref().map(|q| next(tape, q));
        (ApVars { weight, bias, query_src, query_dst }, id)
    }

    /// Records the parameters as constants.
    pub fn constants(&self, tape: &mut Tape<T>) -> ApVars {
        ApVars {
            weight: tape.constant(self.weight.clone()),
            bias: self.bias.as_ref().map(|b| tape.constant(b.clone())),
            query_src: self.query_src.as_ref().map(|q| tape.constant(q.clone())),
            query_dst: self.query_dst.as_ref().map(|q| tape.constant(q.clone())),
        }
    }
}
