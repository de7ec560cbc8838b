//! Dynamic node representation model: temporal activation, stacked AP
//! blocks, the projection head, and negative-sampling training.

mod forward;
mod io;
mod loss;
mod train;

pub use forward::{
    dynamic_embed, forward_direct, forward_temporal, project, query_rows, temporal_activation, Forward, Mode,
};
pub use loss::{nsl_loss, NegativeSampler, SamplerKind};
pub use train::{grad_check, train, Adam, GradCheckReport, LogRow, TrainLog};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{TemporalGraph, TimeNorm};
use crate::kernels::{glorot, ApParams, ApVars, KernelKind};
use crate::numerics::{ParamId, Scalar, Tape, Tensor, Var};

/// Hyper-parameters of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub layers: usize,
    pub dim: usize,
    pub time_dim: usize,
    pub kernel: KernelKind,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub negatives: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub sampler: SamplerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            dim: 128,
            time_dim: 64,
            kernel: KernelKind::Gcn,
            lr: 0.001,
            batch_size: 256,
            dropout: 0.2,
            negatives: 1,
            patience: 5,
            max_epochs: 50,
            sampler: SamplerKind::Uniform,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("dim", self.dim),
            ("time_dim", self.time_dim),
            ("batch_size", self.batch_size),
            ("negatives", self.negatives),
            ("patience", self.patience),
            ("max_epochs", self.max_epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Architecture and data binding stored alongside trained weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_nodes: usize,
    pub dim: usize,
    pub time_dim: usize,
    pub layers: usize,
    pub kernel: KernelKind,
    /// Width of per-interaction features appended to every message.
    pub edge_dim: usize,
    pub directed: bool,
    /// Applied after each AP block during training only.
    pub dropout: f64,
    pub time_norm: TimeNorm,
    pub node_names: Vec<String>,
}

impl ModelConfig {
    pub fn for_graph(g: &TemporalGraph, cfg: &TrainConfig) -> Self {
        Self {
            num_nodes: g.num_nodes(),
            dim: cfg.dim,
            time_dim: cfg.time_dim,
            layers: cfg.layers,
            kernel: cfg.kernel,
            edge_dim: g.feature_width(),
            directed: g.is_directed(),
            dropout: cfg.dropout,
            time_norm: g.time_norm(),
            node_names: g.node_names().to_vec(),
        }
    }

    /// Width of a message: sender row, time encoding, edge features.
    pub fn message_dim(&self) -> usize {
        self.dim + self.time_dim + self.edge_dim
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (d, dt) = (self.dim, self.time_dim);
        let mut out = vec![("embedding".to_string(), vec![self.num_nodes, d])];
        for k in 1..=self.layers {
            out.push((format!("layer{k}.time_w"), vec![1, dt]));
            out.push((format!("layer{k}.time_b"), vec![1, dt]));
            out.push((format!("layer{k}.weight"), vec![self.message_dim(), d]));
            if self.kernel.has_bias() {
                out.push((format!("layer{k}.bias"), vec![1, d]));
            }
            if self.kernel == KernelKind::Attention {
                out.push((format!("layer{k}.query_src"), vec![self.message_dim(), 1]));
                out.push((format!("layer{k}.query_dst"), vec![d + dt, 1]));
            }
        }
        out.push(("proj.time_w".into(), vec![1, dt]));
        out.push(("proj.time_b".into(), vec![1, dt]));
        out.push(("proj.w1".into(), vec![d + dt, d]));
        out.push(("proj.b1".into(), vec![1, d]));
        out.push(("proj.w2".into(), vec![d, d]));
        out.push(("proj.b2".into(), vec![1, d]));
        out
    }
}

/// Trainable tensors of a model, stored flat in layout order. Parameter
/// `i` is registered on a tape as `ParamId(i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f64> {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

fn is_bias(name: &str) -> bool {
    name.ends_with("bias") || name.ends_with("time_b") || name.ends_with(".b1") || name.ends_with(".b2")
}

impl<T: Scalar> ModelParams<T> {
    /// Glorot-uniform weights and zero biases. Time-encoding phases start at
    /// π/2, so every encoding is close to zero on the normalized time axis
    /// at initialization instead of a constant shared by all nodes.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (names, tensors) = config
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let t = if name.ends_with("time_b") {
                    Tensor::full(&shape, T::from_f64_lossy(std::f64::consts::FRAC_PI_2))
                } else if is_bias(&name) {
                    Tensor::zeros(&shape)
                } else {
                    glorot(&mut rng, shape[0], shape[1])
                };
                (name, t)
            })
            .unzip();
        Self { config, names, tensors }
    }

    /// Wraps tensors that must match the configured layout exactly.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let layout = config.layout();
        if layout.len() != tensors.len() {
            return Err(Error::Format {
                kind: "model",
                msg: format!("expected {} tensors, found {}", layout.len(), tensors.len()),
            });
        }
        for ((name, shape), (found, t)) in layout.iter().zip(&tensors) {
            if name != found || shape.as_slice() != t.shape() {
                return Err(Error::Format {
                    kind: "model",
                    msg: format!("expected {name} {shape:?}, found {found} {:?}", t.shape()),
                });
            }
            if !t.is_finite() {
                return Err(Error::Format { kind: "model", msg: format!("{name} holds non-finite values") });
            }
        }
        let (names, tensors) = tensors.into_iter().unzip();
        Ok(Self { config, names, tensors })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    fn expect(&self, name: &str) -> &Tensor<T> {
        self.get(name).unwrap_or_else(|| panic!("layout has no tensor {name}"))
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn embedding(&self) -> &Tensor<T> {
        self.expect("embedding")
    }

    /// Time-encoding frequencies and phases of layer `k` (1-based).
    pub fn layer_time(&self, k: usize) -> (&Tensor<T>, &Tensor<T>) {
        (self.expect(&format!("layer{k}.time_w")), self.expect(&format!("layer{k}.time_b")))
    }

    /// Kernel parameters of layer `k` (1-based).
    pub fn layer_ap(&self, k: usize) -> ApParams<T> {
        ApParams {
            weight: self.expect(&format!("layer{k}.weight")).clone(),
            bias: self.get(&format!("layer{k}.bias")).cloned(),
            query_src: self.get(&format!("layer{k}.query_src")).cloned(),
            query_dst: self.get(&format!("layer{k}.query_dst")).cloned(),
        }
    }

    /// Registers every tensor on the tape as a trainable parameter.
    pub fn register(&self, tape: &mut Tape<T>) -> ModelVars {
        let vars: Vec<Var> = self.tensors.iter().enumerate().map(|(i, t)| tape.param(ParamId(i), t.clone())).collect();
        self.structure(vars)
    }

    /// Records every tensor on the tape as a constant.
    pub fn constants(&self, tape: &mut Tape<T>) -> ModelVars {
        let vars: Vec<Var> = self.tensors.iter().map(|t| tape.constant(t.clone())).collect();
        self.structure(vars)
    }

    fn structure(&self, vars: Vec<Var>) -> ModelVars {
        let by_name = |name: &str| self.names.iter().position(|n| n == name).map(|i| vars[i]);
        let need = |name: &str| by_name(name).expect("layout tensor");
        let layers = (1..=self.config.layers)
            .map(|k| LayerVars {
                time_w: need(&format!("layer{k}.time_w")),
                time_b: need(&format!("layer{k}.time_b")),
                ap: ApVars {
                    weight: need(&format!("layer{k}.weight")),
                    bias: by_name(&format!("layer{k}.bias")),
                    query_src: by_name(&format!("layer{k}.query_src")),
                    query_dst: by_name(&format!("layer{k}.query_dst")),
                },
            })
            .collect();
        ModelVars {
            embedding: need("embedding"),
            layers,
            proj: ProjVars {
                time_w: need("proj.time_w"),
                time_b: need("proj.time_b"),
                w1: need("proj.w1"),
                b1: need("proj.b1"),
                w2: need("proj.w2"),
                b2: need("proj.b2"),
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub time_w: Var,
    pub time_b: Var,
    pub ap: ApVars,
}

#[derive(Clone, Copy, Debug)]
pub struct ProjVars {
    pub time_w: Var,
    pub time_b: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Tape handles for a [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embedding: Var,
    pub layers: Vec<LayerVars>,
    pub proj: ProjVars,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n: usize, kernel: KernelKind) -> ModelConfig {
        ModelConfig {
            num_nodes: n,
            dim: 128,
            time_dim: 64,
            layers: 2,
            kernel,
            edge_dim: 0,
            directed: false,
            dropout: 0.2,
            time_norm: TimeNorm::default(),
            node_names: (0..n).map(|i| i.to_string()).collect(),
        }
    }

    #[test]
    fn default_parameter_count() {
        // Independent tally: each layer holds a time encoding (2·dt) and a
        // (d + dt) × d transform; the head holds its own time encoding, a
        // (d + dt) → d layer and a d → d layer, both biased.
        let (d, dt, k) = (128usize, 64usize, 2usize);
        let per_layer = 2 * dt + (d + dt) * d;
        let head = 2 * dt + (d + dt) * d + d + d * d + d;
        for n in [0usize, 1, 37] {
            let p = ModelParams::<f64>::init(config(n, KernelKind::Gcn), 0);
            assert_eq!(p.param_count(), k * per_layer + head + n * d);
        }
        assert_eq!(k * per_layer + head, 90_752);
    }

    #[test]
    fn kernel_specific_tensors() {
        let mean = ModelParams::<f64>::init(config(3, KernelKind::Mean), 0);
        let gcn = ModelParams::<f64>::init(config(3, KernelKind::Gcn), 0);
        assert_eq!(mean.param_count() - gcn.param_count(), 2 * 128);
        let att = ModelParams::<f64>::init(config(3, KernelKind::Attention), 0);
        assert_eq!(att.param_count() - mean.param_count(), 2 * (192 + 192));
        assert!(att.layer_ap(2).query_dst.is_some());
    }

    #[test]
    fn init_is_seeded_and_finite() {
        let a = ModelParams::<f64>::init(config(5, KernelKind::Pool), 9);
        let b = ModelParams::<f64>::init(config(5, KernelKind::Pool), 9);
        let c = ModelParams::<f64>::init(config(5, KernelKind::Pool), 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.is_finite());
        assert!(a.get("proj.b1").unwrap().data().iter().all(|&x| x == 0.0));
        assert!(a.get("layer1.time_b").unwrap().data().iter().all(|&x| x == std::f64::consts::FRAC_PI_2));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { layers: 0, ..Default::default() },
            TrainConfig { lr: -1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }
}
