use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{auc_roc, build_link_testset, score_links};
use crate::graph::{Interaction, Split, TemporalGraph, TemporalIndex};
use crate::numerics::{relative_error, Gradients, ParamId, Scalar, Tape, Tensor, Var};

use super::forward::embed_queries;
use super::{forward_temporal, nsl_loss, Mode, ModelConfig, ModelParams, NegativeSampler, TrainConfig};

/// Adam with bias correction. Parameter `i` of the slice passed to
/// [`Adam::step`] takes its gradient from `ParamId(i)`.
#[derive(Clone, Debug)]
pub struct Adam<T = f64> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Tensor<T>], lr: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros(), v: zeros() }
    }

    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &Gradients<T>) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let lr = T::from_f64_lossy(self.lr * c2.sqrt() / c1);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let eps = T::from_f64_lossy(self.eps * c2.sqrt());
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = grads.get(ParamId(i)) else { continue };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mj = b1 * *mj + (T::one() - b1) * gj;
                *vj = b2 * *vj + (T::one() - b2) * gj * gj;
                *pj = *pj - lr * *mj / (vj.sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    /// `None` on the end-of-epoch row, whose loss is the epoch mean.
    pub batch: Option<usize>,
    pub loss: f64,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub epochs_run: usize,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,batch,loss,val_auc";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let batch = r.batch.map(|b| b.to_string()).unwrap_or_default();
            let auc = r.val_auc.map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{}", r.epoch, batch, r.loss, auc);
        }
        s
    }

    /// Per-batch losses in order.
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.batch.is_some()).map(|r| r.loss).collect()
    }

    pub fn val_aucs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.val_auc).collect()
    }
}

/// Loss and gradients of one batch of positive edges. The forward pass runs
/// over the part of `g` strictly before the batch's last timestamp, which
/// is all any query in the batch can see.
pub(crate) fn batch_loss<T: Scalar>(
    params: &ModelParams<T>,
    g: &TemporalGraph,
    batch: &[Interaction],
    negatives: &[usize],
    k: usize,
    mode: &mut Mode<'_>,
) -> Result<(f64, Gradients<T>)> {
    let t_max = batch.iter().map(|e| e.time).fold(f64::NEG_INFINITY, f64::max);
    let history = g.before(t_max);
    let index = TemporalIndex::build(&history);
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let fwd = forward_temporal(&mut tape, params, &vars, &history, &index, mode)?;
    let top = *fwd.layers.last().expect("at least one layer");

    let b = batch.len();
    let mut queries: Vec<(usize, f64)> = Vec::with_capacity(b * (2 + k));
    queries.extend(batch.iter().map(|e| (e.src, e.time)));
    queries.extend(batch.iter().map(|e| (e.dst, e.time)));
    queries.extend(negatives.iter().enumerate().map(|(i, &n)| (n, batch[i / k].time)));
    let emb = embed_queries(&mut tape, params, &vars, &index, top, &queries, mode)?;
    let pick = |tape: &mut Tape<T>, r: std::ops::Range<usize>| -> Result<Var> {
        tape.gather_rows(emb, r.collect::<Vec<_>>().into())
    };
    let src = pick(&mut tape, 0..b)?;
    let dst = pick(&mut tape, b..2 * b)?;
    let neg = pick(&mut tape, 2 * b..queries.len())?;
    let loss = nsl_loss(&mut tape, src, dst, neg, k)?;
    let value = tape.value(loss).item().as_f64();
    let grads = tape.backward(loss)?;
    Ok((value, grads))
}

/// Trains on `split.train` with chronological mini-batches, scoring the
/// validation edges after every epoch. Returns the parameters of the best
/// validation epoch.
pub fn train<T: Scalar>(split: &Split, cfg: &TrainConfig) -> Result<(ModelParams<T>, TrainLog)> {
    cfg.validate()?;
    let g = &split.train;
    if g.is_empty() {
        return Err(Error::EmptySplit("training"));
    }
    if split.val.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let mut params = ModelParams::<T>::init(ModelConfig::for_graph(&split.history, cfg), cfg.seed);
    let sampler = NegativeSampler::new(g.interactions(), cfg.sampler)?;
    let val_pairs = build_link_testset(&split.val, sampler.universe(), cfg.seed.wrapping_add(0x5eed))?;
    let val_labels: Vec<bool> = val_pairs.iter().map(|p| p.label).collect();
    let val_history = split.train_val();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(params.tensors(), cfg.lr);

    let mut log = TrainLog { best_val_auc: f64::NEG_INFINITY, ..Default::default() };
    let mut best = params.clone();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut epoch_loss = 0.0;
        let batches = g.interactions().chunks(cfg.batch_size);
        let n_batches = batches.len();
        for (bi, batch) in batches.enumerate() {
            let negatives = sampler.sample_batch(&mut rng, batch.len(), cfg.negatives);
            let mut mode = Mode::Train { rng: &mut rng, dropout: cfg.dropout };
            let (loss, grads) = batch_loss(&params, g, batch, &negatives, cfg.negatives, &mut mode)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi });
            }
            adam.step(params.tensors_mut(), &grads);
            if !params.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi });
            }
            epoch_loss += loss;
            debug!("epoch {epoch} batch {bi} loss {loss:.6}");
            log.rows.push(LogRow { epoch, batch: Some(bi), loss, val_auc: None });
        }
        let scores = score_links(&params, &val_history, &val_pairs)?;
        let auc = auc_roc(&scores, &val_labels)?;
        let mean_loss = epoch_loss / n_batches as f64;
        info!("epoch {epoch}: loss {mean_loss:.5}, validation AUC {auc:.4}");
        log.rows.push(LogRow { epoch, batch: None, loss: mean_loss, val_auc: Some(auc) });
        log.epochs_run = epoch;
        if auc > log.best_val_auc {
            log.best_val_auc = auc;
            log.best_epoch = epoch;
            best = params.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                info!("no validation improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    Ok((best, log))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel: f64,
    pub checked: usize,
    /// Tensor name and flat offset of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Central finite differences of the negative-sampling loss over every edge
/// of `g` (as one batch, dropout off) against the analytic gradient, on
/// `coords` random parameter coordinates.
pub fn grad_check(
    params: &ModelParams,
    g: &TemporalGraph,
    coords: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let batch = g.interactions();
    if batch.is_empty() {
        return Err(Error::EmptySplit("gradient check"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = NegativeSampler::new(batch, Default::default())?;
    let negatives = sampler.sample_batch(&mut rng, batch.len(), 1);
    let loss = |p: &ModelParams| batch_loss(p, g, batch, &negatives, 1, &mut Mode::Infer);
    let (_, grads) = loss(params)?;

    let sizes: Vec<usize> = params.tensors().iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let picks = sample(&mut rng, total, coords.min(total)).into_vec();
    let mut report = GradCheckReport { max_rel: 0.0, checked: 0, worst: None };
    for flat in picks {
        let (mut ti, mut off) = (0, flat);
        while off >= sizes[ti] {
            off -= sizes[ti];
            ti += 1;
        }
        let analytic = grads.get(ParamId(ti)).map_or(0.0, |g| g.data()[off]);
        let mut shifted = params.clone();
        shifted.tensors_mut()[ti].data_mut()[off] += eps;
        let hi = loss(&shifted)?.0;
        shifted.tensors_mut()[ti].data_mut()[off] -= 2.0 * eps;
        let lo = loss(&shifted)?.0;
        let numeric = if eps == 0.0 { 0.0 } else { (hi - lo) / (2.0 * eps) };
        let err = if eps == 0.0 { (hi - lo).abs() } else { relative_error(analytic, numeric, 1e-6) };
        report.checked += 1;
        if err > report.max_rel || report.worst.is_none() {
            report.max_rel = report.max_rel.max(err);
            report.worst = Some((params.names()[ti].clone(), off));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::random;
    use crate::kernels::KernelKind;

    fn tiny(kernel: KernelKind, seed: u64) -> (ModelParams, TemporalGraph) {
        let g = random(seed, 6, 20, false);
        let cfg = TrainConfig { dim: 5, time_dim: 3, layers: 2, kernel, ..Default::default() };
        let mut p = ModelParams::init(ModelConfig::for_graph(&g, &cfg), seed);
        // non-zero biases so every path is exercised
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in p.tensors_mut() {
            for x in t.data_mut() {
                *x += rand::Rng::random_range(&mut rng, -0.1..0.1);
            }
        }
        (p, g)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kernel in KernelKind::ALL {
            let (p, g) = tiny(kernel, 7);
            let r = grad_check(&p, &g, 120, 1e-5, 1).unwrap();
            assert!(r.checked >= 100);
            assert!(r.max_rel < 1e-4, "{kernel}: {r:?}");
        }
    }

    #[test]
    fn zero_length_perturbation_is_exact() {
        let (p, g) = tiny(KernelKind::Mean, 3);
        assert_eq!(grad_check(&p, &g, 100, 0.0, 2).unwrap().max_rel, 0.0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p: Vec<Tensor> = vec![Tensor::row_vector(vec![1.0, -1.0])];
        let mut adam = Adam::new(&p, 0.1);
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), p[0].clone());
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        adam.step(&mut p, &tape.backward(l).unwrap());
        // bias-corrected first step is lr·sign(g)
        assert!((p[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((p[0].data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn causality_of_the_loss() {
        // Loss of an edge at time t ignores interactions at or after t.
        let g = random(9, 8, 60, false);
        let cfg = TrainConfig { dim: 4, time_dim: 2, ..Default::default() };
        let p = ModelParams::<f64>::init(ModelConfig::for_graph(&g, &cfg), 0);
        let e = g.interactions()[40];
        let later = g.up_to(g.interactions()[55].time);
        let exact = g.before(e.time);
        let a = batch_loss(&p, &later, &[e], &[2], 1, &mut Mode::Infer).unwrap().0;
        let b = batch_loss(&p, &exact, &[e], &[2], 1, &mut Mode::Infer).unwrap().0;
        assert_eq!(a, b);
    }
}
