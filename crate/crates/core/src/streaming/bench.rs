use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::kernels::{KernelKind, ATTENTION_CLAMP};
use crate::model::{ModelConfig, ModelParams, TrainConfig};
use crate::numerics::{ops, Tensor};

use super::{init_state, StreamBatch, StreamState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub layers: Vec<usize>,
    pub repetitions: usize,
    /// Untimed runs before each measured configuration.
    pub warmup: usize,
    pub dim: usize,
    pub time_dim: usize,
    pub kernel: KernelKind,
    pub seed: u64,
    /// Also time the direct full-neighbourhood recomputation.
    pub baseline: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1, 16, 64, 256],
            layers: vec![1, 2, 3],
            repetitions: 20,
            warmup: 2,
            dim: 128,
            time_dim: 64,
            kernel: KernelKind::Gcn,
            seed: 0,
            baseline: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub batch_size: usize,
    pub layers: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl BenchRow {
    fn from_samples(batch_size: usize, layers: usize, mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let pct = |p: f64| ms[((p * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
        Self {
            batch_size,
            layers,
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p50_ms: pct(0.5),
            p95_ms: pct(0.95),
        }
    }
}

/// Least-squares line `y = slope·x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// `None` with fewer than two points or no spread in `x`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sst: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if sst == 0.0 { 1.0 } else { 1.0 - sse / sst };
    Some(LinearFit { slope, intercept, r2 })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BenchReport {
    /// Latency of `StreamState::update`.
    pub stream: Vec<BenchRow>,
    /// Latency of recomputing the batch's new temporal nodes from their whole
    /// temporal neighbourhoods, on the same batches.
    pub direct: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "batch_size,layers,mean_ms,p50_ms,p95_ms";

    pub fn csv(rows: &[BenchRow]) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.batch_size, r.layers, r.mean_ms, r.p50_ms, r.p95_ms);
        }
        s
    }

    /// Mean latency against the layer count at one batch size.
    pub fn layer_fit(rows: &[BenchRow], batch_size: usize) -> Option<LinearFit> {
        let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.batch_size == batch_size).collect();
        let xs: Vec<f64> = sel.iter().map(|r| r.layers as f64).collect();
        let ys: Vec<f64> = sel.iter().map(|r| r.mean_ms).collect();
        linear_fit(&xs, &ys)
    }

    /// Mean latency against the batch size at one layer count.
    pub fn batch_fit(rows: &[BenchRow], layers: usize) -> Option<LinearFit> {
        let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.layers == layers).collect();
        let xs: Vec<f64> = sel.iter().map(|r| r.batch_size as f64).collect();
        let ys: Vec<f64> = sel.iter().map(|r| r.mean_ms).collect();
        linear_fit(&xs, &ys)
    }
}

fn batch_after(g: &TemporalGraph, start: usize, size: usize) -> Result<StreamBatch> {
    let features = (start..start + size).flat_map(|i| g.features(i).iter().copied()).collect();
    StreamBatch::new(g.interactions()[start..start + size].to_vec(), features)
}

/// Direct recomputation of the top-layer rows of the nodes `batch` reaches,
/// each aggregating every message it has ever received. Senders are read
/// from the state's latest rows, so the numbers are a cost reference and
/// not a second implementation of the model.
fn direct_refold(
    state: &StreamState,
    g: &TemporalGraph,
    inbox: &[Vec<usize>],
    end_message: usize,
    batch: &StreamBatch,
) -> Result<Tensor> {
    let params = state.params();
    let cfg = &params.config;
    let (d, f) = (cfg.dim, cfg.edge_dim);
    let mut nodes: Vec<usize> = batch.edges.iter().flat_map(|e| [e.dst, e.src]).collect();
    if cfg.directed {
        nodes = batch.edges.iter().map(|e| e.dst).collect();
    }
    nodes.sort_unstable();
    nodes.dedup();
    let emb = params.embedding();
    let mut out = Tensor::zeros(&[nodes.len(), d]);
    for k in 1..=cfg.layers {
        let (tw, tb) = params.layer_time(k);
        let weight = params.get(&format!("layer{k}.weight")).expect("layout");
        let bias = params.get(&format!("layer{k}.bias"));
        for (i, &v) in nodes.iter().enumerate() {
            let msgs = &inbox[v][..inbox[v].partition_point(|&m| m < end_message)];
            if msgs.is_empty() {
                continue;
            }
            let mut m = Vec::with_capacity(msgs.len() * cfg.message_dim());
            for &mi in msgs {
                let msg = &g.messages()[mi];
                let row = if k > 1 && state.cum_degree(msg.src) > 0 {
                    state.layer_rows(k - 1).row(msg.src)
                } else {
                    emb.row(msg.src)
                };
                m.extend_from_slice(row);
                let t = cfg.time_norm.apply(msg.time);
                m.extend(tw.data().iter().zip(tb.data()).map(|(w, b)| (t * w + b).cos()));
                m.extend_from_slice(&g.features(msg.interaction)[..f]);
            }
            let m = Tensor::matrix(msgs.len(), cfg.message_dim(), m)?;
            let mut z = ops::matmul(&m, weight)?;
            if let Some(b) = bias {
                z = ops::add_bias(&z, b)?;
            }
            let row = out.row_mut(i);
            row.fill(0.0);
            match cfg.kernel {
                KernelKind::Pool => {
                    row.fill(f64::NEG_INFINITY);
                    for r in 0..z.rows() {
                        for (o, &x) in row.iter_mut().zip(z.row(r)) {
                            *o = o.max(x);
                        }
                    }
                }
                kernel => {
                    let w: Vec<f64> = match kernel {
                        KernelKind::Attention => {
                            let q = params.get(&format!("layer{k}.query_src")).expect("layout");
                            let s: Vec<f64> = (0..m.rows())
                                .map(|r| m.row(r).iter().zip(q.data()).map(|(a, b)| a * b).sum::<f64>())
                                .map(|s: f64| s.clamp(-ATTENTION_CLAMP, ATTENTION_CLAMP).exp())
                                .collect();
                            let total: f64 = s.iter().sum();
                            s.iter().map(|x| x / total).collect()
                        }
                        _ => vec![1.0 / msgs.len() as f64; msgs.len()],
                    };
                    for (r, wr) in w.iter().enumerate() {
                        for (o, &x) in row.iter_mut().zip(z.row(r)) {
                            *o += wr * x;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Times stream updates on the interactions that follow the first
/// `history` interactions of `g`, for every layer count and batch size in
/// `cfg`, with freshly initialized models. Each repetition folds the same
/// batch into a fresh copy of the warmed state.
pub fn stream_bench(g: &TemporalGraph, history: usize, cfg: &BenchConfig) -> Result<BenchReport> {
    let mut report = BenchReport::default();
    if cfg.repetitions == 0 {
        return Ok(report);
    }
    let largest = cfg.batch_sizes.iter().copied().max().unwrap_or(0);
    if cfg.batch_sizes.contains(&0) {
        return Err(Error::Config("batch sizes must be positive".into()));
    }
    if history + largest > g.num_interactions() {
        return Err(Error::Config(format!(
            "{} interactions cannot hold a history of {history} plus a batch of {largest}",
            g.num_interactions()
        )));
    }
    let hist = g.prefix(history);
    let full = g.prefix(history + largest);
    let mut inbox = vec![Vec::new(); g.num_nodes()];
    for (i, m) in full.messages().iter().enumerate() {
        inbox[m.dst].push(i);
    }
    let messages_per_edge = if g.is_directed() { 1 } else { 2 };

    for &layers in &cfg.layers {
        let train =
            TrainConfig { layers, dim: cfg.dim, time_dim: cfg.time_dim, kernel: cfg.kernel, ..Default::default() };
        train.validate()?;
        let params = ModelParams::init(ModelConfig::for_graph(g, &train), cfg.seed);
        let warm = init_state(&params, &hist)?;
        for &size in &cfg.batch_sizes {
            let batch = batch_after(g, history, size)?;
            let mut samples = Vec::with_capacity(cfg.repetitions);
            for rep in 0..cfg.warmup + cfg.repetitions {
                let mut st = warm.clone();
                let t0 = Instant::now();
                st.update(&batch)?;
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                if rep >= cfg.warmup {
                    samples.push(ms);
                }
            }
            report.stream.push(BenchRow::from_samples(size, layers, samples));

            if cfg.baseline {
                let end = (history + size) * messages_per_edge;
                let mut samples = Vec::with_capacity(cfg.repetitions);
                for rep in 0..cfg.warmup + cfg.repetitions {
                    let t0 = Instant::now();
                    std::hint::black_box(direct_refold(&warm, &full, &inbox, end, &batch)?);
                    let ms = t0.elapsed().as_secs_f64() * 1e3;
                    if rep >= cfg.warmup {
                        samples.push(ms);
                    }
                }
                report.direct.push(BenchRow::from_samples(size, layers, samples));
            }
        }
    }
    Ok(report)
}
