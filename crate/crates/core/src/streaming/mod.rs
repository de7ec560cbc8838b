//! Online inference: per-node kernel state that folds arriving edge batches
//! at a cost independent of the history length.
//!
//! The state keeps, for every node and layer, the row of its latest temporal
//! node together with the kernel accumulator behind it (weighted sum, running
//! max, attention mass), so that a new timestamp only has to aggregate its own
//! messages and combine them with one stored row per node.

mod bench;
mod snapshot;

pub use bench::{linear_fit, stream_bench, BenchConfig, BenchReport, BenchRow, LinearFit};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Interaction, TemporalGraph, TemporalIndex};
use crate::kernels::{KernelKind, ATTENTION_CLAMP, LEAKY_SLOPE};
use crate::model::{forward_temporal, project, Mode, ModelParams, ProjVars};
use crate::numerics::{ops, Tape, Tensor};

/// Which rows a layer reads for senders that receive messages in the same
/// timestamp group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldOrder {
    /// Layer `k` reads the rows that layer `k-1` has just produced for the
    /// group, like the batch forward.
    #[default]
    Exact,
    /// All layers aggregate from the rows stored before the group, and rows
    /// are written only afterwards. Matches `Exact` for one layer only.
    Literal,
}

/// Edges arriving together, plus the arrival time that becomes the new
/// watermark.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamBatch {
    pub time: f64,
    pub edges: Vec<Interaction>,
    /// `edge_dim` values per edge, row-major.
    pub features: Vec<f64>,
}

impl StreamBatch {
    /// Batch arriving at the time of its latest edge.
    pub fn new(edges: Vec<Interaction>, features: Vec<f64>) -> Result<Self> {
        let time = edges
            .iter()
            .map(|e| e.time)
            .reduce(f64::max)
            .ok_or_else(|| Error::invalid("stream_batch", "no edges; use StreamBatch::empty"))?;
        Ok(Self { time, edges, features })
    }

    /// A batch without edges that only advances the watermark.
    pub fn empty(time: f64) -> Self {
        Self { time, edges: Vec::new(), features: Vec::new() }
    }

    /// Consecutive windows of `size` interactions of `g`, in time order.
    pub fn windows(g: &TemporalGraph, size: usize) -> Result<Vec<StreamBatch>> {
        if size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let n = g.num_interactions();
        (0..n)
            .step_by(size)
            .map(|lo| {
                let hi = (lo + size).min(n);
                let features = (lo..hi).flat_map(|i| g.features(i).iter().copied()).collect();
                StreamBatch::new(g.interactions()[lo..hi].to_vec(), features)
            })
            .collect()
    }
}

/// Work done by one [`StreamState::update`] call.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateReport {
    /// Nodes that received at least one message, sorted.
    pub nodes: Vec<usize>,
    /// Top-layer rows of `nodes` after the update.
    pub rows: Tensor,
    /// Timestamp groups folded, counting a reopened group again.
    pub groups: usize,
    /// Messages aggregated (two per edge when undirected).
    pub messages: usize,
    /// State rows read or written: `|V'|·K` per group plus one per message.
    pub touched_rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct LayerState {
    h: Tensor,
    acc: Tensor,
    /// Attention mass per node; empty for other kernels.
    mass: Vec<f64>,
}

/// The last folded timestamp group and the rows it overwrote, kept while the
/// watermark sits at its time so that more edges at that time can be merged
/// in exactly.
#[derive(Clone, Debug, PartialEq)]
struct OpenGroup {
    time: f64,
    edges: Vec<Interaction>,
    features: Vec<f64>,
    nodes: Vec<usize>,
    cum_degree: Vec<usize>,
    last_time: Vec<f64>,
    layers: Vec<LayerState>,
}

/// Streaming state over the nodes of one model. Cloning shares the
/// parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState {
    params: Arc<ModelParams>,
    order: FoldOrder,
    layers: Vec<LayerState>,
    cum_degree: Vec<usize>,
    /// Time of each node's latest temporal node; 0 while `cum_degree` is 0.
    last_time: Vec<f64>,
    watermark: Option<f64>,
    open: Option<OpenGroup>,
}

fn leaky(x: f64) -> f64 {
    ops::leaky_relu_scalar(x, LEAKY_SLOPE)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds the state at the end of `history`.
pub fn init_state(params: &ModelParams, history: &TemporalGraph) -> Result<StreamState> {
    init_state_with(params, history, FoldOrder::Exact)
}

/// [`init_state`] with an explicit fold order. Everything before the last
/// timestamp of `history` comes from one batch forward; the last timestamp
/// is folded as a stream batch so that it stays open for late ties.
pub fn init_state_with(params: &ModelParams, history: &TemporalGraph, order: FoldOrder) -> Result<StreamState> {
    let cfg = &params.config;
    if history.num_nodes() > cfg.num_nodes {
        return Err(Error::UnknownNode(history.num_nodes() - 1));
    }
    if history.is_directed() != cfg.directed {
        return Err(Error::Config(format!(
            "history is {}directed but the model was trained {}directed",
            if history.is_directed() { "" } else { "un" },
            if cfg.directed { "" } else { "un" }
        )));
    }
    let mut st = StreamState::cold(params, order);
    let Some((_, t_last)) = history.time_range() else {
        return Ok(st);
    };
    let pre = history.before(t_last);
    if let Some((_, t_pre)) = pre.time_range() {
        let index = TemporalIndex::build(&pre);
        let mut tape = Tape::new();
        let vars = params.constants(&mut tape);
        let fwd = forward_temporal(&mut tape, params, &vars, &pre, &index, &mut Mode::Infer)?;
        for v in 0..pre.num_nodes() {
            let Some(tn) = index.last_tnode(v) else { continue };
            st.cum_degree[v] = index.cum_degree()[tn];
            st.last_time[v] = index.tnode_time()[tn];
            for (k, layer) in st.layers.iter_mut().enumerate() {
                layer.h.row_mut(v).copy_from_slice(tape.value(fwd.layers[k]).row(tn));
                layer.acc.row_mut(v).copy_from_slice(tape.value(fwd.ap[k].acc).row(tn));
                if let Some(m) = fwd.ap[k].mass {
                    layer.mass[v] = tape.value(m).data()[tn];
                }
            }
        }
        st.watermark = Some(t_pre);
    }
    let n = pre.num_interactions();
    let features = (n..history.num_interactions()).flat_map(|i| history.features(i).iter().copied()).collect();
    st.update(&StreamBatch { time: t_last, edges: history.interactions()[n..].to_vec(), features })?;
    Ok(st)
}

impl StreamState {
    /// Every node without history.
    pub fn cold(params: &ModelParams, order: FoldOrder) -> Self {
        let cfg = &params.config;
        let (n, d) = (cfg.num_nodes, cfg.dim);
        let acc_init = if cfg.kernel == KernelKind::Pool { f64::NEG_INFINITY } else { 0.0 };
        let mass = if cfg.kernel == KernelKind::Attention { vec![0.0; n] } else { Vec::new() };
        Self {
            params: Arc::new(params.clone()),
            order,
            layers: (0..cfg.layers)
                .map(|_| LayerState {
                    h: Tensor::zeros(&[n, d]),
                    acc: Tensor::full(&[n, d], acc_init),
                    mass: mass.clone(),
                })
                .collect(),
            cum_degree: vec![0; n],
            last_time: vec![0.0; n],
            watermark: None,
            open: None,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn order(&self) -> FoldOrder {
        self.order
    }

    pub fn num_nodes(&self) -> usize {
        self.cum_degree.len()
    }

    /// Time frontier; `None` before anything was folded.
    pub fn watermark(&self) -> Option<f64> {
        self.watermark
    }

    /// Latest rows of layer `k` (1-based) for every node; rows of nodes
    /// without history are zero.
    pub fn layer_rows(&self, k: usize) -> &Tensor {
        &self.layers[k - 1].h
    }

    /// Top-layer rows.
    pub fn top_rows(&self) -> &Tensor {
        &self.layers.last().expect("at least one layer").h
    }

    pub fn cum_degree(&self, v: usize) -> usize {
        self.cum_degree[v]
    }

    /// Time of the latest temporal node of `v`.
    pub fn last_time(&self, v: usize) -> Option<f64> {
        (self.cum_degree[v] > 0).then_some(self.last_time[v])
    }

    fn check_batch(&self, batch: &StreamBatch) -> Result<()> {
        let cfg = &self.params.config;
        let wm = self.watermark.unwrap_or(f64::NEG_INFINITY);
        if !batch.time.is_finite() {
            return Err(Error::invalid("stream_update", "non-finite batch time"));
        }
        if batch.time < wm {
            return Err(Error::OutOfOrder { batch_time: batch.time, watermark: wm });
        }
        if batch.features.len() != batch.edges.len() * cfg.edge_dim {
            return Err(Error::invalid(
                "stream_update",
                format!(
                    "{} feature values for {} edges of width {}",
                    batch.features.len(),
                    batch.edges.len(),
                    cfg.edge_dim
                ),
            ));
        }
        for e in &batch.edges {
            if e.src >= cfg.num_nodes || e.dst >= cfg.num_nodes {
                return Err(Error::UnknownNode(e.src.max(e.dst)));
            }
            if !e.time.is_finite() {
                return Err(Error::invalid("stream_update", "non-finite edge time"));
            }
            if e.time < wm {
                return Err(Error::OutOfOrder { batch_time: e.time, watermark: wm });
            }
            if e.time > batch.time {
                return Err(Error::invalid(
                    "stream_update",
                    format!("edge at {} is later than the batch time {}", e.time, batch.time),
                ));
            }
        }
        Ok(())
    }

    /// Folds a batch into the state. Edges are grouped by timestamp; all
    /// edges of one group form one temporal node per receiving node, also
    /// when the group was split across batches.
    pub fn update(&mut self, batch: &StreamBatch) -> Result<UpdateReport> {
        self.check_batch(batch)?;
        let f = self.params.config.edge_dim;
        let mut order: Vec<usize> = (0..batch.edges.len()).collect();
        order.sort_by(|&a, &b| batch.edges[a].time.total_cmp(&batch.edges[b].time));

        let mut report = UpdateReport {
            nodes: Vec::new(),
            rows: Tensor::zeros(&[0, self.params.config.dim]),
            groups: 0,
            messages: 0,
            touched_rows: 0,
        };
        let mut start = 0;
        while start < order.len() {
            let t = batch.edges[order[start]].time;
            let end = start + order[start..].partition_point(|&i| batch.edges[i].time == t);
            let mut edges = Vec::new();
            let mut features = Vec::new();
            if let Some(open) = self.open.take_if(|g| g.time == t) {
                self.restore(&open);
                edges = open.edges;
                features = open.features;
            }
            for &i in &order[start..end] {
                edges.push(batch.edges[i]);
                features.extend_from_slice(&batch.features[i * f..(i + 1) * f]);
            }
            let (nodes, messages) = self.fold_group(t, edges, features)?;
            report.groups += 1;
            report.messages += messages;
            report.touched_rows += nodes.len() * self.layers.len() + messages;
            report.nodes.extend(nodes);
            start = end;
        }
        if self.open.as_ref().is_some_and(|g| g.time < batch.time) {
            self.open = None;
        }
        self.watermark = Some(self.watermark.map_or(batch.time, |w| w.max(batch.time)));
        report.nodes.sort_unstable();
        report.nodes.dedup();
        report.rows = ops::gather_rows(self.top_rows(), &report.nodes)?;
        Ok(report)
    }

    fn restore(&mut self, open: &OpenGroup) {
        for (i, &v) in open.nodes.iter().enumerate() {
            self.cum_degree[v] = open.cum_degree[i];
            self.last_time[v] = open.last_time[i];
            for (layer, saved) in self.layers.iter_mut().zip(&open.layers) {
                layer.h.row_mut(v).copy_from_slice(saved.h.row(i));
                layer.acc.row_mut(v).copy_from_slice(saved.acc.row(i));
                if !layer.mass.is_empty() {
                    layer.mass[v] = saved.mass[i];
                }
            }
        }
    }

    /// Folds every edge of one timestamp and leaves it as the open group.
    /// Returns the receiving nodes and the message count.
    fn fold_group(&mut self, t: f64, edges: Vec<Interaction>, features: Vec<f64>) -> Result<(Vec<usize>, usize)> {
        let params = Arc::clone(&self.params);
        let cfg = &params.config;
        let (d, f) = (cfg.dim, cfg.edge_dim);
        let kernel = cfg.kernel;

        // (sender, receiver, edge)
        let mut msgs = Vec::with_capacity(edges.len() * 2);
        for (i, e) in edges.iter().enumerate() {
            msgs.push((e.src, e.dst, i));
            if !cfg.directed {
                msgs.push((e.dst, e.src, i));
            }
        }
        let mut nodes: Vec<usize> = msgs.iter().map(|m| m.1).collect();
        nodes.sort_unstable();
        nodes.dedup();
        let local = |v: usize| nodes.binary_search(&v).ok();
        let targets: Vec<usize> = msgs.iter().map(|m| local(m.1).expect("receiver")).collect();
        let mut new_cum: Vec<usize> = nodes.iter().map(|&v| self.cum_degree[v]).collect();
        for &i in &targets {
            new_cum[i] += 1;
        }
        let sender_deg: Vec<usize> =
            msgs.iter().map(|m| local(m.0).map_or(self.cum_degree[m.0], |i| new_cum[i])).collect();

        let emb = params.embedding();
        let literal = self.order == FoldOrder::Literal;
        let norm_t = cfg.time_norm.apply(t);
        let n = nodes.len();
        let width = cfg.message_dim();

        // cur[k]: layer-k rows of the receiving nodes; cur[0] is the input.
        let mut cur = vec![ops::gather_rows(emb, &nodes)?];
        let mut new_layers = Vec::with_capacity(cfg.layers);
        for k in 1..=cfg.layers {
            let (tw, tb) = params.layer_time(k);
            let enc: Vec<f64> = tw.data().iter().zip(tb.data()).map(|(w, b)| (norm_t * w + b).cos()).collect();
            let below = |v: usize| -> &[f64] {
                if k == 1 {
                    return emb.row(v);
                }
                match local(v) {
                    Some(i) if !literal => cur[k - 1].row(i),
                    _ if self.cum_degree[v] > 0 => self.layers[k - 2].h.row(v),
                    _ => emb.row(v),
                }
            };
            let mut m = Vec::with_capacity(msgs.len() * width);
            for &(s, _, e) in &msgs {
                m.extend_from_slice(below(s));
                m.extend_from_slice(&enc);
                m.extend_from_slice(&features[e * f..(e + 1) * f]);
            }
            let m = Tensor::matrix(msgs.len(), width, m)?;
            let weight = params.get(&format!("layer{k}.weight")).expect("layout");
            let mut z = ops::matmul(&m, weight)?;
            if let Some(b) = params.get(&format!("layer{k}.bias")) {
                z = ops::add_bias(&z, b)?;
            }

            let stored = &self.layers[k - 1];
            let mut acc = ops::gather_rows(&stored.acc, &nodes)?;
            let mut mass: Vec<f64> =
                if stored.mass.is_empty() { Vec::new() } else { nodes.iter().map(|&v| stored.mass[v]).collect() };
            let mut h = Tensor::zeros(&[n, d]);
            match kernel {
                KernelKind::Gcn | KernelKind::Mean => {
                    let gcn = kernel == KernelKind::Gcn;
                    let mut a: Tensor = Tensor::zeros(&[n, d]);
                    for (i, &tg) in targets.iter().enumerate() {
                        let c = if gcn { 1.0 / (sender_deg[i].max(1) as f64).sqrt() } else { 1.0 };
                        for (x, &zv) in a.row_mut(tg).iter_mut().zip(z.row(i)) {
                            *x += zv * c;
                        }
                    }
                    for i in 0..n {
                        let c = if gcn { 1.0 / (new_cum[i] as f64).sqrt() } else { 1.0 / new_cum[i] as f64 };
                        for ((s, &x), o) in acc.row_mut(i).iter_mut().zip(a.row(i)).zip(h.row_mut(i)) {
                            *s = x + *s;
                            *o = *s * c;
                        }
                    }
                }
                KernelKind::Pool => {
                    let mut a = Tensor::full(&[n, d], f64::NEG_INFINITY);
                    for (i, &tg) in targets.iter().enumerate() {
                        for (x, &zv) in a.row_mut(tg).iter_mut().zip(z.row(i)) {
                            if zv > *x {
                                *x = zv;
                            }
                        }
                    }
                    for i in 0..n {
                        for ((s, &x), o) in acc.row_mut(i).iter_mut().zip(a.row(i)).zip(h.row_mut(i)) {
                            if x > *s {
                                *s = x;
                            }
                            *o = *s;
                        }
                    }
                }
                KernelKind::Attention => {
                    let q_src = params.get(&format!("layer{k}.query_src")).expect("layout");
                    let q_dst = params.get(&format!("layer{k}.query_dst")).expect("layout");
                    let (q_row, q_enc) = q_dst.data().split_at(d);
                    let s_enc = dot(&enc, q_enc);
                    let s_node: Vec<f64> = nodes.iter().map(|&v| dot(below(v), q_row) + s_enc).collect();
                    let mut a: Tensor = Tensor::zeros(&[n, d]);
                    let mut am = vec![0.0; n];
                    for (i, &tg) in targets.iter().enumerate() {
                        let s = leaky(dot(m.row(i), q_src.data()) + s_node[tg]);
                        let w = s.clamp(-ATTENTION_CLAMP, ATTENTION_CLAMP).exp();
                        for (x, &zv) in a.row_mut(tg).iter_mut().zip(z.row(i)) {
                            *x += zv * w;
                        }
                        am[tg] += w;
                    }
                    for i in 0..n {
                        mass[i] += am[i];
                        for ((s, &x), o) in acc.row_mut(i).iter_mut().zip(a.row(i)).zip(h.row_mut(i)) {
                            *s = x + *s;
                            *o = *s / mass[i];
                        }
                    }
                }
            }
            cur.push(h.map(leaky));
            new_layers.push((acc, mass));
        }

        let saved = OpenGroup {
            time: t,
            nodes: nodes.clone(),
            cum_degree: nodes.iter().map(|&v| self.cum_degree[v]).collect(),
            last_time: nodes.iter().map(|&v| self.last_time[v]).collect(),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    Ok(LayerState {
                        h: ops::gather_rows(&l.h, &nodes)?,
                        acc: ops::gather_rows(&l.acc, &nodes)?,
                        mass: if l.mass.is_empty() { Vec::new() } else { nodes.iter().map(|&v| l.mass[v]).collect() },
                    })
                })
                .collect::<Result<_>>()?,
            edges,
            features,
        };
        for (i, &v) in nodes.iter().enumerate() {
            self.cum_degree[v] = new_cum[i];
            self.last_time[v] = t;
            for (k, (layer, (acc, mass))) in self.layers.iter_mut().zip(&new_layers).enumerate() {
                layer.h.row_mut(v).copy_from_slice(cur[k + 1].row(i));
                layer.acc.row_mut(v).copy_from_slice(acc.row(i));
                if !mass.is_empty() {
                    layer.mass[v] = mass[i];
                }
            }
        }
        self.open = Some(saved);
        Ok((nodes, msgs.len()))
    }

    /// Embeddings of `(v, t)` queries at or after the watermark: the
    /// projection of `v`'s latest top-layer row with the time elapsed since
    /// it, or of its input row when `v` has no history yet.
    pub fn query(&self, queries: &[(usize, f64)]) -> Result<Tensor> {
        let params = &self.params;
        let cfg = &params.config;
        let wm = self.watermark.unwrap_or(f64::NEG_INFINITY);
        let mut rows = Vec::with_capacity(queries.len() * cfg.dim);
        let mut deltas = Vec::with_capacity(queries.len());
        for &(v, t) in queries {
            if v >= cfg.num_nodes {
                return Err(Error::UnknownNode(v));
            }
            if !(t >= wm) {
                return Err(Error::OutOfOrder { batch_time: t, watermark: wm });
            }
            if self.cum_degree[v] > 0 {
                rows.extend_from_slice(self.top_rows().row(v));
                deltas.push(cfg.time_norm.duration(t - self.last_time[v]));
            } else {
                rows.extend_from_slice(params.embedding().row(v));
                deltas.push(cfg.time_norm.apply(t).max(0.0));
            }
        }
        let mut tape = Tape::new();
        let mut c = |name: &str| tape.constant(params.get(name).expect("layout").clone());
        let proj = ProjVars {
            time_w: c("proj.time_w"),
            time_b: c("proj.time_b"),
            w1: c("proj.w1"),
            b1: c("proj.b1"),
            w2: c("proj.w2"),
            b2: c("proj.b2"),
        };
        let h = tape.constant(Tensor::matrix(queries.len(), cfg.dim, rows)?);
        let delta = tape.constant(Tensor::column(deltas));
        let out = project(&mut tape, &proj, h, delta, &mut Mode::Infer)?;
        Ok(tape.value(out).clone())
    }
}

/// Largest absolute difference between the state's rows and those of one
/// batch forward over `g`, over every layer and every node with history.
/// Infinite when the two disagree on which nodes have history or on their
/// degrees.
pub fn batch_discrepancy(state: &StreamState, g: &TemporalGraph) -> Result<f64> {
    let params = state.params();
    let index = TemporalIndex::build(g);
    let mut tape = Tape::new();
    let vars = params.constants(&mut tape);
    let fwd = forward_temporal(&mut tape, params, &vars, g, &index, &mut Mode::Infer)?;
    let mut worst: f64 = 0.0;
    for v in 0..state.num_nodes() {
        let last = if v < g.num_nodes() { index.last_tnode(v) } else { None };
        let Some(tn) = last else {
            if state.cum_degree(v) > 0 {
                return Ok(f64::INFINITY);
            }
            continue;
        };
        if state.cum_degree(v) != index.cum_degree()[tn] {
            return Ok(f64::INFINITY);
        }
        for (k, &h) in fwd.layers.iter().enumerate() {
            for (a, b) in state.layer_rows(k + 1).row(v).iter().zip(tape.value(h).row(tn)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// Free-function form of [`StreamState::update`].
pub fn stream_update(state: &mut StreamState, batch: &StreamBatch) -> Result<UpdateReport> {
    state.update(batch)
}

/// Free-function form of [`StreamState::query`].
pub fn stream_query(state: &StreamState, queries: &[(usize, f64)]) -> Result<Tensor> {
    state.query(queries)
}

#[cfg(test)]
mod tests;
