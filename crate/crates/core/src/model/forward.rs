use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::graph::{Mptg, TemporalGraph, TemporalIndex, TimeNorm};
use crate::kernels::{ap_forward, direct_forward, ApOutput, LEAKY_SLOPE};
use crate::numerics::{dropout_mask, Scalar, Tape, Tensor, Var};

use super::{ModelParams, ModelVars, ProjVars};

/// Whether dropout is active.
pub enum Mode<'a> {
    Infer,
    Train { rng: &'a mut dyn RngCore, dropout: f64 },
}

impl Mode<'_> {
    fn apply<T: Scalar>(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        match self {
            Mode::Train { rng, dropout } if *dropout > 0.0 => {
                let mask = dropout_mask(&mut **rng, tape.value(x).numel(), *dropout);
                tape.dropout(x, mask)
            }
            _ => Ok(x),
        }
    }
}

/// `concat(h, cos(t·W + b))`, with `times` a column of normalized times.
pub fn temporal_activation<T: Scalar>(tape: &mut Tape<T>, h: Var, times: Var, w: Var, b: Var) -> Result<Var> {
    if tape.shape(times) != [tape.value(h).rows(), 1] {
        return Err(Error::shape("temporal_activation", tape.shape(times), tape.shape(h)));
    }
    let phase = tape.matmul(times, w)?;
    let phase = tape.add_bias(phase, b)?;
    let enc = tape.cos(phase);
    tape.concat_cols(&[h, enc])
}

fn column<T: Scalar>(tape: &mut Tape<T>, values: impl Iterator<Item = f64>) -> Var {
    tape.constant(Tensor::column(values.map(T::from_f64_lossy).collect()))
}

/// Per-layer tables over the temporal nodes of a graph.
pub struct Forward {
    /// `H_1..H_K`, each `|V^T| × d`, after the post-block activation.
    pub layers: Vec<Var>,
    /// Raw AP outputs (readouts and accumulators) per layer.
    pub ap: Vec<ApOutput>,
}

struct LayerInputs {
    messages: Var,
    node_inputs: Option<Var>,
}

/// Builds the layer-`k` messages `concat(H_{k-1}[sender], cos(t·W_k + b_k), x_e)`
/// and, for attention, the receiver inputs `concat(H_{k-1}, cos(t·W_k + b_k))`.
fn layer_inputs<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    vars: &ModelVars,
    g: &TemporalGraph,
    index: &TemporalIndex,
    k: usize,
    prev: Var,
    edge_features: Option<Var>,
) -> Result<LayerInputs> {
    let norm = params.config.time_norm;
    let nt = index.num_tnodes();
    let lv = vars.layers[k - 1];
    let table = tape.concat_rows(&[prev, vars.embedding])?;
    let rows: Arc<[usize]> = index.agg_edges().iter().map(|e| e.source.row(nt)).collect();
    let senders = tape.gather_rows(table, rows)?;
    let times = column(tape, index.agg_edges().iter().map(|e| norm.apply(g.messages()[e.message].time)));
    let act = temporal_activation(tape, senders, times, lv.time_w, lv.time_b)?;
    let messages = match edge_features {
        Some(f) => tape.concat_cols(&[act, f])?,
        None => act,
    };
    let node_inputs = match lv.ap.query_dst {
        Some(_) => {
            let t = column(tape, index.tnode_time().iter().map(|&t| norm.apply(t)));
            Some(temporal_activation(tape, prev, t, lv.time_w, lv.time_b)?)
        }
        None => None,
    };
    Ok(LayerInputs { messages, node_inputs })
}

fn check_graph<T: Scalar>(params: &ModelParams<T>, g: &TemporalGraph) -> Result<()> {
    if g.num_nodes() > params.config.num_nodes {
        return Err(Error::UnknownNode(g.num_nodes() - 1));
    }
    if g.feature_width() != params.config.edge_dim {
        return Err(Error::invalid(
            "forward",
            format!("graph carries {} edge features, model expects {}", g.feature_width(), params.config.edge_dim),
        ));
    }
    Ok(())
}

fn edge_features<T: Scalar>(tape: &mut Tape<T>, g: &TemporalGraph, index: &TemporalIndex) -> Option<Var> {
    let f = g.feature_width();
    (f > 0).then(|| {
        let data = index
            .agg_edges()
            .iter()
            .flat_map(|e| g.features(g.messages()[e.message].interaction).iter().copied())
            .map(T::from_f64_lossy)
            .collect();
        tape.constant(Tensor::matrix(index.agg_edges().len(), f, data).expect("sized"))
    })
}

/// Runs all AP blocks over the temporal nodes of `g`.
pub fn forward_temporal<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    vars: &ModelVars,
    g: &TemporalGraph,
    index: &TemporalIndex,
    mode: &mut Mode<'_>,
) -> Result<Forward> {
    check_graph(params, g)?;
    let nodes: Arc<[usize]> = index.tnode_node().into();
    let mut prev = tape.gather_rows(vars.embedding, nodes)?;
    let feats = edge_features(tape, g, index);
    let slope = T::from_f64_lossy(LEAKY_SLOPE);
    let mut out =
        Forward { layers: Vec::with_capacity(params.config.layers), ap: Vec::with_capacity(params.config.layers) };
    for k in 1..=params.config.layers {
        let inputs = layer_inputs(tape, params, vars, g, index, k, prev, feats)?;
        let ap =
            ap_forward(tape, params.config.kernel, index, inputs.messages, inputs.node_inputs, &vars.layers[k - 1].ap)?;
        let h = tape.leaky_relu(ap.h, slope);
        let h = mode.apply(tape, h)?;
        out.layers.push(h);
        out.ap.push(ap);
        prev = h;
    }
    Ok(out)
}

/// Projection head: two-layer MLP over `concat(h, cos(Δ·W_p + b_p))`.
pub fn project<T: Scalar>(tape: &mut Tape<T>, proj: &ProjVars, h: Var, delta: Var, mode: &mut Mode<'_>) -> Result<Var> {
    let x = temporal_activation(tape, h, delta, proj.time_w, proj.time_b)?;
    let y = tape.matmul(x, proj.w1)?;
    let y = tape.add_bias(y, proj.b1)?;
    let y = tape.leaky_relu(y, T::from_f64_lossy(LEAKY_SLOPE));
    let y = mode.apply(tape, y)?;
    let z = tape.matmul(y, proj.w2)?;
    tape.add_bias(z, proj.b2)
}

/// Rows into `[H_K; embedding]` and normalized elapsed times for queries.
///
/// A query `(v, t)` reads the latest temporal node of `v` strictly before
/// `t`. Without one, it falls back to the raw input row of `v` with the
/// elapsed time measured from the start of the normalized time axis.
pub fn query_rows(
    index: &TemporalIndex,
    norm: TimeNorm,
    num_nodes: usize,
    queries: &[(usize, f64)],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let nt = index.num_tnodes();
    let mut rows = Vec::with_capacity(queries.len());
    let mut deltas = Vec::with_capacity(queries.len());
    for &(v, t) in queries {
        if v >= num_nodes {
            return Err(Error::UnknownNode(v));
        }
        let latest = if v < index.num_nodes() { index.latest_before(v, t) } else { None };
        match latest {
            Some(tn) => {
                rows.push(tn);
                deltas.push(norm.duration(t - index.tnode_time()[tn]));
            }
            None => {
                rows.push(nt + v);
                deltas.push(norm.apply(t).max(0.0));
            }
        }
    }
    Ok((rows, deltas))
}

/// Embeddings for `(v, t)` queries given the top-layer table.
pub(crate) fn embed_queries<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    vars: &ModelVars,
    index: &TemporalIndex,
    top: Var,
    queries: &[(usize, f64)],
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let (rows, deltas) = query_rows(index, params.config.time_norm, params.config.num_nodes, queries)?;
    let table = tape.concat_rows(&[top, vars.embedding])?;
    let h = tape.gather_rows(table, rows.into())?;
    let delta = column(tape, deltas.into_iter());
    project(tape, &vars.proj, h, delta, mode)
}

/// Inference-mode embeddings of `(v, t)` queries using only interactions
/// strictly before each query time.
pub fn dynamic_embed<T: Scalar>(
    params: &ModelParams<T>,
    g: &TemporalGraph,
    queries: &[(usize, f64)],
) -> Result<Tensor<T>> {
    let index = TemporalIndex::build(g);
    let mut tape = Tape::new();
    let vars = params.constants(&mut tape);
    let fwd = forward_temporal(&mut tape, params, &vars, g, &index, &mut Mode::Infer)?;
    let top = *fwd.layers.last().expect("at least one layer");
    let out = embed_queries(&mut tape, params, &vars, &index, top, queries, &mut Mode::Infer)?;
    Ok(tape.value(out).clone())
}

/// Inference forward where every AP block is replaced by the direct kernel
/// over the explicit message-passing graph, reusing the same weights.
/// Returns `H_1..H_K`.
pub fn forward_direct(params: &ModelParams, g: &TemporalGraph, link_cap: u64) -> Result<Vec<Tensor>> {
    check_graph(params, g)?;
    let index = TemporalIndex::build(g);
    let mptg = Mptg::build(&index, link_cap)?;
    let emb = params.embedding();
    let mut prev = Tensor::from_rows(&index.tnode_node().iter().map(|&v| emb.row(v).to_vec()).collect::<Vec<_>>())
        .unwrap_or_else(|_| Tensor::zeros(&[0, params.config.dim]));
    let mut out = Vec::with_capacity(params.config.layers);
    for k in 1..=params.config.layers {
        let mut tape = Tape::new();
        let vars = params.constants(&mut tape);
        let feats = edge_features(&mut tape, g, &index);
        let p = tape.constant(prev.clone());
        let inputs = layer_inputs(&mut tape, params, &vars, g, &index, k, p, feats)?;
        let h = direct_forward(
            params.config.kernel,
            &index,
            &mptg,
            tape.value(inputs.messages),
            inputs.node_inputs.map(|v| tape.value(v)),
            &params.layer_ap(k),
        )?;
        prev = h.map(|x| crate::numerics::ops::leaky_relu_scalar(x, LEAKY_SLOPE));
        out.push(prev.clone());
    }
    Ok(out)
}
