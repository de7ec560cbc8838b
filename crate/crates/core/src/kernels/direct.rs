use crate::error::{Error, Result};
use crate::graph::{Mptg, SourceRef, TemporalIndex};
use crate::numerics::Tensor;

use super::{ApParams, KernelKind, ATTENTION_CLAMP, LEAKY_SLOPE};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W^T m + b`, written as a plain loop.
fn transform(p: &ApParams, m: &[f64]) -> Vec<f64> {
    let out = p.weight.cols();
    let mut z = match &p.bias {
        Some(b) => b.data().to_vec(),
        None => vec![0.0; out],
    };
    for (i, &mi) in m.iter().enumerate() {
        for (zj, &w) in z.iter_mut().zip(p.weight.row(i)) {
            *zj += mi * w;
        }
    }
    z
}

/// Kernel output per temporal node, computed link by link over the explicit
/// message-passing graph. Each temporal node aggregates its full temporal
/// neighbourhood from scratch, so no propagation or accumulator is involved.
pub fn direct_forward(
    kernel: KernelKind,
    index: &TemporalIndex,
    mptg: &Mptg,
    messages: &Tensor,
    node_inputs: Option<&Tensor>,
    params: &ApParams,
) -> Result<Tensor> {
    let n_t = index.num_tnodes();
    let out = params.weight.cols();
    if messages.rows() != index.agg_edges().len() || messages.cols() != params.weight.rows() {
        return Err(Error::shape("direct_forward", messages.shape(), &[index.agg_edges().len(), params.weight.rows()]));
    }
    let mut h = Tensor::zeros(&[n_t, out]);
    for t in 0..n_t {
        let links = mptg.into_tnode(t);
        if links.is_empty() {
            continue;
        }
        let zs: Vec<Vec<f64>> = links.iter().map(|l| transform(params, messages.row(l.agg_edge))).collect();
        let row = h.row_mut(t);
        match kernel {
            KernelKind::Mean => {
                for z in &zs {
                    for (r, v) in row.iter_mut().zip(z) {
                        *r += v / links.len() as f64;
                    }
                }
            }
            KernelKind::Gcn => {
                let own = (links.len() as f64).sqrt();
                for (l, z) in links.iter().zip(&zs) {
                    let sender = match l.source {
                        SourceRef::CoTemporal(s) | SourceRef::Latest(s) => mptg.into_tnode(s).len(),
                        SourceRef::Cold(_) => 0,
                    };
                    let c = 1.0 / ((sender.max(1) as f64).sqrt() * own);
                    for (r, v) in row.iter_mut().zip(z) {
                        *r += c * v;
                    }
                }
            }
            KernelKind::Pool => {
                row.fill(f64::NEG_INFINITY);
                for z in &zs {
                    for (r, &v) in row.iter_mut().zip(z) {
                        *r = r.max(v);
                    }
                }
            }
            KernelKind::Attention => {
                let (q_src, q_dst, nodes) = match (&params.query_src, &params.query_dst, node_inputs) {
                    (Some(a), Some(b), Some(c)) => (a, b, c),
                    _ => {
                        return Err(Error::invalid(
                            "direct_forward",
                            "attention needs both query vectors and receiver inputs",
                        ))
                    }
                };
                let scores: Vec<f64> = links
                    .iter()
                    .map(|l| {
                        let receiver = index.agg_edges()[l.agg_edge].target;
                        let s = dot(messages.row(l.agg_edge), q_src.data()) + dot(nodes.row(receiver), q_dst.data());
                        let s = if s >= 0.0 { s } else { LEAKY_SLOPE * s };
                        s.clamp(-ATTENTION_CLAMP, ATTENTION_CLAMP)
                    })
                    .collect();
                // plain softmax, shifted by the max for stability
                let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
                let total: f64 = w.iter().sum();
                for (wi, z) in w.iter().zip(&zs) {
                    for (r, v) in row.iter_mut().zip(z) {
                        *r += wi / total * v;
                    }
                }
            }
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::fig1;

    #[test]
    fn fig1_mean_by_hand() {
        let g = fig1();
        let idx = TemporalIndex::build(&g);
        let mptg = Mptg::build(&idx, 100).unwrap();
        // scalar message = 1 + sender id
        let msgs: Vec<f64> = idx.agg_edges().iter().map(|e| 1.0 + g.messages()[e.message].src as f64).collect();
        let p = ApParams::identity(KernelKind::Mean, 1);
        let h = direct_forward(KernelKind::Mean, &idx, &mptg, &Tensor::column(msgs), None, &p).unwrap();
        let v_t4 = idx.find(0, 4.0).unwrap();
        // V at t4 has heard from A (2) and F (3)
        assert_eq!(h.data()[v_t4], 2.5);
    }
}
