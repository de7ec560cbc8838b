use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::TemporalIndex;
use crate::numerics::{Scalar, Tape, Var};

use super::{KernelKind, ATTENTION_CLAMP, LEAKY_SLOPE};

/// Tape handles of one AP block's parameters.
#[derive(Clone, Copy, Debug)]
pub struct ApVars {
    pub weight: Var,
    pub bias: Option<Var>,
    pub query_src: Option<Var>,
    pub query_dst: Option<Var>,
}

/// Result of an AP block over all temporal nodes.
#[derive(Clone, Copy, Debug)]
pub struct ApOutput {
    /// Kernel readout per temporal node.
    pub h: Var,
    /// Running accumulator per temporal node (weighted sum, or running max
    /// for POOL).
    pub acc: Var,
    /// Cumulative attention mass (`|V^T| × 1`), ATTENTION only.
    pub mass: Option<Var>,
}

/// Runs one AP block.
///
/// `messages` has one row per aggregation edge, in `index.agg_edges()`
/// order. `node_inputs` (one row per temporal node) is only read by the
/// attention kernel, for the receiving side of the score.
pub fn ap_forward<T: Scalar>(
    tape: &mut Tape<T>,
    kernel: KernelKind,
    index: &TemporalIndex,
    messages: Var,
    node_inputs: Option<Var>,
    vars: &ApVars,
) -> Result<ApOutput> {
    let edges = index.agg_edges();
    if tape.shape(messages).first() != Some(&edges.len()) {
        return Err(Error::shape("ap_forward", tape.shape(messages), &[edges.len()]));
    }
    let n_t = index.num_tnodes();
    let targets: Arc<[usize]> = edges.iter().map(|e| e.target).collect();
    let segs = index.segments().clone();

    let mut z = tape.matmul(messages, vars.weight)?;
    if let Some(b) = vars.bias {
        z = tape.add_bias(z, b)?;
    }

    let out = match kernel {
        KernelKind::Gcn => {
            let w: Arc<[T]> =
                index.sender_degree().iter().map(|&d| T::one() / T::from_usize(d.max(1)).unwrap().sqrt()).collect();
            let zw = tape.scale_rows(z, w)?;
            let a = tape.scatter_add_rows(zw, targets, n_t)?;
            let acc = tape.segmented_cumsum(a, segs)?;
            let norm: Arc<[T]> =
                index.cum_degree().iter().map(|&d| T::one() / T::from_usize(d).unwrap().sqrt()).collect();
            ApOutput { h: tape.scale_rows(acc, norm)?, acc, mass: None }
        }
        KernelKind::Mean => {
            let a = tape.scatter_add_rows(z, targets, n_t)?;
            let acc = tape.segmented_cumsum(a, segs)?;
            let norm: Arc<[T]> = index.cum_degree().iter().map(|&d| T::one() / T::from_usize(d).unwrap()).collect();
            ApOutput { h: tape.scale_rows(acc, norm)?, acc, mass: None }
        }
        KernelKind::Pool => {
            let a = tape.scatter_max_rows(z, &targets, n_t)?;
            let acc = tape.segmented_cummax(a, &segs)?;
            ApOutput { h: acc, acc, mass: None }
        }
        KernelKind::Attention => {
            let (q_src, q_dst, nodes) = match (vars.query_src, vars.query_dst, node_inputs) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(Error::invalid("ap_forward", "attention needs both query vectors and receiver inputs"))
                }
            };
            let s_src = tape.matmul(messages, q_src)?;
            let s_node = tape.matmul(nodes, q_dst)?;
            let s_dst = tape.gather_rows(s_node, targets.clone())?;
            let score = tape.add(s_src, s_dst)?;
            let score = tape.leaky_relu(score, T::from_f64_lossy(LEAKY_SLOPE));
            let clamp = T::from_f64_lossy(ATTENTION_CLAMP);
            let score = tape.clamp(score, -clamp, clamp);
            let weight = tape.exp(score);
            let zw = tape.mul_rows(z, weight)?;
            let a = tape.scatter_add_rows(zw, targets.clone(), n_t)?;
            let acc = tape.segmented_cumsum(a, segs.clone())?;
            let m = tape.scatter_add_rows(weight, targets, n_t)?;
            let mass = tape.segmented_cumsum(m, segs)?;
            ApOutput { h: tape.div_rows(acc, mass)?, acc, mass: Some(mass) }
        }
    };
    Ok(out)
}
