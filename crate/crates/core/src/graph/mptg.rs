use crate::error::{Error, Result};

use super::{SourceRef, TemporalIndex};

/// A directional link `u_{t_l} → v_{t_k}` of the explicit message-passing
/// temporal graph, with `t_l ≤ t_k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MptgLink {
    /// Aggregation edge (message) carried by the link.
    pub agg_edge: usize,
    pub source: SourceRef,
    /// Receiving temporal node.
    pub target: usize,
}

/// Explicit message-passing temporal graph: every temporal node linked to
/// its whole temporal neighbourhood. Quadratic in per-node degree, so
/// construction is capped.
#[derive(Clone, Debug)]
pub struct Mptg {
    links: Vec<MptgLink>,
    offsets: Vec<usize>,
}

impl Mptg {
    pub fn build(index: &TemporalIndex, link_cap: u64) -> Result<Self> {
        let predicted = index.mptg_size();
        if predicted > link_cap {
            return Err(Error::LinkCapExceeded { predicted, cap: link_cap });
        }
        let mut links = Vec::with_capacity(predicted as usize);
        let mut offsets = vec![0; index.num_tnodes() + 1];
        let edges = index.agg_edges();
        for range in index.segments().ranges() {
            let mut history: Vec<usize> = Vec::new();
            for t in range {
                history.extend_from_slice(index.incoming(t));
                for &e in &history {
                    links.push(MptgLink { agg_edge: e, source: edges[e].source, target: t });
                }
                offsets[t + 1] = links.len();
            }
        }
        Ok(Self { links, offsets })
    }

    pub fn links(&self) -> &[MptgLink] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Links into temporal node `t`.
    pub fn into_tnode(&self, t: usize) -> &[MptgLink] {
        &self.links[self.offsets[t]..self.offsets[t + 1]]
    }
}
