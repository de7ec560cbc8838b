//! Timestamped interaction graphs and the temporal indices derived from them.

mod index;
mod mptg;
mod parse;
mod split;
mod stats;

pub use index::{AggEdge, SourceRef, TemporalIndex};
pub use mptg::{Mptg, MptgLink};
pub use parse::{parse_edge_list, read_edge_list, ParseOptions};
pub use split::{chronological_split, Split, SplitFractions};
pub use stats::{graph_stats, GraphStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input edge `(src, dst, time)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub src: usize,
    pub dst: usize,
    pub time: f64,
}

/// A directed message. Undirected input produces two messages per
/// interaction, both pointing at the same interaction (and feature row).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Message {
    pub src: usize,
    pub dst: usize,
    pub time: f64,
    pub interaction: usize,
}

/// Affine map from raw timestamps onto the unit interval of the training
/// window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeNorm {
    pub origin: f64,
    pub scale: f64,
}

impl Default for TimeNorm {
    fn default() -> Self {
        Self { origin: 0.0, scale: 1.0 }
    }
}

impl TimeNorm {
    pub fn spanning(t_min: f64, t_max: f64) -> Self {
        let span = t_max - t_min;
        Self { origin: t_min, scale: if span > 0.0 && span.is_finite() { span } else { 1.0 } }
    }

    pub fn apply(&self, t: f64) -> f64 {
        (t - self.origin) / self.scale
    }

    /// Converts a raw duration.
    pub fn duration(&self, dt: f64) -> f64 {
        dt / self.scale
    }
}

/// Immutable multiset of timestamped interactions over a dense node range.
#[derive(Clone, Debug)]
pub struct TemporalGraph {
    num_nodes: usize,
    interactions: Vec<Interaction>,
    feature_width: usize,
    features: Vec<f64>,
    messages: Vec<Message>,
    directed: bool,
    node_names: Vec<String>,
    time_norm: TimeNorm,
}

impl TemporalGraph {
    /// Builds a graph, stably sorting interactions by time. `features` holds
    /// one row of `feature_width` values per interaction, in input order.
    pub fn new(
        num_nodes: usize,
        interactions: Vec<Interaction>,
        feature_width: usize,
        features: Vec<f64>,
        directed: bool,
    ) -> Result<Self> {
        if features.len() != interactions.len() * feature_width {
            return Err(Error::invalid(
                "temporal_graph",
                format!("{} feature values for {} edges of width {feature_width}", features.len(), interactions.len()),
            ));
        }
        for e in &interactions {
            if e.src >= num_nodes || e.dst >= num_nodes {
                return Err(Error::UnknownNode(e.src.max(e.dst)));
            }
            if !e.time.is_finite() {
                return Err(Error::invalid("temporal_graph", "non-finite timestamp"));
            }
        }
        let mut order: Vec<usize> = (0..interactions.len()).collect();
        order.sort_by(|&a, &b| interactions[a].time.total_cmp(&interactions[b].time));
        let sorted: Vec<Interaction> = order.iter().map(|&i| interactions[i]).collect();
        let mut sorted_features = Vec::with_capacity(features.len());
        for &i in &order {
            sorted_features.extend_from_slice(&features[i * feature_width..(i + 1) * feature_width]);
        }
        let node_names = (0..num_nodes).map(|i| i.to_string()).collect();
        let mut g = Self {
            num_nodes,
            interactions: sorted,
            feature_width,
            features: sorted_features,
            messages: Vec::new(),
            directed,
            node_names,
            time_norm: TimeNorm::default(),
        };
        g.messages = g.derive_messages();
        g.time_norm = g.natural_time_norm();
        Ok(g)
    }

    /// Graph without edge features.
    pub fn from_interactions(num_nodes: usize, interactions: Vec<Interaction>, directed: bool) -> Result<Self> {
        Self::new(num_nodes, interactions, 0, Vec::new(), directed)
    }

    pub fn with_node_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.num_nodes {
            return Err(Error::invalid(
                "temporal_graph",
                format!("{} names for {} nodes", names.len(), self.num_nodes),
            ));
        }
        self.node_names = names;
        Ok(self)
    }

    pub fn with_time_norm(mut self, norm: TimeNorm) -> Self {
        self.time_norm = norm;
        self
    }

    fn derive_messages(&self) -> Vec<Message> {
        let mut out = Vec::with_capacity(self.interactions.len() * if self.directed { 1 } else { 2 });
        for (i, e) in self.interactions.iter().enumerate() {
            out.push(Message { src: e.src, dst: e.dst, time: e.time, interaction: i });
            if !self.directed {
                out.push(Message { src: e.dst, dst: e.src, time: e.time, interaction: i });
            }
        }
        out
    }

    fn natural_time_norm(&self) -> TimeNorm {
        match (self.interactions.first(), self.interactions.last()) {
            (Some(a), Some(b)) => TimeNorm::spanning(a.time, b.time),
            _ => TimeNorm::default(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_interactions(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// Feature row of an interaction (empty when the graph has none).
    pub fn features(&self, interaction: usize) -> &[f64] {
        let w = self.feature_width;
        &self.features[interaction * w..(interaction + 1) * w]
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn time_norm(&self) -> TimeNorm {
        self.time_norm
    }

    pub fn time_range(&self) -> Option<(f64, f64)> {
        Some((self.interactions.first()?.time, self.interactions.last()?.time))
    }

    /// Graph made of the first `n` interactions (in time order), keeping the
    /// node universe, names and time normalization.
    pub fn prefix(&self, n: usize) -> Self {
        let n = n.min(self.interactions.len());
        let w = self.feature_width;
        let mut g = Self {
            num_nodes: self.num_nodes,
            interactions: self.interactions[..n].to_vec(),
            feature_width: w,
            features: self.features[..n * w].to_vec(),
            messages: Vec::new(),
            directed: self.directed,
            node_names: self.node_names.clone(),
            time_norm: self.time_norm,
        };
        g.messages = g.derive_messages();
        g
    }

    /// Interactions with time strictly before `t`.
    pub fn before(&self, t: f64) -> Self {
        let n = self.interactions.partition_point(|e| e.time < t);
        self.prefix(n)
    }

    /// Interactions with time at or before `t`.
    pub fn up_to(&self, t: f64) -> Self {
        let n = self.interactions.partition_point(|e| e.time <= t);
        self.prefix(n)
    }

    /// Temporal neighbourhood `TN(v, t)`: every `(sender, time)` of a message
    /// into `v` at or before `t`.
    pub fn temporal_neighbors(&self, v: usize, t: f64) -> Result<Vec<(usize, f64)>> {
        if v >= self.num_nodes {
            return Err(Error::UnknownNode(v));
        }
        Ok(self.messages.iter().take_while(|m| m.time <= t).filter(|m| m.dst == v).map(|m| (m.src, m.time)).collect())
    }

    /// Number of messages each node receives.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for m in &self.messages {
            d[m.dst] += 1;
        }
        d
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// The V–A@1, V–F@4 subgraph, undirected. Nodes: V=0, A=1, F=2.
    pub fn fig1() -> TemporalGraph {
        parse_edge_list("V,A,1\nV,F,4\n".as_bytes(), &ParseOptions::default()).unwrap()
    }

    /// Random multigraph with repeated timestamps.
    pub fn random(seed: u64, nodes: usize, edges: usize, directed: bool) -> TemporalGraph {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let inter = (0..edges)
            .map(|_| {
                let src = rng.random_range(0..nodes);
                let mut dst = rng.random_range(0..nodes);
                if dst == src {
                    dst = (dst + 1) % nodes;
                }
                Interaction { src, dst, time: rng.random_range(0..edges / 2 + 1) as f64 }
            })
            .collect();
        TemporalGraph::from_interactions(nodes, inter, directed).unwrap()
    }
}
