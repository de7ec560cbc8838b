use std::sync::Arc;

use crate::numerics::Segments;

use super::TemporalGraph;

/// Where an aggregation edge takes its sender representation from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceRef {
    /// The sender has its own temporal node at the message time.
    CoTemporal(usize),
    /// The sender receives nothing at the message time; its latest earlier
    /// temporal node stands in.
    Latest(usize),
    /// The sender has no history at all; its raw input features stand in.
    Cold(usize),
}

impl SourceRef {
    /// Row in a table laid out as `[temporal nodes..., nodes...]`.
    pub fn row(self, num_tnodes: usize) -> usize {
        match self {
            SourceRef::CoTemporal(i) | SourceRef::Latest(i) => i,
            SourceRef::Cold(v) => num_tnodes + v,
        }
    }
}

/// An element of the same-timestamp aggregation edge set: one per message.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AggEdge {
    pub source: SourceRef,
    /// Destination temporal node.
    pub target: usize,
    /// Index into [`TemporalGraph::messages`].
    pub message: usize,
}

/// Temporal nodes, aggregation edges and per-node propagation lists of a
/// [`TemporalGraph`].
///
/// Temporal nodes are grouped by node id and sorted by time within each
/// group, so the propagation list of node `v` is the contiguous range
/// `segments.range(v)`. A temporal node exists for every (node, timestamp)
/// at which the node receives at least one message; simultaneous messages
/// collapse into one temporal node.
#[derive(Clone, Debug)]
pub struct TemporalIndex {
    num_nodes: usize,
    tnode_node: Vec<usize>,
    tnode_time: Vec<f64>,
    agg_edges: Vec<AggEdge>,
    segments: Arc<Segments>,
    cum_degree: Vec<usize>,
    sender_degree: Vec<usize>,
    incoming_offsets: Vec<usize>,
    incoming: Vec<usize>,
}

impl TemporalIndex {
    pub fn build(g: &TemporalGraph) -> Self {
        let n = g.num_nodes();
        let msgs = g.messages();

        let mut keys: Vec<(usize, f64)> = msgs.iter().map(|m| (m.dst, m.time)).collect();
        keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        keys.dedup();

        let mut lengths = vec![0usize; n];
        for &(v, _) in &keys {
            lengths[v] += 1;
        }
        let segments = Segments::from_lengths(&lengths);
        let tnode_node: Vec<usize> = keys.iter().map(|k| k.0).collect();
        let tnode_time: Vec<f64> = keys.iter().map(|k| k.1).collect();

        let mut index = Self {
            num_nodes: n,
            tnode_node,
            tnode_time,
            agg_edges: Vec::with_capacity(msgs.len()),
            segments: Arc::new(segments),
            cum_degree: Vec::new(),
            sender_degree: Vec::with_capacity(msgs.len()),
            incoming_offsets: Vec::new(),
            incoming: Vec::new(),
        };

        let mut received = vec![0usize; index.tnode_node.len()];
        for (mi, m) in msgs.iter().enumerate() {
            let target = index.find(m.dst, m.time).expect("every message destination has a temporal node");
            received[target] += 1;
            let source = match index.find(m.src, m.time) {
                Some(t) => SourceRef::CoTemporal(t),
                None => match index.latest_before(m.src, m.time) {
                    Some(t) => SourceRef::Latest(t),
                    None => SourceRef::Cold(m.src),
                },
            };
            index.agg_edges.push(AggEdge { source, target, message: mi });
        }

        let mut cum = received.clone();
        for r in index.segments.ranges() {
            for i in r.start + 1..r.end {
                cum[i] += cum[i - 1];
            }
        }
        index.cum_degree = cum;

        index.sender_degree = index
            .agg_edges
            .iter()
            .map(|e| match e.source {
                SourceRef::CoTemporal(t) | SourceRef::Latest(t) => index.cum_degree[t],
                SourceRef::Cold(_) => 0,
            })
            .collect();

        let mut offsets = Vec::with_capacity(received.len() + 1);
        offsets.push(0);
        for &r in &received {
            offsets.push(offsets.last().unwrap() + r);
        }
        let mut fill = offsets.clone();
        let mut incoming = vec![0; index.agg_edges.len()];
        for (ei, e) in index.agg_edges.iter().enumerate() {
            incoming[fill[e.target]] = ei;
            fill[e.target] += 1;
        }
        index.incoming_offsets = offsets;
        index.incoming = incoming;
        index
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_tnodes(&self) -> usize {
        self.tnode_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tnode_node.is_empty()
    }

    pub fn tnode_node(&self) -> &[usize] {
        &self.tnode_node
    }

    pub fn tnode_time(&self) -> &[f64] {
        &self.tnode_time
    }

    pub fn agg_edges(&self) -> &[AggEdge] {
        &self.agg_edges
    }

    /// Propagation lists: segment `v` covers node `v`'s temporal nodes.
    pub fn segments(&self) -> &Arc<Segments> {
        &self.segments
    }

    /// `|TN(v, t_i)|` for each temporal node.
    pub fn cum_degree(&self) -> &[usize] {
        &self.cum_degree
    }

    /// In-degree of the sender up to and including the message time
    /// (0 for senders without history).
    pub fn sender_degree(&self) -> &[usize] {
        &self.sender_degree
    }

    /// Aggregation edges into temporal node `t`, in message order.
    pub fn incoming(&self, t: usize) -> &[usize] {
        &self.incoming[self.incoming_offsets[t]..self.incoming_offsets[t + 1]]
    }

    /// Number of messages temporal node `t` receives at its own time.
    pub fn received(&self, t: usize) -> usize {
        self.incoming_offsets[t + 1] - self.incoming_offsets[t]
    }

    fn times_of(&self, v: usize) -> (usize, &[f64]) {
        let r = self.segments.range(v);
        (r.start, &self.tnode_time[r])
    }

    /// Temporal node of `v` at exactly `t`.
    pub fn find(&self, v: usize, t: f64) -> Option<usize> {
        if v >= self.num_nodes {
            return None;
        }
        let (start, times) = self.times_of(v);
        times.binary_search_by(|x| x.total_cmp(&t)).ok().map(|i| start + i)
    }

    /// Latest temporal node of `v` with time strictly before `t`.
    pub fn latest_before(&self, v: usize, t: f64) -> Option<usize> {
        if v >= self.num_nodes {
            return None;
        }
        let (start, times) = self.times_of(v);
        let k = times.partition_point(|&x| x < t);
        (k > 0).then(|| start + k - 1)
    }

    /// Latest temporal node of `v` with time at or before `t`.
    pub fn latest_at_or_before(&self, v: usize, t: f64) -> Option<usize> {
        if v >= self.num_nodes {
            return None;
        }
        let (start, times) = self.times_of(v);
        let k = times.partition_point(|&x| x <= t);
        (k > 0).then(|| start + k - 1)
    }

    /// Final temporal node of `v`, if any.
    pub fn last_tnode(&self, v: usize) -> Option<usize> {
        let r = self.segments.range(v);
        (!r.is_empty()).then(|| r.end - 1)
    }

    /// `Σ_t |TN(t)|`, the number of links of the explicit message-passing
    /// graph.
    pub fn mptg_size(&self) -> u64 {
        self.cum_degree.iter().map(|&d| d as u64).sum()
    }
}
