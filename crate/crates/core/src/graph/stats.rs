use serde::Serialize;

use super::{TemporalGraph, TemporalIndex};

/// Size statistics of a temporal graph and its message-passing expansion.
///
/// `temporal_links` is the closed-form `Σ_t |TN(t)|` over every temporal
/// node, which for undirected input counts links in both directions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub temporal_nodes: usize,
    pub temporal_links: u64,
    pub ratio: f64,
    pub max_temporal_degree: usize,
    pub mean_temporal_degree: f64,
    pub timespan: f64,
    /// `Σ_v d_v²` with `d_v` the number of messages `v` receives.
    pub degree_square_sum: u64,
}

impl GraphStats {
    pub const CSV_HEADER: &'static str = "nodes,edges,temporal_nodes,temporal_links,ratio,max_temporal_degree,mean_temporal_degree,timespan,degree_square_sum";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.nodes,
            self.edges,
            self.temporal_nodes,
            self.temporal_links,
            self.ratio,
            self.max_temporal_degree,
            self.mean_temporal_degree,
            self.timespan,
            self.degree_square_sum
        )
    }

    /// `|V^T| ≤ 2|E|` and `|E^T| ≤ Σ_v d_v²`.
    pub fn bounds_hold(&self) -> bool {
        self.temporal_nodes <= 2 * self.edges && self.temporal_links <= self.degree_square_sum
    }
}

pub fn graph_stats(g: &TemporalGraph) -> GraphStats {
    let idx = TemporalIndex::build(g);
    let links = idx.mptg_size();
    let edges = g.num_interactions();
    let tn = idx.num_tnodes();
    let stats = GraphStats {
        nodes: g.num_nodes(),
        edges,
        temporal_nodes: tn,
        temporal_links: links,
        ratio: if edges > 0 { links as f64 / edges as f64 } else { 0.0 },
        max_temporal_degree: idx.cum_degree().iter().copied().max().unwrap_or(0),
        mean_temporal_degree: if tn > 0 { links as f64 / tn as f64 } else { 0.0 },
        timespan: g.time_range().map_or(0.0, |(a, b)| b - a),
        degree_square_sum: g.in_degrees().iter().map(|&d| (d as u64) * (d as u64)).sum(),
    };
    debug_assert!(stats.bounds_hold());
    stats
}
