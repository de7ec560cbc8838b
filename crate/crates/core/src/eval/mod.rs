//! Future link prediction and dynamic node classification metrics.

mod node;

pub use node::{eval_node_classification, NodeClassConfig};

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Interaction, Split};
use crate::model::{dynamic_embed, ModelParams};
use crate::numerics::ops::sigmoid_scalar;
use crate::numerics::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LabeledPair {
    pub src: usize,
    pub dst: usize,
    pub time: f64,
    pub label: bool,
}

/// Each positive followed by one negative whose destination is a uniform
/// draw from `universe` other than the true destination.
pub fn build_link_testset(edges: &[Interaction], universe: &[usize], seed: u64) -> Result<Vec<LabeledPair>> {
    if universe.len() < 2 {
        return Err(Error::invalid(
            "build_link_testset",
            format!("negative sampling needs at least 2 nodes, got {}", universe.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(edges.len() * 2);
    for e in edges {
        out.push(LabeledPair { src: e.src, dst: e.dst, time: e.time, label: true });
        let neg = loop {
            let c = universe[rng.random_range(0..universe.len())];
            if c != e.dst {
                break c;
            }
        };
        out.push(LabeledPair { src: e.src, dst: neg, time: e.time, label: false });
    }
    Ok(out)
}

/// `σ(h(u, t)·h(v, t))` per pair, with embeddings built from the part of
/// `history` strictly before each pair's time.
pub fn score_links<T: Scalar>(
    params: &ModelParams<T>,
    history: &crate::graph::TemporalGraph,
    pairs: &[LabeledPair],
) -> Result<Vec<f64>> {
    let mut queries = Vec::with_capacity(pairs.len() * 2);
    queries.extend(pairs.iter().map(|p| (p.src, p.time)));
    queries.extend(pairs.iter().map(|p| (p.dst, p.time)));
    let emb = dynamic_embed(params, history, &queries)?;
    Ok(score_embeddings(&emb.cast(), pairs.len()))
}

/// Scores rows `i` against rows `n + i` of a stacked embedding table.
pub fn score_embeddings(emb: &Tensor, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let dot: f64 = emb.row(i).iter().zip(emb.row(n + i)).map(|(a, b)| a * b).sum();
            sigmoid_scalar(dot)
        })
        .collect()
}

/// Area under the ROC curve via the Mann–Whitney statistic, ties counted
/// one half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape("auc_roc", &[scores.len()], &[labels.len()]));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("auc_roc", "both classes must be present"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("auc_roc", "NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average 1-based ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub auc: f64,
    /// Share of pairs on the correct side of 0.5.
    pub accuracy: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "metric,value,seed";

    pub fn from_scores(scores: &[f64], labels: &[bool]) -> Result<Self> {
        let auc = auc_roc(scores, labels)?;
        let correct = scores.iter().zip(labels).filter(|(&s, &l)| (s >= 0.5) == l).count();
        let positives = labels.iter().filter(|&&l| l).count();
        Ok(Self { auc, accuracy: correct as f64 / labels.len() as f64, positives, negatives: labels.len() - positives })
    }

    pub fn to_csv(&self, seed: u64) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for (m, v) in [
            ("auc", self.auc),
            ("accuracy", self.accuracy),
            ("positives", self.positives as f64),
            ("negatives", self.negatives as f64),
        ] {
            let _ = writeln!(s, "{m},{v},{seed}");
        }
        s
    }
}

/// Test-set link prediction: test positives with one sampled negative each,
/// scored against the full history.
pub fn eval_link_prediction<T: Scalar>(params: &ModelParams<T>, split: &Split, seed: u64) -> Result<MetricReport> {
    let universe = training_universe(split);
    let pairs = build_link_testset(&split.test, &universe, seed)?;
    if pairs.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let scores = score_links(params, &split.history, &pairs)?;
    let labels: Vec<bool> = pairs.iter().map(|p| p.label).collect();
    MetricReport::from_scores(&scores, &labels)
}

/// Sorted ids of nodes that take part in a training interaction.
pub fn training_universe(split: &Split) -> Vec<usize> {
    let mut seen = vec![false; split.history.num_nodes()];
    for e in split.train.interactions() {
        seen[e.src] = true;
        seen[e.dst] = true;
    }
    (0..seen.len()).filter(|&v| seen[v]).collect()
}
