use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Interaction, TemporalGraph, TimeNorm};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, val: 0.15, test: 0.15 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(*f > 0.0)) || ((all.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be positive and sum to 1, got {all:?}")));
        }
        Ok(())
    }
}

/// Chronological train / validation / test partition of a graph.
#[derive(Clone, Debug)]
pub struct Split {
    /// Training prefix; its time normalization spans the training window
    /// and is shared by `history`.
    pub train: TemporalGraph,
    pub val: Vec<Interaction>,
    /// Test edges whose endpoints both occur in training.
    pub test: Vec<Interaction>,
    /// Test edges dropped for touching a node unseen in training.
    pub dropped_test: usize,
    /// Number of interactions in the train and train+val prefixes.
    pub boundaries: (usize, usize),
    /// The whole graph under the training time normalization. Evaluation
    /// reads strictly-earlier history from it.
    pub history: TemporalGraph,
}

impl Split {
    /// Training plus validation interactions.
    pub fn train_val(&self) -> TemporalGraph {
        self.history.prefix(self.boundaries.1)
    }
}

pub fn chronological_split(g: &TemporalGraph, fractions: SplitFractions) -> Result<Split> {
    fractions.validate()?;
    let m = g.num_interactions();
    let cut = |f: f64| ((f * m as f64) + 1e-9).floor() as usize;
    let b1 = cut(fractions.train).min(m);
    let b2 = cut(fractions.train + fractions.val).clamp(b1, m);
    if b1 == 0 {
        return Err(Error::EmptySplit("training"));
    }
    if b2 == b1 {
        return Err(Error::EmptySplit("validation"));
    }
    if b2 == m {
        return Err(Error::EmptySplit("test"));
    }

    let inter = g.interactions();
    let norm = TimeNorm::spanning(inter[0].time, inter[b1 - 1].time);
    let history = g.clone().with_time_norm(norm);
    let train = history.prefix(b1);

    let mut seen = vec![false; g.num_nodes()];
    for e in &inter[..b1] {
        seen[e.src] = true;
        seen[e.dst] = true;
    }
    let raw_test = &inter[b2..];
    let test: Vec<Interaction> = raw_test.iter().filter(|e| seen[e.src] && seen[e.dst]).copied().collect();
    Ok(Split {
        train,
        val: inter[b1..b2].to_vec(),
        dropped_test: raw_test.len() - test.len(),
        test,
        boundaries: (b1, b2),
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> TemporalGraph {
        let inter = (0..n).map(|i| Interaction { src: i % 3, dst: (i + 1) % 3, time: i as f64 }).collect();
        TemporalGraph::from_interactions(3, inter, false).unwrap()
    }

    #[test]
    fn ten_edges_split_seven_one_two() {
        let s = chronological_split(&chain(10), SplitFractions::default()).unwrap();
        assert_eq!(s.train.num_interactions(), 7);
        assert_eq!(s.val.len(), 1);
        assert_eq!(s.test.len(), 2);
        assert_eq!(s.boundaries, (7, 8));
        assert_eq!(s.train.time_norm(), TimeNorm { origin: 0.0, scale: 6.0 });
    }

    #[test]
    fn unseen_test_nodes_are_dropped() {
        let mut inter: Vec<Interaction> = chain(9).interactions().to_vec();
        inter.push(Interaction { src: 0, dst: 3, time: 100.0 });
        let g = TemporalGraph::from_interactions(4, inter, false).unwrap();
        let s = chronological_split(&g, SplitFractions::default()).unwrap();
        assert_eq!(s.dropped_test, 1);
        assert!(s.test.iter().all(|e| e.dst != 3));
    }

    #[test]
    fn ties_split_by_input_order() {
        let inter: Vec<Interaction> = (0..10).map(|i| Interaction { src: i % 2, dst: 2, time: 5.0 }).collect();
        let g = TemporalGraph::from_interactions(3, inter.clone(), false).unwrap();
        let s = chronological_split(&g, SplitFractions::default()).unwrap();
        assert_eq!(s.train.interactions(), &inter[..7]);
        assert_eq!(s.val, inter[7..8]);
    }

    #[test]
    fn empty_partitions_fail() {
        assert!(matches!(chronological_split(&chain(3), SplitFractions::default()), Err(Error::EmptySplit(_))));
        let bad = SplitFractions { train: 0.5, val: 0.5, test: 0.5 };
        assert!(matches!(chronological_split(&chain(10), bad), Err(Error::Config(_))));
    }
}
