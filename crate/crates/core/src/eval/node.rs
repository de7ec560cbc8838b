use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{glorot, LEAKY_SLOPE};
use crate::model::Adam;
use crate::numerics::{ParamId, Tape, Tensor, Var};

use super::auc_roc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NodeClassConfig {
    pub hidden: [usize; 2],
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Chronological train / validation shares; the rest is test.
    pub train: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for NodeClassConfig {
    fn default() -> Self {
        Self {
            hidden: [80, 10],
            lr: 0.01,
            batch_size: 256,
            patience: 10,
            max_epochs: 200,
            train: 0.7,
            val: 0.15,
            seed: 0,
        }
    }
}

struct Head {
    tensors: Vec<Tensor>,
}

impl Head {
    fn new(input: usize, hidden: [usize; 2], rng: &mut ChaCha8Rng) -> Self {
        let dims = [input, hidden[0], hidden[1], 1];
        let mut tensors = Vec::new();
        for w in dims.windows(2) {
            tensors.push(glorot(rng, w[0], w[1]));
            tensors.push(Tensor::zeros(&[1, w[1]]));
        }
        Self { tensors }
    }

    fn logits(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<Var> {
        let vars: Vec<Var> = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| if trainable { tape.param(ParamId(i), t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let mut h = x;
        for (l, pair) in vars.chunks(2).enumerate() {
            h = tape.matmul(h, pair[0])?;
            h = tape.add_bias(h, pair[1])?;
            if l < 2 {
                h = tape.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok(h)
    }

    fn scores(&self, x: &Tensor, rows: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xs = tape.constant(gather(x, rows));
        let z = self.logits(&mut tape, xs, false)?;
        Ok(tape.value(z).data().to_vec())
    }
}

fn gather(x: &Tensor, rows: &[usize]) -> Tensor {
    crate::numerics::ops::gather_rows(x, rows).expect("rows in range")
}

/// Trains a three-layer MLP on per-interaction inputs (typically the
/// concatenated source and destination embeddings) with rows taken in
/// chronological order, oversampling positives in every batch, and returns
/// the test AUC of the best validation epoch.
pub fn eval_node_classification(inputs: &Tensor, labels: &[bool], cfg: &NodeClassConfig) -> Result<f64> {
    let n = inputs.rows();
    if labels.len() != n {
        return Err(Error::shape("eval_node_classification", inputs.shape(), &[labels.len()]));
    }
    let b1 = (cfg.train * n as f64).floor() as usize;
    let b2 = ((cfg.train + cfg.val) * n as f64).floor() as usize;
    let train: Vec<usize> = (0..b1).collect();
    let val: Vec<usize> = (b1..b2).collect();
    let test: Vec<usize> = (b2..n).collect();
    let positives: Vec<usize> = train.iter().copied().filter(|&i| labels[i]).collect();
    if positives.is_empty() {
        return Err(Error::invalid("eval_node_classification", "no positive labels in the training portion"));
    }
    if positives.len() == train.len() {
        return Err(Error::invalid("eval_node_classification", "no negative labels in the training portion"));
    }
    let pick = |rows: &[usize]| rows.iter().map(|&i| labels[i]).collect::<Vec<bool>>();
    let (val_labels, test_labels) = (pick(&val), pick(&test));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = Head::new(inputs.cols(), cfg.hidden, &mut rng);
    let mut adam = Adam::new(&head.tensors, cfg.lr);
    let mut best = (f64::NEG_INFINITY, head.tensors.clone());
    let mut stale = 0;
    let mut order = train.clone();
    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut rows = chunk.to_vec();
            let pos = rows.iter().filter(|&&i| labels[i]).count();
            let neg = rows.len() - pos;
            for _ in pos..neg {
                rows.push(positives[rng.random_range(0..positives.len())]);
            }
            let signs = Tensor::column(rows.iter().map(|&i| if labels[i] { 1.0 } else { -1.0 }).collect());
            let mut tape = Tape::new();
            let x = tape.constant(gather(inputs, &rows));
            let z = head.logits(&mut tape, x, true)?;
            let s = tape.constant(signs);
            let sz = tape.mul(z, s)?;
            let ll = tape.log_sigmoid(sz);
            let m = tape.mean(ll);
            let loss = tape.neg(m);
            let grads = tape.backward(loss)?;
            adam.step(&mut head.tensors, &grads);
        }
        let auc = auc_roc(&head.scores(inputs, &val)?, &val_labels)?;
        if auc > best.0 {
            best = (auc, head.tensors.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    head.tensors = best.1;
    auc_roc(&head.scores(inputs, &test)?, &test_labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize, seed: u64, shuffle_labels: bool) -> (Tensor, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = [1.0, -2.0, 0.5, 1.5];
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            // a rare positive class
            labels.push(s > 1.6);
            rows.push(x);
        }
        if shuffle_labels {
            labels.shuffle(&mut rng);
        }
        (Tensor::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_labels_are_learned() {
        let (x, y) = data(2000, 1, false);
        let rate = y.iter().filter(|&&l| l).count() as f64 / y.len() as f64;
        assert!(rate < 0.2, "positives should be rare, got {rate}");
        let auc = eval_node_classification(&x, &y, &NodeClassConfig::default()).unwrap();
        assert!(auc >= 0.99, "{auc}");
    }

    #[test]
    fn shuffled_labels_give_chance() {
        let mut total = 0.0;
        for seed in 0..5 {
            let (x, y) = data(1500, 10 + seed, true);
            let cfg = NodeClassConfig { seed, max_epochs: 30, ..Default::default() };
            total += eval_node_classification(&x, &y, &cfg).unwrap();
        }
        let mean = total / 5.0;
        assert!((0.4..=0.6).contains(&mean), "{mean}");
    }

    #[test]
    fn all_negative_labels_fail() {
        let (x, _) = data(100, 0, false);
        assert!(eval_node_classification(&x, &[false; 100], &NodeClassConfig::default()).is_err());
    }
}
