use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Interaction;
use crate::numerics::{Scalar, Tape, Var};

/// Mean over the batch of
/// `−log σ(h_u·h_v) − Σ_j log σ(−h_{n_j}·h_v)`.
///
/// `src` and `dst` hold one row per positive edge; `neg` holds `k` rows per
/// edge, edge-major.
pub fn nsl_loss<T: Scalar>(tape: &mut Tape<T>, src: Var, dst: Var, neg: Var, k: usize) -> Result<Var> {
    let b = tape.value(src).rows();
    if b == 0 {
        return Err(Error::invalid("nsl_loss", "empty batch"));
    }
    if tape.value(neg).rows() != b * k {
        return Err(Error::shape("nsl_loss", tape.shape(neg), &[b * k]));
    }
    let pos = tape.row_dot(src, dst)?;
    let pos = tape.log_sigmoid(pos);
    let pos = tape.sum(pos);
    let total = if k > 0 {
        let rep: Arc<[usize]> = (0..b * k).map(|i| i / k).collect();
        let dst_rep = tape.gather_rows(dst, rep)?;
        let s = tape.row_dot(neg, dst_rep)?;
        let s = tape.neg(s);
        let s = tape.log_sigmoid(s);
        let s = tape.sum(s);
        tape.add(pos, s)?
    } else {
        pos
    };
    Ok(tape.scale(total, -T::one() / T::from_usize(b).unwrap()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Uniform over nodes seen in training.
    #[default]
    Uniform,
    /// Proportional to `degree^0.75`.
    Degree,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerKind::Uniform),
            "degree" => Ok(SamplerKind::Degree),
            other => Err(Error::Config(format!("unknown sampler {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct NegativeSampler {
    universe: Vec<usize>,
    weights: Option<WeightedIndex<f64>>,
}

impl NegativeSampler {
    pub fn new(edges: &[Interaction], kind: SamplerKind) -> Result<Self> {
        let mut degree = std::collections::BTreeMap::<usize, usize>::new();
        for e in edges {
            *degree.entry(e.src).or_default() += 1;
            *degree.entry(e.dst).or_default() += 1;
        }
        if degree.is_empty() {
            return Err(Error::invalid("negative_sampler", "empty node universe"));
        }
        let universe: Vec<usize> = degree.keys().copied().collect();
        let weights = match kind {
            SamplerKind::Uniform => None,
            SamplerKind::Degree => Some(
                WeightedIndex::new(degree.values().map(|&d| (d as f64).powf(0.75)))
                    .map_err(|e| Error::invalid("negative_sampler", e.to_string()))?,
            ),
        };
        Ok(Self { universe, weights })
    }

    /// Sorted node ids the sampler draws from.
    pub fn universe(&self) -> &[usize] {
        &self.universe
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let i = match &self.weights {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..self.universe.len()),
        };
        self.universe[i]
    }

    /// `k` draws per edge, edge-major.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, edges: usize, k: usize) -> Vec<usize> {
        (0..edges * k).map(|_| self.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ops, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn loss_of(src: Tensor, dst: Tensor, neg: Tensor, k: usize) -> f64 {
        let mut tape = Tape::new();
        let (s, d, n) = (tape.constant(src), tape.constant(dst), tape.constant(neg));
        let l = nsl_loss(&mut tape, s, d, n, k).unwrap();
        tape.value(l).item()
    }

    #[test]
    fn zero_embeddings_give_ln2_per_term() {
        for k in [1usize, 3] {
            let l = loss_of(Tensor::zeros(&[4, 3]), Tensor::zeros(&[4, 3]), Tensor::zeros(&[4 * k, 3]), k);
            assert!((l - (1.0 + k as f64) * std::f64::consts::LN_2).abs() < 1e-12);
        }
        let l = loss_of(Tensor::zeros(&[1, 2]), Tensor::zeros(&[1, 2]), Tensor::zeros(&[1, 2]), 1);
        assert!((l - 1.386_294_361_119_890_6).abs() < 1e-12);
    }

    #[test]
    fn aligned_positive_and_opposed_negative_vanish() {
        let big = Tensor::row_vector(vec![30.0, 0.0]);
        let anti = Tensor::row_vector(vec![-30.0, 0.0]);
        let l = loss_of(big.clone(), big, anti, 1);
        assert!(l < 1e-12);
    }

    #[test]
    fn matches_scalar_recomputation() {
        let src = Tensor::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.5]]).unwrap();
        let dst = Tensor::from_rows(&[vec![1.1, 0.4], vec![-0.7, 0.9]]).unwrap();
        let neg = Tensor::from_rows(&[vec![0.2, 0.2], vec![-1.5, 1.0]]).unwrap();
        let dot = |a: &[f64], b: &[f64]| a[0] * b[0] + a[1] * b[1];
        let ls = |x: f64| -(1.0 + (-x).exp()).ln();
        let mut expect = 0.0;
        for i in 0..2 {
            expect -= ls(dot(src.row(i), dst.row(i)));
            expect -= ls(-dot(neg.row(i), dst.row(i)));
        }
        expect /= 2.0;
        assert!((loss_of(src, dst, neg, 1) - expect).abs() < 1e-14);
        // the stable tensor primitive agrees with the naive formula here
        assert!((ops::log_sigmoid_scalar(0.7f64) - ls(0.7)).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_and_bad_negatives_fail() {
        let mut tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(nsl_loss(&mut tape, e, e, e, 1).is_err());
        let a = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(nsl_loss(&mut tape, a, a, a, 2).is_err());
    }

    fn edges(pairs: &[(usize, usize)]) -> Vec<Interaction> {
        pairs.iter().enumerate().map(|(i, &(src, dst))| Interaction { src, dst, time: i as f64 }).collect()
    }

    #[test]
    fn sampler_is_reproducible_and_counts() {
        let s = NegativeSampler::new(&edges(&[(0, 1), (1, 2)]), SamplerKind::Uniform).unwrap();
        assert_eq!(s.universe(), &[0, 1, 2]);
        let draw = |seed| s.sample_batch(&mut ChaCha8Rng::seed_from_u64(seed), 5, 2);
        assert_eq!(draw(4), draw(4));
        assert_eq!(draw(4).len(), 10);
        assert!(draw(4).iter().all(|v| *v < 3));
        assert!(NegativeSampler::new(&[], SamplerKind::Uniform).is_err());
    }

    #[test]
    fn degree_sampler_favours_the_star_centre() {
        let k = 9;
        let star: Vec<(usize, usize)> = (1..=k).map(|i| (i, 0)).collect();
        let s = NegativeSampler::new(&edges(&star), SamplerKind::Degree).unwrap();
        let draws = 100_000;
        let mut counts = vec![0usize; k + 1];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..draws {
            counts[s.sample(&mut rng)] += 1;
        }
        assert!(counts[1..].iter().all(|&c| c < counts[0]));
        let w: Vec<f64> = (0..=k).map(|v| if v == 0 { (k as f64).powf(0.75) } else { 1.0 }).collect();
        let total: f64 = w.iter().sum();
        let chi2: f64 = counts
            .iter()
            .zip(&w)
            .map(|(&c, wi)| {
                let e = draws as f64 * wi / total;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let critical = ChiSquared::new(k as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} vs {critical}");
    }
}
