use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Mptg, TemporalGraph, TemporalIndex};
use crate::numerics::{Scalar, Tape, Tensor};

use super::{ap_forward, direct_forward, ApParams, KernelKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    /// Default acceptance bounds for a precision: absolute for 64-bit,
    /// relative for 32-bit.
    pub fn for_precision<T: Scalar>() -> Self {
        if std::mem::size_of::<T>() >= 8 {
            Self { abs: 1e-9, rel: f64::INFINITY }
        } else {
            Self { abs: f64::INFINITY, rel: 1e-4 }
        }
    }
}

#[derive(Clone, Debug)]
pub struct EquivalenceConfig {
    pub message_dim: usize,
    pub out_dim: usize,
    pub seed: u64,
    pub link_cap: u64,
    pub tolerance: Option<Tolerance>,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        Self { message_dim: 8, out_dim: 8, seed: 0, link_cap: 50_000_000, tolerance: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub kernel: KernelKind,
    pub precision: &'static str,
    pub temporal_nodes: usize,
    pub links: usize,
    pub max_abs: f64,
    /// Largest per-row `‖a − b‖∞ / ‖b‖∞`.
    pub max_rel: f64,
    pub tolerance: Tolerance,
    pub pass: bool,
}

/// `(max_abs, max_rel)` between a table and a reference of the same shape.
/// Relative error is taken row by row against the reference row's largest
/// magnitude, so exact zeros in single coordinates do not dominate.
pub fn compare_tables(a: &Tensor, reference: &Tensor) -> Result<(f64, f64)> {
    if a.shape() != reference.shape() {
        return Err(Error::shape("compare_tables", a.shape(), reference.shape()));
    }
    let (mut max_abs, mut max_rel) = (0f64, 0f64);
    if a.numel() == 0 {
        return Ok((0.0, 0.0));
    }
    for r in 0..a.rows() {
        let (x, y) = (a.row(r), reference.row(r));
        let diff = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        let scale = y.iter().map(|q| q.abs()).fold(0.0, f64::max).max(1e-12);
        if diff.is_nan() {
            return Ok((f64::NAN, f64::NAN));
        }
        max_abs = max_abs.max(diff);
        max_rel = max_rel.max(diff / scale);
    }
    Ok((max_abs, max_rel))
}

/// Runs the AP path in precision `T` and the direct path in 64-bit on the
/// same random messages and parameters, and compares every temporal node.
pub fn check_equivalence<T: Scalar>(
    g: &TemporalGraph,
    kernel: KernelKind,
    cfg: &EquivalenceConfig,
) -> Result<EquivalenceReport> {
    let index = TemporalIndex::build(g);
    let mptg = Mptg::build(&index, cfg.link_cap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let e = index.agg_edges().len();
    let d = cfg.message_dim;
    let random = |rng: &mut ChaCha8Rng, rows: usize| -> Tensor<T> {
        let v = (0..rows * d).map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0))).collect();
        Tensor::matrix(rows, d, v).expect("sized")
    };
    let messages = random(&mut rng, e);
    let nodes = random(&mut rng, index.num_tnodes());
    let params = ApParams::<T>::random(kernel, d, d, cfg.out_dim, &mut rng);

    let mut tape = Tape::<T>::new();
    let m = tape.constant(messages.clone());
    let n = tape.constant(nodes.clone());
    let vars = params.constants(&mut tape);
    let out = ap_forward(&mut tape, kernel, &index, m, Some(n), &vars)?;
    let ap: Tensor = tape.value(out.h).cast();

    let direct = direct_forward(kernel, &index, &mptg, &messages.cast(), Some(&nodes.cast()), &params.cast())?;
    let (max_abs, max_rel) = compare_tables(&ap, &direct)?;
    let tolerance = cfg.tolerance.unwrap_or_else(Tolerance::for_precision::<T>);
    Ok(EquivalenceReport {
        kernel,
        precision: T::NAME,
        temporal_nodes: index.num_tnodes(),
        links: mptg.len(),
        max_abs,
        max_rel,
        tolerance,
        pass: max_abs <= tolerance.abs && max_rel <= tolerance.rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::random;
    use proptest::prelude::*;

    #[test]
    fn single_precision_gcn_at_five_hundred_edges() {
        let g = random(42, 40, 500, false);
        let r = check_equivalence::<f32>(&g, KernelKind::Gcn, &EquivalenceConfig::default()).unwrap();
        assert!(r.max_rel < 1e-4, "{r:?}");
        assert!(r.pass);
    }

    #[test]
    fn compare_tables_rejects_shape_mismatch() {
        assert!(compare_tables(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn link_cap_propagates() {
        let g = random(1, 5, 100, false);
        let cfg = EquivalenceConfig { link_cap: 3, ..Default::default() };
        assert!(matches!(check_equivalence::<f64>(&g, KernelKind::Mean, &cfg), Err(Error::LinkCapExceeded { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn ap_matches_direct(seed in 0u64..10_000, nodes in 2usize..20, edges in 1usize..150,
                             directed in any::<bool>(), k in 0usize..4) {
            let g = random(seed, nodes, edges, directed);
            let cfg = EquivalenceConfig { message_dim: 4, out_dim: 3, seed, ..Default::default() };
            let r = check_equivalence::<f64>(&g, KernelKind::ALL[k], &cfg).unwrap();
            prop_assert!(r.pass, "{:?}", r);
        }

        /// The output at a temporal node only depends on messages up to its
        /// time: recomputing on a time prefix leaves earlier nodes unchanged.
        #[test]
        fn prefix_outputs_are_stable(seed in 0u64..10_000, k in 0usize..4) {
            let g = random(seed, 8, 60, false);
            let cut = g.interactions()[30].time;
            let small = g.up_to(cut);
            let kernel = KernelKind::ALL[k];
            let full = TemporalIndex::build(&g);
            let part = TemporalIndex::build(&small);
            // messages derived from the interaction id so both runs agree
            let msg = |idx: &TemporalIndex, g: &crate::graph::TemporalGraph| {
                let v: Vec<f64> = idx.agg_edges().iter().flat_map(|e| {
                    let m = g.messages()[e.message];
                    [m.interaction as f64 * 0.1, (m.src * 7 + m.dst) as f64 * 0.01]
                }).collect();
                Tensor::matrix(idx.agg_edges().len(), 2, v).unwrap()
            };
            let tn = |idx: &TemporalIndex| {
                let v: Vec<f64> = (0..idx.num_tnodes()).flat_map(|t| {
                    [idx.tnode_node()[t] as f64 * 0.3, idx.tnode_time()[t] * 0.01]
                }).collect();
                Tensor::matrix(idx.num_tnodes(), 2, v).unwrap()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = ApParams::<f64>::random(kernel, 2, 2, 2, &mut rng);
            let run = |idx: &TemporalIndex, g: &crate::graph::TemporalGraph| {
                let mut tape = Tape::new();
                let m = tape.constant(msg(idx, g));
                let n = tape.constant(tn(idx));
                let vars = p.constants(&mut tape);
                let out = ap_forward(&mut tape, kernel, idx, m, Some(n), &vars).unwrap();
                tape.value(out.h).clone()
            };
            let (hf, hp) = (run(&full, &g), run(&part, &small));
            for t in 0..part.num_tnodes() {
                let f = full.find(part.tnode_node()[t], part.tnode_time()[t]).unwrap();
                for (a, b) in hp.row(t).iter().zip(hf.row(f)) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
