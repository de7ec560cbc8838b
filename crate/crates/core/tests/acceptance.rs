//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tapgnn_core::eval::eval_link_prediction;
use tapgnn_core::graph::{
    chronological_split, graph_stats, Interaction, Mptg, SplitFractions, TemporalGraph, TemporalIndex,
};
use tapgnn_core::kernels::{check_equivalence, EquivalenceConfig, KernelKind};
use tapgnn_core::model::{grad_check, train, ModelConfig, ModelParams, TrainConfig};
use tapgnn_core::streaming::{batch_discrepancy, stream_bench, BenchConfig, BenchReport, StreamBatch, StreamState};
use tapgnn_core::synthetic::SyntheticSpec;

/// Multigraph with `n` nodes and `m` edges on a coarse integer clock, so
/// timestamps repeat.
fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize, directed: bool) -> TemporalGraph {
    let span = (m / 3).max(1);
    let edges = (0..m)
        .map(|_| {
            let src = rng.random_range(0..n);
            let dst = (src + rng.random_range(1..n)) % n;
            Interaction { src, dst, time: rng.random_range(0..span) as f64 }
        })
        .collect();
    TemporalGraph::from_interactions(n, edges, directed).unwrap()
}

fn small_model(g: &TemporalGraph, kernel: KernelKind, layers: usize, seed: u64) -> ModelParams {
    let cfg = TrainConfig { layers, dim: 8, time_dim: 4, kernel, ..Default::default() };
    ModelParams::init(ModelConfig::for_graph(g, &cfg), seed)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for i in 0..50 {
        let n = rng.random_range(2..=50);
        let m = rng.random_range(1..=500);
        let directed = rng.random_bool(0.5);
        let g = random_graph(&mut rng, n, m, directed);
        for kernel in KernelKind::ALL {
            let cfg = EquivalenceConfig { seed: i, ..Default::default() };
            let r = check_equivalence::<f64>(&g, kernel, &cfg).unwrap();
            worst = worst.max(r.max_abs);
            if !(r.max_abs < 1e-9) {
                failures += 1;
            }
        }
    }
    Outcome { pass: failures == 0, detail: format!("200 comparisons, max abs diff {worst:.2e}, {failures} over 1e-9") }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut graphs: Vec<TemporalGraph> = (0..4)
        .map(|i| {
            let n = rng.random_range(5..=60);
            let m = rng.random_range(300..=900);
            random_graph(&mut rng, n, m, i % 2 == 0)
        })
        .collect();
    graphs.push(SyntheticSpec::Communities { n: 60, m: 800, partners: 1 }.generate(3).unwrap());
    let mut worst = 0.0f64;
    let mut runs = 0;
    for (gi, g) in graphs.iter().enumerate() {
        for kernel in KernelKind::ALL {
            let params = small_model(g, kernel, 3, gi as u64);
            for size in [1, 17, 256] {
                let mut state = StreamState::cold(&params, Default::default());
                for batch in StreamBatch::windows(g, size).unwrap() {
                    state.update(&batch).unwrap();
                }
                worst = worst.max(batch_discrepancy(&state, g).unwrap());
                runs += 1;
            }
        }
    }
    Outcome { pass: worst < 1e-9, detail: format!("{runs} replays, K=3, max abs diff {worst:.2e}") }
}

/// `(|V^T|, |E^T|, Σ d_v²)` counted straight from the interaction list.
fn brute_force_counts(g: &TemporalGraph) -> (usize, u64, u64) {
    let mut messages: Vec<(usize, f64)> = Vec::new();
    for e in g.interactions() {
        messages.push((e.dst, e.time));
        if !g.is_directed() {
            messages.push((e.src, e.time));
        }
    }
    let tnodes: BTreeSet<(usize, u64)> = messages.iter().map(|&(v, t)| (v, t.to_bits())).collect();
    let links = tnodes
        .iter()
        .map(|&(v, t)| messages.iter().filter(|&&(w, s)| w == v && s <= f64::from_bits(t)).count() as u64)
        .sum();
    let mut degree = vec![0u64; g.num_nodes()];
    for &(v, _) in &messages {
        degree[v] += 1;
    }
    (tnodes.len(), links, degree.iter().map(|d| d * d).sum())
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = Vec::new();
    for i in 0..100 {
        let n = rng.random_range(2..=40);
        let m = rng.random_range(1..=400);
        let directed = rng.random_bool(0.5);
        let g = random_graph(&mut rng, n, m, directed);
        let s = graph_stats(&g);
        let (tn, links, dsq) = brute_force_counts(&g);
        let explicit = Mptg::build(&TemporalIndex::build(&g), u64::MAX).unwrap().len() as u64;
        let ok = s.temporal_nodes == tn
            && tn <= 2 * g.num_interactions()
            && s.temporal_links == links
            && explicit == links
            && links <= dsq
            && s.degree_square_sum == dsq;
        if !ok {
            bad.push(format!("graph {i}"));
        }
    }
    for k in 1..=60 {
        let g = SyntheticSpec::Star { k }.generate(0).unwrap();
        if graph_stats(&g).temporal_links != (k * (k + 1) / 2) as u64 {
            bad.push(format!("star k={k}"));
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            "100 random graphs and stars k=1..60".into()
        } else {
            format!("mismatch on {}", bad.join(", "))
        },
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut parts = Vec::new();
    let mut pass = true;
    for kernel in KernelKind::ALL {
        let mut worst = 0.0f64;
        for rep in 0..3 {
            let g = random_graph(&mut rng, 8, 20, rep % 2 == 0);
            let params = small_model(&g, kernel, 2, rep);
            let r = grad_check(&params, &g, 150, 1e-5, rep).unwrap();
            worst = worst.max(r.max_rel);
        }
        pass &= worst < 1e-4;
        parts.push(format!("{kernel} {worst:.1e}"));
    }
    Outcome { pass, detail: format!("max relative error: {}", parts.join(", ")) }
}

fn criterion_5() -> Outcome {
    let g = SyntheticSpec::Communities { n: 400, m: 12_000, partners: 3 }.generate(5).unwrap();
    let cfg = BenchConfig {
        batch_sizes: vec![256],
        layers: vec![1, 2, 3],
        repetitions: 30,
        warmup: 3,
        baseline: false,
        ..Default::default()
    };
    let report = stream_bench(&g, 10_000, &cfg).unwrap();
    let fit = BenchReport::layer_fit(&report.stream, 256).unwrap();
    let means: Vec<String> = report.stream.iter().map(|r| format!("{:.2}", r.mean_ms)).collect();

    // Touched rows for one fixed batch after histories of very different length.
    let batch_edges: Vec<Interaction> =
        (0..64).map(|i| Interaction { src: i % 40, dst: (i * 7 + 1) % 40, time: 1e6 + i as f64 }).collect();
    let mut touched = Vec::new();
    for history in [0, 1_000, 10_000] {
        let hist = g.prefix(history);
        let params = small_model(&g, KernelKind::Gcn, 2, 0);
        let mut state = tapgnn_core::streaming::init_state(&params, &hist).unwrap();
        let batch = StreamBatch::new(batch_edges.clone(), Vec::new()).unwrap();
        touched.push(state.update(&batch).unwrap().touched_rows);
    }
    let flat = touched.windows(2).all(|w| w[0] == w[1]);
    Outcome {
        pass: fit.r2 > 0.95 && flat,
        detail: format!(
            "mean ms for K=1,2,3: {}; R^2 {:.4}; touched rows at histories 0/1000/10000: {touched:?}",
            means.join("/"),
            fit.r2
        ),
    }
}

fn criterion_6() -> Outcome {
    let spec: SyntheticSpec = "communities".parse().unwrap();
    let g = spec.generate(0).unwrap();
    let split = chronological_split(&g, SplitFractions::default()).unwrap();
    let cfg = TrainConfig::default();
    let (params, log) = train::<f64>(&split, &cfg).unwrap();
    let m = eval_link_prediction(&params, &split, 0).unwrap();
    Outcome {
        pass: m.auc >= 0.95,
        detail: format!(
            "{spec} (bitcoin-otc not bundled), default config, {} epochs, test AUC {:.4}",
            log.epochs_run, m.auc
        ),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("1 ap vs direct, 50 random graphs x 4 kernels", criterion_1),
        ("2 streaming replay equals batch, sizes 1/17/256", criterion_2),
        ("3 temporal node and link counts", criterion_3),
        ("4 gradient check", criterion_4),
        ("5 stream latency linear in K, work independent of history", criterion_5),
        ("6 end-to-end link prediction AUC >= 0.95", criterion_6),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let t0 = Instant::now();
        let o = run();
        println!(
            "{} criterion {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t0.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
