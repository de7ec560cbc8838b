use super::*;
use crate::graph::fixtures::random;
use crate::model::{dynamic_embed, ModelConfig, TrainConfig};
use proptest::prelude::*;

fn model(g: &TemporalGraph, kernel: KernelKind, layers: usize, seed: u64) -> ModelParams {
    let cfg = TrainConfig { dim: 6, time_dim: 4, layers, kernel, ..Default::default() };
    let mut config = ModelConfig::for_graph(g, &cfg);
    // widen the time axis so that later stream batches stay in range
    config.time_norm = crate::graph::TimeNorm::spanning(0.0, 50.0);
    ModelParams::init(config, seed)
}

/// Per-layer rows of every node at its last temporal node, from one batch
/// forward over `g`; `None` for nodes without history.
fn batch_rows(params: &ModelParams, g: &TemporalGraph) -> Vec<Vec<Option<Vec<f64>>>> {
    let index = TemporalIndex::build(g);
    let mut tape = Tape::new();
    let vars = params.constants(&mut tape);
    let fwd = forward_temporal(&mut tape, params, &vars, g, &index, &mut Mode::Infer).unwrap();
    fwd.layers
        .iter()
        .map(|&h| {
            (0..params.config.num_nodes)
                .map(|v| {
                    let last = if v < g.num_nodes() { index.last_tnode(v) } else { None };
                    last.map(|t| tape.value(h).row(t).to_vec())
                })
                .collect()
        })
        .collect()
}

fn max_diff(st: &StreamState, reference: &[Vec<Option<Vec<f64>>>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, layer) in reference.iter().enumerate() {
        for (v, row) in layer.iter().enumerate() {
            match row {
                Some(r) => {
                    for (a, b) in st.layer_rows(k + 1).row(v).iter().zip(r) {
                        worst = worst.max((a - b).abs());
                    }
                }
                None => assert_eq!(st.cum_degree(v), 0),
            }
        }
    }
    worst
}

fn replay(params: &ModelParams, g: &TemporalGraph, size: usize, order: FoldOrder) -> StreamState {
    let mut st = StreamState::cold(params, order);
    for b in StreamBatch::windows(g, size).unwrap() {
        st.update(&b).unwrap();
    }
    st
}

#[test]
fn replay_matches_batch_forward_for_every_kernel() {
    for (seed, directed) in [(1, false), (2, true)] {
        let g = random(seed, 12, 60, directed);
        for kernel in KernelKind::ALL {
            let params = model(&g, kernel, 3, seed);
            let reference = batch_rows(&params, &g);
            for size in [1, 7, 17, 256] {
                let st = replay(&params, &g, size, FoldOrder::Exact);
                let diff = max_diff(&st, &reference);
                assert!(diff < 1e-9, "{kernel} size {size}: {diff}");
                assert!(batch_discrepancy(&st, &g).unwrap() < 1e-9);
            }
        }
    }
}

#[test]
fn init_state_matches_batch_forward() {
    let g = random(5, 10, 50, false);
    for kernel in KernelKind::ALL {
        let params = model(&g, kernel, 2, 0);
        let st = init_state(&params, &g).unwrap();
        assert!(max_diff(&st, &batch_rows(&params, &g)) < 1e-9, "{kernel}");
        assert_eq!(st.watermark(), g.time_range().map(|r| r.1));
    }
}

#[test]
fn empty_history_is_cold() {
    let g = random(5, 10, 50, false);
    let params = model(&g, KernelKind::Mean, 2, 0);
    let st = init_state(&params, &g.prefix(0)).unwrap();
    assert_eq!(st.watermark(), None);
    assert!((0..10).all(|v| st.last_time(v).is_none()));
    assert_eq!(st, StreamState::cold(&params, FoldOrder::Exact));
}

#[test]
fn literal_order_agrees_only_for_one_layer() {
    let g = random(3, 8, 60, false);
    for kernel in KernelKind::ALL {
        let one = model(&g, kernel, 1, 4);
        let diff = max_diff(&replay(&one, &g, 5, FoldOrder::Literal), &batch_rows(&one, &g));
        assert!(diff < 1e-9, "{kernel}: {diff}");

        let two = model(&g, kernel, 2, 4);
        let diff = max_diff(&replay(&two, &g, 5, FoldOrder::Literal), &batch_rows(&two, &g));
        assert!(diff > 1e-6, "{kernel}: literal order should read stale rows, diff {diff}");
        assert!(batch_discrepancy(&replay(&two, &g, 5, FoldOrder::Literal), &g).unwrap() > 1e-6);
        assert_eq!(batch_discrepancy(&replay(&two, &g.prefix(30), 5, FoldOrder::Exact), &g).unwrap(), f64::INFINITY);
    }
}

#[test]
fn ties_split_across_batches_are_merged() {
    let e = |src, dst, time| Interaction { src, dst, time };
    let g = TemporalGraph::from_interactions(4, vec![e(0, 1, 1.0), e(1, 2, 2.0), e(3, 2, 2.0), e(0, 2, 2.0)], false)
        .unwrap();
    let params = model(&g, KernelKind::Gcn, 2, 1);
    let whole = replay(&params, &g, 4, FoldOrder::Exact);
    let single = replay(&params, &g, 1, FoldOrder::Exact);
    assert!(whole.top_rows().max_abs_diff(single.top_rows()).unwrap() < 1e-12);
    assert_eq!(single.cum_degree(2), 3);
}

#[test]
fn empty_batch_only_moves_the_watermark() {
    let g = random(9, 10, 40, true);
    let params = model(&g, KernelKind::Attention, 2, 0);
    let mut st = init_state(&params, &g).unwrap();
    let before = st.clone();
    let report = st.update(&StreamBatch::empty(40.0)).unwrap();
    assert_eq!((report.groups, report.messages, report.touched_rows), (0, 0, 0));
    assert_eq!(st.watermark(), Some(40.0));
    assert_eq!(st.top_rows(), before.top_rows());
    for k in 1..=2 {
        assert_eq!(st.layer_rows(k), before.layer_rows(k));
    }
}

#[test]
fn out_of_order_batches_are_rejected() {
    let g = random(9, 10, 40, false);
    let params = model(&g, KernelKind::Mean, 1, 0);
    let mut st = init_state(&params, &g).unwrap();
    let wm = st.watermark().unwrap();
    let late = StreamBatch::new(vec![Interaction { src: 0, dst: 1, time: wm - 1.0 }], vec![]).unwrap();
    match st.update(&late) {
        Err(Error::OutOfOrder { batch_time, watermark }) => assert_eq!((batch_time, watermark), (wm - 1.0, wm)),
        other => panic!("{other:?}"),
    }
    assert!(st.query(&[(0, wm - 0.5)]).is_err());
    assert!(matches!(st.update(&StreamBatch::empty(wm - 2.0)), Err(Error::OutOfOrder { .. })));
}

#[test]
fn cold_node_batch_matches_one_edge_graph() {
    let one = TemporalGraph::from_interactions(5, vec![Interaction { src: 3, dst: 4, time: 2.0 }], true).unwrap();
    for kernel in KernelKind::ALL {
        let params = model(&one, kernel, 2, 7);
        let mut st = StreamState::cold(&params, FoldOrder::Exact);
        let report = st.update(&StreamBatch::new(one.interactions().to_vec(), vec![]).unwrap()).unwrap();
        assert_eq!(report.nodes, vec![4]);
        assert!(max_diff(&st, &batch_rows(&params, &one)) < 1e-12);
    }
}

#[test]
fn queries_match_batch_embeddings() {
    let g = random(11, 10, 60, false);
    for kernel in KernelKind::ALL {
        let params = model(&g, kernel, 2, 2);
        let st = init_state(&params, &g).unwrap();
        let t = st.watermark().unwrap() + 0.75;
        let queries: Vec<(usize, f64)> = (0..10).map(|v| (v, t)).collect();
        let ours = st.query(&queries).unwrap();
        let theirs = dynamic_embed(&params, &g, &queries).unwrap();
        assert!(ours.max_abs_diff(&theirs).unwrap() < 1e-9, "{kernel}");
        assert_eq!(st.query(&[(3, t), (3, t)]).unwrap().row(0), ours.row(3));
    }
}

#[test]
fn queries_handle_cold_and_unknown_nodes() {
    let g = TemporalGraph::from_interactions(4, vec![Interaction { src: 0, dst: 1, time: 1.0 }], true).unwrap();
    let params = model(&g, KernelKind::Pool, 1, 0);
    let st = init_state(&params, &g).unwrap();
    let q = [(3, 5.0)];
    assert_eq!(st.query(&q).unwrap(), dynamic_embed(&params, &g, &q).unwrap());
    assert!(matches!(st.query(&[(4, 5.0)]), Err(Error::UnknownNode(4))));
}

#[test]
fn touched_rows_do_not_grow_with_history() {
    let long = random(4, 30, 600, false);
    let params = model(&long, KernelKind::Gcn, 3, 0);
    let batch = StreamBatch::new(
        vec![Interaction { src: 1, dst: 2, time: 400.0 }, Interaction { src: 2, dst: 5, time: 400.0 }],
        vec![],
    )
    .unwrap();
    let mut counts = Vec::new();
    for history in [0, 50, 600] {
        let mut st = init_state(&params, &long.prefix(history)).unwrap();
        let r = st.update(&batch).unwrap();
        assert_eq!(r.nodes, vec![1, 2, 5]);
        assert_eq!(r.messages, 4);
        counts.push(r.touched_rows);
    }
    assert_eq!(counts, vec![3 * 3 + 4; 3]);
}

#[test]
fn snapshot_roundtrip_is_byte_identical_and_resumable() {
    let g = random(6, 12, 80, false);
    for kernel in KernelKind::ALL {
        let params = model(&g, kernel, 2, 3);
        let half = g.prefix(37);
        let mut st = init_state(&params, &half).unwrap();
        let mut bytes = Vec::new();
        st.write_to(&mut bytes).unwrap();
        let mut back = StreamState::read_from(bytes.as_slice(), &params).unwrap();
        assert_eq!(back, st);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);

        // the open group survives the roundtrip: later ties still merge
        let rest = StreamBatch::new(g.interactions()[37..].to_vec(), vec![]).unwrap();
        st.update(&rest).unwrap();
        back.update(&rest).unwrap();
        assert_eq!(back, st);
        assert!(max_diff(&back, &batch_rows(&params, &g)) < 1e-9);
    }
}

#[test]
fn snapshot_rejects_another_model() {
    let g = random(6, 12, 80, false);
    let st = init_state(&model(&g, KernelKind::Mean, 2, 3), &g).unwrap();
    let mut bytes = Vec::new();
    st.write_to(&mut bytes).unwrap();
    let other = model(&g, KernelKind::Mean, 1, 3);
    assert!(matches!(StreamState::read_from(bytes.as_slice(), &other), Err(Error::Format { .. })));
    assert!(StreamState::read_from(&bytes[..bytes.len() - 3], &other).is_err());
}

#[test]
fn bench_reports_rows_and_fits() {
    let g = random(2, 40, 400, false);
    let cfg = BenchConfig {
        batch_sizes: vec![4, 32],
        layers: vec![1, 2],
        repetitions: 3,
        dim: 8,
        time_dim: 4,
        ..Default::default()
    };
    let report = stream_bench(&g, 300, &cfg).unwrap();
    assert_eq!(report.stream.len(), 4);
    assert_eq!(report.direct.len(), 4);
    assert!(report.stream.iter().all(|r| r.p50_ms <= r.p95_ms && r.mean_ms > 0.0));
    let csv = BenchReport::csv(&report.stream);
    assert!(csv.starts_with("batch_size,layers,mean_ms,p50_ms,p95_ms\n"));
    assert_eq!(csv.lines().count(), 5);

    let none = stream_bench(&g, 300, &BenchConfig { repetitions: 0, ..cfg.clone() }).unwrap();
    assert!(none.stream.is_empty());
    assert!(stream_bench(&g, 390, &cfg).is_err());
}

#[test]
fn linear_fit_examples() {
    let f = linear_fit(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
    assert!((f.slope - 2.0).abs() < 1e-12 && f.intercept.abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    let noisy = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    assert!(noisy.r2 < 1.0 && noisy.r2 > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn batching_does_not_change_results(
        seed in 0u64..500,
        size in 1usize..30,
        kernel in prop::sample::select(KernelKind::ALL.to_vec()),
        directed in any::<bool>(),
    ) {
        let g = random(seed, 9, 45, directed);
        let params = model(&g, kernel, 2, seed);
        let st = replay(&params, &g, size, FoldOrder::Exact);
        prop_assert!(max_diff(&st, &batch_rows(&params, &g)) < 1e-9);
        let wm = st.watermark().unwrap();
        prop_assert!((0..9).filter_map(|v| st.last_time(v)).all(|t| t <= wm));
    }
}
