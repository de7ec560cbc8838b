use tapgnn_core::eval::eval_link_prediction;
use tapgnn_core::graph::{chronological_split, SplitFractions};
use tapgnn_core::kernels::KernelKind;
use tapgnn_core::model::{train, ModelParams, TrainConfig};
use tapgnn_core::synthetic::SyntheticSpec;

fn small_cfg(kernel: KernelKind) -> TrainConfig {
    TrainConfig {
        dim: 16,
        time_dim: 8,
        batch_size: 64,
        max_epochs: 4,
        patience: 10,
        seed: 5,
        kernel,
        ..Default::default()
    }
}

#[test]
fn training_is_reproducible_and_lowers_the_loss() {
    let g = SyntheticSpec::Communities { n: 40, m: 600, partners: 1 }.generate(2).unwrap();
    let split = chronological_split(&g, SplitFractions::default()).unwrap();
    for kernel in KernelKind::ALL {
        let cfg = small_cfg(kernel);
        let (a, log) = train::<f64>(&split, &cfg).unwrap();
        let (b, again) = train::<f64>(&split, &cfg).unwrap();
        assert_eq!(a.tensors(), b.tensors(), "{kernel}");
        assert_eq!(log.losses(), again.losses());

        let epochs: Vec<f64> = log.rows.iter().filter(|r| r.batch.is_none()).map(|r| r.loss).collect();
        assert_eq!(epochs.len(), log.epochs_run);
        assert!(epochs.last().unwrap() < epochs.first().unwrap(), "{kernel}: {epochs:?}");
        assert_eq!(log.to_csv().lines().count(), log.rows.len() + 1);
        assert!(a.is_finite());
    }
}

#[test]
fn trained_model_survives_a_file_roundtrip() {
    let g = SyntheticSpec::Communities { n: 40, m: 600, partners: 1 }.generate(4).unwrap();
    let split = chronological_split(&g, SplitFractions::default()).unwrap();
    let (params, _) = train::<f64>(&split, &small_cfg(KernelKind::Attention)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    params.save(&path).unwrap();
    let back = ModelParams::<f64>::load(&path).unwrap();
    assert_eq!(back.config, params.config);
    let r1 = eval_link_prediction(&params, &split, 9).unwrap();
    let r2 = eval_link_prediction(&back, &split, 9).unwrap();
    assert_eq!(r1, r2);
}
