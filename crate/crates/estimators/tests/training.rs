use std::path::Path;

use sqzt_core::homodyne::{gen_dataset, DatasetSpec, LabelKind, ParamRanges};
use sqzt_estimators::{
    train, train_on, write_loss_log, CnnConfig, Error, HeadSpec, Model, TrainConfig, TrainingData,
};

fn dataset(dir: &Path, name: &str, count: usize, labels: LabelKind, m: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join(name);
    let ranges = match labels {
        LabelKind::Params => ParamRanges::default(),
        LabelKind::Cholesky => ParamRanges {
            r: (0.0, 0.5),
            n_th: (0.0, 0.2),
            ..ParamRanges::default()
        },
    };
    gen_dataset(
        &DatasetSpec {
            ranges,
            count,
            seq_len: 1024,
            label_kind: labels,
            m,
            seed,
        },
        &path,
    )
    .unwrap();
    path
}

#[test]
fn one_epoch_reduces_training_loss() {
    let dir = tempfile::tempdir().unwrap();
    let path = dataset(dir.path(), "d.sqzt", 200, LabelKind::Params, 0, 1);
    let mut model = Model::<f32>::new(CnnConfig::desk(HeadSpec::characteristic()), 1).unwrap();
    let tc = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let rep = train(&mut model, &path, &tc).unwrap();
    println!("{rep:?}");
    assert_eq!(rep.history.len(), 1);
    assert_eq!(rep.train_count + rep.val_count, 200);
    assert!(rep.final_train_mse < rep.initial_train_mse);
}

#[test]
fn memorizes_32_samples() {
    let dir = tempfile::tempdir().unwrap();
    // 36 records with a 1/9 validation split leave 32 for training
    let path = dataset(dir.path(), "d.sqzt", 36, LabelKind::Params, 0, 2);
    let data = TrainingData::load(&path).unwrap();
    let mut model = Model::<f32>::new(CnnConfig::desk(HeadSpec::characteristic()), 2).unwrap();
    let tc = TrainConfig {
        epochs: 500,
        val_fraction: 1.0 / 9.0,
        restore_best: false,
        // validation loss stalls once the training set is memorized; keep
        // the learning rate fixed instead
        plateau_patience: usize::MAX,
        augment: false,
        ..TrainConfig::default()
    };
    let rep = train_on(&mut model, &data, &tc, |_| {}).unwrap();
    println!("initial {} final {}", rep.initial_train_mse, rep.final_train_mse);
    assert_eq!(rep.train_count, 32);
    assert!(rep.final_train_mse <= 1e-4, "{}", rep.final_train_mse);
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let path = dataset(dir.path(), "d.sqzt", 80, LabelKind::Cholesky, 6, 3);
    let data = TrainingData::load(&path).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 9,
        ..TrainConfig::default()
    };
    let run = || {
        let mut model = Model::<f32>::new(CnnConfig::desk(HeadSpec::reconstruction(6)), 4).unwrap();
        let rep = train_on(&mut model, &data, &tc, |_| {}).unwrap();
        (model.params().to_vec(), rep)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn labels_must_match_head() {
    let dir = tempfile::tempdir().unwrap();
    let params = dataset(dir.path(), "p.sqzt", 20, LabelKind::Params, 0, 5);
    let chol = dataset(dir.path(), "c.sqzt", 20, LabelKind::Cholesky, 6, 5);
    let tc = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut rec = Model::<f32>::new(CnnConfig::desk(HeadSpec::reconstruction(6)), 0).unwrap();
    assert!(matches!(train(&mut rec, &params, &tc), Err(Error::HeadMismatch(_))));
    let mut rec5 = Model::<f32>::new(CnnConfig::desk(HeadSpec::reconstruction(5)), 0).unwrap();
    assert!(matches!(train(&mut rec5, &chol, &tc), Err(Error::HeadMismatch(_))));
    let mut ch = Model::<f32>::new(CnnConfig::desk(HeadSpec::characteristic()), 0).unwrap();
    assert!(matches!(train(&mut ch, &chol, &tc), Err(Error::HeadMismatch(_))));

    let mut short = Model::<f32>::new(CnnConfig::table1(4096, 0.25, HeadSpec::characteristic()), 0).unwrap();
    assert!(matches!(train(&mut short, &params, &tc), Err(Error::Shape { .. })));
}

#[test]
fn config_and_split_checks() {
    let dir = tempfile::tempdir().unwrap();
    let one = dataset(dir.path(), "one.sqzt", 1, LabelKind::Params, 0, 6);
    let mut model = Model::<f32>::new(CnnConfig::desk(HeadSpec::characteristic()), 0).unwrap();
    let tc = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    assert!(matches!(train(&mut model, &one, &tc), Err(Error::EmptyDataset(_))));
    for bad in [0.0, 0.5, 0.7] {
        let tc = TrainConfig {
            val_fraction: bad,
            ..tc
        };
        assert!(matches!(train(&mut model, &one, &tc), Err(Error::Config(_))));
    }
    let tc = TrainConfig { batch_size: 0, ..tc };
    assert!(matches!(train(&mut model, &one, &tc), Err(Error::Config(_))));
}

#[test]
fn loss_log_format() {
    let dir = tempfile::tempdir().unwrap();
    let path = dataset(dir.path(), "d.sqzt", 40, LabelKind::Params, 0, 7);
    let mut model = Model::<f32>::new(CnnConfig::desk(HeadSpec::characteristic()), 0).unwrap();
    let tc = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let rep = train(&mut model, &path, &tc).unwrap();
    let mut out = Vec::new();
    write_loss_log(&rep.history, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch train_mse val_mse");
    assert_eq!(lines.len(), 3);
    let cols: Vec<f64> = lines[2].split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert_eq!(cols[0], 2.0);
    assert!((cols[1] / rep.history[1].train_mse - 1.0).abs() < 1e-8);
    assert!((cols[2] / rep.history[1].val_mse - 1.0).abs() < 1e-8);
    // the decoding ranges come from the dataset
    assert_eq!(model.ranges, ParamRanges::default());
}
