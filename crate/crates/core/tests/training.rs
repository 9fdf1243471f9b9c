use hood_core::data::{make_gaussian_bundle, BundleConfig, DatasetBundle};
use hood_core::encoder::{train, Checkpoint, EncoderParams, Objective, TrainConfig};
use hood_core::experiment::held_out_hsic;
use hood_core::Matrix;

fn accuracy(params: &EncoderParams, x: &Matrix, labels: &[usize]) -> f64 {
    let logits = params.logits(&params.forward(x).unwrap()).unwrap();
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = logits.row(i);
            let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            best == y
        })
        .count();
    hits as f64 / labels.len() as f64
}

fn default_bundle() -> DatasetBundle {
    make_gaussian_bundle(&BundleConfig::default()).unwrap()
}

#[test]
fn ce_only_fits_the_default_bundle() {
    let bundle = default_bundle();
    let cfg = TrainConfig { objective: Objective::CeOnly, ..TrainConfig::default() };
    let out = train(&cfg, &bundle).unwrap();
    let acc = accuracy(&out.params, &bundle.train_in, &bundle.train_labels);
    assert!(acc >= 0.99, "train accuracy {acc}");
}

#[test]
fn hood_dependence_falls_during_training() {
    let bundle = default_bundle();
    let cfg = TrainConfig { lambda: 100.0, ..TrainConfig::default() };
    let out = train(&cfg, &bundle).unwrap();
    let first = out.history.first().unwrap().loss.dep;
    let last = out.history.last().unwrap().loss.dep;
    assert!(last < first, "dep {first} -> {last}");
    assert_eq!(out.history.len(), cfg.epochs);
    let final_lr = out.history.last().unwrap().lr;
    assert!((final_lr - cfg.final_lr).abs() < 1e-12, "final lr {final_lr}");
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let bundle = default_bundle();
    let cfg = TrainConfig { epochs: 4, seed: 9, ..TrainConfig::default() };
    let a = train(&cfg, &bundle).unwrap();
    let b = train(&cfg, &bundle).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    let ck = Checkpoint::new(cfg, a.params.clone());
    let back = Checkpoint::from_toml(&ck.to_toml().unwrap()).unwrap();
    let x = &bundle.test_in;
    assert_eq!(back.params.forward(x).unwrap(), a.params.forward(x).unwrap());
}

#[test]
fn hood_reduces_held_out_hsic_against_ce_only() {
    let bundle = default_bundle();
    let hood_cfg = TrainConfig { lambda: 100.0, seed: 2, ..TrainConfig::default() };
    let ce_cfg = TrainConfig { objective: Objective::CeOnly, ..hood_cfg.clone() };
    let hood = train(&hood_cfg, &bundle).unwrap();
    let ce = train(&ce_cfg, &bundle).unwrap();
    let h_hood = held_out_hsic(&hood.params, &bundle, &hood_cfg.kernel).unwrap();
    let h_ce = held_out_hsic(&ce.params, &bundle, &hood_cfg.kernel).unwrap();
    assert!(h_hood < h_ce, "hood {h_hood} vs ce_only {h_ce}");
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let bundle = default_bundle();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let a = train(&cfg, &bundle).unwrap();
    let b = train(&TrainConfig { epochs: 0, objective: Objective::Mmd, ..cfg }, &bundle).unwrap();
    assert!(a.history.is_empty());
    assert_eq!(a.params, b.params);
}
