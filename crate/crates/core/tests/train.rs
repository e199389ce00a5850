use cit_core::checkpoint::Checkpoint;
use cit_core::data::{procedural_set, synth_pairs, ExposurePair, ExposurePairSpec};
use cit_core::optim::{Adam, AdamConfig};
use cit_core::params::ParamStore;
use cit_core::train::{checkpoint_path, TrainConfig, Trainer, LOG_HEADER};
use cit_core::{CitConfig, CitModel, Error, Tensor};

fn pairs() -> Vec<ExposurePair> {
    let spec = ExposurePairSpec { ev_offsets: vec![-1.0], ..Default::default() };
    synth_pairs(&procedural_set(3, 24, 24, 0), &spec).unwrap()
}

fn config(steps: u64) -> TrainConfig {
    TrainConfig { steps, batch: 2, crop: 16, lr: 1e-3, checkpoint_every: 2, ..TrainConfig::default() }
}

fn trainer(steps: u64) -> Trainer<f32> {
    Trainer::new(CitModel::new(CitConfig::toy()).unwrap(), pairs(), config(steps)).unwrap()
}

#[test]
fn adam_matches_closed_form_for_constant_gradient() {
    let mut store = ParamStore::<f64>::new();
    store.insert("w", Tensor::from_f64([2], &[1.0, -1.0]).unwrap());
    let cfg = AdamConfig { lr: 0.01, ..AdamConfig::default() };
    let mut adam = Adam::new(cfg.clone()).unwrap();
    let g = [0.5, -2.0];
    for _ in 0..3 {
        store.iter_mut().next().unwrap().1.grad = Some(Tensor::from_f64([2], &g).unwrap());
        adam.step(&mut store).unwrap();
    }
    // bias-corrected moments equal g and g², so every step moves lr·g/(|g|+eps)
    let w = store.value("w").unwrap().data();
    for (i, start) in [1.0, -1.0].into_iter().enumerate() {
        let expect = start - 3.0 * cfg.lr * g[i] / (g[i].abs() + cfg.eps);
        assert!((w[i] - expect).abs() < 1e-12, "{} vs {expect}", w[i]);
    }
    assert_eq!(adam.step, 3);
    assert!(store.get("w").unwrap().grad.is_none());
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut store = ParamStore::<f64>::new();
    store.insert("w", Tensor::from_f64([3], &[0.1, 0.2, 0.3]).unwrap());
    let mut adam = Adam::new(AdamConfig::default()).unwrap();
    store.iter_mut().next().unwrap().1.grad = Some(Tensor::zeros([3]));
    adam.step(&mut store).unwrap();
    assert_eq!(store.value("w").unwrap().data(), &[0.1, 0.2, 0.3]);
    assert!(matches!(adam.step(&mut store), Err(Error::MissingGrad(n)) if n == "w"));
}

#[test]
fn adam_clips_by_global_norm() {
    let mut store = ParamStore::<f64>::new();
    store.insert("w", Tensor::from_f64([2], &[0.0, 0.0]).unwrap());
    let mut adam = Adam::new(AdamConfig { clip_norm: Some(1.0), ..AdamConfig::default() }).unwrap();
    store.iter_mut().next().unwrap().1.grad = Some(Tensor::from_f64([2], &[3.0, 4.0]).unwrap());
    adam.step(&mut store).unwrap();
    let m = adam.moments["w"].m.data();
    assert!((m[0] - 0.1 * 0.6).abs() < 1e-12 && (m[1] - 0.1 * 0.8).abs() < 1e-12);
}

#[test]
fn training_is_deterministic() {
    let mut a = trainer(3);
    let mut b = trainer(3);
    let ra = a.run(None, |_| {}).unwrap();
    let rb = b.run(None, |_| {}).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(ra.iter().map(|r| r.step).collect::<Vec<_>>(), vec![1, 2, 3]);
}

#[test]
fn run_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(3);
    let recs = t.run(Some(dir.path()), |_| {}).unwrap();
    let log = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let lines: Vec<_> = log.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 4);
    for (line, rec) in lines[1..].iter().zip(&recs) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols.len(), 5);
        assert_eq!(cols[0] as u64, rec.step);
        assert!((cols[1] - rec.loss.total).abs() < 1e-7);
    }
    assert!(checkpoint_path(dir.path(), 2).exists());
    assert!(checkpoint_path(dir.path(), 3).exists());
    let last = Checkpoint::<f32>::load(dir.path().join("last.ckpt")).unwrap();
    assert_eq!(last.step, 3);
    assert_eq!(last.params, t.model.params);
    assert_eq!(last.meta["crop"], "16");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let mut full = trainer(4);
    full.run(None, |_| {}).unwrap();
    let mut first = trainer(2);
    first.run(None, |_| {}).unwrap();
    let ckpt = Checkpoint::<f32>::from_bytes(&first.checkpoint(&first.config).to_bytes()).unwrap();
    let mut second = Trainer::resume(ckpt, pairs(), config(4)).unwrap();
    assert_eq!(second.step(), 2);
    second.run(None, |_| {}).unwrap();
    assert_eq!(second.model.params, full.model.params);
    assert_eq!(second.adam, full.adam);
}

#[test]
fn non_finite_loss_stops_before_any_write() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(3);
    t.model.params.value_mut("stem.weight").unwrap().data_mut()[0] = f32::NAN;
    let before = t.model.params.clone();
    let err = t.run(Some(dir.path()), |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { step: 1, .. }), "{err:?}");
    assert_eq!(err.category(), "NonFiniteLoss");
    assert_eq!(t.step(), 0);
    assert!(!dir.path().join("last.ckpt").exists());
    assert_eq!(format!("{:?}", t.model.params), format!("{before:?}"));
}

#[test]
fn config_keys_round_trip() {
    let mut c = TrainConfig::default();
    for (k, v) in
        [("steps", "7"), ("lr", "0.002"), ("clip_norm", "0.5"), ("spa_variant", "neighbor"), ("use_col", "false")]
    {
        assert!(c.set(k, v).unwrap(), "{k}");
    }
    assert!(!c.set("window", "8").unwrap());
    assert!(c.set("batch", "many").is_err());
    let mut back = TrainConfig::default();
    for (k, v) in c.to_pairs() {
        back.set(k, &v).unwrap();
    }
    assert_eq!(back, c);
    assert!(c.to_string().contains("clip_norm=0.5\n"));
    let bad = TrainConfig { crop: 0, ..TrainConfig::default() };
    assert!(Trainer::<f32>::new(CitModel::new(CitConfig::toy()).unwrap(), pairs(), bad).is_err());
}
