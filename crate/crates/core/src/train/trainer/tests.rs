use super::*;
use crate::config::{GeneratorConfig, ModelConfig, Variant};
use crate::data::{load_dataset, DatasetKind, DatasetSpec, SplitRule, TrafficSynth};
use crate::model::{load_checkpoint, save_checkpoint};

const NODES: usize = 4;

fn spec(variant: Variant, f: usize) -> ModelSpec {
    ModelSpec {
        nodes: NODES,
        steps: 3,
        horizon: 2,
        f_in: f,
        f_out: f,
        model: ModelConfig {
            d: 4,
            d_s: 4,
            d_t: 4,
            d_z: 2,
            pos_dim: 2,
            k_spatial: 2,
            k_temporal: 1,
            n_gat_layers: 2,
            decoder_dim: 4,
            decoder_hidden: 6,
            proj_dim: 3,
            ..ModelConfig::default()
        },
        generator: GeneratorConfig {
            gin_hidden: 3,
            d1: 2,
            phi_hidden: vec![4],
            psi_gain: 1.0,
            ..GeneratorConfig::default()
        },
        variant,
    }
}

fn data(steps: usize) -> PreparedData<f64> {
    let dir = tempfile::tempdir().unwrap();
    TrafficSynth { nodes: NODES, steps, k_neighbors: 2, ..Default::default() }
        .generate()
        .unwrap()
        .write(dir.path(), true)
        .unwrap();
    let ds = load_dataset(&DatasetSpec::new(DatasetKind::TrafficGraph, dir.path())).unwrap();
    PreparedData::new(&ds, 3, 2, &SplitRule::default_for(DatasetKind::TrafficGraph)).unwrap()
}

fn trainer(variant: Variant, seed: u64) -> Trainer<f64> {
    let train = TrainConfig { batch_size: 4, max_epochs: 4, seed, ..TrainConfig::default() };
    Trainer::new(spec(variant, 1), LossConfig::default(), AnnealSchedule::default(), train).unwrap()
}

fn batch(d: &PreparedData<f64>, ks: &[usize]) -> Vec<StgSample<f64>> {
    ks.iter().map(|&k| d.sample(k).unwrap()).collect()
}

#[test]
fn keep_all_views_make_branches_agree() {
    let d = data(120);
    let tr = trainer(Variant::Full, 1);
    let samples = batch(&d, &[0, 7, 14, 21, 28, 35, 42, 49]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise: Vec<_> = samples
        .iter()
        .map(|_| tr.model.sample_noise(&d.ctx, &mut rng, LatentMode::Sample, false))
        .collect();
    let out = batch_objective(&tr.model, &tr.store, &d.ctx, &tr.loss, &samples, &noise, [0.0; 3], AugMode::KeepAll)
        .unwrap();
    assert!((out.prediction_original - out.prediction_augmented).abs() < 1e-8);
    assert!((out.joint - 2.0 * out.prediction_original).abs() < 1e-8);
    assert!(out.parts.contrastive / 2.0 < (8f64).ln());
}

#[test]
fn joint_loss_gradient_matches_finite_differences() {
    let d = data(120);
    let tr = trainer(Variant::Full, 2);
    let samples = batch(&d, &[3, 40]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise: Vec<_> = samples
        .iter()
        .map(|_| tr.model.sample_noise(&d.ctx, &mut rng, LatentMode::Sample, true))
        .collect();
    let lambdas = [0.7, 0.3, 0.2];
    let mode = AugMode::Sampled { tau: 0.8, hard: false };
    let eval = |store: &ParamStore<f64>| {
        batch_objective(&tr.model, store, &d.ctx, &tr.loss, &samples, &noise, lambdas, mode).unwrap()
    };
    let base = eval(&tr.store);
    let mut work = tr.store.clone();
    let mut worst = (String::new(), 0.0f64);
    for (id, name, value) in tr.store.iter() {
        let g = &base.grads.grads[id.0];
        let picks = value.len().min(2);
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for k in 0..picks {
            let flat = k * value.len() / picks;
            let idx = [flat / value.ncols(), flat % value.ncols()];
            let x = value[idx];
            let h = 1e-5 * x.abs().max(1.0);
            work.value_mut(id)[idx] = x + h;
            let fp = eval(&work).joint;
            work.value_mut(id)[idx] = x - h;
            let fm = eval(&work).joint;
            work.value_mut(id)[idx] = x;
            let num = (fp - fm) / (2.0 * h);
            diff += (num - g[idx]).powi(2);
            norm += num.powi(2).max(g[idx].powi(2));
        }
        let rel = diff.sqrt() / norm.sqrt().max(1e-4);
        if rel > worst.1 {
            worst = (name.to_string(), rel);
        }
    }
    assert!(worst.1 < 1e-4, "worst parameter {worst:?}");
}

#[test]
fn same_seed_gives_same_first_epoch() {
    let d = data(120);
    let a = trainer(Variant::Full, 3).train_epoch(&d, 0).unwrap();
    let b = trainer(Variant::Full, 3).train_epoch(&d, 0).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    let c = trainer(Variant::Full, 4).train_epoch(&d, 0).unwrap();
    assert_ne!(a.loss, c.loss);
}

#[test]
fn overfits_a_single_batch() {
    let d = data(120);
    let mut tr = trainer(Variant::Full, 5);
    tr.train.lr = 1e-2;
    tr.train.decay_epochs.clear();
    let samples = batch(&d, &[0, 10, 20, 30]);
    let first = tr.step(&d.ctx, &samples, 0, [0.0; 3], AugMode::KeepAll).unwrap().joint;
    let mut last = first;
    for _ in 0..200 {
        last = tr.step(&d.ctx, &samples, 0, [0.0; 3], AugMode::KeepAll).unwrap().joint;
    }
    assert!(last <= 0.1 * first, "loss went from {first} to {last}");
}

#[test]
fn plain_variant_has_no_auxiliary_terms() {
    let d = data(120);
    let mut tr = trainer(Variant::WoGcl, 6);
    assert_eq!(tr.lambdas(10), [0.0; 3]);
    let s = tr.train_epoch(&d, 0).unwrap();
    assert_eq!(s.parts.contrastive, 0.0);
    assert_eq!(s.parts.kl_spatial, 0.0);
}

#[test]
fn fit_keeps_best_parameters_and_logs_each_epoch() {
    let d = data(160);
    let mut tr = trainer(Variant::Full, 7);
    tr.train.max_batches_per_epoch = Some(3);
    let mut records = Vec::new();
    let summary = tr
        .fit(&d, |r, _| {
            records.push(r.clone());
            Ok(())
        })
        .unwrap();
    assert_eq!(records.len(), summary.epochs_run);
    assert!(records.iter().all(|r| r.batches <= 3 && r.val_rmse >= r.val_mae));
    assert_eq!(records[0].lambda1, 0.0);
    let best = records.iter().map(|r| r.val_mae).fold(f64::INFINITY, f64::min);
    assert_eq!(summary.best_val_mae, best);
    let now = tr.evaluate(&d, SplitPart::Val, EvalOptions::default()).unwrap();
    assert!((now.metrics.mae - best).abs() < 1e-12);
}

#[test]
fn early_stopping_respects_patience() {
    let d = data(160);
    let mut tr = trainer(Variant::WoGcl, 8);
    tr.train.max_epochs = 50;
    tr.train.patience = 1;
    tr.train.lr = 1e-9;
    tr.train.max_batches_per_epoch = Some(1);
    let s = tr.fit(&d, |_, _| Ok(())).unwrap();
    assert!(s.stopped_early);
    assert!(s.epochs_run < 50);
}

#[test]
fn checkpoint_round_trip_preserves_validation_loss() {
    let d = data(120);
    let mut tr = trainer(Variant::Full, 9);
    tr.train_epoch(&d, 0).unwrap();
    let before = tr.evaluate(&d, SplitPart::Val, EvalOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    save_checkpoint(&path, &tr.model, &tr.store, &Default::default()).unwrap();
    let ck = load_checkpoint::<f64>(&path).unwrap();
    let after = evaluate_store(&ck.model, &ck.store, &tr.loss, &d, SplitPart::Val, EvalOptions::default()).unwrap();
    assert_eq!(before, after);
}

#[test]
fn divergence_names_the_component() {
    let d = data(120);
    let mut tr = trainer(Variant::Full, 10);
    let id = tr.store.id("decoder.omega2.1.b").unwrap();
    tr.store.value_mut(id).fill(f64::NAN);
    let err = tr.train_epoch(&d, 3).unwrap_err().to_string();
    assert!(err.contains("epoch 3") && err.contains("prediction"), "{err}");
}

#[test]
fn evaluation_is_in_raw_units() {
    let d = data(120);
    let tr = trainer(Variant::WoGcl, 11);
    let ev = tr.evaluate(&d, SplitPart::Test, EvalOptions { density_classes: true }).unwrap();
    assert_eq!(ev.metrics.per_horizon.mae.len(), 2);
    assert_eq!(ev.metrics.per_density_class.as_ref().unwrap().len(), 4);
    // Raw signals sit in the hundreds; an untrained model is far off in raw units.
    assert!(ev.metrics.mae > 1.0);
    let ha = historical_average_metrics(&d, SplitPart::Test).unwrap();
    assert!(ha.mae > 0.0 && ha.rmse >= ha.mae);
}
