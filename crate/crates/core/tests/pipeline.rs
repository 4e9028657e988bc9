//! End-to-end use of the library: synthetic data to a trained, saved and reloaded model.

use cl4st_core::config::{AnnealSchedule, GeneratorConfig, LossConfig, ModelConfig, Task, TrainConfig, Variant};
use cl4st_core::data::{load_dataset, CrimeSynth, DatasetKind, DatasetSpec, SplitPart, SplitRule, TrafficSynth};
use cl4st_core::model::{load_checkpoint, save_checkpoint, ModelSpec};
use cl4st_core::train::{evaluate_store, historical_average_metrics, EvalOptions, PreparedData, Trainer};

fn spec(nodes: usize, steps: usize, horizon: usize, f: usize, variant: Variant) -> ModelSpec {
    ModelSpec {
        nodes,
        steps,
        horizon,
        f_in: f,
        f_out: f,
        model: ModelConfig {
            d: 4,
            d_s: 8,
            d_t: 4,
            d_z: 2,
            pos_dim: 2,
            k_spatial: 2,
            decoder_dim: 4,
            decoder_hidden: 8,
            proj_dim: 4,
            ..ModelConfig::default()
        },
        generator: GeneratorConfig {
            gin_hidden: 4,
            d1: 2,
            phi_hidden: vec![8],
            ..GeneratorConfig::default()
        },
        variant,
    }
}

fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: 3,
        seed,
        max_batches_per_epoch: Some(6),
        ..TrainConfig::default()
    }
}

#[test]
fn traffic_model_trains_saves_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    TrafficSynth { nodes: 8, steps: 400, seed: 4, ..Default::default() }
        .generate()
        .unwrap()
        .write(dir.path(), false)
        .unwrap();
    let ds = load_dataset(&DatasetSpec::new(DatasetKind::TrafficGraph, dir.path())).unwrap();
    let data = PreparedData::<f64>::new(&ds, 6, 3, &SplitRule::default_for(DatasetKind::TrafficGraph)).unwrap();
    let mut tr = Trainer::new(spec(8, 6, 3, 1, Variant::Full), LossConfig::default(), AnnealSchedule::default(), train_config(1))
        .unwrap();
    let untrained = tr.evaluate(&data, SplitPart::Val, EvalOptions::default()).unwrap();
    let summary = tr.fit(&data, |_, _| Ok(())).unwrap();
    assert_eq!(summary.epochs_run, 3);
    assert!(summary.best_val_mae < untrained.metrics.mae);

    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &tr.model, &tr.store, &Default::default()).unwrap();
    let ck = load_checkpoint::<f64>(&path).unwrap();
    let a = tr.evaluate(&data, SplitPart::Test, EvalOptions::default()).unwrap();
    let b = evaluate_store(&ck.model, &ck.store, &tr.loss, &data, SplitPart::Test, EvalOptions::default()).unwrap();
    assert_eq!(a, b);
    let ha = historical_average_metrics(&data, SplitPart::Test).unwrap();
    assert_eq!(ha.count, a.metrics.count);
}

#[test]
fn crime_grid_trains_with_squared_error_in_single_precision() {
    let dir = tempfile::tempdir().unwrap();
    CrimeSynth { rows: 3, cols: 4, categories: 2, days: 150, ..Default::default() }
        .generate()
        .unwrap()
        .write(dir.path(), true)
        .unwrap();
    let ds = load_dataset(&DatasetSpec::new(DatasetKind::CrimeGrid, dir.path())).unwrap();
    let rule = SplitRule { ratio: [7.0, 0.0, 1.0], val_days: Some(10) };
    let data = PreparedData::<f32>::new(&ds, 5, 1, &rule).unwrap();
    let loss = LossConfig { task: Task::Crime, ..LossConfig::default() };
    let mut tr = Trainer::<f32>::new(spec(12, 5, 1, 2, Variant::WoMeta), loss, AnnealSchedule::default(), train_config(2))
        .unwrap();
    let s = tr.fit(&data, |r, _| {
        assert!(r.train_loss.is_finite());
        Ok(())
    });
    let s = s.unwrap();
    assert!(s.best_val_mae.is_finite());
    let ev = tr.evaluate(&data, SplitPart::Test, EvalOptions { density_classes: true }).unwrap();
    assert_eq!(ev.metrics.per_density_class.unwrap().len(), 4);
}

#[test]
fn ablation_variants_differ_only_in_generator_layout() {
    let count = |v: Variant| {
        let tr = Trainer::<f64>::new(spec(4, 3, 2, 1, v), LossConfig::default(), AnnealSchedule::default(), train_config(0))
            .unwrap();
        let names: Vec<String> = tr.store.names().map(str::to_string).collect();
        (names.iter().filter(|n| !n.starts_with("gen_")).count(), names.iter().filter(|n| n.starts_with("gen_")).count())
    };
    let (shared, full_gen) = count(Variant::Full);
    for v in Variant::ALL {
        let (s, g) = count(v);
        assert_eq!(s, shared, "{v:?}");
        assert_eq!(g == 0, v == Variant::WoGcl, "{v:?}");
    }
    assert!(full_gen > 0);
}
