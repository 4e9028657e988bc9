use super::*;
use crate::config::{GeneratorConfig, HeadMerge, ModelConfig, Variant};
use crate::gradcheck::check_param_gradients;
use crate::graph::{build_grid_graph, build_temporal_graph, FeatureTensor, Neighborhood};
use crate::testutil::rand_array;
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEPS: usize = 3;
const NODES: usize = 4;

fn small_spec(variant: Variant) -> ModelSpec {
    ModelSpec {
        nodes: NODES,
        steps: STEPS,
        horizon: 2,
        f_in: 2,
        f_out: 2,
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
            psi_hidden: Vec::new(),
            psi_gain: 1.0,
            ..GeneratorConfig::default()
        },
        variant,
    }
}

fn context() -> GraphContext<f64> {
    let g = build_grid_graph(2, 2, Neighborhood::Four).unwrap();
    GraphContext::new(&g, &build_temporal_graph(STEPS).unwrap())
}

fn build(variant: Variant, seed: u64) -> (Cl4st, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let m = Cl4st::new(small_spec(variant), &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (m, store)
}

fn sample(seed: u64) -> StgSample<f64> {
    let x = rand_array(STEPS * NODES, 2, seed);
    let y = rand_array(2 * NODES, 2, seed + 1);
    StgSample {
        x: FeatureTensor::from_matrix(&x, STEPS, NODES).unwrap(),
        y: FeatureTensor::from_matrix(&y, 2, NODES).unwrap(),
        tod_index: vec![10, 11, 12],
        dow_index: vec![2, 2, 2],
        start: 0,
    }
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(f64::abs).fold(0.0, |m, &v| m.max(v))
}

#[test]
fn embedding_is_affine_per_row() {
    let (m, store) = build(Variant::WoGcl, 1);
    let x = rand_array(STEPS * NODES, 2, 3);
    let t = Tape::new();
    let out = m.embed.forward(&t, &store, t.leaf(x.clone()));
    let w = store.value(m.embed.w);
    let b = store.value(m.embed.b);
    let expected = x.dot(w) + b;
    assert!(max_abs_diff(&t.value(out), &expected) < 1e-12);
}

#[test]
fn branch_shapes_and_attention_rows() {
    let (m, store) = build(Variant::Full, 2);
    let ctx = context();
    let s = sample(5);
    let t = Tape::new();
    let x = t.leaf(Cl4st::input_matrix(&s));
    let b = m.original_branch(&t, &store, &ctx, x, m.position_of(&s), None);
    assert_eq!(t.shape(b.x0), (STEPS * NODES, 4));
    assert_eq!(t.shape(b.h), (STEPS * NODES, 4));
    assert_eq!(t.shape(b.y_hat), (2 * NODES, 2));
    assert_eq!(t.shape(b.z), (1, 3));
    assert_eq!(b.spatial_attention.len(), 2);
    assert_eq!(b.spatial_attention[0].len(), 2);
    assert_eq!(b.temporal_attention[0].len(), 1);
    for (trace, support) in [
        (&b.spatial_attention, &ctx.spatial_support),
        (&b.temporal_attention, &ctx.temporal_support),
    ] {
        for a in trace.iter().flatten() {
            let a = t.value(*a);
            for (i, row) in a.rows().into_iter().enumerate() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                for (j, &v) in row.iter().enumerate() {
                    if support[[i, j]] == 0.0 {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn spatial_pass_is_permutation_equivariant() {
    let (m, store) = build(Variant::WoGcl, 3);
    let g = build_grid_graph(2, 2, Neighborhood::Four).unwrap();
    let perm = [2, 0, 3, 1];
    let gp = g.permuted(&perm).unwrap();
    let x = rand_array(STEPS * NODES, 4, 7);
    // Row t*N + perm[n] of the permuted input holds node n.
    let mut xp = Array2::zeros(x.dim());
    for s in 0..STEPS {
        for n in 0..NODES {
            xp.row_mut(s * NODES + perm[n]).assign(&x.row(s * NODES + n));
        }
    }
    let run = |x: &Array2<f64>, g: &crate::graph::SpatialGraph| {
        let t = Tape::new();
        let sup = t.leaf(support_matrix::<f64, _>(g));
        let (o, _) = m.spatial.forward(&t, &store, t.leaf(x.clone()), sup, STEPS, NODES, 0.2);
        let v = t.value(o).clone();
        v
    };
    let a = run(&x, &g);
    let b = run(&xp, &gp);
    for s in 0..STEPS {
        for n in 0..NODES {
            let d = &a.row(s * NODES + n) - &b.row(s * NODES + perm[n]);
            assert!(d.iter().all(|v| v.abs() < 1e-12));
        }
    }
}

#[test]
fn single_step_temporal_attention_is_trivial() {
    let mut spec = small_spec(Variant::WoGcl);
    spec.steps = 1;
    let mut store = ParamStore::new();
    let m = Cl4st::new(spec, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let t = Tape::new();
    let x = t.leaf(rand_array(NODES, 4, 1));
    let sup = t.leaf(Array2::ones((1, 1)));
    let (o, trace) = m.temporal.forward(&t, &store, x, sup, 1, NODES, 0.2);
    assert_eq!(t.shape(o), (NODES, 4));
    for a in trace.iter().flatten() {
        assert_eq!(t.value(*a)[[0, 0]], 1.0);
    }
}

#[test]
fn temporal_support_is_full() {
    let ctx = context();
    assert!(ctx.temporal_support.iter().all(|&v| v == 1.0));
    assert_eq!(ctx.temporal_edges.len(), STEPS * (STEPS - 1));
}

#[test]
fn decoder_uses_time_of_day() {
    let (m, store) = build(Variant::WoGcl, 4);
    let h = rand_array(STEPS * NODES, 4, 1);
    let x0 = rand_array(STEPS * NODES, 4, 2);
    let run = |tod: usize| {
        let t = Tape::new();
        let y = m.decoder.forward(&t, &store, t.leaf(h.clone()), t.leaf(x0.clone()), STEPS, NODES, tod, 3, 2, None);
        let v = t.value(y).clone();
        v
    };
    let a = run(5);
    assert_eq!(a.dim(), (2 * NODES, 2));
    assert!(max_abs_diff(&a, &run(6)) > 1e-9);
    assert_eq!(a, run(5));
}

#[test]
fn zero_output_layer_gives_zero_prediction() {
    let (m, mut store) = build(Variant::WoGcl, 5);
    let last = *m.decoder.omega2.layers.last().unwrap();
    store.value_mut(last.w).fill(0.0);
    store.value_mut(last.b).fill(0.0);
    let y = m.predict(&store, &context(), &sample(1)).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
}

#[test]
fn decoder_output_rows_are_step_major() {
    // With only biases in the output layer, row t'*N + n must equal bias block t'.
    let (m, mut store) = build(Variant::WoGcl, 6);
    let last = *m.decoder.omega2.layers.last().unwrap();
    store.value_mut(last.w).fill(0.0);
    let bias = Array2::from_shape_vec((1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    store.value_mut(last.b).assign(&bias);
    let y = m.predict(&store, &context(), &sample(1)).unwrap();
    for n in 0..NODES {
        assert_eq!(y.row(n).to_vec(), vec![1.0, 2.0]);
        assert_eq!(y.row(NODES + n).to_vec(), vec![3.0, 4.0]);
    }
}

#[test]
fn projection_pools_constant_rows() {
    let (m, store) = build(Variant::Full, 7);
    let r = rand_array(1, 4, 9);
    let h = Array2::from_shape_fn((STEPS * NODES, 4), |(_, j)| r[[0, j]]);
    let t = Tape::new();
    let z_pool = m.projection.forward(&t, &store, t.leaf(h));
    let z_row = m.projection.mlp.forward(&t, &store, t.leaf(r));
    assert!(max_abs_diff(&t.value(z_pool), &t.value(z_row)) < 1e-12);
    assert_eq!(t.shape(z_pool), (1, 3));
}

#[test]
fn prediction_is_deterministic() {
    let (m, store) = build(Variant::Full, 8);
    let ctx = context();
    let s = sample(2);
    assert_eq!(m.predict(&store, &ctx, &s).unwrap(), m.predict(&store, &ctx, &s).unwrap());
}

#[test]
fn rejects_wrong_input_shape() {
    let (m, store) = build(Variant::WoGcl, 9);
    let mut s = sample(1);
    s.x = FeatureTensor::new(Array3::zeros((STEPS, NODES, 3))).unwrap();
    assert!(m.predict(&store, &context(), &s).is_err());
}

#[test]
fn variants_register_expected_generators() {
    let (full, store) = build(Variant::Full, 1);
    assert!(full.has_augmented_branch());
    assert!(!Cl4st::generator_parameter_names(&store).is_empty());
    let (plain, store) = build(Variant::WoGcl, 1);
    assert!(!plain.has_augmented_branch());
    assert!(Cl4st::generator_parameter_names(&store).is_empty());
    let (_, store) = build(Variant::WoMeta, 1);
    assert!(Cl4st::generator_parameter_names(&store).iter().all(|n| !n.contains("phi") && !n.contains("psi")));
}

#[test]
fn keep_all_views_reproduce_original_branch() {
    let (m, store) = build(Variant::Full, 10);
    let ctx = context();
    let s = sample(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = m.sample_noise(&ctx, &mut rng, LatentMode::Sample, false);
    let t = Tape::new();
    let x = t.leaf(Cl4st::input_matrix(&s));
    let pos = m.position_of(&s);
    let orig = m.original_branch(&t, &store, &ctx, x, pos, None);
    let aug = m.augment(&t, &store, &ctx, x, &noise, AugMode::KeepAll).unwrap();
    assert!(max_abs_diff(&t.value(aug.x), &t.value(x)) < 1e-12);
    assert!(max_abs_diff(&t.value(aug.spatial_support), &ctx.spatial_support) < 1e-12);
    assert!(max_abs_diff(&t.value(aug.temporal_support), &ctx.temporal_support) < 1e-12);
    let b = m.branch(&t, &store, aug.x, aug.spatial_support, aug.temporal_support, pos, None);
    assert!(max_abs_diff(&t.value(b.h), &t.value(orig.h)) < 1e-8);
    assert!(max_abs_diff(&t.value(b.z), &t.value(orig.z)) < 1e-8);
    assert!(t.scalar(aug.kl_spatial.unwrap()) >= 0.0);
}

#[test]
fn sampled_views_are_one_hot() {
    let (m, store) = build(Variant::Full, 11);
    let ctx = context();
    let v = m.sample_views(&store, &ctx, &sample(4), &mut ChaCha8Rng::seed_from_u64(2), 0.5).unwrap();
    assert_eq!(v.spatial_node.dim(), (NODES, 3));
    assert_eq!(v.temporal_node.dim(), (STEPS, 3));
    assert_eq!(v.spatial_edge.as_ref().unwrap().nrows(), ctx.spatial_edges.len());
    for m in [&v.spatial_node, &v.temporal_node, v.spatial_edge.as_ref().unwrap()] {
        for row in m.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p == 0.0 || (p - 1.0).abs() < 1e-12));
        }
    }
    let (plain, store) = build(Variant::WoGcl, 1);
    assert!(plain.sample_views(&store, &ctx, &sample(4), &mut ChaCha8Rng::seed_from_u64(2), 0.5).is_err());
}

#[test]
fn original_branch_gradients() {
    let (m, store) = build(Variant::WoGcl, 12);
    let ctx = context();
    let s = sample(6);
    let xm = Cl4st::input_matrix(&s);
    let report = check_param_gradients(&store, 3, |t, st| {
        let x = t.leaf(xm.clone());
        let b = m.original_branch(t, st, &ctx, x, m.position_of(&s), None);
        t.add(t.sum(t.square(b.y_hat)), t.sum(b.z))
    });
    assert!(report.passes(1e-5), "worst: {:?}", report.worst());
}

#[test]
fn augmented_branch_gradients_reach_generators() {
    let (m, store) = build(Variant::Full, 13);
    let ctx = context();
    let s = sample(7);
    let xm = Cl4st::input_matrix(&s);
    let noise = m.sample_noise(&ctx, &mut ChaCha8Rng::seed_from_u64(3), LatentMode::Sample, true);
    let objective = |t: &Tape<f64>, st: &ParamStore<f64>| {
        let x = t.leaf(xm.clone());
        let aug = m
            .augment(t, st, &ctx, x, &noise, AugMode::Sampled { tau: 0.7, hard: false })
            .unwrap();
        let b = m.branch(t, st, aug.x, aug.spatial_support, aug.temporal_support, m.position_of(&s), None);
        let kl = t.add(aug.kl_spatial.unwrap(), aug.kl_temporal.unwrap());
        t.add(t.add(t.sum(t.square(b.y_hat)), t.sum(b.z)), kl)
    };
    let report = check_param_gradients(&store, 2, objective);
    assert!(report.passes(1e-5), "worst: {:?}", report.worst());

    let t = Tape::new();
    let out = objective(&t, &store);
    let grads = t.backward(out);
    let touched: Vec<&str> = grads
        .param_grads()
        .into_iter()
        .filter(|(_, g)| g.iter().any(|v| *v != 0.0))
        .map(|(id, _)| store.name(id))
        .collect();
    assert!(touched.iter().any(|n| n.starts_with("gen_s.phi")));
    assert!(touched.iter().any(|n| n.starts_with("gen_t.psi")));
}

#[test]
fn final_mean_merge_keeps_width() {
    let mut spec = small_spec(Variant::WoGcl);
    spec.model.final_merge = HeadMerge::Mean;
    let mut store = ParamStore::new();
    let m = Cl4st::new(spec, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let y = m.predict(&store, &context(), &sample(1)).unwrap();
    assert_eq!(y.dim(), (2 * NODES, 2));
}

#[test]
fn checkpoint_round_trip() {
    let (m, store) = build(Variant::Full, 14);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tar");
    let mut extra = std::collections::BTreeMap::new();
    extra.insert("epoch".to_string(), serde_json::json!(3));
    save_checkpoint(&path, &m, &store, &extra).unwrap();
    let ck = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(ck.model, m);
    assert_eq!(ck.extra["epoch"], 3);
    for (id, name, v) in store.iter() {
        assert_eq!(ck.store.name(id), name);
        assert_eq!(ck.store.value(id), v);
    }
    let ctx = context();
    let s = sample(2);
    assert_eq!(ck.model.predict(&ck.store, &ctx, &s).unwrap(), m.predict(&store, &ctx, &s).unwrap());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tar");
    std::fs::write(&path, b"not a tar archive").unwrap();
    assert!(load_checkpoint::<f64>(&path).is_err());
    assert!(load_checkpoint::<f64>(&dir.path().join("missing.tar")).is_err());
}

#[test]
fn single_precision_model_runs() {
    let mut store = ParamStore::<f32>::new();
    let m = Cl4st::new(small_spec(Variant::Full), &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let g = build_grid_graph(2, 2, Neighborhood::Four).unwrap();
    let ctx = GraphContext::<f32>::new(&g, &build_temporal_graph(STEPS).unwrap());
    let s = sample(1);
    let s32 = StgSample {
        x: s.x.cast::<f32>(),
        y: s.y.cast::<f32>(),
        tod_index: s.tod_index.clone(),
        dow_index: s.dow_index.clone(),
        start: 0,
    };
    let y32 = m.predict(&store, &ctx, &s32).unwrap();
    assert!(y32.iter().all(|v| v.is_finite()));
}
