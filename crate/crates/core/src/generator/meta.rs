//! Hypernetworks producing the view-generator weights from the input signal.
//!
//! Each generated weight block `theta_k` belongs to a latent group. A group
//! holds a learnable prior latent `(mu, log_var)`; the feature encoder `phi`
//! maps the flattened signal to a conditional latent `(mu_phi, log_var_phi)`
//! for every group. `theta_k = psi_k(z + z_phi)` is then unflattened with
//! [`MlpShape`] layout. Blocks not generated this way are plain parameters.

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::kl::{kl_tape, row_vec, KlInput};
use super::view::{sample_views_tape, EdgeViewParams, GinParams, ViewNoise, ViewVars};
use crate::config::GeneratorConfig;
use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, Linear, LinearVars, Mlp, MlpShape};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

/// Learnable prior latent of one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentIds {
    pub mu: ParamId,
    pub log_var: ParamId,
}

/// Where one weight block comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaSource {
    Generated { group: usize, psi: Mlp },
    Direct(Vec<Linear>),
}

/// Latent sampling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    Sample,
    /// Both variances treated as zero: `z = mu + mu_phi`.
    MeansOnly,
}

/// Standard normal draws for every group, `1 x d_z` each.
#[derive(Debug, Clone)]
pub struct LatentNoise<S> {
    pub prior: Vec<Array2<S>>,
    pub cond: Vec<Array2<S>>,
}

/// All randomness consumed by one generator forward pass.
#[derive(Debug, Clone)]
pub struct GeneratorNoise<S> {
    /// `None` in means-only mode.
    pub latent: Option<LatentNoise<S>>,
    pub view: ViewNoise<S>,
}

/// Weight blocks and KL summaries produced on a tape.
#[derive(Debug, Clone)]
pub struct GeneratedVars {
    pub theta: [Vec<LinearVars>; 3],
    /// `(mu, var)` rows per latent group.
    pub kl: Vec<(Var, Var)>,
}

/// Node/edge view generator for one graph type, with optional hypernetworks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaGenerator {
    pub n_units: usize,
    pub unit_features: usize,
    pub d_z: usize,
    /// `theta1: f -> d1`, `theta2: d1 -> 3`, `theta3: 2 d1 -> 2`.
    pub shapes: [MlpShape; 3],
    pub groups: Vec<LatentIds>,
    pub phi: Option<Mlp>,
    pub thetas: [ThetaSource; 3],
    pub eps: (f64, f64),
}

fn init_flat_theta<R: Rng>(shape: &MlpShape, rng: &mut R) -> Vec<f64> {
    let mut flat = Vec::with_capacity(shape.numel());
    for (i, o) in shape.layer_dims() {
        let bound = 1.0 / (i.max(1) as f64).sqrt();
        for _ in 0..(i * o + o) {
            flat.push(rng.random_range(-bound..=bound));
        }
    }
    flat
}

impl MetaGenerator {
    /// Register parameters under `prefix`. `node_meta` / `edge_meta` choose
    /// whether the GIN blocks / edge MLP are generated or learned directly.
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        prefix: &str,
        n_units: usize,
        unit_features: usize,
        d_z: usize,
        cfg: &GeneratorConfig,
        eps: (f64, f64),
        node_meta: bool,
        edge_meta: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        if n_units == 0 || unit_features == 0 || d_z == 0 {
            return Err(Error::Invalid(format!(
                "generator needs positive sizes, got units {n_units}, features {unit_features}, d_z {d_z}"
            )));
        }
        let h = cfg.gin_hidden;
        let shapes = [
            MlpShape::new(vec![unit_features, h, cfg.d1]),
            MlpShape::new(vec![cfg.d1, h, 3]),
            MlpShape::new(vec![2 * cfg.d1, h, 2]),
        ];
        let mut group_of: [Option<usize>; 3] = [None; 3];
        let mut n_groups = 0;
        if node_meta {
            group_of[0] = Some(0);
            group_of[1] = Some(1);
            n_groups = 2;
        }
        if edge_meta {
            group_of[2] = if node_meta && cfg.share_edge_latent {
                Some(1)
            } else {
                n_groups += 1;
                Some(n_groups - 1)
            };
        }

        let groups: Vec<LatentIds> = (0..n_groups)
            .map(|g| LatentIds {
                mu: store.add_zeros(format!("{prefix}.prior{g}.mu"), (1, d_z)),
                log_var: store.add(
                    format!("{prefix}.prior{g}.log_var"),
                    Array2::from_elem((1, d_z), S::of(cfg.init_log_var)),
                ),
            })
            .collect();

        let phi = (n_groups > 0).then(|| {
            let mut dims = vec![n_units * unit_features];
            dims.extend(&cfg.phi_hidden);
            dims.push(2 * d_z * n_groups);
            let mlp = Mlp::new(store, rng, &format!("{prefix}.phi"), &MlpShape::new(dims), Activation::Relu);
            let last = *mlp.layers.last().expect("phi has a layer");
            store.value_mut(last.w).mapv_inplace(|v| v * S::of(cfg.psi_gain));
            let b = store.value_mut(last.b);
            for g in 0..n_groups {
                let base = 2 * d_z * g;
                b.slice_mut(s![0, base..base + d_z]).fill(S::zero());
                b.slice_mut(s![0, base + d_z..base + 2 * d_z]).fill(S::of(cfg.init_log_var));
            }
            mlp
        });

        let thetas: Vec<ThetaSource> = (0..3)
            .map(|k| match group_of[k] {
                Some(group) => {
                    let mut dims = vec![d_z];
                    dims.extend(&cfg.psi_hidden);
                    dims.push(shapes[k].numel());
                    let psi = Mlp::new(
                        store,
                        rng,
                        &format!("{prefix}.psi{}", k + 1),
                        &MlpShape::new(dims),
                        Activation::Relu,
                    );
                    let last = *psi.layers.last().expect("psi has a layer");
                    store.value_mut(last.w).mapv_inplace(|v| v * S::of(cfg.psi_gain));
                    let init = init_flat_theta(&shapes[k], rng);
                    store
                        .value_mut(last.b)
                        .iter_mut()
                        .zip(init)
                        .for_each(|(b, v)| *b = S::of(v));
                    ThetaSource::Generated { group, psi }
                }
                None => ThetaSource::Direct(
                    shapes[k]
                        .layer_dims()
                        .enumerate()
                        .map(|(l, (i, o))| Linear::new(store, rng, &format!("{prefix}.theta{}.{l}", k + 1), i, o))
                        .collect(),
                ),
            })
            .collect();
        let thetas: [ThetaSource; 3] = thetas.try_into().expect("three blocks");
        Ok(Self {
            n_units,
            unit_features,
            d_z,
            shapes,
            groups,
            phi,
            thetas,
            eps,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn is_meta(&self) -> bool {
        !self.groups.is_empty()
    }

    pub fn n_edge_classes(&self) -> usize {
        self.shapes[2].output()
    }

    /// Draw noise for one forward pass over a graph with `n_edges` stored edges.
    pub fn sample_noise<S: Scalar, R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        n_edges: usize,
        mode: LatentMode,
    ) -> GeneratorNoise<S> {
        let draw = |rng: &mut R| Array2::from_shape_fn((1, self.d_z), |_| S::of(rng.sample::<f64, _>(StandardNormal)));
        let latent = match mode {
            LatentMode::MeansOnly => None,
            LatentMode::Sample => {
                let mut prior = Vec::with_capacity(self.groups.len());
                let mut cond = Vec::with_capacity(self.groups.len());
                for _ in &self.groups {
                    prior.push(draw(rng));
                    cond.push(draw(rng));
                }
                Some(LatentNoise { prior, cond })
            }
        };
        GeneratorNoise {
            latent,
            view: ViewNoise::sample(rng, self.n_units, n_edges),
        }
    }

    /// Produce the three weight blocks from `x_flat` (`1 x n_units * f`).
    pub fn generate_tape<S: Scalar>(
        &self,
        t: &Tape<S>,
        store: &ParamStore<S>,
        x_flat: Var,
        latent: Option<&LatentNoise<S>>,
    ) -> GeneratedVars {
        let mut sums = Vec::with_capacity(self.groups.len());
        let mut kl = Vec::with_capacity(self.groups.len());
        if let Some(phi) = &self.phi {
            let cond = phi.forward(t, store, x_flat);
            for (g, ids) in self.groups.iter().enumerate() {
                let base = 2 * self.d_z * g;
                let mu_phi = t.slice_cols(cond, base, self.d_z);
                let lv_phi = t.slice_cols(cond, base + self.d_z, self.d_z);
                let mu = t.param(store, ids.mu);
                let lv = t.param(store, ids.log_var);
                let mean = t.add(mu, mu_phi);
                let z = match latent {
                    None => mean,
                    Some(noise) => {
                        let sd = t.exp(t.scale(lv, S::of(0.5)));
                        let sd_phi = t.exp(t.scale(lv_phi, S::of(0.5)));
                        let e = t.mul(sd, t.leaf(noise.prior[g].clone()));
                        let e_phi = t.mul(sd_phi, t.leaf(noise.cond[g].clone()));
                        t.add(mean, t.add(e, e_phi))
                    }
                };
                sums.push(z);
                kl.push((mean, t.add(t.exp(lv), t.exp(lv_phi))));
            }
        }
        let theta = std::array::from_fn(|k| match &self.thetas[k] {
            ThetaSource::Direct(layers) => layers.iter().map(|l| l.vars(t, store)).collect(),
            ThetaSource::Generated { group, psi } => {
                let flat = psi.forward(t, store, sums[*group]);
                self.shapes[k].unflatten(t, flat).expect("psi output matches layout")
            }
        });
        GeneratedVars { theta, kl }
    }

    /// Generate weights and sample node/edge views on the tape.
    ///
    /// `units` is `n_units x f`; `neighbors` is the binary edge matrix of the graph.
    #[allow(clippy::too_many_arguments)]
    pub fn views_tape<S: Scalar>(
        &self,
        t: &Tape<S>,
        store: &ParamStore<S>,
        units: Var,
        neighbors: Var,
        edges: &[(usize, usize)],
        noise: &GeneratorNoise<S>,
        tau: f64,
        hard: bool,
    ) -> (ViewVars, GeneratedVars) {
        let (n, f) = t.shape(units);
        let flat = t.reshape(units, 1, n * f);
        let gen = self.generate_tape(t, store, flat, noise.latent.as_ref());
        let views = sample_views_tape(
            t,
            units,
            neighbors,
            edges,
            [&gen.theta[0], &gen.theta[1], &gen.theta[2]],
            (S::of(self.eps.0), S::of(self.eps.1)),
            &noise.view,
            tau,
            hard,
        );
        (views, gen)
    }

    /// Summed KL of all groups on the tape; `None` without meta networks.
    pub fn kl_total<S: Scalar>(t: &Tape<S>, gen: &GeneratedVars) -> Option<Var> {
        gen.kl
            .iter()
            .map(|&(mu, var)| kl_tape(t, mu, var))
            .reduce(|a, b| t.add(a, b))
    }

    /// Value-level parameter generation from unit features (`n_units x f`).
    pub fn generate_params<S: Scalar, R: Rng + ?Sized>(
        &self,
        store: &ParamStore<S>,
        features: &Array2<S>,
        rng: &mut R,
        mode: LatentMode,
    ) -> Result<(GinParams<S>, EdgeViewParams<S>, Vec<KlInput>)> {
        if features.len() != self.n_units * self.unit_features {
            return Err(shape_err(
                "generator features",
                self.n_units * self.unit_features,
                features.len(),
            ));
        }
        let noise: GeneratorNoise<S> = self.sample_noise(rng, 0, mode);
        let t = Tape::new();
        let flat = t.leaf(
            features
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order((1, features.len()))
                .expect("contiguous"),
        );
        let gen = self.generate_tape(&t, store, flat, noise.latent.as_ref());
        let values = |layers: &[LinearVars]| -> Vec<(Array2<S>, Array2<S>)> {
            layers
                .iter()
                .map(|l| (t.value(l.w).clone(), t.value(l.b).clone()))
                .collect()
        };
        let gin = GinParams {
            theta1: values(&gen.theta[0]),
            theta2: values(&gen.theta[1]),
            eps1: S::of(self.eps.0),
            eps2: S::of(self.eps.1),
        };
        let edge = EdgeViewParams {
            theta3: values(&gen.theta[2]),
        };
        let kl = gen
            .kl
            .iter()
            .map(|&(mu, var)| KlInput {
                mu: row_vec(&t.value(mu)),
                var: row_vec(&t.value(var)),
            })
            .collect();
        Ok((gin, edge, kl))
    }
}
