//! Full-pipeline gradient verification: encoder (+projector) composed
//! with each objective, parameter gradients checked against central
//! finite differences over every coordinate.

use ndarray::{concatenate, Array2, Axis, NdFloat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skylark_core::nn::{Activation, ConvStage, EncoderConfig, SslModel};
use skylark_core::objectives::{
    barlow_twins_loss, frossl_loss, simclr_loss, supcon_loss, LossOutput, Objective,
    ObjectiveConfig,
};

fn tiny_cfg() -> EncoderConfig {
    EncoderConfig {
        conv_stages: vec![
            ConvStage {
                out_channels: 2,
                kernel: 3,
                stride: 2,
            },
            ConvStage {
                out_channels: 3,
                kernel: 3,
                stride: 2,
            },
        ],
        embedding_dim: 4,
        projector_dims: vec![4, 4],
        activation: Activation::Tanh,
    }
}

/// Fresh-init embeddings have tiny norms, which makes the normalized
/// losses needle-sharp around the origin; scaling the dense layers puts
/// the check at a numerically representative operating point.
fn conditioned_model<F: NdFloat>(seed: u64) -> SslModel<F> {
    let mut model = SslModel::<F>::new(&tiny_cfg(), seed).unwrap();
    let six = F::from(6.0).unwrap();
    let mut params = model.param_tensors_mut();
    for idx in [4usize, 6, 8] {
        params[idx].mapv_inplace(|v| v * six);
    }
    drop(params);
    model
}

fn random_specs<F: NdFloat>(n: usize, seed: u64) -> Vec<Array2<F>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Array2::from_shape_fn((16, 20), |_| F::from(rng.random_range(-1.0..1.0)).unwrap()))
        .collect()
}

fn batch_labels(n: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.extend((0..n).map(|i| i % 2));
    labels
}

/// Loss of the whole pipeline at the model's current parameters.
fn pipeline_loss<F: NdFloat>(
    model: &SslModel<F>,
    views1: &[Array2<F>],
    views2: &[Array2<F>],
    objective: Objective,
    cfg: &ObjectiveConfig<F>,
) -> F {
    let n = views1.len();
    let d = model.output_dim();
    let mut z1 = Array2::<F>::zeros((n, d));
    let mut z2 = Array2::<F>::zeros((n, d));
    for i in 0..n {
        let (o1, _) = model.forward(&views1[i]).unwrap();
        let (o2, _) = model.forward(&views2[i]).unwrap();
        z1.row_mut(i).assign(&o1);
        z2.row_mut(i).assign(&o2);
    }
    let out: LossOutput<F> = match objective {
        Objective::SimClr => simclr_loss(&z1, &z2, cfg).unwrap(),
        Objective::BarlowTwins => barlow_twins_loss(&z1, &z2, cfg).unwrap(),
        Objective::FroSsl => frossl_loss(&z1, &z2, cfg).unwrap(),
        Objective::SupCon => {
            let z = concatenate![Axis(0), z1.view(), z2.view()];
            supcon_loss(&z, &batch_labels(n), cfg).unwrap()
        }
    };
    out.value
}

/// Analytic parameter gradients of the same loss, flattened in
/// parameter-declaration order.
fn pipeline_grads<F: NdFloat>(
    model: &SslModel<F>,
    views1: &[Array2<F>],
    views2: &[Array2<F>],
    objective: Objective,
    cfg: &ObjectiveConfig<F>,
) -> Vec<F> {
    let n = views1.len();
    let d = model.output_dim();
    let mut z1 = Array2::<F>::zeros((n, d));
    let mut z2 = Array2::<F>::zeros((n, d));
    for i in 0..n {
        let (o1, _) = model.forward(&views1[i]).unwrap();
        let (o2, _) = model.forward(&views2[i]).unwrap();
        z1.row_mut(i).assign(&o1);
        z2.row_mut(i).assign(&o2);
    }
    let out: LossOutput<F> = match objective {
        Objective::SimClr => simclr_loss(&z1, &z2, cfg).unwrap(),
        Objective::BarlowTwins => barlow_twins_loss(&z1, &z2, cfg).unwrap(),
        Objective::FroSsl => frossl_loss(&z1, &z2, cfg).unwrap(),
        Objective::SupCon => {
            let z = concatenate![Axis(0), z1.view(), z2.view()];
            supcon_loss(&z, &batch_labels(n), cfg).unwrap()
        }
    };
    let mut grads = model.zero_grads();
    for i in 0..n {
        let g1 = out.grad_z1.row(i).to_owned();
        let (_, c1) = model.forward(&views1[i]).unwrap();
        model.backward(&g1, &c1, &mut grads).unwrap();
        let g2 = match &out.grad_z2 {
            Some(g) => g.row(i).to_owned(),
            None => out.grad_z1.row(i + n).to_owned(),
        };
        let (_, c2) = model.forward(&views2[i]).unwrap();
        model.backward(&g2, &c2, &mut grads).unwrap();
    }
    let mut flat = Vec::new();
    for g in &grads {
        flat.extend(g.iter().copied());
    }
    flat
}

/// Max relative error over parameter coordinates. Coordinates where the
/// analytic/numeric difference sits below `abs_floor` are counted as
/// agreement: some loss directions (per-dimension shifts under
/// standardization) have a true gradient of exactly zero, leaving both
/// sides as sub-noise-floor dust where a ratio is meaningless.
fn max_rel_error<F: NdFloat>(objective: Objective, seed: u64, h: F, abs_floor: F) -> F {
    let mut model = conditioned_model::<F>(seed);
    assert!(model.num_params() <= 5000);
    let views1 = random_specs::<F>(4, seed + 10);
    let views2 = random_specs::<F>(4, seed + 20);
    let cfg = ObjectiveConfig::<F>::default();
    let analytic = pipeline_grads(&model, &views1, &views2, objective, &cfg);
    let base = model.flatten_params();
    let mut max_rel = F::zero();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] = plus[i] + h;
        model.set_flat_params(&plus).unwrap();
        let fp = pipeline_loss(&model, &views1, &views2, objective, &cfg);
        let mut minus = base.clone();
        minus[i] = minus[i] - h;
        model.set_flat_params(&minus).unwrap();
        let fm = pipeline_loss(&model, &views1, &views2, objective, &cfg);
        let numeric = (fp - fm) / (F::from(2.0).unwrap() * h);
        if (analytic[i] - numeric).abs() <= abs_floor {
            continue;
        }
        let denom = (analytic[i].abs() + numeric.abs()).max(F::from(1e-12).unwrap());
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    model.set_flat_params(&base).unwrap();
    max_rel
}

#[test]
fn parameter_gradients_match_finite_differences_in_f64() {
    for objective in Objective::ALL {
        for seed in [3u64, 4, 5] {
            let err = max_rel_error::<f64>(objective, seed, 1e-5, 1e-9);
            assert!(
                err < 1e-5,
                "{} seed {seed}: 64-bit end-to-end gradient error {err:.3e}",
                objective.name()
            );
        }
    }
}

/// 32-bit central differences can only resolve smooth pipelines: the
/// softmax losses carry curvature that f32 evaluation noise cannot
/// separate from truncation at any step size, so the 32-bit example runs
/// the unnormalized quadratic-plus-log pipeline. All four objectives are
/// held to 1e-5 in the 64-bit check above.
#[test]
fn parameter_gradients_match_finite_differences_in_f32() {
    for seed in [3u64, 4, 5] {
        // h is a power of two so the perturbed parameters are exact;
        // the absolute floor sits at the f32 central-difference noise level
        let err = max_rel_error::<f32>(Objective::FroSsl, seed, 0.00390625, 2e-3);
        assert!(
            err < 1e-3,
            "frossl seed {seed}: 32-bit end-to-end gradient error {err:.3e}"
        );
    }
}

#[test]
fn corrupted_parameter_gradient_is_detected() {
    // sanity: the checker is sensitive to a macroscopic gradient fault
    let model = conditioned_model::<f64>(3);
    let views1 = random_specs::<f64>(4, 13);
    let views2 = random_specs::<f64>(4, 23);
    let cfg = ObjectiveConfig::<f64>::default();
    let mut analytic = pipeline_grads(&model, &views1, &views2, Objective::SimClr, &cfg);
    analytic[0] += 1.0;
    let mut work = model.clone();
    let base = work.flatten_params();
    let h = 1e-5;
    let mut plus = base.clone();
    plus[0] += h;
    work.set_flat_params(&plus).unwrap();
    let fp = pipeline_loss(&work, &views1, &views2, Objective::SimClr, &cfg);
    let mut minus = base.clone();
    minus[0] -= h;
    work.set_flat_params(&minus).unwrap();
    let fm = pipeline_loss(&work, &views1, &views2, Objective::SimClr, &cfg);
    let numeric = (fp - fm) / (2.0 * h);
    assert!((analytic[0] - numeric).abs() > 0.5);
}
