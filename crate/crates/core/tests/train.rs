use std::collections::BTreeMap;

use proptest::prelude::*;
use xreg::autograd::{Tensor, Var};
use xreg::nets::*;
use xreg::train::*;
use xreg::warp::{AffineTransform, FactorisedWarp, WarpVars};
use xreg::Error;

fn noise(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed ^ 0x2545f4914f6cdd1d;
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        ((s >> 40) as f32 / (1u64 << 24) as f32) * 1.6 - 0.8
    })
}

/// A forward record assembled from given values, for testing loss formulas.
struct Fixture {
    s: Session,
    f: ForwardVars,
}

fn fixture(x_a: Tensor, x_b: Tensor, synth_a: Tensor, synth_b: Tensor, ab: &FactorisedWarp, ba: &FactorisedWarp) -> Fixture {
    let mut s = Session::new(Trainable::Nothing);
    let c = |s: &mut Session, t: Tensor| s.input(t).unwrap();
    let (xa, xb) = (c(&mut s, x_a.clone()), c(&mut s, x_b.clone()));
    let (sa, sb) = (c(&mut s, synth_a), c(&mut s, synth_b));
    let phi_ab = WarpVars::constant(&mut s.graph, ab).unwrap();
    let phi_ba = WarpVars::constant(&mut s.graph, ba).unwrap();
    let dummy = c(&mut s, Tensor::zeros(&[1]));
    let f = ForwardVars {
        x_a: xa,
        x_b: xb,
        latent_a: dummy,
        latent_b: dummy,
        synth_b: sb,
        synth_a: sa,
        phi_ab,
        phi_ba,
        warped_a: xa,
        warped_b: xb,
        stn_tap_ab: dummy,
        stn_tap_ba: dummy,
    };
    Fixture { s, f }
}

fn value(s: &Session, v: Var) -> f64 {
    s.graph.value(v).item().unwrap() as f64
}

fn set_param(model: &mut RegistrationModel, name: &str, f: impl Fn(usize) -> f32) {
    let p = model.parameters_mut().into_iter().find(|p| p.name() == name).unwrap();
    let shape = p.shape().to_vec();
    p.tensor = Tensor::from_fn(&shape, f);
}

fn snapshot(model: &RegistrationModel) -> BTreeMap<String, Tensor> {
    model.parameters().iter().map(|p| (p.name().to_string(), p.tensor.clone())).collect()
}

fn changed(before: &BTreeMap<String, Tensor>, model: &RegistrationModel) -> Vec<String> {
    model
        .parameters()
        .iter()
        .filter(|p| before[p.name()] != p.tensor)
        .map(|p| p.name().to_string())
        .collect()
}

#[test]
fn least_squares_critic_values() {
    let mut m = RegistrationModel::new(2, 0).unwrap();
    for side in ["disc_A", "disc_B"] {
        set_param(&mut m, &format!("{side}.head.weight"), |_| 0.0);
        set_param(&mut m, &format!("{side}.head.bias"), |_| 0.5);
    }
    let mut s = Session::new(Trainable::Nothing);
    let imgs: Vec<Var> = (0..6).map(|i| s.input(noise(&[1, 1, 16, 16], i)).unwrap()).collect();
    let inputs = CriticInputs {
        x_a: imgs[0],
        x_b: imgs[1],
        warped_a: imgs[2],
        warped_b: imgs[3],
        synth_a: imgs[4],
        synth_b: imgs[5],
    };
    let d = discriminator_loss(&mut s, &m, &inputs).unwrap();
    assert!((value(&s, d) - 0.25).abs() < 1e-7);

    let xa = s.input(noise(&[1, 1, 16, 16], 7)).unwrap();
    let xb = s.input(noise(&[1, 1, 16, 16], 8)).unwrap();
    let f = m.forward(&mut s, xa, xb).unwrap();
    let g = generator_adversarial_loss(&mut s, &m, &f).unwrap();
    assert!((value(&s, g) - 0.25).abs() < 1e-7);

    // a perfect critic: every real/warped map at 1 and synth map at 0
    let ones = s.input(Tensor::ones(&[1, 1, 2, 2])).unwrap();
    let zeros = s.input(Tensor::zeros(&[1, 1, 2, 2])).unwrap();
    let t1 = mean_sq_to(&mut s, ones, 1.0).unwrap();
    let t0 = mean_sq_to(&mut s, zeros, 0.0).unwrap();
    assert_eq!(value(&s, t1) + value(&s, t0), 0.0);
}

#[test]
fn similarity_examples() {
    let dims = [16, 16];
    let id = FactorisedWarp::identity(1, &dims);
    let (a, b) = (noise(&[1, 1, 16, 16], 1), noise(&[1, 1, 16, 16], 2));
    let mut fx = fixture(a.clone(), b.clone(), a.clone(), b.clone(), &id, &id);
    let v = similarity_loss(&mut fx.s, &fx.f).unwrap();
    assert_eq!(value(&fx.s, v), 0.0);

    let c = |v: f32| Tensor::full(&[1, 1, 16, 16], v);
    let mut fx = fixture(c(0.1), c(0.7), c(0.1), c(-0.2), &id, &id);
    let v = similarity_loss(&mut fx.s, &fx.f).unwrap();
    assert!((value(&fx.s, v) - 0.9).abs() < 1e-6);

    // swapping the roles of A and B leaves the sum unchanged
    let t = FactorisedWarp::from_affine(AffineTransform::translation(&[0.1, -0.2]), &dims).unwrap();
    let (sa, sb) = (noise(&[1, 1, 16, 16], 3), noise(&[1, 1, 16, 16], 4));
    let mut f1 = fixture(a.clone(), b.clone(), sa.clone(), sb.clone(), &t, &id);
    let mut f2 = fixture(b, a, sb, sa, &id, &t);
    let (v1, v2) = (similarity_loss(&mut f1.s, &f1.f).unwrap(), similarity_loss(&mut f2.s, &f2.f).unwrap());
    assert!((value(&f1.s, v1) - value(&f2.s, v2)).abs() < 1e-7);
}

#[test]
fn inverse_consistency_examples() {
    let dims = [16, 16];
    let id = FactorisedWarp::identity(1, &dims);
    let z = Tensor::zeros(&[1, 1, 16, 16]);
    let run = |ab: &FactorisedWarp, ba: &FactorisedWarp| {
        let mut fx = fixture(z.clone(), z.clone(), z.clone(), z.clone(), ab, ba);
        let v = inverse_consistency_loss(&mut fx.s, &fx.f.phi_ab, &fx.f.phi_ba).unwrap();
        value(&fx.s, v)
    };
    assert_eq!(run(&id, &id), 0.0);
    let t = FactorisedWarp::from_affine(AffineTransform::translation(&[0.1, 0.05]), &dims).unwrap();
    let tn = FactorisedWarp::from_affine(AffineTransform::translation(&[-0.1, -0.05]), &dims).unwrap();
    assert!(run(&t, &tn) < 1e-12);
    // composed shift is 2t in both orders
    let expect = 2.0 * (0.2f64.powi(2) + 0.1f64.powi(2));
    assert!((run(&t, &t) - expect).abs() < 1e-6);
}

#[test]
fn smoothness_examples() {
    let mut s = Session::new(Trainable::Nothing);
    let zero = s.input(Tensor::zeros(&[1, 2, 8, 8])).unwrap();
    let r = field_roughness(&mut s, zero).unwrap();
    assert_eq!(value(&s, r), 0.0);
    let constant = s.input(Tensor::full(&[1, 2, 8, 8], 0.3)).unwrap();
    let r = field_roughness(&mut s, constant).unwrap();
    assert_eq!(value(&s, r), 0.0);
    // slope in voxels per voxel; the field itself is in normalized units (2/n per voxel)
    let slope = 0.05f32;
    let ramp = Tensor::from_fn(&[1, 2, 8, 8], |i| if i < 64 { slope * 0.25 * (i % 8) as f32 } else { 0.0 });
    let ramp = s.input(ramp).unwrap();
    let r = field_roughness(&mut s, ramp).unwrap();
    assert!((value(&s, r) - (slope as f64).powi(2)).abs() < 1e-8);
}

#[test]
fn latent_consistency_detachment_keeps_value() {
    let m = RegistrationModel::new(2, 1).unwrap();
    let mut s = Session::new(Trainable::Everything);
    let (a, b) = (s.input(noise(&[1, 1, 16, 16], 1)).unwrap(), s.input(noise(&[1, 1, 16, 16], 2)).unwrap());
    let f = m.forward(&mut s, a, b).unwrap();
    let detached = latent_consistency_loss(&mut s, &m, &f).unwrap();
    let eb = m.encode(&mut s, f.synth_b).unwrap();
    let ea = m.encode(&mut s, f.synth_a).unwrap();
    let la = l1(&mut s, eb, f.latent_a).unwrap();
    let lb = l1(&mut s, ea, f.latent_b).unwrap();
    let attached = s.graph.add(la, lb).unwrap();
    assert!(value(&s, detached) > 0.0);
    assert_eq!(value(&s, detached), value(&s, attached));
}

fn pair(seed: u64) -> (Tensor, Tensor) {
    (noise(&[1, 1, 16, 16], seed), noise(&[1, 1, 16, 16], seed + 100))
}

#[test]
fn step_report_has_exactly_the_six_terms() {
    let mut m = RegistrationModel::new(2, 2).unwrap();
    let mut opts = Optimizers::new(&TrainConfig::default());
    let (a, b) = pair(1);
    let r = train_step(&mut m, &mut opts, &a, &b, &LossWeights::default(), &LossRegistry::default()).unwrap();
    let keys: Vec<&str> = r.keys().map(String::as_str).collect();
    let mut want = REPORT_KEYS.to_vec();
    want.sort();
    assert_eq!(keys, want);
    assert!(r.values().all(|v| v.is_finite() && *v >= 0.0));
    assert!(m.parameters().iter().all(|p| p.tensor.is_finite()));
}

#[test]
fn zero_weights_leave_parameters_unchanged() {
    let mut m = RegistrationModel::new(2, 3).unwrap();
    let before = snapshot(&m);
    let mut opts = Optimizers::new(&TrainConfig::default());
    let (a, b) = pair(2);
    train_step(&mut m, &mut opts, &a, &b, &LossWeights::zero(), &LossRegistry::default()).unwrap();
    assert!(changed(&before, &m).is_empty());
}

#[test]
fn phases_touch_only_their_own_networks() {
    let mut m = RegistrationModel::new(2, 4).unwrap();
    let mut opts = Optimizers::new(&TrainConfig::default());
    let (a, b) = pair(3);
    let w = LossWeights::default();
    let pass = GeneratorPass::new(&m, &a, &b).unwrap();
    let before = snapshot(&m);
    discriminator_phase(&mut m, &mut opts.discriminator, &pass.critic_images(), &w).unwrap();
    let d = changed(&before, &m);
    assert!(!d.is_empty());
    assert!(d.iter().all(|n| n.starts_with("disc_")), "{d:?}");

    let before = snapshot(&m);
    generator_phase(&mut m, &mut opts.generator, pass, &w, &LossRegistry::default()).unwrap();
    let g = changed(&before, &m);
    assert!(!g.is_empty());
    assert!(g.iter().all(|n| !n.starts_with("disc_")), "{g:?}");
}

#[test]
fn similarity_only_training_reduces_synthesis_error() {
    // pre-registered pair where B is a fixed remap of A: only synthesis can move
    let mut m = RegistrationModel::new(2, 5).unwrap();
    let config = TrainConfig {
        learn_rate: 2e-3,
        ..Default::default()
    };
    let mut opts = Optimizers::new(&config);
    let weights = LossWeights {
        w_sim: 1.0,
        ..LossWeights::zero()
    };
    let a = noise(&[1, 1, 16, 16], 9);
    let b = a.map(|v| 0.8 - v.abs());
    let mut sims = Vec::new();
    for _ in 0..10 {
        let r = train_step(&mut m, &mut opts, &a, &b, &weights, &LossRegistry::default()).unwrap();
        sims.push(r["sim"]);
    }
    let first: f64 = sims[..3].iter().sum::<f64>() / 3.0;
    let last: f64 = sims[7..].iter().sum::<f64>() / 3.0;
    assert!(last < first, "{sims:?}");
}

struct Poisoned;

impl LossTerm for Poisoned {
    fn name(&self) -> &'static str {
        "smooth"
    }
    fn evaluate(&self, ctx: &mut LossContext<'_>) -> xreg::Result<Var> {
        let v = smoothness_loss(ctx.session, ctx.forward)?;
        Ok(ctx.session.graph.scale(v, f64::NAN)?)
    }
}

#[test]
fn non_finite_loss_names_the_term() {
    let mut m = RegistrationModel::new(2, 6).unwrap();
    let mut opts = Optimizers::new(&TrainConfig::default());
    let (a, b) = pair(4);
    let mut registry = LossRegistry::default();
    registry.register(Box::new(Poisoned));
    assert_eq!(registry.names().len(), 5);
    match train_step(&mut m, &mut opts, &a, &b, &LossWeights::default(), &registry) {
        Err(Error::NonFiniteLoss { term }) => assert_eq!(term, "smooth"),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }

    set_param(&mut m, "decoder_AtoB.conv3.bias", |_| f32::INFINITY);
    let err = train_step(&mut m, &mut opts, &a, &b, &LossWeights::default(), &LossRegistry::default()).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { .. }), "{err}");
}

#[test]
fn registry_lookup() {
    let r = LossRegistry::default();
    assert_eq!(r.names(), vec!["adv_G", "sim", "inv", "smooth", "latent"]);
    assert!(r.get("inv").is_some());
    assert!(r.get("adv_D").is_none());
    for n in r.names() {
        assert!(LossWeights::default().get(n).is_some());
    }
}

fn tiny_data() -> Vec<TrainingPair> {
    (0..3)
        .map(|i| {
            let (a, b) = pair(10 + i);
            TrainingPair { a, b }
        })
        .collect()
}

fn tiny_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 2,
        image_size: 16,
        seed: 42,
        ..Default::default()
    }
}

#[test]
fn fit_zero_steps_and_empty_data() {
    let mut m = RegistrationModel::new(2, 7).unwrap();
    let before = snapshot(&m);
    let mut opts = Optimizers::new(&tiny_config(0));
    let log = fit(&mut m, &mut opts, &tiny_data(), &tiny_config(0)).unwrap();
    assert!(log.entries.is_empty());
    assert!(changed(&before, &m).is_empty());
    assert!(matches!(fit(&mut m, &mut opts, &[], &tiny_config(1)), Err(Error::Dataset(_))));
}

#[test]
fn fit_is_deterministic() {
    let run = || {
        let mut m = RegistrationModel::new(2, 8).unwrap();
        let mut opts = Optimizers::new(&tiny_config(3));
        let log = fit(&mut m, &mut opts, &tiny_data(), &tiny_config(3)).unwrap();
        (log, snapshot(&m))
    };
    let (l1, p1) = run();
    let (l2, p2) = run();
    assert_eq!(l1.entries.len(), 3);
    assert_eq!(l1, l2);
    assert_eq!(l1.to_csv(), l2.to_csv());
    assert_eq!(p1, p2);
    assert!(l1.to_csv().starts_with("step,adv_D,adv_G,sim,inv,smooth,latent\n1,"));
}

#[test]
fn moving_average_window() {
    let log = TrainingLog {
        entries: (1..=4)
            .map(|s| LogEntry {
                step: s,
                losses: BTreeMap::from([("sim".to_string(), s as f64), ("inv".to_string(), 1.0)]),
            })
            .collect(),
    };
    assert_eq!(log.moving_average(&["sim", "inv"], 2, 4), Some(4.5));
    assert_eq!(log.moving_average(&["sim"], 5, 4), None);
}

#[test]
fn config_validation_and_json() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = TrainConfig {
        batch: 0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        warp_magnitude: [0.5, 0.2],
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    assert!(LossWeights::zero().validate().is_err());
    let c: TrainConfig = serde_json::from_str(r#"{"steps": 5, "weights": {"w_sim": 3.0}}"#).unwrap();
    assert_eq!(c.steps, 5);
    assert_eq!(c.weights.w_sim, 3.0);
    assert_eq!(c.weights.w_adv, 1.0);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"stepz": 5}"#).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = RegistrationModel::new(2, 9).unwrap();
    let config = tiny_config(2);
    let mut opts = Optimizers::new(&config);
    fit(&mut m, &mut opts, &tiny_data(), &config).unwrap();
    save_checkpoint(dir.path(), &m, &opts, 2, &config).unwrap();
    let ck = load_checkpoint(dir.path()).unwrap();
    assert_eq!(ck.step, 2);
    assert_eq!(ck.config, config);
    assert_eq!(ck.optimizers, opts);
    let (a, b) = pair(50);
    assert_eq!(m.forward_pass(&a, &b).unwrap(), ck.model.forward_pass(&a, &b).unwrap());

    let mut fresh = RegistrationModel::new(2, 123).unwrap();
    assert_eq!(load_checkpoint_into(dir.path(), &mut fresh).unwrap(), 2);
    assert_eq!(snapshot(&fresh), snapshot(&m));
}

#[test]
fn checkpoint_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = RegistrationModel::new(2, 10).unwrap();
    let opts = Optimizers::new(&TrainConfig::default());
    save_checkpoint(dir.path(), &m, &opts, 0, &TrainConfig::default()).unwrap();

    let mut m3 = RegistrationModel::new(3, 0).unwrap();
    assert!(matches!(load_checkpoint_into(dir.path(), &mut m3), Err(Error::ShapeMismatch(_))));

    let manifest = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();

    let mut broken = v.clone();
    broken.as_object_mut().unwrap().remove("step");
    std::fs::write(&manifest, broken.to_string()).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err().to_string();
    assert!(err.contains("`step`"), "{err}");

    let mut broken = v.clone();
    broken["spatial_rank"] = serde_json::json!("two");
    std::fs::write(&manifest, broken.to_string()).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err().to_string();
    assert!(err.contains("`spatial_rank`"), "{err}");

    let mut broken = v.clone();
    broken["version"] = serde_json::json!(99);
    std::fs::write(&manifest, broken.to_string()).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");

    v["parameters"].as_array_mut().unwrap().remove(0);
    std::fs::write(&manifest, v.to_string()).unwrap();
    let err = load_checkpoint(dir.path()).unwrap_err().to_string();
    assert!(err.contains("missing parameter `encoder.conv1.weight`"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn losses_are_nonnegative(seed in any::<u64>(), init in 0u64..1000) {
        let m = RegistrationModel::new(2, init).unwrap();
        let mut opts = Optimizers::new(&TrainConfig::default());
        let mut m2 = m.clone();
        let (a, b) = pair(seed % 1000);
        let r = train_step(&mut m2, &mut opts, &a, &b, &LossWeights::default(), &LossRegistry::default()).unwrap();
        for (k, v) in &r {
            prop_assert!(*v >= 0.0, "{} = {}", k, v);
        }
    }
}
