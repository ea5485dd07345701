use xreg::autograd::{Reduction, Tensor};
use xreg::nets::*;
use xreg::warp::FactorisedWarp;

fn noise(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed ^ 0x9e3779b97f4a7c15;
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    })
}

#[test]
fn shapes_for_64() {
    let m = RegistrationModel::new(2, 0).unwrap();
    let (a, b) = (noise(&[2, 1, 64, 64], 1), noise(&[2, 1, 64, 64], 2));
    let mut s = Session::new(Trainable::Nothing);
    let (xa, xb) = (s.input(a).unwrap(), s.input(b).unwrap());
    let f = m.forward(&mut s, xa, xb).unwrap();
    assert_eq!(s.graph.shape(f.latent_a), &[2, 32, 16, 16]);
    assert_eq!(s.graph.shape(f.synth_b), &[2, 1, 64, 64]);
    assert_eq!(s.graph.shape(f.phi_ab.theta), &[2, 2, 3]);
    assert_eq!(s.graph.shape(f.phi_ab.dense), &[2, 2, 64, 64]);
    assert_eq!(s.graph.shape(f.warped_b), &[2, 1, 64, 64]);
    let d = m.discriminate(&mut s, xa, Side::A).unwrap();
    assert_eq!(s.graph.shape(d.score), &[2, 1, 8, 8]);
    assert_eq!(s.graph.shape(d.tap), &[2, 64, 8, 8]);
    let out = f.outputs(&s).unwrap();
    for t in [&out.synth_a, &out.synth_b, &out.warped_a, &out.warped_b, &out.latent_a, &out.latent_b] {
        assert!(t.is_finite());
    }
    assert!(out.synth_b.data().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn shape_contract_for_other_sizes() {
    let m = RegistrationModel::new(2, 1).unwrap();
    for (h, w) in [(16, 16), (24, 40), (32, 16)] {
        let x = noise(&[1, 1, h, w], 3);
        let out = m.forward_pass(&x, &x).unwrap();
        assert_eq!(out.synth_a.shape(), &[1, 1, h, w]);
        assert_eq!(out.phi_ba.dense.dims(), &[h, w]);
        assert_eq!(out.latent_b.shape(), &[1, 32, h / 4, w / 4]);
    }
    let m3 = RegistrationModel::new(3, 1).unwrap();
    let x = noise(&[1, 1, 16, 16, 16], 4);
    let out = m3.forward_pass(&x, &x).unwrap();
    assert_eq!(out.phi_ab.affine[0].matrix().len(), 12);
    assert_eq!(out.warped_a.shape(), &[1, 1, 16, 16, 16]);
}

#[test]
fn identity_at_initialization() {
    let m = RegistrationModel::new(2, 7).unwrap();
    let (a, b) = (noise(&[1, 1, 32, 32], 5), noise(&[1, 1, 32, 32], 6));
    let out = m.forward_pass(&a, &b).unwrap();
    assert!(out.warped_a.max_abs_diff(&a).unwrap() <= 1e-5);
    assert!(out.warped_b.max_abs_diff(&b).unwrap() <= 1e-5);
    assert_eq!(out.phi_ab, FactorisedWarp::identity(1, &[32, 32]));
    assert_eq!(out.phi_ba.dense.max_norm(), 0.0);
}

#[test]
fn zero_input_and_batch_permutation() {
    let m = RegistrationModel::new(2, 2).unwrap();
    let z = Tensor::zeros(&[1, 1, 16, 16]);
    assert!(m.forward_pass(&z, &z).unwrap().latent_a.is_finite());

    let (p, q) = (noise(&[1, 1, 16, 16], 8), noise(&[1, 1, 16, 16], 9));
    let pq = Tensor::stack_batch(&[p.clone(), q.clone()]).unwrap();
    let qp = Tensor::stack_batch(&[q, p]).unwrap();
    let (o1, o2) = (m.forward_pass(&pq, &pq).unwrap(), m.forward_pass(&qp, &qp).unwrap());
    assert_eq!(o1.latent_a.batch_item(0).unwrap(), o2.latent_a.batch_item(1).unwrap());
    assert_eq!(o1.synth_b.batch_item(1).unwrap(), o2.synth_b.batch_item(0).unwrap());
}

#[test]
fn swapping_inputs_swaps_outputs_with_mirrored_weights() {
    // give both directions the same weights so the wiring symmetry is visible
    let mut m = RegistrationModel::new(2, 3).unwrap();
    m.decoder_ba = Decoder::clone(&m.decoder_ab);
    m.tnet_ba = TransformNet::clone(&m.tnet_ab);
    let (a, b) = (noise(&[1, 1, 16, 16], 1), noise(&[1, 1, 16, 16], 2));
    let (o1, o2) = (m.forward_pass(&a, &b).unwrap(), m.forward_pass(&b, &a).unwrap());
    assert_eq!(o1.synth_b, o2.synth_a);
    assert_eq!(o1.latent_a, o2.latent_b);
    assert_eq!(o1.phi_ab, o2.phi_ba);
    assert_eq!(o1.warped_a, o2.warped_b);
}

#[test]
fn rejects_bad_inputs() {
    let m = RegistrationModel::new(2, 0).unwrap();
    let mut big = noise(&[1, 1, 16, 16], 1);
    big.data_mut()[3] = 2.0;
    let ok = noise(&[1, 1, 16, 16], 2);
    assert!(matches!(m.forward_pass(&big, &ok), Err(xreg::Error::Unnormalized { .. })));
    let small = noise(&[1, 1, 8, 8], 1);
    let mut s = Session::new(Trainable::Nothing);
    let x = s.input(small).unwrap();
    assert!(m.discriminate(&mut s, x, Side::B).is_err());
    assert!(m.forward_pass(&ok, &noise(&[1, 1, 16, 20], 1)).is_err());
    assert!(RegistrationModel::new(4, 0).is_err());
}

#[test]
fn decoders_and_critics_are_distinct() {
    let m = RegistrationModel::new(2, 4).unwrap();
    let x = noise(&[1, 1, 16, 16], 3);
    let mut s = Session::new(Trainable::Nothing);
    let xv = s.input(x).unwrap();
    let l = m.encode(&mut s, xv).unwrap();
    let ab = m.decode(&mut s, l, Direction::AtoB).unwrap();
    let ba = m.decode(&mut s, l, Direction::BtoA).unwrap();
    assert_ne!(s.graph.value(ab), s.graph.value(ba));
    let d1 = m.discriminate(&mut s, xv, Side::A).unwrap();
    let d2 = m.discriminate(&mut s, xv, Side::A).unwrap();
    assert_eq!(s.graph.value(d1.score), s.graph.value(d2.score));
}

#[test]
fn encoder_is_shared_between_inputs() {
    let m = RegistrationModel::new(2, 5).unwrap();
    let encoder_params = m.parameters().iter().filter(|p| p.name().starts_with("encoder.")).count();
    assert_eq!(encoder_params, 6);
    let mut s = Session::new(Trainable::Everything);
    let (a, b) = (s.input(noise(&[1, 1, 16, 16], 1)).unwrap(), s.input(noise(&[1, 1, 16, 16], 2)).unwrap());
    m.forward(&mut s, a, b).unwrap();
    // both encodes bound the same leaves: one binding per encoder parameter
    assert_eq!(s.bound_names().filter(|n| n.starts_with("encoder.")).count(), 6);
    let mut names: Vec<&str> = m.parameters().iter().map(|p| p.name()).collect();
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n, "parameter names must be unique");
}

#[test]
fn gradient_reaches_every_generator_branch() {
    let m = RegistrationModel::new(2, 6).unwrap();
    let mut s = Session::new(Trainable::Only(ParamGroup::Generator));
    let (a, b) = (s.input(noise(&[1, 1, 16, 16], 1)).unwrap(), s.input(noise(&[1, 1, 16, 16], 2)).unwrap());
    let f = m.forward(&mut s, a, b).unwrap();
    // warp the synthesized image and compare with the fixed one
    let moved = f.phi_ab.apply(&mut s.graph, f.synth_b).unwrap();
    let diff = s.graph.sub(moved, f.x_b).unwrap();
    let loss = s.graph.reduce(diff, Reduction::L1).unwrap();
    let wa = s.graph.reduce(f.warped_a, Reduction::Sum).unwrap();
    let total = s.graph.add(loss, wa).unwrap();
    s.graph.backward(total).unwrap();
    let grads = s.gradients();
    let nonzero = |prefix: &str| {
        grads
            .iter()
            .any(|(n, g)| n.starts_with(prefix) && g.data().iter().any(|&v| v != 0.0))
    };
    assert!(nonzero("encoder."));
    assert!(nonzero("decoder_AtoB."));
    assert!(nonzero("tnet_AtoB."));
    assert!(!grads.keys().any(|n| n.starts_with("disc_")));
}
