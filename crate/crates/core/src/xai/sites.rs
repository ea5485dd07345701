use rand::Rng;
use xreg_autograd::{Reduction, Tensor};

use super::cam::{gradcam, transform_target, ActivationTap, AttentionMap, TapSite, TargetKind, TargetSpec};
use crate::error::{Error, Result};
use crate::nets::{Direction, RegistrationModel, Session, Side, Trainable};
use crate::warp::{
    apply_warp, random_rigid, random_smooth_field, AffineTransform, DisplacementField, FactorisedWarp,
    NONRIGID_PER_MAGNITUDE, PERTURB_SIGMA,
};

fn dims_of(x: &Tensor) -> Vec<usize> {
    x.shape()[2..].to_vec()
}

/// One field-target Grad-CAM pass: forward both images, backprop the
/// `dir` target, read the tap chosen by `pick`.
fn field_pass(
    model: &RegistrationModel,
    x_a: &Tensor,
    x_b: &Tensor,
    kind: TargetKind,
    dir: Direction,
    site: TapSite,
) -> Result<AttentionMap> {
    let spec = TargetSpec::new(kind, dir);
    spec.check(site)?;
    let mut s = Session::new(Trainable::Everything);
    let (a, b) = (s.input(x_a.clone())?, s.input(x_b.clone())?);
    let f = model.forward(&mut s, a, b)?;
    let target = transform_target(&mut s, &f, spec)?;
    s.graph.backward(target)?;
    let var = match site {
        TapSite::Encoder if dir == Direction::AtoB => f.latent_a,
        TapSite::Encoder => f.latent_b,
        TapSite::StnAtoB => f.stn_tap_ab,
        TapSite::StnBtoA => f.stn_tap_ba,
        _ => unreachable!("checked above"),
    };
    gradcam(&ActivationTap::capture(&s.graph, site, var), kind, &dims_of(x_a))
}

/// Encoder maps for each input, explaining the warp that input drives:
/// A→B for `x_a`, B→A for `x_b`.
pub fn encoder_attention(
    model: &RegistrationModel,
    x_a: &Tensor,
    x_b: &Tensor,
    kind: TargetKind,
) -> Result<(AttentionMap, AttentionMap)> {
    let map_a = field_pass(model, x_a, x_b, kind, Direction::AtoB, TapSite::Encoder)?;
    let map_b = field_pass(model, x_a, x_b, kind, Direction::BtoA, TapSite::Encoder)?;
    Ok((map_a, map_b))
}

/// Transformation-network maps, both reported on `x_b`'s grid: the B→A map
/// lives on A's grid and is carried over through the predicted A→B warp.
pub fn stn_attention(
    model: &RegistrationModel,
    x_a: &Tensor,
    x_b: &Tensor,
    kind: TargetKind,
) -> Result<(AttentionMap, AttentionMap)> {
    let ab = field_pass(model, x_a, x_b, kind, Direction::AtoB, TapSite::StnAtoB)?;
    let mut ba = field_pass(model, x_a, x_b, kind, Direction::BtoA, TapSite::StnBtoA)?;
    let phi_ab = model.forward_pass(x_a, x_b)?.phi_ab;
    // linear resampling of a nonnegative map stays nonnegative
    ba.values = apply_warp(&ba.values, &phi_ab)?;
    Ok((ab, ba))
}

/// Critic map for `x` seen through `warp`, explaining the mean score.
pub fn disc_map(model: &RegistrationModel, x: &Tensor, side: Side, warp: &FactorisedWarp) -> Result<AttentionMap> {
    let site = match side {
        Side::A => TapSite::DiscA,
        Side::B => TapSite::DiscB,
    };
    let input = apply_warp(x, warp)?;
    let mut s = Session::new(Trainable::Everything);
    let xv = s.input(input)?;
    let d = model.discriminate(&mut s, xv, side)?;
    let target = s.graph.reduce(d.score, Reduction::Mean)?;
    s.graph.backward(target)?;
    gradcam(&ActivationTap::capture(&s.graph, site, d.tap), TargetKind::DiscScore, &dims_of(x))
}

/// The two input perturbations of the critic readout.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscVariants {
    /// Rotation and translation only.
    pub rigid: FactorisedWarp,
    /// Smooth dense displacement only.
    pub nonrigid: FactorisedWarp,
}

impl DiscVariants {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, dims: &[usize], magnitude: [f64; 2]) -> Result<Self> {
        let rigid = FactorisedWarp::from_affine(random_rigid(rng, dims.len(), magnitude)?, dims)?;
        let m = rng.random_range(magnitude[0]..=magnitude[1]);
        let field = random_smooth_field(rng, dims, PERTURB_SIGMA, m * NONRIGID_PER_MAGNITUDE)?;
        Ok(DiscVariants {
            rigid,
            nonrigid: FactorisedWarp::from_dense(field),
        })
    }

    pub fn identity(dims: &[usize]) -> Self {
        DiscVariants {
            rigid: FactorisedWarp::from_affine(AffineTransform::identity(dims.len()), dims).expect("identity"),
            nonrigid: FactorisedWarp::from_dense(DisplacementField::zeros(1, dims)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscMaps {
    pub real_rigid: AttentionMap,
    pub real_nonrigid: AttentionMap,
    pub synth_rigid: AttentionMap,
    pub synth_nonrigid: AttentionMap,
}

impl DiscMaps {
    /// `(name, map)` in a fixed order.
    pub fn named(&self) -> [(&'static str, &AttentionMap); 4] {
        [
            ("real_rigid", &self.real_rigid),
            ("real_nonrigid", &self.real_nonrigid),
            ("synth_rigid", &self.synth_rigid),
            ("synth_nonrigid", &self.synth_nonrigid),
        ]
    }
}

/// Critic maps for a real and a synthesized image, each under the same rigid
/// and non-rigid perturbation.
pub fn discriminator_attention(
    model: &RegistrationModel,
    x_real: &Tensor,
    x_synth: &Tensor,
    side: Side,
    variants: &DiscVariants,
) -> Result<DiscMaps> {
    if x_real.shape() != x_synth.shape() {
        return Err(Error::ShapeMismatch(format!(
            "real {:?} vs synthesized {:?}",
            x_real.shape(),
            x_synth.shape()
        )));
    }
    Ok(DiscMaps {
        real_rigid: disc_map(model, x_real, side, &variants.rigid)?,
        real_nonrigid: disc_map(model, x_real, side, &variants.nonrigid)?,
        synth_rigid: disc_map(model, x_synth, side, &variants.rigid)?,
        synth_nonrigid: disc_map(model, x_synth, side, &variants.nonrigid)?,
    })
}
