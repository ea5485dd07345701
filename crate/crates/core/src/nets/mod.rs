//! Network topology and the bi-directional forward pass.

mod blocks;
mod layers;
mod session;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xreg_autograd::{Parameter, Tensor, Var};

pub use blocks::{
    Decoder, DiscVars, Discriminator, Encoder, TransformNet, TransformVars, DENSE_BOUND, DISC_MIN_EXTENT,
    INPUT_LIMIT, LATENT_CHANNELS,
};
pub use layers::{Conv, Linear};
pub use session::{ParamGroup, Session, Trainable};

use crate::error::{Error, Result};
use crate::warp::{FactorisedWarp, WarpVars};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    AtoB,
    BtoA,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Clone, Debug)]
pub struct RegistrationModel {
    rank: usize,
    pub encoder: Encoder,
    pub decoder_ab: Decoder,
    pub decoder_ba: Decoder,
    pub tnet_ab: TransformNet,
    pub tnet_ba: TransformNet,
    pub disc_a: Discriminator,
    pub disc_b: Discriminator,
}

/// Graph handles of one forward pass.
pub struct ForwardVars {
    pub x_a: Var,
    pub x_b: Var,
    pub latent_a: Var,
    pub latent_b: Var,
    pub synth_b: Var,
    pub synth_a: Var,
    pub phi_ab: WarpVars,
    pub phi_ba: WarpVars,
    pub warped_a: Var,
    pub warped_b: Var,
    pub stn_tap_ab: Var,
    pub stn_tap_ba: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationOutputs {
    pub phi_ab: FactorisedWarp,
    pub phi_ba: FactorisedWarp,
    pub synth_b: Tensor,
    pub synth_a: Tensor,
    pub warped_a: Tensor,
    pub warped_b: Tensor,
    pub latent_a: Tensor,
    pub latent_b: Tensor,
}

impl ForwardVars {
    pub fn warp(&self, dir: Direction) -> &WarpVars {
        match dir {
            Direction::AtoB => &self.phi_ab,
            Direction::BtoA => &self.phi_ba,
        }
    }

    pub fn outputs(&self, s: &Session) -> Result<RegistrationOutputs> {
        let g = &s.graph;
        let v = |x: Var| g.value(x).clone();
        Ok(RegistrationOutputs {
            phi_ab: FactorisedWarp::from_tensors(g.value(self.phi_ab.theta), v(self.phi_ab.dense))?,
            phi_ba: FactorisedWarp::from_tensors(g.value(self.phi_ba.theta), v(self.phi_ba.dense))?,
            synth_b: v(self.synth_b),
            synth_a: v(self.synth_a),
            warped_a: v(self.warped_a),
            warped_b: v(self.warped_b),
            latent_a: v(self.latent_a),
            latent_b: v(self.latent_b),
        })
    }
}

impl RegistrationModel {
    pub fn new(spatial_rank: usize, seed: u64) -> Result<Self> {
        if spatial_rank != 2 && spatial_rank != 3 {
            return Err(Error::InvalidArgument(format!("spatial rank {spatial_rank}, expected 2 or 3")));
        }
        let r = spatial_rank;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(RegistrationModel {
            rank: r,
            encoder: Encoder::new(&mut rng, r),
            decoder_ab: Decoder::new(&mut rng, "decoder_AtoB", r),
            decoder_ba: Decoder::new(&mut rng, "decoder_BtoA", r),
            tnet_ab: TransformNet::new(&mut rng, "tnet_AtoB", r),
            tnet_ba: TransformNet::new(&mut rng, "tnet_BtoA", r),
            disc_a: Discriminator::new(&mut rng, "disc_A", r),
            disc_b: Discriminator::new(&mut rng, "disc_B", r),
        })
    }

    pub fn spatial_rank(&self) -> usize {
        self.rank
    }

    pub fn group_of(name: &str) -> ParamGroup {
        if name.starts_with("disc_") {
            ParamGroup::Discriminator
        } else {
            ParamGroup::Generator
        }
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.encoder.params();
        p.extend(self.decoder_ab.params());
        p.extend(self.decoder_ba.params());
        p.extend(self.tnet_ab.params());
        p.extend(self.tnet_ba.params());
        p.extend(self.disc_a.params());
        p.extend(self.disc_b.params());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder_ab.params_mut());
        p.extend(self.decoder_ba.params_mut());
        p.extend(self.tnet_ab.params_mut());
        p.extend(self.tnet_ba.params_mut());
        p.extend(self.disc_a.params_mut());
        p.extend(self.disc_b.params_mut());
        p
    }

    pub fn group_parameters_mut(&mut self, group: ParamGroup) -> Vec<&mut Parameter> {
        self.parameters_mut()
            .into_iter()
            .filter(|p| Self::group_of(p.name()) == group)
            .collect()
    }

    pub fn decoder(&self, dir: Direction) -> &Decoder {
        match dir {
            Direction::AtoB => &self.decoder_ab,
            Direction::BtoA => &self.decoder_ba,
        }
    }

    pub fn tnet(&self, dir: Direction) -> &TransformNet {
        match dir {
            Direction::AtoB => &self.tnet_ab,
            Direction::BtoA => &self.tnet_ba,
        }
    }

    pub fn disc(&self, side: Side) -> &Discriminator {
        match side {
            Side::A => &self.disc_a,
            Side::B => &self.disc_b,
        }
    }

    pub fn encode(&self, s: &mut Session, x: Var) -> Result<Var> {
        self.encoder.forward(s, x)
    }

    pub fn decode(&self, s: &mut Session, latent: Var, dir: Direction) -> Result<Var> {
        self.decoder(dir).forward(s, latent)
    }

    pub fn predict_transform(&self, s: &mut Session, src: Var, dst: Var, dir: Direction) -> Result<TransformVars> {
        self.tnet(dir).forward(s, src, dst)
    }

    pub fn discriminate(&self, s: &mut Session, x: Var, side: Side) -> Result<DiscVars> {
        self.disc(side).forward(s, x)
    }

    fn check_inputs(&self, a: &[usize], b: &[usize]) -> Result<()> {
        if a != b {
            return Err(Error::ShapeMismatch(format!("moving {a:?} vs fixed {b:?}")));
        }
        if a.len() != self.rank + 2 || a[1] != 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected [B, 1, {}-d spatial] input, got {a:?}",
                self.rank
            )));
        }
        if a[2..].iter().any(|&n| n % 4 != 0 || n == 0) {
            return Err(Error::ShapeMismatch(format!("spatial extents {:?} must be multiples of 4", &a[2..])));
        }
        Ok(())
    }

    /// Record the full bi-directional pass on the session's graph.
    pub fn forward(&self, s: &mut Session, x_a: Var, x_b: Var) -> Result<ForwardVars> {
        self.check_inputs(s.graph.shape(x_a), s.graph.shape(x_b))?;
        let latent_a = self.encode(s, x_a)?;
        let latent_b = self.encode(s, x_b)?;
        let synth_b = self.decode(s, latent_a, Direction::AtoB)?;
        let synth_a = self.decode(s, latent_b, Direction::BtoA)?;
        let t_ab = self.predict_transform(s, latent_a, latent_b, Direction::AtoB)?;
        let t_ba = self.predict_transform(s, latent_b, latent_a, Direction::BtoA)?;
        let warped_a = t_ab.warp.apply(&mut s.graph, x_a)?;
        let warped_b = t_ba.warp.apply(&mut s.graph, x_b)?;
        Ok(ForwardVars {
            x_a,
            x_b,
            latent_a,
            latent_b,
            synth_b,
            synth_a,
            phi_ab: t_ab.warp,
            phi_ba: t_ba.warp,
            warped_a,
            warped_b,
            stn_tap_ab: t_ab.tap,
            stn_tap_ba: t_ba.tap,
        })
    }

    /// Inference-only forward pass on values.
    pub fn forward_pass(&self, x_a: &Tensor, x_b: &Tensor) -> Result<RegistrationOutputs> {
        let mut s = Session::new(Trainable::Nothing);
        let (a, b) = (s.input(x_a.clone())?, s.input(x_b.clone())?);
        let f = self.forward(&mut s, a, b)?;
        f.outputs(&s)
    }
}
