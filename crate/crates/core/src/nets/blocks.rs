use rand::Rng;
use xreg_autograd::{Activation, Parameter, Tensor, Var};

use super::layers::{Conv, Linear};
use super::session::{ParamGroup, Session};
use crate::error::{Error, Result};
use crate::warp::{mesh, WarpVars};

/// Latent channel count.
pub const LATENT_CHANNELS: usize = 32;
/// Bound on each dense displacement component, normalized units.
pub const DENSE_BOUND: f64 = 0.2;
/// Largest absolute input intensity the encoder accepts.
pub const INPUT_LIMIT: f32 = 1.5;
/// Smallest spatial extent the discriminators accept.
pub const DISC_MIN_EXTENT: usize = 16;

const G: ParamGroup = ParamGroup::Generator;
const D: ParamGroup = ParamGroup::Discriminator;

#[derive(Clone, Debug)]
pub struct Encoder {
    convs: [Conv; 3],
}

impl Encoder {
    pub(crate) fn new<R: Rng + ?Sized>(rng: &mut R, rank: usize) -> Self {
        Encoder {
            convs: [
                Conv::new(rng, "encoder.conv1", rank, 1, 16, 3, 1, 1),
                Conv::new(rng, "encoder.conv2", rank, 16, 32, 3, 2, 1),
                Conv::new(rng, "encoder.conv3", rank, 32, LATENT_CHANNELS, 3, 2, 1),
            ],
        }
    }

    /// Latent map `[B, 32, spatial/4]`; it doubles as the encoder's tap.
    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        if let Some(&v) = s.graph.value(x).data().iter().find(|v| !(v.abs() <= INPUT_LIMIT)) {
            return Err(Error::Unnormalized { value: v });
        }
        let mut h = x;
        for c in &self.convs {
            h = c.block(s, h, G)?;
        }
        Ok(h)
    }

    pub(crate) fn params(&self) -> Vec<&Parameter> {
        self.convs.iter().flat_map(Conv::params).collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.convs.iter_mut().flat_map(Conv::params_mut).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    convs: [Conv; 3],
}

impl Decoder {
    pub(crate) fn new<R: Rng + ?Sized>(rng: &mut R, name: &str, rank: usize) -> Self {
        Decoder {
            convs: [
                Conv::new(rng, &format!("{name}.conv1"), rank, LATENT_CHANNELS, 16, 3, 1, 1),
                Conv::new(rng, &format!("{name}.conv2"), rank, 16, 8, 3, 1, 1),
                Conv::new(rng, &format!("{name}.conv3"), rank, 8, 1, 3, 1, 1),
            ],
        }
    }

    pub fn forward(&self, s: &mut Session, latent: Var) -> Result<Var> {
        let c = s.graph.shape(latent).get(1).copied();
        if c != Some(LATENT_CHANNELS) {
            return Err(Error::ShapeMismatch(format!(
                "decoder expects {LATENT_CHANNELS} latent channels, got {:?}",
                s.graph.shape(latent)
            )));
        }
        let h = s.graph.upsample_linear(latent, 2)?;
        let h = self.convs[0].block(s, h, G)?;
        let h = s.graph.upsample_linear(h, 2)?;
        let h = self.convs[1].block(s, h, G)?;
        let h = self.convs[2].forward(s, h, G)?;
        Ok(s.graph.activation(h, Activation::Tanh)?)
    }

    pub(crate) fn params(&self) -> Vec<&Parameter> {
        self.convs.iter().flat_map(Conv::params).collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.convs.iter_mut().flat_map(Conv::params_mut).collect()
    }
}

/// Predicts one direction's factorised warp from a pair of latents.
///
/// The trunk also sees the latent grid's normalized coordinates: features
/// that are mean-pooled for the affine head are otherwise translation
/// invariant and cannot encode where structures sit.
#[derive(Clone, Debug)]
pub struct TransformNet {
    rank: usize,
    trunk: [Conv; 2],
    affine: Linear,
    dense: Conv,
}

pub struct TransformVars {
    pub warp: WarpVars,
    /// Activated output of the trunk's last conv.
    pub tap: Var,
}

impl TransformNet {
    pub(crate) fn new<R: Rng + ?Sized>(rng: &mut R, name: &str, rank: usize) -> Self {
        let cin = 2 * LATENT_CHANNELS + rank;
        TransformNet {
            rank,
            trunk: [
                Conv::new(rng, &format!("{name}.trunk1"), rank, cin, 32, 3, 1, 1),
                Conv::new(rng, &format!("{name}.trunk2"), rank, 32, 32, 3, 1, 1),
            ],
            affine: Linear::zeros(&format!("{name}.affine"), 32, rank * (rank + 1)),
            dense: Conv::new(rng, &format!("{name}.dense"), rank, 32, rank, 3, 1, 1).zeroed(),
        }
    }

    pub fn forward(&self, s: &mut Session, src: Var, dst: Var) -> Result<TransformVars> {
        let (ss, ds) = (s.graph.shape(src).to_vec(), s.graph.shape(dst).to_vec());
        if ss != ds || ss.len() != self.rank + 2 {
            return Err(Error::ShapeMismatch(format!("latents {ss:?} vs {ds:?}")));
        }
        let (b, d) = (ss[0], self.rank);
        let coords = s.graph.constant(mesh(b, &ss[2..]))?;
        let x = s.graph.concat(&[src, dst, coords], 1)?;
        let h = self.trunk[0].plain_block(s, x, G)?;
        let tap = self.trunk[1].plain_block(s, h, G)?;

        let pooled = s.graph.spatial_mean(tap)?;
        let a = self.affine.forward(s, pooled, G)?;
        let a = s.graph.reshape(a, &[b, d, d + 1])?;
        let identity = Tensor::from_fn(&[b, d, d + 1], |i| {
            let (r, c) = ((i / (d + 1)) % d, i % (d + 1));
            if r == c { 1.0 } else { 0.0 }
        });
        let identity = s.graph.constant(identity)?;
        let theta = s.graph.add(a, identity)?;

        let u = self.dense.forward(s, tap, G)?;
        let u = s.graph.activation(u, Activation::Tanh)?;
        let u = s.graph.scale(u, DENSE_BOUND)?;
        let dense = s.graph.upsample_linear(u, 4)?;
        Ok(TransformVars {
            warp: WarpVars { theta, dense },
            tap,
        })
    }

    pub(crate) fn params(&self) -> Vec<&Parameter> {
        let mut p: Vec<&Parameter> = self.trunk.iter().flat_map(Conv::params).collect();
        p.extend(self.affine.params());
        p.extend(self.dense.params());
        p
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p: Vec<&mut Parameter> = self.trunk.iter_mut().flat_map(Conv::params_mut).collect();
        p.extend(self.affine.params_mut());
        p.extend(self.dense.params_mut());
        p
    }
}

/// Patch critic producing one unbounded score per 8-voxel patch.
#[derive(Clone, Debug)]
pub struct Discriminator {
    convs: [Conv; 3],
    head: Conv,
}

pub struct DiscVars {
    pub score: Var,
    pub tap: Var,
}

impl Discriminator {
    pub(crate) fn new<R: Rng + ?Sized>(rng: &mut R, name: &str, rank: usize) -> Self {
        Discriminator {
            convs: [
                Conv::new(rng, &format!("{name}.conv1"), rank, 1, 16, 4, 2, 1),
                Conv::new(rng, &format!("{name}.conv2"), rank, 16, 32, 4, 2, 1),
                Conv::new(rng, &format!("{name}.conv3"), rank, 32, 64, 4, 2, 1),
            ],
            head: Conv::new(rng, &format!("{name}.head"), rank, 64, 1, 3, 1, 1),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<DiscVars> {
        let shape = s.graph.shape(x);
        if shape[2..].iter().any(|&n| n < DISC_MIN_EXTENT) {
            return Err(Error::ShapeMismatch(format!(
                "discriminator needs spatial extent >= {DISC_MIN_EXTENT}, got {shape:?}"
            )));
        }
        let mut h = x;
        for c in &self.convs {
            h = c.plain_block(s, h, D)?;
        }
        let score = self.head.forward(s, h, D)?;
        Ok(DiscVars { score, tap: h })
    }

    pub(crate) fn params(&self) -> Vec<&Parameter> {
        self.convs.iter().chain([&self.head]).flat_map(Conv::params).collect()
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.convs.iter_mut().chain([&mut self.head]).flat_map(Conv::params_mut).collect()
    }
}
