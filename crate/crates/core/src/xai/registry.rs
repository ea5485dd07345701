use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xreg_autograd::Tensor;

use super::cam::{AttentionMap, TapSite, TargetKind, TargetSpec};
use super::sites::{discriminator_attention, encoder_attention, stn_attention, DiscVariants};
use crate::error::{Error, Result};
use crate::nets::{Direction, RegistrationModel, Side};
use crate::warp::apply_warp;

/// Everything a site needs to produce its maps.
pub struct ExplainRequest<'a> {
    pub model: &'a RegistrationModel,
    /// Modality A image.
    pub moving: &'a Tensor,
    /// Modality B image.
    pub fixed: &'a Tensor,
    pub target: TargetKind,
    /// Critic side for discriminator sites.
    pub side: Side,
    /// Seeds the critic input perturbations.
    pub seed: u64,
    pub magnitude: [f64; 2],
}

/// A map with the image it should be drawn over.
#[derive(Clone, Debug)]
pub struct NamedMap {
    pub name: String,
    pub map: AttentionMap,
    pub underlay: Tensor,
}

pub trait AttentionSite {
    fn name(&self) -> &'static str;
    /// Tap layers the site reads.
    fn taps(&self, side: Side) -> Vec<TapSite>;
    fn explain(&self, req: &ExplainRequest<'_>) -> Result<Vec<NamedMap>>;

    fn check(&self, req: &ExplainRequest<'_>) -> Result<()> {
        self.taps(req.side)
            .into_iter()
            .try_for_each(|t| TargetSpec::new(req.target, Direction::AtoB).check(t))
    }
}

pub struct EncoderSite;
pub struct StnSite;
pub struct DiscSite;

impl AttentionSite for EncoderSite {
    fn name(&self) -> &'static str {
        "encoder"
    }

    fn taps(&self, _: Side) -> Vec<TapSite> {
        vec![TapSite::Encoder]
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<Vec<NamedMap>> {
        self.check(req)?;
        let (a, b) = encoder_attention(req.model, req.moving, req.fixed, req.target)?;
        Ok(vec![
            NamedMap {
                name: "encoder_A".into(),
                map: a,
                underlay: req.moving.clone(),
            },
            NamedMap {
                name: "encoder_B".into(),
                map: b,
                underlay: req.fixed.clone(),
            },
        ])
    }
}

impl AttentionSite for StnSite {
    fn name(&self) -> &'static str {
        "stn"
    }

    fn taps(&self, _: Side) -> Vec<TapSite> {
        vec![TapSite::StnAtoB, TapSite::StnBtoA]
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<Vec<NamedMap>> {
        self.check(req)?;
        let (ab, ba) = stn_attention(req.model, req.moving, req.fixed, req.target)?;
        Ok(vec![
            NamedMap {
                name: "stn_AtoB".into(),
                map: ab,
                underlay: req.fixed.clone(),
            },
            NamedMap {
                name: "stn_BtoA".into(),
                map: ba,
                underlay: req.fixed.clone(),
            },
        ])
    }
}

impl AttentionSite for DiscSite {
    fn name(&self) -> &'static str {
        "disc"
    }

    fn taps(&self, side: Side) -> Vec<TapSite> {
        vec![match side {
            Side::A => TapSite::DiscA,
            Side::B => TapSite::DiscB,
        }]
    }

    fn explain(&self, req: &ExplainRequest<'_>) -> Result<Vec<NamedMap>> {
        self.check(req)?;
        let out = req.model.forward_pass(req.moving, req.fixed)?;
        let (real, synth, tag) = match req.side {
            Side::A => (req.moving, &out.synth_a, "A"),
            Side::B => (req.fixed, &out.synth_b, "B"),
        };
        let dims = real.shape()[2..].to_vec();
        let variants = DiscVariants::random(&mut ChaCha8Rng::seed_from_u64(req.seed), &dims, req.magnitude)?;
        let maps = discriminator_attention(req.model, real, synth, req.side, &variants)?;
        maps.named()
            .into_iter()
            .map(|(name, map)| {
                let source = if name.starts_with("real") { real } else { synth };
                let warp = if name.ends_with("nonrigid") { &variants.nonrigid } else { &variants.rigid };
                Ok(NamedMap {
                    name: format!("disc_{tag}_{name}"),
                    map: map.clone(),
                    underlay: apply_warp(source, warp)?,
                })
            })
            .collect()
    }
}

/// Sites by name.
pub struct SiteRegistry {
    sites: Vec<Box<dyn AttentionSite>>,
}

impl Default for SiteRegistry {
    fn default() -> Self {
        SiteRegistry {
            sites: vec![Box::new(EncoderSite), Box::new(StnSite), Box::new(DiscSite)],
        }
    }
}

impl SiteRegistry {
    pub fn register(&mut self, site: Box<dyn AttentionSite>) {
        self.sites.retain(|s| s.name() != site.name());
        self.sites.push(site);
    }

    pub fn get(&self, name: &str) -> Result<&dyn AttentionSite> {
        self.sites
            .iter()
            .find(|s| s.name() == name)
            .map(|s| s.as_ref())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown attention site `{name}`, expected one of {:?}", self.names())))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.sites.iter().map(|s| s.name()).collect()
    }
}
