use std::fmt;

use serde::{Deserialize, Serialize};
use xreg_autograd::{Graph, Reduction, Tensor, Var};

use crate::error::{Error, Result};
use crate::nets::{Direction, ForwardVars, Session};
use crate::warp::WarpVars;

/// Layers instrumented for attention: the last convolution of each network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TapSite {
    Encoder,
    StnAtoB,
    StnBtoA,
    DiscA,
    DiscB,
}

impl TapSite {
    pub fn is_discriminator(self) -> bool {
        matches!(self, TapSite::DiscA | TapSite::DiscB)
    }

    pub fn name(self) -> &'static str {
        match self {
            TapSite::Encoder => "encoder",
            TapSite::StnAtoB => "stn_AtoB",
            TapSite::StnBtoA => "stn_BtoA",
            TapSite::DiscA => "disc_A",
            TapSite::DiscB => "disc_B",
        }
    }
}

impl fmt::Display for TapSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    FieldMagnitude,
    FieldAffinePart,
    FieldDensePart,
    DiscScore,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::FieldMagnitude => "magnitude",
            TargetKind::FieldAffinePart => "affine",
            TargetKind::FieldDensePart => "dense",
            TargetKind::DiscScore => "score",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            TargetKind::FieldMagnitude,
            TargetKind::FieldAffinePart,
            TargetKind::FieldDensePart,
            TargetKind::DiscScore,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    pub fn is_field(self) -> bool {
        self != TargetKind::DiscScore
    }
}

/// What scalar an attention map explains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub kind: TargetKind,
    /// Which predicted warp a field target reads; ignored for scores.
    pub direction: Direction,
}

impl TargetSpec {
    pub fn new(kind: TargetKind, direction: Direction) -> Self {
        TargetSpec { kind, direction }
    }

    /// Field targets belong to encoder and STN sites, scores to critics.
    pub fn check(&self, site: TapSite) -> Result<()> {
        if self.kind.is_field() == site.is_discriminator() {
            return Err(Error::IncompatibleTarget {
                site: site.name().into(),
                target: self.kind.name().into(),
            });
        }
        Ok(())
    }
}

/// A tap layer's activation and, once backward has run, its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTap {
    pub site: TapSite,
    pub activation: Tensor,
    pub gradient: Option<Tensor>,
}

impl ActivationTap {
    /// Read `var` from the graph. If backward has run but never reached the
    /// tap, the target does not depend on it and the gradient is zero.
    pub fn capture(g: &Graph<f32>, site: TapSite, var: Var) -> Self {
        let activation = g.value(var).clone();
        let gradient = if g.backward_done() {
            Some(g.grad(var).unwrap_or_else(|| Tensor::zeros(activation.shape())))
        } else {
            None
        };
        ActivationTap {
            site,
            activation,
            gradient,
        }
    }

    /// Per batch item, the spatial mean of each gradient channel.
    pub fn channel_weights(&self) -> Result<Vec<Vec<f64>>> {
        let grad = self.gradient.as_ref().ok_or(Error::MissingGradient)?;
        let s = grad.shape();
        let (b, k) = (s[0], s[1]);
        let plane: usize = s[2..].iter().product();
        Ok((0..b)
            .map(|bi| {
                (0..k)
                    .map(|ki| {
                        let c = &grad.data()[(bi * k + ki) * plane..(bi * k + ki + 1) * plane];
                        c.iter().map(|&v| v as f64).sum::<f64>() / plane as f64
                    })
                    .collect()
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    Raw,
    MinMax,
}

/// A `[B, 1, spatial]` heatmap at input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub values: Tensor,
    pub site: TapSite,
    pub target: TargetKind,
    pub normalization: Normalization,
}

impl AttentionMap {
    /// Rescale each batch item to `[0, 1]`; an all-zero item stays zero.
    pub fn normalized(&self) -> AttentionMap {
        let b = self.values.shape()[0];
        let plane = self.values.numel() / b.max(1);
        let mut v = self.values.clone();
        for item in v.data_mut().chunks_mut(plane.max(1)) {
            let (lo, hi) = item.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
            if hi > lo {
                item.iter_mut().for_each(|x| *x = (*x - lo) / (hi - lo));
            } else {
                item.fill(0.0);
            }
        }
        AttentionMap {
            values: v,
            normalization: Normalization::MinMax,
            ..self.clone()
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.values.shape()[2..]
    }
}

/// Gradient-weighted activation map, rectified and upsampled to `input_dims`.
pub fn gradcam(tap: &ActivationTap, target: TargetKind, input_dims: &[usize]) -> Result<AttentionMap> {
    TargetSpec::new(target, Direction::AtoB).check(tap.site)?;
    let alpha = tap.channel_weights()?;
    let s = tap.activation.shape();
    let (b, k) = (s[0], s[1]);
    let tap_dims = &s[2..];
    let plane: usize = tap_dims.iter().product();
    if tap_dims.len() != input_dims.len() {
        return Err(Error::ShapeMismatch(format!("tap {tap_dims:?} vs input {input_dims:?}")));
    }
    let factor = input_dims[0] / tap_dims[0];
    if factor == 0 || tap_dims.iter().zip(input_dims).any(|(&t, &i)| t * factor != i) {
        return Err(Error::ShapeMismatch(format!(
            "tap {tap_dims:?} is not a uniform downsampling of {input_dims:?}"
        )));
    }
    let act = tap.activation.data();
    let mut raw = vec![0.0f32; b * plane];
    for bi in 0..b {
        for p in 0..plane {
            let v: f64 = (0..k).map(|ki| alpha[bi][ki] * act[(bi * k + ki) * plane + p] as f64).sum();
            raw[bi * plane + p] = v.max(0.0) as f32;
        }
    }
    let mut shape = vec![b, 1];
    shape.extend_from_slice(tap_dims);
    let raw = Tensor::new(shape, raw)?;
    let values = if factor == 1 {
        raw
    } else {
        let mut g = Graph::<f32>::new();
        let x = g.constant(raw)?;
        let up = g.upsample_linear(x, factor)?;
        g.value(up).clone()
    };
    Ok(AttentionMap {
        values,
        site: tap.site,
        target,
        normalization: Normalization::Raw,
    })
}

/// Sum of squares of one factor of a predicted warp, or of its total
/// displacement.
pub fn field_target(s: &mut Session, phi: &WarpVars, kind: TargetKind) -> Result<Var> {
    let g = &mut s.graph;
    let field = match kind {
        TargetKind::FieldMagnitude => phi.displacement(g)?,
        TargetKind::FieldAffinePart => phi.affine_displacement(g)?,
        TargetKind::FieldDensePart => phi.dense,
        TargetKind::DiscScore => {
            return Err(Error::InvalidArgument("a score is not a field target".into()));
        }
    };
    Ok(g.reduce(field, Reduction::SumSq)?)
}

pub fn transform_target(s: &mut Session, f: &ForwardVars, spec: TargetSpec) -> Result<Var> {
    field_target(s, f.warp(spec.direction), spec.kind)
}

/// Normalized cross-correlation of two equally shaped maps; 0 if either is flat.
pub fn ncc(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("ncc {:?} vs {:?}", a.shape(), b.shape())));
    }
    let n = a.numel() as f64;
    let ma = a.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let mb = b.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (x, y) = (x as f64 - ma, y as f64 - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    Ok(if saa > 0.0 && sbb > 0.0 { sab / (saa * sbb).sqrt() } else { 0.0 })
}
