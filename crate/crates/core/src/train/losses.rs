//! Training objectives. Every generator-side term implements [`LossTerm`] and
//! is looked up by its report key.

use xreg_autograd::{AutogradError, Reduction, Var};

use crate::error::{Error, Result};
use crate::nets::{ForwardVars, RegistrationModel, Session, Side};
use crate::warp::{compose_vars, WarpVars};

/// Mean over all elements of `(x − target)²`.
pub fn mean_sq_to(s: &mut Session, x: Var, target: f64) -> Result<Var> {
    let n = s.graph.value(x).numel() as f64;
    let d = s.graph.add_scalar(x, -target)?;
    let sq = s.graph.reduce(d, Reduction::SumSq)?;
    Ok(s.graph.scale(sq, 1.0 / n)?)
}

/// Mean absolute difference.
pub fn l1(s: &mut Session, a: Var, b: Var) -> Result<Var> {
    let d = s.graph.sub(a, b)?;
    Ok(s.graph.reduce(d, Reduction::L1)?)
}

/// Inputs of the critic update, all graph constants.
pub struct CriticInputs {
    pub x_a: Var,
    pub x_b: Var,
    pub warped_a: Var,
    pub warped_b: Var,
    pub synth_a: Var,
    pub synth_b: Var,
}

/// Least-squares critic loss: `D^A` pushes `x_A` and `warped_B` toward 1 and
/// `synth_A` toward 0, `D^B` mirrors it. Mean of the six per-map terms.
pub fn discriminator_loss(s: &mut Session, model: &RegistrationModel, x: &CriticInputs) -> Result<Var> {
    let mut terms = Vec::with_capacity(6);
    for (side, real, warped, synth) in [
        (Side::A, x.x_a, x.warped_b, x.synth_a),
        (Side::B, x.x_b, x.warped_a, x.synth_b),
    ] {
        for (img, target) in [(real, 1.0), (warped, 1.0), (synth, 0.0)] {
            let score = model.discriminate(s, img, side)?.score;
            terms.push(mean_sq_to(s, score, target)?);
        }
    }
    let total = s.graph.sum_all(&terms)?;
    Ok(s.graph.scale(total, 1.0 / terms.len() as f64)?)
}

/// Least-squares generator loss: synthesized images scored toward 1, mean
/// over both critics.
pub fn generator_adversarial_loss(s: &mut Session, model: &RegistrationModel, f: &ForwardVars) -> Result<Var> {
    let sa = model.discriminate(s, f.synth_a, Side::A)?.score;
    let ta = mean_sq_to(s, sa, 1.0)?;
    let sb = model.discriminate(s, f.synth_b, Side::B)?.score;
    let tb = mean_sq_to(s, sb, 1.0)?;
    let t = s.graph.add(ta, tb)?;
    Ok(s.graph.scale(t, 0.5)?)
}

/// Synthesize, then warp: each synthesized image carries its source geometry
/// and must match the fixed image once warped.
pub fn similarity_loss(s: &mut Session, f: &ForwardVars) -> Result<Var> {
    let mb = f.phi_ab.apply(&mut s.graph, f.synth_b)?;
    let ab = l1(s, mb, f.x_b)?;
    let ma = f.phi_ba.apply(&mut s.graph, f.synth_a)?;
    let ba = l1(s, ma, f.x_a)?;
    Ok(s.graph.add(ab, ba)?)
}

fn mean_sq_norm(s: &mut Session, field: Var) -> Result<Var> {
    let shape = s.graph.shape(field);
    let voxels = (shape[0] * shape[2..].iter().product::<usize>()) as f64;
    let sq = s.graph.reduce(field, Reduction::SumSq)?;
    Ok(s.graph.scale(sq, 1.0 / voxels)?)
}

pub fn inverse_consistency_loss(s: &mut Session, ab: &WarpVars, ba: &WarpVars) -> Result<Var> {
    let c1 = compose_vars(&mut s.graph, ab, ba)?;
    let c2 = compose_vars(&mut s.graph, ba, ab)?;
    let t1 = mean_sq_norm(s, c1)?;
    let t2 = mean_sq_norm(s, c2)?;
    Ok(s.graph.add(t1, t2)?)
}

/// Per-voxel squared Frobenius norm of the forward-difference Jacobian of a
/// `[B, D, spatial]` field, averaged over voxels. Displacements are converted
/// to voxels first, so the penalty does not depend on the grid size.
pub fn field_roughness(s: &mut Session, field: Var) -> Result<Var> {
    let shape = s.graph.shape(field).to_vec();
    let mut terms = Vec::new();
    for c in 0..shape[1] {
        let comp = s.graph.narrow(field, 1, c, 1)?;
        let comp = s.graph.scale(comp, shape[2 + c] as f64 / 2.0)?;
        for axis in 2..shape.len() {
            let n = shape[axis];
            if n < 2 {
                continue;
            }
            let hi = s.graph.narrow(comp, axis, 1, n - 1)?;
            let lo = s.graph.narrow(comp, axis, 0, n - 1)?;
            let d = s.graph.sub(hi, lo)?;
            let positions = (shape[0] * shape[2..].iter().product::<usize>() / n * (n - 1)) as f64;
            let sq = s.graph.reduce(d, Reduction::SumSq)?;
            terms.push(s.graph.scale(sq, 1.0 / positions)?);
        }
    }
    if terms.is_empty() {
        let z = s.graph.constant(xreg_autograd::Tensor::scalar(0.0))?;
        return Ok(z);
    }
    Ok(s.graph.sum_all(&terms)?)
}

pub fn smoothness_loss(s: &mut Session, f: &ForwardVars) -> Result<Var> {
    let a = field_roughness(s, f.phi_ab.dense)?;
    let b = field_roughness(s, f.phi_ba.dense)?;
    Ok(s.graph.add(a, b)?)
}

/// A synthesized image must re-encode to its source's latent. Targets are
/// detached so the term shapes the synthesis path, not the target encoding.
pub fn latent_consistency_loss(s: &mut Session, model: &RegistrationModel, f: &ForwardVars) -> Result<Var> {
    let eb = model.encode(s, f.synth_b)?;
    let ta = s.graph.detach(f.latent_a)?;
    let la = l1(s, eb, ta)?;
    let ea = model.encode(s, f.synth_a)?;
    let tb = s.graph.detach(f.latent_b)?;
    let lb = l1(s, ea, tb)?;
    Ok(s.graph.add(la, lb)?)
}

pub struct LossContext<'a> {
    pub session: &'a mut Session,
    pub model: &'a RegistrationModel,
    pub forward: &'a ForwardVars,
}

pub trait LossTerm: Send + Sync {
    /// Report key, also the key into [`super::LossWeights::get`].
    fn name(&self) -> &'static str;
    fn evaluate(&self, ctx: &mut LossContext<'_>) -> Result<Var>;
}

macro_rules! term {
    ($ty:ident, $key:literal, |$ctx:ident| $body:expr) => {
        pub struct $ty;
        impl LossTerm for $ty {
            fn name(&self) -> &'static str {
                $key
            }
            fn evaluate(&self, $ctx: &mut LossContext<'_>) -> Result<Var> {
                $body
            }
        }
    };
}

term!(AdversarialTerm, "adv_G", |c| generator_adversarial_loss(c.session, c.model, c.forward));
term!(SimilarityTerm, "sim", |c| similarity_loss(c.session, c.forward));
term!(InverseConsistencyTerm, "inv", |c| inverse_consistency_loss(c.session, &c.forward.phi_ab, &c.forward.phi_ba));
term!(SmoothnessTerm, "smooth", |c| smoothness_loss(c.session, c.forward));
term!(LatentTerm, "latent", |c| latent_consistency_loss(c.session, c.model, c.forward));

/// Generator-side loss terms keyed by name.
pub struct LossRegistry {
    terms: Vec<Box<dyn LossTerm>>,
}

impl Default for LossRegistry {
    fn default() -> Self {
        let mut r = LossRegistry { terms: Vec::new() };
        r.register(Box::new(AdversarialTerm));
        r.register(Box::new(SimilarityTerm));
        r.register(Box::new(InverseConsistencyTerm));
        r.register(Box::new(SmoothnessTerm));
        r.register(Box::new(LatentTerm));
        r
    }
}

impl LossRegistry {
    /// Adds a term, replacing any existing term with the same name.
    pub fn register(&mut self, term: Box<dyn LossTerm>) {
        self.terms.retain(|t| t.name() != term.name());
        self.terms.push(term);
    }

    pub fn get(&self, name: &str) -> Option<&dyn LossTerm> {
        self.terms.iter().find(|t| t.name() == name).map(|t| t.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.terms.iter().map(|t| t.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn LossTerm> {
        self.terms.iter().map(|t| t.as_ref())
    }
}

/// Attribute a numeric failure to the named term.
pub(crate) fn attribute<T>(name: &str, r: Result<T>) -> Result<T> {
    match r {
        Err(Error::Autograd(AutogradError::NonFinite { .. })) => Err(Error::NonFiniteLoss { term: name.to_string() }),
        other => other,
    }
}

/// [`attribute`], plus a finiteness check of the scalar itself.
pub(crate) fn checked(name: &str, s: &Session, r: Result<Var>) -> Result<Var> {
    let v = attribute(name, r)?;
    if s.graph.value(v).is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { term: name.to_string() })
    }
}
