use std::collections::BTreeMap;

use xreg_autograd::{Adam, Tensor};

use super::config::{LossWeights, TrainConfig};
use super::losses::{attribute, checked, discriminator_loss, CriticInputs, LossContext, LossRegistry};
use crate::error::Result;
use crate::nets::{ForwardVars, ParamGroup, RegistrationModel, Session, Trainable};

/// Loss values of one step by report key.
pub type StepReport = BTreeMap<String, f64>;

/// Report keys of a training step, in log-column order.
pub const REPORT_KEYS: [&str; 6] = ["adv_D", "adv_G", "sim", "inv", "smooth", "latent"];

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub generator: Adam,
    pub discriminator: Adam,
}

impl Optimizers {
    pub fn new(config: &TrainConfig) -> Self {
        let [b1, b2] = config.betas;
        Optimizers {
            generator: Adam::new(config.learn_rate, b1, b2),
            discriminator: Adam::new(config.learn_rate, b1, b2),
        }
    }
}

/// A recorded forward pass whose generator parameters receive gradients.
pub struct GeneratorPass {
    pub session: Session,
    pub forward: ForwardVars,
}

/// Image values the critics see, detached from any generator graph.
#[derive(Clone, Debug)]
pub struct CriticImages {
    pub x_a: Tensor,
    pub x_b: Tensor,
    pub warped_a: Tensor,
    pub warped_b: Tensor,
    pub synth_a: Tensor,
    pub synth_b: Tensor,
}

impl GeneratorPass {
    pub fn new(model: &RegistrationModel, x_a: &Tensor, x_b: &Tensor) -> Result<Self> {
        let mut session = Session::new(Trainable::Only(ParamGroup::Generator));
        let (a, b) = (session.input(x_a.clone())?, session.input(x_b.clone())?);
        let forward = attribute("forward", model.forward(&mut session, a, b))?;
        Ok(GeneratorPass { session, forward })
    }

    pub fn critic_images(&self) -> CriticImages {
        let v = |x| self.session.graph.value(x).clone();
        let f = &self.forward;
        CriticImages {
            x_a: v(f.x_a),
            x_b: v(f.x_b),
            warped_a: v(f.warped_a),
            warped_b: v(f.warped_b),
            synth_a: v(f.synth_a),
            synth_b: v(f.synth_b),
        }
    }
}

/// Phase one: update both critics on detached images. Returns `adv_D`. The
/// update is scaled by `w_adv`, so a zero weight leaves the critics untouched.
pub fn discriminator_phase(
    model: &mut RegistrationModel,
    opt: &mut Adam,
    images: &CriticImages,
    weights: &LossWeights,
) -> Result<f64> {
    let mut s = Session::new(Trainable::Only(ParamGroup::Discriminator));
    let c = |s: &mut Session, t: &Tensor| s.input(t.clone());
    let inputs = CriticInputs {
        x_a: c(&mut s, &images.x_a)?,
        x_b: c(&mut s, &images.x_b)?,
        warped_a: c(&mut s, &images.warped_a)?,
        warped_b: c(&mut s, &images.warped_b)?,
        synth_a: c(&mut s, &images.synth_a)?,
        synth_b: c(&mut s, &images.synth_b)?,
    };
    let r = discriminator_loss(&mut s, model, &inputs);
    let loss = checked("adv_D", &s, r)?;
    let value = s.graph.value(loss).item()? as f64;
    if weights.w_adv > 0.0 {
        let scaled = s.graph.scale(loss, weights.w_adv)?;
        s.graph.backward(scaled)?;
        let grads = s.gradients();
        opt.step(model.group_parameters_mut(ParamGroup::Discriminator), &grads);
    }
    Ok(value)
}

/// Phase two: evaluate every registered term on the pass, update the
/// generator on the weighted sum. Critic parameters enter as constants.
pub fn generator_phase(
    model: &mut RegistrationModel,
    opt: &mut Adam,
    pass: GeneratorPass,
    weights: &LossWeights,
    registry: &LossRegistry,
) -> Result<StepReport> {
    let GeneratorPass { mut session, forward } = pass;
    let mut report = StepReport::new();
    let mut weighted = Vec::new();
    {
        let model_ref: &RegistrationModel = model;
        for term in registry.iter() {
            let mut ctx = LossContext {
                session: &mut session,
                model: model_ref,
                forward: &forward,
            };
            let r = term.evaluate(&mut ctx);
            let v = checked(term.name(), &session, r)?;
            report.insert(term.name().to_string(), session.graph.value(v).item()? as f64);
            let w = weights.get(term.name()).unwrap_or(0.0);
            if w > 0.0 {
                weighted.push(session.graph.scale(v, w)?);
            }
        }
    }
    if !weighted.is_empty() {
        let total = session.graph.sum_all(&weighted)?;
        session.graph.backward(total)?;
        let grads = session.gradients();
        opt.step(model.group_parameters_mut(ParamGroup::Generator), &grads);
    }
    Ok(report)
}

/// One adversarial step: critics first on the current generator's outputs,
/// then the generator against the updated critics.
pub fn train_step(
    model: &mut RegistrationModel,
    opts: &mut Optimizers,
    x_a: &Tensor,
    x_b: &Tensor,
    weights: &LossWeights,
    registry: &LossRegistry,
) -> Result<StepReport> {
    let pass = GeneratorPass::new(model, x_a, x_b)?;
    let adv_d = discriminator_phase(model, &mut opts.discriminator, &pass.critic_images(), weights)?;
    let mut report = generator_phase(model, &mut opts.generator, pass, weights, registry)?;
    report.insert("adv_D".to_string(), adv_d);
    Ok(report)
}
