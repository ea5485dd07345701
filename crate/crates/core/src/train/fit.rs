use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xreg_autograd::Tensor;

use super::config::TrainConfig;
use super::losses::LossRegistry;
use super::step::{train_step, Optimizers, StepReport, REPORT_KEYS};
use crate::error::{Error, Result};
use crate::nets::RegistrationModel;
use crate::warp::{apply_warp, random_perturbation};

/// A co-registered pair, each `[1, 1, spatial]` and intensity-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub a: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub losses: StepReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    /// `step` followed by every report key; values use the shortest
    /// representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = format!("step,{}\n", REPORT_KEYS.join(","));
        for e in &self.entries {
            out.push_str(&e.step.to_string());
            for k in REPORT_KEYS {
                out.push(',');
                out.push_str(&e.losses.get(k).copied().unwrap_or(f64::NAN).to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Mean over the `window` entries ending at `step` of the summed `keys`.
    pub fn moving_average(&self, keys: &[&str], window: usize, step: usize) -> Option<f64> {
        let end = self.entries.iter().position(|e| e.step == step)?;
        let start = (end + 1).checked_sub(window)?;
        let slice = &self.entries[start..=end];
        let sum: f64 = slice
            .iter()
            .map(|e| keys.iter().map(|k| e.losses.get(*k).copied().unwrap_or(f64::NAN)).sum::<f64>())
            .sum();
        Some(sum / slice.len() as f64)
    }
}

/// Perturb one pair with independent random warps on both images.
pub fn perturb_pair<R: Rng + ?Sized>(rng: &mut R, pair: &TrainingPair, magnitude: [f64; 2]) -> Result<TrainingPair> {
    let dims = pair.a.shape()[2..].to_vec();
    let wa = random_perturbation(rng, &dims, magnitude)?;
    let wb = random_perturbation(rng, &dims, magnitude)?;
    Ok(TrainingPair {
        a: apply_warp(&pair.a, &wa)?,
        b: apply_warp(&pair.b, &wb)?,
    })
}

pub fn fit(
    model: &mut RegistrationModel,
    opts: &mut Optimizers,
    data: &[TrainingPair],
    config: &TrainConfig,
) -> Result<TrainingLog> {
    fit_with(model, opts, data, config, &LossRegistry::default(), |_, _, _| Ok(()))
}

/// [`fit`] with an explicit loss registry and a per-step observer; an
/// observer error stops training.
pub fn fit_with(
    model: &mut RegistrationModel,
    opts: &mut Optimizers,
    data: &[TrainingPair],
    config: &TrainConfig,
    registry: &LossRegistry,
    mut observer: impl FnMut(&LogEntry, &RegistrationModel, &Optimizers) -> Result<()>,
) -> Result<TrainingLog> {
    config.validate()?;
    let first = data.first().ok_or_else(|| Error::Dataset("training set is empty".into()))?;
    let shape = first.a.shape().to_vec();
    if data.iter().any(|p| p.a.shape() != shape.as_slice() || p.b.shape() != shape.as_slice()) {
        return Err(Error::ShapeMismatch("training pairs differ in shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = TrainingLog::default();
    for step in 1..=config.steps {
        let mut a = Vec::with_capacity(config.batch);
        let mut b = Vec::with_capacity(config.batch);
        for _ in 0..config.batch {
            let pair = &data[rng.random_range(0..data.len())];
            let p = perturb_pair(&mut rng, pair, config.warp_magnitude)?;
            a.push(p.a);
            b.push(p.b);
        }
        let (xa, xb) = (Tensor::stack_batch(&a)?, Tensor::stack_batch(&b)?);
        let losses = train_step(model, opts, &xa, &xb, &config.weights, registry)?;
        let entry = LogEntry { step, losses };
        observer(&entry, model, opts)?;
        log.entries.push(entry);
    }
    Ok(log)
}
