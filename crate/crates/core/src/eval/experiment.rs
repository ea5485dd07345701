use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xreg_autograd::Tensor;

use super::labels::{dice, warp_labels, LabelVolume};
use super::metrics::{folding_fraction, inverse_consistency_error, Consistency};
use crate::error::{Error, Result};
use crate::nets::RegistrationModel;
use crate::warp::{apply_warp, random_perturbation};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiceStats {
    pub dice_before: f64,
    pub dice_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub structures: BTreeMap<String, DiceStats>,
    pub consistency: Consistency,
    pub folding: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub structures: BTreeMap<String, DiceStats>,
    pub consistency: Consistency,
    pub folding: f64,
    /// Voxels per structure in the fixed-frame labels, summed over pairs.
    pub voxel_counts: BTreeMap<String, usize>,
    pub repeats: Vec<RepeatRecord>,
}

impl EvalReport {
    /// Aggregate per-repeat records; every summary value is a plain mean.
    pub fn from_repeats(repeats: Vec<RepeatRecord>, voxel_counts: BTreeMap<String, usize>) -> Result<Self> {
        if repeats.is_empty() {
            return Err(Error::InvalidArgument("a report needs at least one repeat".into()));
        }
        let n = repeats.len() as f64;
        let mut structures: BTreeMap<String, DiceStats> = BTreeMap::new();
        for r in &repeats {
            for (name, d) in &r.structures {
                let e = structures.entry(name.clone()).or_default();
                e.dice_before += d.dice_before / n;
                e.dice_after += d.dice_after / n;
            }
        }
        let consistency = Consistency {
            mean: repeats.iter().map(|r| r.consistency.mean).sum::<f64>() / n,
            max: repeats.iter().map(|r| r.consistency.max).sum::<f64>() / n,
        };
        let folding = repeats.iter().map(|r| r.folding).sum::<f64>() / n;
        Ok(EvalReport {
            structures,
            consistency,
            folding,
            voxel_counts,
            repeats,
        })
    }

    /// Pool the repeats of several reports, e.g. one per test pair.
    pub fn merge(reports: Vec<EvalReport>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        let mut repeats = Vec::new();
        for r in reports {
            for (k, v) in r.voxel_counts {
                *counts.entry(k).or_insert(0) += v;
            }
            repeats.extend(r.repeats);
        }
        Self::from_repeats(repeats, counts)
    }

    /// Name of the structure with the most voxels.
    pub fn largest_structure(&self) -> Option<&str> {
        self.voxel_counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(k, _)| k.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A co-registered evaluation pair; `labels` are valid in both frames.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub a: Tensor,
    pub b: Tensor,
    pub labels: LabelVolume,
}

/// Perturb A and its labels `repeats` times, register back to B, and score.
/// Repeat `r` draws from stream `r` of a generator seeded with `seed`.
pub fn run_registration_experiment(
    model: &RegistrationModel,
    pair: &EvalPair,
    repeats: usize,
    magnitude: [f64; 2],
    seed: u64,
) -> Result<EvalReport> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let dims = pair.labels.dims().to_vec();
    if pair.a.shape()[2..] != dims[..] || pair.a.shape() != pair.b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "images {:?} / {:?} with labels {dims:?}",
            pair.a.shape(),
            pair.b.shape()
        )));
    }
    let names: Vec<(u16, String)> = pair
        .labels
        .legend()
        .iter()
        .filter(|(&l, _)| l != 0)
        .map(|(&l, n)| (l, n.clone()))
        .collect();
    let mut records = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let w = random_perturbation(&mut rng, &dims, magnitude)?;
        let moving = apply_warp(&pair.a, &w)?;
        let moving_labels = warp_labels(&pair.labels, &w)?;
        let out = model.forward_pass(&moving, &pair.b)?;
        let registered = warp_labels(&moving_labels, &out.phi_ab)?;
        let mut structures = BTreeMap::new();
        for (l, name) in &names {
            structures.insert(
                name.clone(),
                DiceStats {
                    dice_before: dice(&moving_labels, &pair.labels, *l)?,
                    dice_after: dice(&registered, &pair.labels, *l)?,
                },
            );
        }
        let folding = 0.5 * (folding_fraction(&out.phi_ab)? + folding_fraction(&out.phi_ba)?);
        records.push(RepeatRecord {
            structures,
            consistency: inverse_consistency_error(&out.phi_ab, &out.phi_ba)?,
            folding,
        });
    }
    let counts = names
        .iter()
        .map(|(l, n)| (n.clone(), pair.labels.count(*l)))
        .collect();
    EvalReport::from_repeats(records, counts)
}
