use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_adv: f64,
    pub w_sim: f64,
    pub w_inv: f64,
    pub w_smooth: f64,
    pub w_latent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_adv: 1.0,
            w_sim: 10.0,
            w_inv: 400.0,
            w_smooth: 1.0,
            w_latent: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            w_adv: 0.0,
            w_sim: 0.0,
            w_inv: 0.0,
            w_smooth: 0.0,
            w_latent: 0.0,
        }
    }

    /// Weight of a report key; `adv_D` and `adv_G` share `w_adv`.
    pub fn get(&self, term: &str) -> Option<f64> {
        match term {
            "adv_D" | "adv_G" => Some(self.w_adv),
            "sim" => Some(self.w_sim),
            "inv" => Some(self.w_inv),
            "smooth" => Some(self.w_smooth),
            "latent" => Some(self.w_latent),
            _ => None,
        }
    }

    fn all(&self) -> [f64; 5] {
        [self.w_adv, self.w_sim, self.w_inv, self.w_smooth, self.w_latent]
    }

    pub fn validate(&self) -> Result<()> {
        if self.all().iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        if self.w_sim <= 0.0 && self.w_adv <= 0.0 {
            return Err(Error::InvalidArgument("one of w_sim, w_adv must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learn_rate: f64,
    /// Adam moment coefficients.
    pub betas: [f64; 2],
    pub seed: u64,
    pub warp_magnitude: [f64; 2],
    pub image_size: usize,
    pub weights: LossWeights,
    /// Seed of the initial weights when training starts from scratch.
    pub init_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 2,
            learn_rate: 5e-4,
            betas: [0.5, 0.999],
            seed: 0,
            warp_magnitude: [0.2, 0.5],
            image_size: 64,
            weights: LossWeights::default(),
            init_seed: 0,
        }
    }
}

impl TrainConfig {
    /// `steps = 0` is accepted and trains nothing.
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be >= 1".into()));
        }
        if !(self.learn_rate.is_finite() && self.learn_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learn_rate {} must be > 0", self.learn_rate)));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::InvalidArgument(format!("betas {:?} must lie in [0, 1)", self.betas)));
        }
        let [lo, hi] = self.warp_magnitude;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return Err(Error::InvalidArgument(format!("warp_magnitude [{lo}, {hi}] must satisfy 0 <= lo <= hi < 1")));
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(8) {
            return Err(Error::InvalidArgument(format!("image_size {} must be a positive multiple of 8", self.image_size)));
        }
        Ok(())
    }
}
