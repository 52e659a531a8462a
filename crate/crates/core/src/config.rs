use serde::{Deserialize, Serialize};

use crate::error::{ImcError, Result};
use crate::nn::Activation;

/// How expert means are parameterized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ExpertKind {
    /// Affine map fitted in closed form.
    Linear,
    /// One MLP per component.
    SingleHead { hidden: Vec<usize> },
    /// One shared MLP with a `d_a`-wide output head per component.
    MultiHead { hidden: Vec<usize> },
}

/// Mini-batch size for the curriculum/expert updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchSize {
    Full,
    Rows(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Curriculum pacing. Small values concentrate each curriculum on the
    /// samples its expert fits best; large values approach maximum likelihood.
    pub eta: f64,
    pub n_components: usize,
    pub sigma_sq: f64,
    pub expert_kind: ExpertKind,
    pub activation: Activation,
    pub expert_lr: f64,
    pub expert_steps_per_m: usize,
    pub gating_hidden: Vec<usize>,
    pub gating_lr: f64,
    pub gating_epochs: usize,
    pub max_iters: usize,
    /// Stop once `|ΔL| <= epsilon * max(1, |L|)`.
    #[serde(with = "crate::model::float_repr")]
    pub epsilon: f64,
    pub batch_size: BatchSize,
    pub ridge_lambda: f64,
    /// Scale of the per-component noise added to initial expert parameters.
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 1.0,
            n_components: 50,
            sigma_sq: 1.0,
            expert_kind: ExpertKind::Linear,
            activation: Activation::Tanh,
            expert_lr: 5e-4,
            expert_steps_per_m: 20,
            gating_hidden: vec![32, 32],
            gating_lr: 1e-2,
            gating_epochs: 200,
            max_iters: 100,
            epsilon: 1e-6,
            batch_size: BatchSize::Full,
            ridge_lambda: 1e-8,
            init_noise: 1e-2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(ImcError::InvalidInput(msg.to_string()));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be a positive finite number");
        }
        if self.n_components == 0 {
            return bad("n_components must be positive");
        }
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return bad("sigma_sq must be positive");
        }
        if !(self.expert_lr > 0.0) || !(self.gating_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.expert_steps_per_m == 0 || self.max_iters == 0 {
            return bad("expert_steps_per_m and max_iters must be positive");
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return bad("epsilon must be non-negative");
        }
        if self.ridge_lambda.is_nan() || self.ridge_lambda < 0.0 {
            return bad("ridge_lambda must be non-negative");
        }
        if let BatchSize::Rows(0) = self.batch_size {
            return bad("batch_size must be positive");
        }
        Ok(())
    }

    pub(crate) fn stop_threshold(&self, l_prev: f64) -> f64 {
        let scale = if l_prev.is_finite() { l_prev.abs().max(1.0) } else { 1.0 };
        self.epsilon * scale
    }
}
