//! Group-relative advantages and the per-sample terms of the clipped
//! policy objective.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub normalize_std: bool,
    pub std_floor: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            clip_eps: 0.2,
            kl_beta: 0.001,
            normalize_std: true,
            std_floor: 1e-8,
        }
    }
}

impl GrpoConfig {
    // negated so NaN fails too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), GrpoError> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(GrpoError::BadConfig(format!("clip_eps must be in (0, 1), got {}", self.clip_eps)));
        }
        if !(self.kl_beta >= 0.0) {
            return Err(GrpoError::BadConfig(format!("kl_beta must be >= 0, got {}", self.kl_beta)));
        }
        if !(self.std_floor > 0.0) {
            return Err(GrpoError::BadConfig(format!("std_floor must be > 0, got {}", self.std_floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GrpoError {
    #[error("advantage requested for an empty group")]
    EmptyGroup,
    #[error("group `{0}` has lists of different lengths")]
    LengthMismatch(String),
    #[error("non-finite reward at position {0}")]
    NonFinite(usize),
    #[error("{0}")]
    BadConfig(String),
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `A_i = r_i - mean(r)`, divided by `max(population std, std_floor)` when
/// `normalize_std` is set.
pub fn group_advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>, GrpoError> {
    if rewards.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite(i));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let m = mean(rewards);
    let mut centred: Vec<f64> = rewards.iter().map(|r| r - m).collect();
    // a second pass removes the rounding residue of the first mean
    let residue = mean(&centred);
    for c in &mut centred {
        *c -= residue;
    }
    if cfg.normalize_std {
        let var = centred.iter().map(|c| c * c).sum::<f64>() / centred.len() as f64;
        let sd = var.sqrt().max(cfg.std_floor);
        for c in &mut centred {
            *c /= sd;
        }
    }
    Ok(centred)
}

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Non-negative divergence estimate `exp(d) - d - 1`, `d = logp_ref - logp_new`.
pub fn kl_term(logp_new: f64, logp_ref: f64) -> f64 {
    let d = logp_ref - logp_new;
    // exp_m1 keeps precision near d = 0
    d.exp_m1() - d
}

/// Averages a sequence-level quantity over its token count, for trainers
/// that use token-mean aggregation.
pub fn token_mean(sum: f64, n_tokens: usize) -> Option<f64> {
    (n_tokens > 0).then(|| sum / n_tokens as f64)
}

/// The G rollouts generated for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_new: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_old: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_ref: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantages: Option<Vec<f64>>,
}

impl RolloutGroup {
    pub fn new(prompt_id: impl Into<String>, rewards: Vec<f64>) -> Self {
        RolloutGroup {
            prompt_id: prompt_id.into(),
            rewards,
            logp_new: None,
            logp_old: None,
            logp_ref: None,
            advantages: None,
        }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        let g = self.rewards.len();
        if g == 0 {
            return Err(GrpoError::EmptyGroup);
        }
        let lists = [&self.logp_new, &self.logp_old, &self.logp_ref, &self.advantages];
        if lists.iter().any(|l| l.as_ref().is_some_and(|v| v.len() != g)) {
            return Err(GrpoError::LengthMismatch(self.prompt_id.clone()));
        }
        Ok(())
    }

    /// Fills in `advantages` from `rewards`.
    pub fn compute_advantages(&mut self, cfg: &GrpoConfig) -> Result<&[f64], GrpoError> {
        self.validate()?;
        self.advantages = Some(group_advantages(&self.rewards, cfg)?);
        Ok(self.advantages.as_deref().unwrap_or_default())
    }

    /// Per-group objective `mean_i [surrogate_i - beta * kl_i]` using
    /// sequence-level log-probabilities. `None` when any needed list is absent.
    pub fn objective(&self, cfg: &GrpoConfig) -> Result<Option<f64>, GrpoError> {
        self.validate()?;
        let (Some(new), Some(old), Some(reference)) = (&self.logp_new, &self.logp_old, &self.logp_ref) else {
            return Ok(None);
        };
        let adv = match &self.advantages {
            Some(a) => a.clone(),
            None => group_advantages(&self.rewards, cfg)?,
        };
        let terms: Vec<f64> = (0..self.rewards.len())
            .map(|i| {
                let ratio = (new[i] - old[i]).exp();
                clipped_surrogate(ratio, adv[i], cfg.clip_eps) - cfg.kl_beta * kl_term(new[i], reference[i])
            })
            .collect();
        Ok(Some(mean(&terms)))
    }
}
