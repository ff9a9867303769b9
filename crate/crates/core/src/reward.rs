//! Composite critique reward.
//!
//! ```text
//! R_total = R_format + 2 * R_out + (gamma_s + gamma_d) * R_rubric
//!
//! gamma_s = 2 * R_rubric   if R_out = 1
//!         = R_cons         if R_out = 0
//!         = 0              if the judge produced no grades
//! R_cons  = +1 if the rubric flags an error and the correction verifies
//!           -1 if the rubric flags an error and the correction fails
//!            0 otherwise
//! gamma_d = 1 if the response has more than five rubric steps, else 0
//! ```
//!
//! The ablation variants switch parts of this off: `Ex` keeps only the format
//! and outcome terms, `ExPr` adds the process term without the consistency
//! branch, and `ExPrVc` is the full reward. A malformed response scores 0.

use serde::{Deserialize, Serialize};

use crate::critique::CritiqueResponse;
use crate::dataset::EvalSample;
use crate::judge::{compute_r_rubric, judgments_flag_error, StepJudgment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    Ex,
    ExPr,
    #[default]
    ExPrVc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Coefficients {
    Static,
    #[default]
    StaticDynamic,
}

/// Where `R_out` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeSource {
    /// Verdict tag agrees with the label.
    #[default]
    ResultTag,
    /// "No step flags an error" agrees with the label.
    RubricFlags,
    /// `I(R_rubric < 1) XOR y` with `y = 1` meaning the SQL is incorrect.
    LiteralXor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RewardMode {
    pub variant: Variant,
    pub coefficients: Coefficients,
    pub outcome_source: OutcomeSource,
}

impl RewardMode {
    pub fn new(variant: Variant, coefficients: Coefficients, outcome_source: OutcomeSource) -> Self {
        RewardMode { variant, coefficients, outcome_source }.normalized()
    }

    /// `Ex` always reads the outcome from the verdict tag.
    pub fn normalized(mut self) -> Self {
        if self.variant == Variant::Ex {
            self.outcome_source = OutcomeSource::ResultTag;
        }
        self
    }

    /// Every distinct mode after normalization.
    pub fn all() -> Vec<RewardMode> {
        let mut out = Vec::new();
        for v in [Variant::Ex, Variant::ExPr, Variant::ExPrVc] {
            for c in [Coefficients::Static, Coefficients::StaticDynamic] {
                for o in [OutcomeSource::ResultTag, OutcomeSource::RubricFlags, OutcomeSource::LiteralXor] {
                    let m = RewardMode::new(v, c, o);
                    if !out.contains(&m) {
                        out.push(m);
                    }
                }
            }
        }
        out
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['+', '-'], "_").as_str() {
            "ex" => Ok(Variant::Ex),
            "ex_pr" => Ok(Variant::ExPr),
            "ex_pr_vc" => Ok(Variant::ExPrVc),
            other => Err(format!("unknown reward variant `{other}` (expected ex, ex_pr, ex_pr_vc)")),
        }
    }
}

impl std::str::FromStr for Coefficients {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['+', '-'], "_").as_str() {
            "static" => Ok(Coefficients::Static),
            "static_dynamic" => Ok(Coefficients::StaticDynamic),
            other => Err(format!("unknown coefficient scheme `{other}` (expected static, static_dynamic)")),
        }
    }
}

impl std::str::FromStr for OutcomeSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "result_tag" => Ok(OutcomeSource::ResultTag),
            "rubric_flags" => Ok(OutcomeSource::RubricFlags),
            "literal_xor" => Ok(OutcomeSource::LiteralXor),
            other => Err(format!(
                "unknown outcome source `{other}` (expected result_tag, rubric_flags, literal_xor)"
            )),
        }
    }
}

/// Every reward component plus the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: u8,
    pub r_out: u8,
    pub r_rubric: f64,
    pub r_cons: i8,
    pub r_verify: Option<u8>,
    pub gamma_s: f64,
    pub gamma_d: u8,
    pub total: f64,
    pub mode: RewardMode,
    pub n_steps: usize,
    /// False when the process term was needed but no judgments were available.
    pub judge_available: bool,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum RewardError {
    #[error("sample `{0}` has no ground-truth label; only inference diagnostics are available")]
    LabelRequired(String),
}

/// `R_out` under the chosen source. `label_correct` is true when the
/// predicted SQL is truly correct.
pub fn compute_r_out(
    verdict: bool,
    label_correct: bool,
    rubric_flags_error: bool,
    r_rubric: Option<f64>,
    source: OutcomeSource,
) -> u8 {
    let hit = match source {
        OutcomeSource::ResultTag => verdict == label_correct,
        OutcomeSource::RubricFlags => !rubric_flags_error == label_correct,
        OutcomeSource::LiteralXor => {
            let finds_fault = r_rubric.map_or(rubric_flags_error, |r| r < 1.0);
            let sql_incorrect = !label_correct;
            finds_fault ^ sql_incorrect
        }
    };
    u8::from(hit)
}

/// `R_cons`, consulted only when `R_out = 0`.
pub fn compute_r_cons(rubric_flags_error: bool, r_verify: Option<u8>) -> i8 {
    match (rubric_flags_error, r_verify) {
        (true, Some(1)) => 1,
        (true, Some(_)) => -1,
        _ => 0,
    }
}

/// Static process coefficient. `r_rubric = None` means no judge grades.
pub fn gamma_static(r_out: u8, r_rubric: Option<f64>, r_cons: i8) -> f64 {
    match (r_out, r_rubric) {
        (_, None) => 0.0,
        (1, Some(r)) => 2.0 * r,
        (_, Some(_)) => f64::from(r_cons),
    }
}

/// Dynamic process coefficient from the number of rubric steps.
pub fn gamma_dynamic(n_steps: usize) -> u8 {
    u8::from(n_steps > 5)
}

/// Assembles the reward for one scored critique.
///
/// `judgments` are the per-step grades (ignored by `Ex`); `r_verify` is the
/// outcome of verifying the critique's corrected SQL, if any.
pub fn total_reward(
    sample: &EvalSample,
    resp: &CritiqueResponse,
    judgments: Option<&[StepJudgment]>,
    r_verify: Option<u8>,
    mode: RewardMode,
) -> Result<RewardBreakdown, RewardError> {
    let label = sample
        .label
        .ok_or_else(|| RewardError::LabelRequired(sample.sample_id.clone()))?;
    Ok(reward_for_label(label, resp, judgments, r_verify, mode))
}

/// [`total_reward`] with the label supplied directly.
pub fn reward_for_label(
    label_correct: bool,
    resp: &CritiqueResponse,
    judgments: Option<&[StepJudgment]>,
    r_verify: Option<u8>,
    mode: RewardMode,
) -> RewardBreakdown {
    let mode = mode.normalized();
    let n_steps = resp.n_steps();
    let verdict = match (resp.format.valid, resp.verdict) {
        (true, Some(v)) => v,
        _ => {
            return RewardBreakdown {
                r_format: 0,
                r_out: 0,
                r_rubric: 0.0,
                r_cons: 0,
                r_verify,
                gamma_s: 0.0,
                gamma_d: 0,
                total: 0.0,
                mode,
                n_steps,
                judge_available: judgments.is_some(),
            }
        }
    };
    let r_format: u8 = 1;

    if mode.variant == Variant::Ex {
        let r_out = compute_r_out(verdict, label_correct, resp.flags_error(), None, mode.outcome_source);
        return RewardBreakdown {
            r_format,
            r_out,
            r_rubric: 0.0,
            r_cons: 0,
            r_verify,
            gamma_s: 0.0,
            gamma_d: 0,
            total: f64::from(r_format) + 2.0 * f64::from(r_out),
            mode,
            n_steps,
            judge_available: true,
        };
    }

    let rubric = judgments.and_then(|j| compute_r_rubric(j).ok());
    let flags = judgments.map_or_else(|| resp.flags_error(), judgments_flag_error);
    let r_out = compute_r_out(verdict, label_correct, flags, rubric, mode.outcome_source);

    let r_cons = if mode.variant == Variant::ExPrVc && r_out == 0 {
        compute_r_cons(flags, r_verify)
    } else {
        0
    };
    let gamma_s = match mode.variant {
        // the plain process variant ignores the R_out = 0 branch
        Variant::ExPr if r_out == 0 => 0.0,
        _ => gamma_static(r_out, rubric, r_cons),
    };
    let gamma_d = match mode.coefficients {
        Coefficients::StaticDynamic => gamma_dynamic(n_steps),
        Coefficients::Static => 0,
    };
    let r_rubric = rubric.unwrap_or(0.0);
    let total = f64::from(r_format) + 2.0 * f64::from(r_out) + (gamma_s + f64::from(gamma_d)) * r_rubric;

    RewardBreakdown {
        r_format,
        r_out,
        r_rubric,
        r_cons,
        r_verify,
        gamma_s,
        gamma_d,
        total,
        mode,
        n_steps,
        judge_available: rubric.is_some(),
    }
}

/// Diagnostics for unlabeled (pure inference) judging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub r_format: u8,
    pub verdict: Option<bool>,
    pub r_rubric: Option<f64>,
    pub flags_error: bool,
    pub n_steps: usize,
}

pub fn inference_report(resp: &CritiqueResponse, judgments: Option<&[StepJudgment]>) -> InferenceReport {
    InferenceReport {
        r_format: u8::from(resp.format.valid),
        verdict: resp.verdict.filter(|_| resp.format.valid),
        r_rubric: judgments.and_then(|j| compute_r_rubric(j).ok()),
        flags_error: judgments.map_or_else(|| resp.flags_error(), judgments_flag_error),
        n_steps: resp.n_steps(),
    }
}
