//! Per-sample scoring: parse the critique, grade its steps, verify its
//! correction and assemble the reward.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::critique::{parse_critique, CritiqueResponse, Violation};
use crate::dataset::EvalSample;
use crate::exec::{SqlExecutor, VerifyMode};
use crate::judge::{judge_steps, StepJudge, StepJudgment};
use crate::par::{self, Strategy};
use crate::reward::{inference_report, reward_for_label, InferenceReport, RewardBreakdown, RewardMode, Variant};

/// Everything the scorer needs besides the samples.
pub struct Scorer<'a> {
    pub exec: &'a SqlExecutor,
    pub judge: &'a dyn StepJudge,
    pub judge_parallel: usize,
    pub mode: RewardMode,
    /// `None` picks gold verification when a gold query exists.
    pub verify_mode: Option<VerifyMode>,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub violations: Vec<Violation>,
    pub n_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judgments: Option<Vec<StepJudgment>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_verify: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    pub verdict: Option<bool>,
    /// Absent for unlabeled samples and per-sample errors.
    pub breakdown: Option<RewardBreakdown>,
    /// True when the sample had no label; see `inference`.
    pub inference_only: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inference: Option<InferenceReport>,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Wall time spent in each phase, summed over samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub parse_secs: f64,
    pub judge_secs: f64,
    pub verify_secs: f64,
    pub reward_secs: f64,
}

impl PhaseTimings {
    fn add(&mut self, o: &PhaseTimings) {
        self.parse_secs += o.parse_secs;
        self.judge_secs += o.judge_secs;
        self.verify_secs += o.verify_secs;
        self.reward_secs += o.reward_secs;
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *slot += t.elapsed().as_secs_f64();
    out
}

impl Scorer<'_> {
    /// Scores one sample. Never fails; problems land in `error` or the
    /// diagnostics.
    pub fn score(&self, sample: &EvalSample) -> (SampleScore, PhaseTimings) {
        let mut t = PhaseTimings::default();
        let Some(text) = sample.critique_text.as_deref() else {
            let s = SampleScore {
                sample_id: sample.sample_id.clone(),
                verdict: None,
                breakdown: None,
                inference_only: sample.label.is_none(),
                inference: None,
                diagnostics: Diagnostics::default(),
                error: Some("sample has no critique_text".into()),
            };
            return (s, t);
        };
        let resp = timed(&mut t.parse_secs, || parse_critique(text));
        let mut diag = Diagnostics {
            violations: resp.format.violations.clone(),
            n_steps: resp.n_steps(),
            ..Diagnostics::default()
        };

        let judgments = if self.mode.variant != Variant::Ex && resp.format.valid {
            match timed(&mut t.judge_secs, || judge_steps(sample, &resp, self.judge, self.judge_parallel)) {
                Ok(j) => Some(j),
                Err(e) => {
                    diag.judge_error = Some(e.to_string());
                    None
                }
            }
        } else {
            None
        };
        diag.judgments = judgments.clone();

        let r_verify = if self.mode.variant == Variant::ExPrVc {
            timed(&mut t.verify_secs, || self.verify(sample, &resp, &mut diag))
        } else {
            None
        };
        diag.r_verify = r_verify;

        let verdict = resp.verdict.filter(|_| resp.format.valid);
        let score = timed(&mut t.reward_secs, || match sample.label {
            Some(label) => SampleScore {
                sample_id: sample.sample_id.clone(),
                verdict,
                breakdown: Some(reward_for_label(label, &resp, judgments.as_deref(), r_verify, self.mode)),
                inference_only: false,
                inference: None,
                diagnostics: diag,
                error: None,
            },
            None => SampleScore {
                sample_id: sample.sample_id.clone(),
                verdict,
                breakdown: None,
                inference_only: true,
                inference: Some(inference_report(&resp, judgments.as_deref())),
                diagnostics: diag,
                error: None,
            },
        });
        (score, t)
    }

    fn verify(&self, sample: &EvalSample, resp: &CritiqueResponse, diag: &mut Diagnostics) -> Option<u8> {
        if !resp.format.valid || resp.verdict != Some(false) {
            return None;
        }
        let corrected = resp.corrected_sql.as_deref()?;
        if !self.exec.can_open(&sample.db) {
            diag.verify_error = Some(format!("database `{}` cannot be opened", sample.db.db_id));
            return None;
        }
        match self.exec.verify_correction(
            &sample.predicted_sql,
            corrected,
            &sample.db,
            sample.gold_sql.as_deref(),
            self.verify_mode,
        ) {
            Ok(v) => Some(v),
            Err(e) => {
                diag.verify_error = Some(e.to_string());
                None
            }
        }
    }

    /// Scores a batch in order.
    pub fn score_batch(&self, samples: &[EvalSample]) -> (Vec<SampleScore>, PhaseTimings) {
        let scored = par::map(self.strategy, samples, |s| self.score(s));
        let mut total = PhaseTimings::default();
        let mut out = Vec::with_capacity(scored.len());
        for (s, t) in scored {
            total.add(&t);
            out.push(s);
        }
        (out, total)
    }
}

impl SampleScore {
    pub fn total(&self) -> Option<f64> {
        self.breakdown.as_ref().map(|b| b.total)
    }

    /// Counts as a per-sample failure for exit-status purposes.
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}
