//! Per-step soundness grading and the rubric process reward.
//!
//! Every rubric step of a critique is graded on its own: a judge decides
//! whether the step's answer is consistent with the question intent, the
//! schema and the predicted SQL. [`LlmJudge`] asks a chat-completion model;
//! [`StubJudge`] is a deterministic stand-in for offline runs and tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::critique::{CritiqueResponse, RubricStep};
use crate::dataset::EvalSample;
use crate::llm::{complete_with_retries, ChatBackend, ChatMessage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_parallel: usize,
    pub retry_limit: u32,
    pub timeout_secs: f64,
    /// Characters of schema text included in each judging prompt.
    pub schema_excerpt_chars: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            endpoint: "http://127.0.0.1:8000/v1".into(),
            model_name: "judge".into(),
            temperature: 0.0,
            max_parallel: 4,
            retry_limit: 2,
            timeout_secs: 60.0,
            schema_excerpt_chars: 4000,
        }
    }
}

impl JudgeConfig {
    // negated so NaN fails too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), String> {
        if self.max_parallel == 0 {
            return Err("judge.max_parallel must be at least 1".into());
        }
        if !(self.temperature >= 0.0) {
            return Err("judge.temperature must be non-negative".into());
        }
        if !(self.timeout_secs > 0.0) {
            return Err("judge.timeout_secs must be positive".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// The judge's verdict on one rubric step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepJudgment {
    pub step_index: usize,
    pub sound: bool,
    pub flags_error: bool,
    pub rationale: String,
    /// The judge reply could not be read; `sound` is false in that case.
    #[serde(default)]
    pub malformed: bool,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum JudgeError {
    #[error("response has no rubric steps to judge")]
    NoSteps,
    #[error("response is not well formed")]
    InvalidFormat,
    #[error("judge unavailable: {0}")]
    Unavailable(String),
    #[error("cannot compute a rubric reward from zero judgments")]
    EmptyJudgments,
}

/// Everything a judge sees for one step.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub sample: &'a EvalSample,
    pub step: &'a RubricStep,
}

pub trait StepJudge: Send + Sync {
    fn judge_step(&self, ctx: StepContext<'_>) -> Result<StepJudgment, JudgeError>;

    /// Whether calls are worth running concurrently.
    fn is_remote(&self) -> bool {
        false
    }
}

/// Grades every step of `resp`, preserving step order. Calls run on up to
/// `max_parallel` threads for remote judges.
pub fn judge_steps(
    sample: &EvalSample,
    resp: &CritiqueResponse,
    judge: &dyn StepJudge,
    max_parallel: usize,
) -> Result<Vec<StepJudgment>, JudgeError> {
    if !resp.format.valid {
        return Err(JudgeError::InvalidFormat);
    }
    if resp.steps.is_empty() {
        return Err(JudgeError::NoSteps);
    }
    let workers = if judge.is_remote() {
        max_parallel.clamp(1, resp.steps.len())
    } else {
        1
    };
    let judge_one = |step: &RubricStep| judge.judge_step(StepContext { sample, step });

    if workers == 1 {
        return resp.steps.iter().map(judge_one).collect();
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<StepJudgment, JudgeError>>>> =
        Mutex::new(vec![None; resp.steps.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(step) = resp.steps.get(i) else { break };
                let r = judge_one(step);
                slots.lock().expect("slot lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .map(|r| r.expect("every step judged"))
        .collect()
}

/// `R_rubric = 1 - (1/N) * #unsound`.
pub fn compute_r_rubric(judgments: &[StepJudgment]) -> Result<f64, JudgeError> {
    if judgments.is_empty() {
        return Err(JudgeError::EmptyJudgments);
    }
    let n = judgments.len() as f64;
    let unsound = judgments.iter().filter(|j| !j.sound).count() as f64;
    Ok(1.0 - (1.0 / n) * unsound)
}

/// True when any judged step asserts a defect.
pub fn judgments_flag_error(judgments: &[StepJudgment]) -> bool {
    judgments.iter().any(|j| j.flags_error)
}

const JUDGE_SYSTEM_PROMPT: &str =
    "You are a meticulous SQL reviewer. You grade a single reasoning step of a critique of a predicted SQL query.";

fn excerpt(s: &str, max_chars: usize) -> &str {
    match s.char_indices().nth(max_chars) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Builds the judging conversation for one step.
pub fn judge_prompt(ctx: StepContext<'_>, schema_chars: usize) -> Vec<ChatMessage> {
    let s = ctx.sample;
    let user = format!(
        "A critique model is checking whether a predicted SQL query answers a question. \
Review ONE step of its reasoning.

[Question]
{question}

[Database schema (excerpt)]
{schema}

[Predicted SQL]
{sql}

[Rubric question]
{rq}

[Rubric answer]
{ra}

Decide whether the rubric answer is sound: its claims must be consistent with the intent of the \
question, the schema and the predicted SQL. Independently, state whether the answer asserts a \
defect in the predicted SQL.

Reply in exactly this form:
VERDICT: SOUND or UNSOUND
FLAGS_ERROR: YES or NO
RATIONALE: <one or two sentences>",
        question = s.question.trim(),
        schema = excerpt(s.schema_text.trim(), schema_chars),
        sql = s.predicted_sql.trim(),
        rq = ctx.step.question,
        ra = ctx.step.answer,
    );
    vec![ChatMessage::system(JUDGE_SYSTEM_PROMPT), ChatMessage::user(user)]
}

fn field_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let t = line.trim().trim_start_matches(['*', '#', '-', ' ']);
    let (k, v) = t.split_once(':')?;
    k.trim_matches(['*', ' ']).eq_ignore_ascii_case(key).then(|| v.trim())
}

fn token(v: &str) -> String {
    v.trim_matches(|c: char| !c.is_ascii_alphanumeric())
        .split_whitespace()
        .next()
        .unwrap_or("")
        .to_ascii_uppercase()
}

/// Reads a judge reply. A reply without a readable verdict is malformed and
/// grades the step unsound.
pub fn parse_judge_reply(reply: &str, step: &RubricStep) -> StepJudgment {
    let mut sound = None;
    let mut flags = None;
    let mut rationale = String::new();
    for line in reply.lines() {
        if let Some(v) = field_value(line, "VERDICT") {
            sound = match token(v).as_str() {
                "SOUND" => Some(true),
                "UNSOUND" => Some(false),
                _ => sound,
            };
        } else if let Some(v) = field_value(line, "FLAGS_ERROR") {
            flags = match token(v).as_str() {
                "YES" | "TRUE" => Some(true),
                "NO" | "FALSE" => Some(false),
                _ => flags,
            };
        } else if let Some(v) = field_value(line, "RATIONALE") {
            rationale = v.to_string();
        }
    }
    match sound {
        Some(sound) => StepJudgment {
            step_index: step.index,
            sound,
            flags_error: flags.unwrap_or(step.flags_error),
            rationale,
            malformed: false,
        },
        None => {
            tracing::warn!(step = step.index, "malformed judge output; grading step unsound");
            StepJudgment {
                step_index: step.index,
                sound: false,
                flags_error: step.flags_error,
                rationale: format!("malformed judge output: {}", excerpt(reply.trim(), 200)),
                malformed: true,
            }
        }
    }
}

/// Judge backed by a chat-completion model.
pub struct LlmJudge<B> {
    backend: B,
    retry_limit: u32,
    schema_chars: usize,
    backoff: Duration,
}

impl<B: ChatBackend> LlmJudge<B> {
    pub fn new(backend: B, cfg: &JudgeConfig) -> Self {
        LlmJudge {
            backend,
            retry_limit: cfg.retry_limit,
            schema_chars: cfg.schema_excerpt_chars,
            backoff: Duration::from_millis(200),
        }
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }
}

impl<B: ChatBackend> StepJudge for LlmJudge<B> {
    fn judge_step(&self, ctx: StepContext<'_>) -> Result<StepJudgment, JudgeError> {
        let messages = judge_prompt(ctx, self.schema_chars);
        let reply = complete_with_retries(&self.backend, &messages, self.retry_limit, self.backoff)
            .map_err(|e| JudgeError::Unavailable(e.to_string()))?;
        Ok(parse_judge_reply(&reply, ctx.step))
    }

    fn is_remote(&self) -> bool {
        true
    }
}

/// Behaviour of the offline judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StubMode {
    /// Every step is sound; error flags are echoed from the parser.
    #[default]
    Echo,
    /// A step is sound iff it does not flag an error.
    SoundUnlessFlagged,
    AllSound,
    AllUnsound,
    /// Pseudo-random but reproducible soundness keyed on the step text:
    /// roughly `unsound_per_mille / 1000` of steps are graded unsound.
    Hashed { unsound_per_mille: u32 },
    /// Fixed per-step outcomes by position; `None` simulates a malformed
    /// reply. Steps past the end of the script are sound.
    Scripted { outcomes: Vec<Option<bool>> },
}

#[derive(Debug, Clone, Default)]
pub struct StubJudge {
    pub mode: StubMode,
}

impl StubJudge {
    pub fn new(mode: StubMode) -> Self {
        StubJudge { mode }
    }
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl StepJudge for StubJudge {
    fn judge_step(&self, ctx: StepContext<'_>) -> Result<StepJudgment, JudgeError> {
        let step = ctx.step;
        let verdict = |sound: bool| StepJudgment {
            step_index: step.index,
            sound,
            flags_error: step.flags_error,
            rationale: String::from("stub"),
            malformed: false,
        };
        Ok(match &self.mode {
            StubMode::Echo | StubMode::AllSound => verdict(true),
            StubMode::SoundUnlessFlagged => verdict(!step.flags_error),
            StubMode::AllUnsound => verdict(false),
            StubMode::Hashed { unsound_per_mille } => {
                let h = fnv1a(&[&ctx.sample.sample_id, &step.question, &step.answer]);
                verdict(h % 1000 >= u64::from(*unsound_per_mille))
            }
            StubMode::Scripted { outcomes } => match outcomes.get(step.index - 1) {
                Some(Some(sound)) => verdict(*sound),
                Some(None) => parse_judge_reply("<garbled>", step),
                None => verdict(true),
            },
        })
    }
}
