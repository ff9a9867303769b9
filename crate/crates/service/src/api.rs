//! Wire types and transport-independent request handling.

use std::collections::HashSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sqlcritic_core::exec::VerifyMode;
use sqlcritic_core::grpo::{group_advantages, GrpoConfig, RolloutGroup};
use sqlcritic_core::scoring::{PhaseTimings, SampleScore};
use sqlcritic_core::{EvalSample, RewardMode};

use crate::config::JudgeKind;
use crate::engine::{Engine, ScoreOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub samples: Vec<EvalSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<RewardMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeKind>,
    /// When set, the response carries group-relative advantages of the
    /// totals, treating the batch as one rollout group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_mode: Option<VerifyMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    #[serde(flatten)]
    pub phases: PhaseTimings,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub results: Vec<SampleScore>,
    pub mode: RewardMode,
    pub judge: JudgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantages: Option<Vec<f64>>,
    /// Why advantages could not be computed for a grouped request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage_error: Option<String>,
    pub timing: Timing,
}

/// Either one group of rewards or a list of named groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvantagesRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewards: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<RolloutGroup>>,
    /// Overrides the service's GRPO settings for this request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<GrpoConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub prompt_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantages: Option<Vec<f64>>,
    /// Per-group objective, present when all log-probability lists are.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantagesResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantages: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<GroupResult>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    /// Whether this build scores on the rayon pool.
    pub parallel: bool,
    pub config_fingerprint: String,
    pub max_batch: usize,
    pub default_judge: JudgeKind,
}

/// A request the service refuses as a whole.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RequestError {
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("batch of {got} samples exceeds the limit of {max}")]
    TooLarge { got: usize, max: usize },
}

impl RequestError {
    pub fn code(&self) -> &'static str {
        match self {
            RequestError::Malformed(_) => "MALFORMED_REQUEST",
            RequestError::TooLarge { .. } => "BATCH_TOO_LARGE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl From<&RequestError> for ErrorBody {
    fn from(e: &RequestError) -> Self {
        ErrorBody {
            code: e.code().into(),
            message: e.to_string(),
        }
    }
}

pub fn parse_json<'a, T: Deserialize<'a>>(body: &'a [u8]) -> Result<T, RequestError> {
    serde_json::from_slice(body).map_err(|e| RequestError::Malformed(e.to_string()))
}

/// Structural checks done before any work starts.
pub fn check_score_request(req: &ScoreRequest, max_batch: usize) -> Result<(), RequestError> {
    let n = req.samples.len();
    if n == 0 {
        return Err(RequestError::Malformed("`samples` must not be empty".into()));
    }
    if n > max_batch {
        return Err(RequestError::TooLarge { got: n, max: max_batch });
    }
    let mut seen = HashSet::with_capacity(n);
    for s in &req.samples {
        s.validate().map_err(|e| RequestError::Malformed(e.to_string()))?;
        if !seen.insert(s.sample_id.as_str()) {
            return Err(RequestError::Malformed(format!("duplicate sample_id `{}`", s.sample_id)));
        }
    }
    if req.group_id.as_deref() == Some("") {
        return Err(RequestError::Malformed("`group_id` must not be empty".into()));
    }
    Ok(())
}

pub fn handle_score(engine: &Engine, mut req: ScoreRequest) -> Result<ScoreResponse, RequestError> {
    check_score_request(&req, engine.config().server.max_batch)?;
    let started = Instant::now();
    engine.prepare(&mut req.samples);
    let opts = ScoreOptions {
        mode: req.mode,
        judge: req.judge,
        stub: None,
        verify_mode: req.verify_mode,
    };
    let (results, phases) = engine.score(&req.samples, &opts);

    let (advantages, advantage_error) = match &req.group_id {
        None => (None, None),
        Some(_) => match results.iter().map(SampleScore::total).collect::<Option<Vec<f64>>>() {
            Some(totals) => match group_advantages(&totals, &engine.config().grpo) {
                Ok(a) => (Some(a), None),
                Err(e) => (None, Some(e.to_string())),
            },
            None => (None, Some("some samples have no reward total".into())),
        },
    };
    Ok(ScoreResponse {
        results,
        mode: engine.effective_mode(&opts),
        judge: req.judge.unwrap_or(engine.config().judge.kind),
        group_id: req.group_id,
        advantages,
        advantage_error,
        timing: Timing {
            phases,
            total_secs: started.elapsed().as_secs_f64(),
        },
    })
}

fn group_result(mut g: RolloutGroup, cfg: &GrpoConfig) -> GroupResult {
    let prompt_id = g.prompt_id.clone();
    let outcome = g
        .compute_advantages(cfg)
        .map(<[f64]>::to_vec)
        .and_then(|adv| Ok((adv, g.objective(cfg)?)));
    match outcome {
        Ok((adv, objective)) => GroupResult {
            prompt_id,
            advantages: Some(adv),
            objective,
            error: None,
        },
        Err(e) => GroupResult {
            prompt_id,
            advantages: None,
            objective: None,
            error: Some(e.to_string()),
        },
    }
}

pub fn handle_advantages(engine: &Engine, req: AdvantagesRequest) -> Result<AdvantagesResponse, RequestError> {
    let cfg = req.config.unwrap_or(engine.config().grpo);
    cfg.validate().map_err(|e| RequestError::Malformed(e.to_string()))?;
    match (req.rewards, req.groups) {
        (Some(rewards), None) => {
            let adv = group_advantages(&rewards, &cfg).map_err(|e| RequestError::Malformed(e.to_string()))?;
            Ok(AdvantagesResponse {
                advantages: Some(adv),
                groups: None,
            })
        }
        (None, Some(groups)) => {
            if groups.is_empty() {
                return Err(RequestError::Malformed("`groups` must not be empty".into()));
            }
            Ok(AdvantagesResponse {
                advantages: None,
                groups: Some(groups.into_iter().map(|g| group_result(g, &cfg)).collect()),
            })
        }
        _ => Err(RequestError::Malformed("give exactly one of `rewards` or `groups`".into())),
    }
}

pub fn health(engine: &Engine) -> Health {
    Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        parallel: cfg!(feature = "parallel"),
        config_fingerprint: engine.fingerprint().into(),
        max_batch: engine.config().server.max_batch,
        default_judge: engine.config().judge.kind,
    }
}
