//! The scoring engine shared by the HTTP service and the CLI.

use sqlcritic_core::exec::{SqlExecutor, VerifyMode};
use sqlcritic_core::judge::{LlmJudge, StepJudge, StubJudge, StubMode};
use sqlcritic_core::llm::HttpChatClient;
use sqlcritic_core::scoring::{PhaseTimings, SampleScore, Scorer};
use sqlcritic_core::{EvalSample, RewardMode};

use crate::config::{JudgeKind, ServiceConfig};

/// Per-call scoring options. `None` falls back to the config.
#[derive(Debug, Clone, Default)]
pub struct ScoreOptions {
    pub mode: Option<RewardMode>,
    pub judge: Option<JudgeKind>,
    pub stub: Option<StubMode>,
    pub verify_mode: Option<VerifyMode>,
}

pub struct Engine {
    cfg: ServiceConfig,
    exec: SqlExecutor,
    stub: StubJudge,
    live: LlmJudge<HttpChatClient>,
    fingerprint: String,
}

impl Engine {
    pub fn new(cfg: ServiceConfig) -> Self {
        let live_cfg = &cfg.judge.live;
        let client = HttpChatClient::new(
            &live_cfg.endpoint,
            live_cfg.model_name.clone(),
            live_cfg.temperature,
            cfg.judge.api_key.clone(),
            live_cfg.timeout(),
        );
        Engine {
            exec: SqlExecutor::new(cfg.exec.clone()),
            stub: StubJudge::new(cfg.judge.stub.clone()),
            live: LlmJudge::new(client, live_cfg),
            fingerprint: cfg.fingerprint(),
            cfg,
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn executor(&self) -> &SqlExecutor {
        &self.exec
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Resolves each sample's database under the configured root.
    pub fn prepare(&self, samples: &mut [EvalSample]) {
        for s in samples {
            s.resolve_db(&self.cfg.db_root);
        }
    }

    pub fn effective_mode(&self, opts: &ScoreOptions) -> RewardMode {
        opts.mode.unwrap_or(self.cfg.reward.mode).normalized()
    }

    /// Scores samples whose databases are already resolved. Results are in
    /// input order.
    pub fn score(&self, samples: &[EvalSample], opts: &ScoreOptions) -> (Vec<SampleScore>, PhaseTimings) {
        let custom_stub = opts.stub.clone().map(StubJudge::new);
        let (judge, judge_parallel): (&dyn StepJudge, usize) = match opts.judge.unwrap_or(self.cfg.judge.kind) {
            JudgeKind::Stub => (custom_stub.as_ref().unwrap_or(&self.stub), 1),
            JudgeKind::Live => (&self.live, self.cfg.judge.live.max_parallel),
        };
        let scorer = Scorer {
            exec: &self.exec,
            judge,
            judge_parallel,
            mode: self.effective_mode(opts),
            verify_mode: opts.verify_mode.or(self.cfg.reward.verify_mode),
            strategy: self.cfg.strategy(),
        };
        scorer.score_batch(samples)
    }
}
