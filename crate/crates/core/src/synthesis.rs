//! Critique synthesis: a feedback generator conditioned on recent history,
//! a SQL corrector, and a two-stage execution/partial-match filter.

use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::critique::{parse_critique, CritiqueResponse};
use crate::dataset::EvalSample;
use crate::exec::{MatchOutcome, SqlExecutor};
use crate::llm::{ChatBackend, ChatMessage, LlmError};
use crate::par::{self, Strategy};
use crate::tree_edit::TreeEditMatcher;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AlignOutcome {
    Accepted,
    RejectedVerdict,
    RejectedCorrection,
    Errored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    /// Insertion sequence number, monotonically increasing.
    pub seq: u64,
    pub sample_id: String,
    pub summary: String,
    pub align: AlignOutcome,
}

/// Bounded history of past feedback; the oldest entry is evicted first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    capacity: usize,
    next_seq: u64,
    entries: VecDeque<MemoryEntry>,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Self {
        MemoryBuffer {
            capacity: capacity.max(1),
            next_seq: 0,
            entries: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry, returning the evicted one if the buffer was full.
    pub fn push(&mut self, sample_id: impl Into<String>, summary: impl Into<String>, align: AlignOutcome) -> Option<MemoryEntry> {
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front()
        } else {
            None
        };
        self.entries.push_back(MemoryEntry {
            seq: self.next_seq,
            sample_id: sample_id.into(),
            summary: summary.into(),
            align,
        });
        self.next_seq += 1;
        evicted
    }

    /// The `k` most recent entries, oldest first.
    pub fn recent(&self, k: usize) -> Vec<MemoryEntry> {
        let skip = self.entries.len().saturating_sub(k);
        self.entries.iter().skip(skip).cloned().collect()
    }

    /// All entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub memory_capacity: usize,
    /// Recent entries shown to the generator.
    pub memory_k: usize,
    pub summary_chars: usize,
    /// Extra attempts after a malformed critique.
    pub format_retries: usize,
    pub partial_match_threshold: f64,
    /// Samples generated concurrently between memory updates.
    pub wave_size: usize,
    pub schema_excerpt_chars: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            memory_capacity: 64,
            memory_k: 3,
            summary_chars: 200,
            format_retries: 1,
            partial_match_threshold: 0.9,
            wave_size: 4,
            schema_excerpt_chars: 4000,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum SynthesisError {
    #[error("generator unavailable: {0}")]
    GeneratorUnavailable(String),
    #[error("critique still malformed after {attempts} attempts")]
    PersistentFormatFailure { attempts: usize },
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
}

impl From<LlmError> for SynthesisError {
    fn from(e: LlmError) -> Self {
        SynthesisError::GeneratorUnavailable(e.to_string())
    }
}

const CRITIQUE_SYSTEM_PROMPT: &str = "You review SQL written for a natural-language question. \
Reason with self-posed rubric questions, one per numbered step, each answered on a line starting with `- `. \
Wrap the steps in <think></think>, give the verdict as <result> True </result> or <result> False </result>, \
and when the SQL is wrong add the fixed query in <correctedSQL></correctedSQL>.";

const HISTORY_HEADER: &str = "Recent feedback:";

fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => s[..i].to_string(),
        None => s.to_string(),
    }
}

/// Builds the feedback-generation conversation. No history block is added
/// when `memory` is empty.
pub fn critique_prompt(sample: &EvalSample, memory: &[MemoryEntry], cfg: &SynthesisConfig) -> Vec<ChatMessage> {
    let mut user = String::new();
    if !memory.is_empty() {
        let _ = writeln!(user, "{HISTORY_HEADER}");
        for m in memory {
            let summary = truncate_chars(&m.summary, cfg.summary_chars);
            let tag = serde_json::to_value(m.align).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            let _ = writeln!(user, "- [{tag}] {}: {summary}", m.sample_id);
        }
        user.push('\n');
    }
    let _ = writeln!(user, "Question: {}", sample.question);
    let _ = writeln!(user, "Schema:\n{}", truncate_chars(&sample.schema_text, cfg.schema_excerpt_chars));
    let _ = write!(user, "Predicted SQL: {}", sample.predicted_sql);
    vec![ChatMessage::system(CRITIQUE_SYSTEM_PROMPT), ChatMessage::user(user)]
}

/// Short memory summary of a critique.
pub fn summarize(critique: &CritiqueResponse, max_chars: usize) -> String {
    let verdict = match critique.verdict {
        Some(true) => "True",
        Some(false) => "False",
        None => "none",
    };
    let mut s = format!("verdict {verdict}, {} steps", critique.n_steps());
    if let Some(step) = critique.steps.iter().find(|s| s.flags_error) {
        let _ = write!(s, "; issue: {}", step.answer.replace('\n', " "));
    }
    truncate_chars(&s, max_chars)
}

/// Asks the generator for a critique, retrying once (by default) when the
/// reply is malformed.
pub fn generate_feedback(
    sample: &EvalSample,
    memory: &[MemoryEntry],
    generator: &dyn ChatBackend,
    cfg: &SynthesisConfig,
) -> Result<CritiqueResponse, SynthesisError> {
    let prompt = critique_prompt(sample, memory, cfg);
    let attempts = cfg.format_retries + 1;
    for _ in 0..attempts {
        let reply = generator.complete(&prompt)?;
        let parsed = parse_critique(&reply);
        if parsed.format.valid {
            return Ok(parsed);
        }
    }
    Err(SynthesisError::PersistentFormatFailure { attempts })
}

fn strip_sql_reply(reply: &str) -> String {
    let mut s = reply.trim();
    if let (Some(a), Some(b)) = (s.find("<correctedSQL>"), s.find("</correctedSQL>")) {
        if a < b {
            s = s[a + "<correctedSQL>".len()..b].trim();
        }
    }
    if let Some(rest) = s.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
        s = rest.strip_suffix("```").unwrap_or(rest).trim();
    }
    s.to_string()
}

pub fn correction_prompt(sample: &EvalSample, critique: &CritiqueResponse) -> Vec<ChatMessage> {
    let user = format!(
        "Question: {}\nSchema:\n{}\nPredicted SQL: {}\nReview:\n{}\n\nReply with only the corrected SQL.",
        sample.question,
        sample.schema_text,
        sample.predicted_sql,
        critique.render()
    );
    vec![
        ChatMessage::system("You fix SQL queries so they answer the question exactly."),
        ChatMessage::user(user),
    ]
}

/// Corrected SQL for a negative critique: the critique's own block when
/// present, else a dedicated correction request.
pub fn correct_sql(
    sample: &EvalSample,
    critique: &CritiqueResponse,
    corrector: &dyn ChatBackend,
) -> Result<String, SynthesisError> {
    if critique.verdict != Some(false) {
        return Err(SynthesisError::Precondition("correction requires a False verdict"));
    }
    if let Some(sql) = &critique.corrected_sql {
        return Ok(sql.clone());
    }
    let reply = corrector.complete(&correction_prompt(sample, critique))?;
    Ok(strip_sql_reply(&reply))
}

/// Second-stage acceptance for corrections that do not match by execution.
pub trait PartialMatcher: Send + Sync {
    fn accepts(&self, candidate: &str, reference: &str) -> bool;
}

impl PartialMatcher for TreeEditMatcher {
    fn accepts(&self, candidate: &str, reference: &str) -> bool {
        TreeEditMatcher::accepts(self, candidate, reference)
    }
}

/// Matcher that never accepts; disables the second stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoPartialMatch;

impl PartialMatcher for NoPartialMatch {
    fn accepts(&self, _: &str, _: &str) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignDecision {
    pub outcome: AlignOutcome,
    /// Execution label of the predicted SQL, when it could be computed.
    pub exec_label: Option<bool>,
    pub correction_match: Option<MatchOutcome>,
    pub partial_accepted: Option<bool>,
    pub reason: Option<String>,
}

impl AlignDecision {
    fn errored(reason: impl Into<String>, exec_label: Option<bool>) -> Self {
        AlignDecision {
            outcome: AlignOutcome::Errored,
            exec_label,
            correction_match: None,
            partial_accepted: None,
            reason: Some(reason.into()),
        }
    }
}

/// Accepts a critique when its verdict agrees with execution, or when it
/// says False and its correction matches the gold query by execution or by
/// the partial matcher.
pub fn align_filter(
    sample: &EvalSample,
    critique: &CritiqueResponse,
    corrected: Option<&str>,
    exec: &SqlExecutor,
    matcher: &dyn PartialMatcher,
) -> AlignDecision {
    let Some(gold) = sample.gold_sql.as_deref() else {
        return AlignDecision::errored("sample has no gold SQL", None);
    };
    if !exec.can_open(&sample.db) {
        return AlignDecision::errored(format!("database `{}` cannot be opened", sample.db.db_id), None);
    }
    let label = match exec.exec_match(&sample.predicted_sql, gold, &sample.db) {
        MatchOutcome::Equiv => true,
        MatchOutcome::NotEquiv | MatchOutcome::PredError => false,
        MatchOutcome::RefError => return AlignDecision::errored("gold query failed to execute", None),
    };
    let mut d = AlignDecision {
        outcome: AlignOutcome::RejectedVerdict,
        exec_label: Some(label),
        correction_match: None,
        partial_accepted: None,
        reason: None,
    };
    let verdict = match (critique.format.valid, critique.verdict) {
        (true, Some(v)) => v,
        _ => {
            d.reason = Some("critique is malformed".into());
            return d;
        }
    };
    if verdict == label {
        d.outcome = AlignOutcome::Accepted;
        return d;
    }
    if verdict {
        d.reason = Some("verdict True on an incorrect prediction".into());
        return d;
    }
    let Some(corrected) = corrected.or(critique.corrected_sql.as_deref()) else {
        d.outcome = AlignOutcome::RejectedCorrection;
        d.reason = Some("no corrected SQL".into());
        return d;
    };
    let m = exec.exec_match(corrected, gold, &sample.db);
    d.correction_match = Some(m);
    match m {
        MatchOutcome::Equiv => d.outcome = AlignOutcome::Accepted,
        MatchOutcome::RefError => return AlignDecision::errored("gold query failed to execute", Some(label)),
        MatchOutcome::NotEquiv | MatchOutcome::PredError => {
            let partial = matcher.accepts(corrected, gold);
            d.partial_accepted = Some(partial);
            d.outcome = if partial {
                AlignOutcome::Accepted
            } else {
                d.reason = Some("correction does not match the gold query".into());
                AlignOutcome::RejectedCorrection
            };
        }
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRecord {
    pub sample: EvalSample,
    /// Absent when generation failed.
    pub critique: Option<CritiqueResponse>,
    pub corrected_sql: Option<String>,
    pub align: AlignOutcome,
    pub decision: Option<AlignDecision>,
    pub error: Option<String>,
}

impl SynthesisRecord {
    /// The sample with the accepted critique attached, in corpus form.
    pub fn to_corpus_sample(&self) -> Option<EvalSample> {
        let c = self.critique.as_ref().filter(|_| self.align == AlignOutcome::Accepted)?;
        let mut s = self.sample.clone();
        s.critique_text = Some(c.raw.clone());
        if let Some(d) = &self.decision {
            s.label = d.exec_label.or(s.label);
        }
        Some(s)
    }
}

/// The backends and checkers one pipeline run needs.
pub struct SynthesisAgents<'a> {
    pub generator: &'a dyn ChatBackend,
    pub corrector: &'a dyn ChatBackend,
    pub exec: &'a SqlExecutor,
    pub matcher: &'a dyn PartialMatcher,
}

fn synthesize_one(sample: &EvalSample, memory: &[MemoryEntry], agents: &SynthesisAgents<'_>, cfg: &SynthesisConfig) -> SynthesisRecord {
    let failed = |e: SynthesisError, critique: Option<CritiqueResponse>| SynthesisRecord {
        sample: sample.clone(),
        critique,
        corrected_sql: None,
        align: AlignOutcome::Errored,
        decision: None,
        error: Some(e.to_string()),
    };
    let critique = match generate_feedback(sample, memory, agents.generator, cfg) {
        Ok(c) => c,
        Err(e) => return failed(e, None),
    };
    let corrected = if critique.verdict == Some(false) {
        match correct_sql(sample, &critique, agents.corrector) {
            Ok(sql) => Some(sql),
            Err(e) => return failed(e, Some(critique)),
        }
    } else {
        None
    };
    let decision = align_filter(sample, &critique, corrected.as_deref(), agents.exec, agents.matcher);
    SynthesisRecord {
        sample: sample.clone(),
        critique: Some(critique),
        corrected_sql: corrected,
        align: decision.outcome,
        decision: Some(decision),
        error: None,
    }
}

/// Runs generation, correction and filtering over `samples`.
///
/// Samples are processed in waves of `cfg.wave_size`; every sample in a wave
/// sees the same memory snapshot, and the wave's outcomes are appended in
/// sample order before the next wave starts. With deterministic backends the
/// output does not depend on thread scheduling.
pub fn run_pipeline(
    samples: &[EvalSample],
    agents: &SynthesisAgents<'_>,
    cfg: &SynthesisConfig,
    memory: &mut MemoryBuffer,
    strategy: Strategy,
) -> Vec<SynthesisRecord> {
    let mut out = Vec::with_capacity(samples.len());
    for wave in samples.chunks(cfg.wave_size.max(1)) {
        let snapshot = memory.recent(cfg.memory_k);
        let records = par::map(strategy, wave, |s| synthesize_one(s, &snapshot, agents, cfg));
        for r in &records {
            if let Some(c) = &r.critique {
                memory.push(r.sample.sample_id.clone(), summarize(c, cfg.summary_chars), r.align);
            }
        }
        out.extend(records);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{DatabaseRef, ExecConfig};
    use crate::llm::{FnBackend, ScriptedBackend};

    const FIGURE_ONE: &str = include_str!("../fixtures/critiques/figure1.txt");

    fn scratch() -> (tempfile::TempDir, DatabaseRef) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sqlite");
        let conn = rusqlite::Connection::open(&path).unwrap();
        conn.execute_batch("CREATE TABLE t(a INTEGER, b TEXT); INSERT INTO t VALUES (1,'x'),(2,'y'),(3,'z');")
            .unwrap();
        (dir, DatabaseRef::new("t", path))
    }

    fn critique(verdict: bool, correction: Option<&str>) -> CritiqueResponse {
        let mut text = String::from("<think>\n1. Is the filter right?\n- ");
        text.push_str(if verdict { "Yes.\n" } else { "No, it should be a > 1.\n" });
        text.push_str(&format!("</think>\n<result> {} </result>\n", if verdict { "True" } else { "False" }));
        if let Some(c) = correction {
            text.push_str(&format!("<correctedSQL>{c}</correctedSQL>"));
        }
        parse_critique(&text)
    }

    #[test]
    fn memory_ring() {
        let mut m = MemoryBuffer::new(2);
        assert!(m.push("a", "s", AlignOutcome::Accepted).is_none());
        assert!(m.push("b", "s", AlignOutcome::Accepted).is_none());
        let ev = m.push("c", "s", AlignOutcome::Errored).unwrap();
        assert_eq!(ev.sample_id, "a");
        assert_eq!(m.len(), 2);
        let ids: Vec<_> = m.iter().map(|e| (e.seq, e.sample_id.as_str())).collect();
        assert_eq!(ids, [(1, "b"), (2, "c")]);
        assert_eq!(m.recent(1)[0].sample_id, "c");
        assert_eq!(m.recent(5).len(), 2);
    }

    #[test]
    fn prompt_history_block() {
        let s = EvalSample::new("s", "q", "CREATE TABLE t(a)", "SELECT a FROM t");
        let cfg = SynthesisConfig::default();
        let p = critique_prompt(&s, &[], &cfg);
        assert!(!p[1].content.contains(HISTORY_HEADER));
        let long = MemoryEntry {
            seq: 0,
            sample_id: "old".into(),
            summary: "x".repeat(500),
            align: AlignOutcome::Accepted,
        };
        let p = critique_prompt(&s, &[long], &cfg);
        assert!(p[1].content.starts_with(HISTORY_HEADER));
        assert!(p[1].content.contains("[ACCEPTED] old"));
        assert!(p[1].content.contains(&"x".repeat(200)));
        assert!(!p[1].content.contains(&"x".repeat(201)));
    }

    #[test]
    fn feedback_from_figure_one_stub() {
        let s = EvalSample::new("s", "q", "m", "SELECT 1");
        let generator = ScriptedBackend::new(vec![Ok(FIGURE_ONE.into())]);
        let c = generate_feedback(&s, &[], &generator, &SynthesisConfig::default()).unwrap();
        assert_eq!(c.verdict, Some(false));
        assert!(c.corrected_sql.is_some());
    }

    #[test]
    fn persistent_format_failure() {
        let s = EvalSample::new("s", "q", "m", "SELECT 1");
        let generator = ScriptedBackend::new(vec![Ok("garbage".into()), Ok("more garbage".into())]);
        let err = generate_feedback(&s, &[], &generator, &SynthesisConfig::default()).unwrap_err();
        assert_eq!(err, SynthesisError::PersistentFormatFailure { attempts: 2 });
        assert_eq!(generator.call_count(), 2);

        let down = ScriptedBackend::new(vec![Err(LlmError::Status(500))]);
        let err = generate_feedback(&s, &[], &down, &SynthesisConfig::default()).unwrap_err();
        assert!(matches!(err, SynthesisError::GeneratorUnavailable(_)));
    }

    #[test]
    fn correction_sources() {
        let s = EvalSample::new("s", "q", "m", "SELECT a FROM t");
        let unused = ScriptedBackend::new(vec![]);
        let c = critique(false, Some("SELECT a FROM t WHERE a > 1"));
        assert_eq!(correct_sql(&s, &c, &unused).unwrap(), "SELECT a FROM t WHERE a > 1");
        assert_eq!(unused.call_count(), 0);

        let stub = ScriptedBackend::new(vec![Ok("```sql\nSELECT 2\n```".into())]);
        let mut c = critique(false, None);
        c.corrected_sql = None;
        assert_eq!(correct_sql(&s, &c, &stub).unwrap(), "SELECT 2");

        let err = correct_sql(&s, &critique(true, None), &unused).unwrap_err();
        assert!(matches!(err, SynthesisError::Precondition(_)));
    }

    #[test]
    fn align_branches() {
        let (_dir, db) = scratch();
        let exec = SqlExecutor::new(ExecConfig::default());
        let wrong = EvalSample::new("w", "q", "m", "SELECT a FROM t")
            .with_gold("SELECT a FROM t WHERE a > 1")
            .with_db(db.clone());
        let right = EvalSample::new("r", "q", "m", "SELECT a FROM t WHERE 1 < a")
            .with_gold("SELECT a FROM t WHERE a > 1")
            .with_db(db.clone());
        let m = NoPartialMatch;

        let d = align_filter(&right, &critique(true, None), None, &exec, &m);
        assert_eq!((d.outcome, d.exec_label), (AlignOutcome::Accepted, Some(true)));
        let d = align_filter(&wrong, &critique(false, Some("SELECT b FROM t")), None, &exec, &m);
        assert_eq!(d.outcome, AlignOutcome::Accepted);
        let d = align_filter(&wrong, &critique(true, None), None, &exec, &m);
        assert_eq!(d.outcome, AlignOutcome::RejectedVerdict);

        // verdict False on a correct prediction: rescued only by the correction
        let c = critique(false, Some("SELECT a FROM t WHERE a >= 2"));
        assert_eq!(align_filter(&right, &c, None, &exec, &m).outcome, AlignOutcome::Accepted);
        let c = critique(false, Some("SELECT a FROM t WHERE a > 2"));
        let d = align_filter(&right, &c, None, &exec, &m);
        assert_eq!(d.outcome, AlignOutcome::RejectedCorrection);
        assert_eq!(d.partial_accepted, Some(false));
        let d = align_filter(&right, &c, None, &exec, &TreeEditMatcher::default());
        assert_eq!(d.outcome, AlignOutcome::Accepted);
        assert_eq!(d.partial_accepted, Some(true));

        let bad_gold = right.clone().with_gold("SELECT nope FROM t");
        assert_eq!(align_filter(&bad_gold, &c, None, &exec, &m).outcome, AlignOutcome::Errored);
        let no_db = right.clone().with_db(DatabaseRef::new("gone", "/nonexistent/x.sqlite"));
        assert_eq!(align_filter(&no_db, &c, None, &exec, &m).outcome, AlignOutcome::Errored);
    }

    #[test]
    fn pipeline_is_deterministic_and_fills_memory() {
        let (_dir, db) = scratch();
        let exec = SqlExecutor::new(ExecConfig::default());
        let samples: Vec<EvalSample> = (0..9)
            .map(|i| {
                EvalSample::new(format!("s{i}"), "q", "m", if i % 2 == 0 { "SELECT a FROM t" } else { "SELECT b FROM t" })
                    .with_gold("SELECT a FROM t")
                    .with_db(db.clone())
            })
            .collect();
        let generator = FnBackend(|msgs: &[ChatMessage]| {
            let user = &msgs[1].content;
            let verdict = user.contains("Predicted SQL: SELECT a FROM t");
            Ok(if verdict {
                "<think>\n1. Right column?\n- Yes.\n</think><result>True</result>".to_string()
            } else {
                "<think>\n1. Right column?\n- No, it should select a.\n</think><result>False</result>\
                 <correctedSQL>SELECT a FROM t</correctedSQL>"
                    .to_string()
            })
        });
        let agents = SynthesisAgents {
            generator: &generator,
            corrector: &generator,
            exec: &exec,
            matcher: &NoPartialMatch,
        };
        let cfg = SynthesisConfig {
            memory_capacity: 4,
            ..SynthesisConfig::default()
        };
        let mut m1 = MemoryBuffer::new(cfg.memory_capacity);
        let a = run_pipeline(&samples, &agents, &cfg, &mut m1, Strategy::Parallel);
        let mut m2 = MemoryBuffer::new(cfg.memory_capacity);
        let b = run_pipeline(&samples, &agents, &cfg, &mut m2, Strategy::Sequential);
        assert_eq!(a, b);
        assert_eq!(m1, m2);
        assert!(a.iter().all(|r| r.align == AlignOutcome::Accepted));
        assert_eq!(m1.len(), 4);
        assert_eq!(m1.iter().last().unwrap().sample_id, "s8");
        let corpus_row = a[1].to_corpus_sample().unwrap();
        assert_eq!(corpus_row.label, Some(false));
        assert!(corpus_row.critique_text.unwrap().contains("<result>False</result>"));
    }
}
