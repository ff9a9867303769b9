//! Parsing of critique responses.
//!
//! A well-formed response looks like
//!
//! ```text
//! <think>
//! 1. Did I join the necessary tables?
//! - No, the query does not join the "molecule" table ...
//! </think>
//! <result> False </result>
//! <correctedSQL>
//! SELECT ...
//! </correctedSQL>
//! ```
//!
//! [`parse_critique`] is total: anything it cannot make sense of is recorded
//! as a [`Violation`] in the [`FormatReport`] instead of failing.

use serde::{Deserialize, Serialize};

pub const THINK_TAG: &str = "think";
pub const RESULT_TAG: &str = "result";
pub const CORRECTED_TAG: &str = "correctedSQL";

/// Format defects detected while parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    MissingThink,
    MissingResult,
    BadVerdictToken,
    TagOrder,
    EmptySteps,
    MissingCorrection,
    UnparseableStep,
}

impl Violation {
    pub fn code(self) -> &'static str {
        match self {
            Violation::MissingThink => "MISSING_THINK",
            Violation::MissingResult => "MISSING_RESULT",
            Violation::BadVerdictToken => "BAD_VERDICT_TOKEN",
            Violation::TagOrder => "TAG_ORDER",
            Violation::EmptySteps => "EMPTY_STEPS",
            Violation::MissingCorrection => "MISSING_CORRECTION",
            Violation::UnparseableStep => "UNPARSEABLE_STEP",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormatReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl FormatReport {
    fn from_violations(mut violations: Vec<Violation>) -> Self {
        violations.sort();
        violations.dedup();
        FormatReport {
            valid: violations.is_empty(),
            violations,
        }
    }

    pub fn has(&self, v: Violation) -> bool {
        self.violations.contains(&v)
    }
}

/// One self-asked rubric question and its inspection answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricStep {
    /// 1-based ordinal within the response.
    pub index: usize,
    pub question: String,
    pub answer: String,
    /// Whether the answer asserts a defect in the predicted SQL.
    pub flags_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueResponse {
    pub steps: Vec<RubricStep>,
    /// `Some(true)` when the predicted SQL was judged correct.
    pub verdict: Option<bool>,
    pub corrected_sql: Option<String>,
    pub raw: String,
    pub format: FormatReport,
}

impl CritiqueResponse {
    pub fn n_steps(&self) -> usize {
        self.steps.len()
    }

    /// True when any step asserts a defect.
    pub fn flags_error(&self) -> bool {
        self.steps.iter().any(|s| s.flags_error)
    }

    /// Serializes back into the tag format. Reparsing the output of a valid
    /// response yields the same steps, verdict and correction.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("<think>\n");
        for step in &self.steps {
            out.push_str(&format!("{}. {}\n", step.index, step.question));
            for line in step.answer.lines() {
                out.push_str("- ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out.push_str("</think>\n");
        if let Some(v) = self.verdict {
            out.push_str(&format!(
                "<result> {} </result>\n",
                if v { "True" } else { "False" }
            ));
        }
        if let Some(sql) = &self.corrected_sql {
            out.push_str("<correctedSQL>\n");
            out.push_str(sql);
            out.push_str("\n</correctedSQL>\n");
        }
        out
    }
}

/// Located tag block: byte offsets of the open tag start, content span, and
/// close tag end.
#[derive(Debug, Clone, Copy)]
struct Block {
    start: usize,
    content: (usize, usize),
    end: usize,
}

struct TagScan {
    block: Option<Block>,
    duplicated: bool,
    unclosed: bool,
}

fn scan_tag(text: &str, name: &str) -> TagScan {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let opens: Vec<usize> = text.match_indices(&open).map(|(i, _)| i).collect();
    let closes: Vec<usize> = text.match_indices(&close).map(|(i, _)| i).collect();
    let duplicated = opens.len() > 1 || closes.len() > 1;
    let Some(&first_open) = opens.first() else {
        return TagScan {
            block: None,
            duplicated,
            unclosed: !closes.is_empty(),
        };
    };
    let content_start = first_open + open.len();
    match closes.iter().find(|&&c| c >= content_start) {
        Some(&c) => TagScan {
            block: Some(Block {
                start: first_open,
                content: (content_start, c),
                end: c + close.len(),
            }),
            duplicated,
            unclosed: false,
        },
        None => TagScan {
            block: None,
            duplicated,
            unclosed: true,
        },
    }
}

/// Parse raw critique text. Never fails.
pub fn parse_critique(text: &str) -> CritiqueResponse {
    let mut violations = Vec::new();

    let think = scan_tag(text, THINK_TAG);
    let result = scan_tag(text, RESULT_TAG);
    let corrected = scan_tag(text, CORRECTED_TAG);

    for scan in [&think, &result, &corrected] {
        if scan.duplicated {
            violations.push(Violation::TagOrder);
        }
    }
    // A corrected block that was opened but never closed is still a tag defect.
    if corrected.unclosed {
        violations.push(Violation::TagOrder);
    }

    let present: Vec<Block> = [think.block, result.block, corrected.block]
        .into_iter()
        .flatten()
        .collect();
    if present.windows(2).any(|w| w[0].end > w[1].start) {
        violations.push(Violation::TagOrder);
    }

    let steps = match think.block {
        Some(b) => {
            let (steps, bad) = parse_steps(&text[b.content.0..b.content.1]);
            if bad {
                violations.push(Violation::UnparseableStep);
            }
            steps
        }
        None => {
            violations.push(Violation::MissingThink);
            Vec::new()
        }
    };
    if steps.is_empty() {
        violations.push(Violation::EmptySteps);
    }

    let verdict = match result.block {
        Some(b) => {
            let token = text[b.content.0..b.content.1].trim();
            if token.eq_ignore_ascii_case("true") {
                Some(true)
            } else if token.eq_ignore_ascii_case("false") {
                Some(false)
            } else {
                violations.push(Violation::BadVerdictToken);
                None
            }
        }
        None => {
            violations.push(Violation::MissingResult);
            None
        }
    };

    let correction = corrected
        .block
        .map(|b| strip_code_fence(&text[b.content.0..b.content.1]))
        .filter(|s| !s.is_empty());
    let corrected_sql = match verdict {
        Some(false) => {
            if correction.is_none() {
                violations.push(Violation::MissingCorrection);
            }
            correction
        }
        // A correction attached to a positive verdict is ignored.
        Some(true) => None,
        None => correction,
    };

    CritiqueResponse {
        steps,
        verdict,
        corrected_sql,
        raw: text.to_string(),
        format: FormatReport::from_violations(violations),
    }
}

/// R_format: 1 iff the response is well formed.
pub fn check_format(resp: &CritiqueResponse) -> u8 {
    u8::from(resp.format.valid)
}

fn strip_code_fence(s: &str) -> String {
    let t = s.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.strip_suffix("```").unwrap_or(rest);
        // drop an info string such as "sql"
        let body = match rest.find('\n') {
            Some(nl) if rest[..nl].chars().all(|c| c.is_ascii_alphanumeric()) => &rest[nl + 1..],
            _ => rest,
        };
        return body.trim().to_string();
    }
    t.to_string()
}

/// Returns the question text if `line` opens a step (`12. ...` or `12: ...`).
fn step_header(line: &str) -> Option<&str> {
    let t = line.trim();
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 3 {
        return None;
    }
    let rest = &t[digits..];
    let sep = rest.chars().next()?;
    if sep != '.' && sep != ':' {
        return None;
    }
    let after = &rest[1..];
    if !after.is_empty() && !after.starts_with(char::is_whitespace) {
        return None;
    }
    Some(after.trim())
}

fn answer_line(line: &str) -> &str {
    let t = line.trim();
    t.strip_prefix('-')
        .or_else(|| t.strip_prefix("* "))
        .unwrap_or(t)
        .trim()
}

/// Splits a think block into steps. The flag is set when a header without a
/// question or without any answer text was dropped.
fn parse_steps(block: &str) -> (Vec<RubricStep>, bool) {
    let mut raw: Vec<(String, Vec<String>)> = Vec::new();
    for line in block.lines() {
        if let Some(q) = step_header(line) {
            raw.push((q.to_string(), Vec::new()));
        } else if let Some((_, answer)) = raw.last_mut() {
            let a = answer_line(line);
            if !a.is_empty() {
                answer.push(a.to_string());
            }
        }
    }

    let mut bad = false;
    let mut steps = Vec::with_capacity(raw.len());
    for (question, lines) in raw {
        if question.is_empty() || lines.is_empty() {
            bad = true;
            continue;
        }
        let answer = lines.join("\n");
        steps.push(RubricStep {
            index: steps.len() + 1,
            flags_error: answer_flags_error(&answer),
            question,
            answer,
        });
    }
    (steps, bad)
}

const DEFECT_PHRASES: &[&str] = &[
    "does not",
    "doesn't",
    "did not",
    "didn't",
    "is not correct",
    "isn't correct",
    "not specific enough",
    "is missing",
    "are missing",
    "missing the",
    "incorrect",
    "wrong",
    "should be",
    "should have",
    "needs to be",
    "need to be",
    "fails to",
    "failed to",
    "instead of the correct",
];

/// Deterministic defect classifier for a rubric answer: an answer that leads
/// with "No" or contains an explicit defect phrase flags an error.
pub fn answer_flags_error(answer: &str) -> bool {
    let lower = answer.trim().to_lowercase();
    let leads_with_no = lower
        .strip_prefix("no")
        .is_some_and(|rest| !rest.starts_with(|c: char| c.is_alphanumeric()));
    leads_with_no || DEFECT_PHRASES.iter().any(|p| lower.contains(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIGURE_ONE: &str = include_str!("../fixtures/critiques/figure1.txt");

    #[test]
    fn figure_one_transcript() {
        let r = parse_critique(FIGURE_ONE);
        assert!(r.format.valid, "{:?}", r.format);
        assert_eq!(r.verdict, Some(false));
        assert_eq!(r.steps.len(), 2);
        assert!(!r.steps[0].flags_error);
        assert!(r.steps[1].flags_error);
        assert!(r.steps[1].answer.ends_with("..."));
        assert!(r.corrected_sql.as_deref().unwrap().contains("JOIN molecule m"));
        assert_eq!(check_format(&r), 1);
    }

    #[test]
    fn positive_verdict_without_correction_is_valid() {
        let r = parse_critique(
            "<think>\n1. Did I use the correct tables?\n- Yes, the superpower table.\n</think>\n<result> True </result>",
        );
        assert!(r.format.valid);
        assert_eq!(r.verdict, Some(true));
        assert!(r.corrected_sql.is_none());
    }

    #[test]
    fn empty_input() {
        let r = parse_critique("");
        assert!(!r.format.valid);
        assert!(r.format.has(Violation::MissingThink));
        assert!(r.format.has(Violation::MissingResult));
        assert_eq!(check_format(&r), 0);
    }

    #[test]
    fn negative_verdict_requires_correction() {
        let r = parse_critique("<think>\n1. Q?\n- No.\n</think>\n<result>False</result>");
        assert_eq!(r.format.violations, vec![Violation::MissingCorrection]);
        assert_eq!(check_format(&r), 0);

        let r = parse_critique(
            "<think>\n1. Q?\n- No.\n</think>\n<result>False</result><correctedSQL>  </correctedSQL>",
        );
        assert!(r.format.has(Violation::MissingCorrection));
    }

    #[test]
    fn bad_verdict_token() {
        let r = parse_critique("<think>\n1. Q?\n- Yes.\n</think>\n<result> Maybe </result>");
        assert_eq!(r.format.violations, vec![Violation::BadVerdictToken]);
        assert_eq!(r.verdict, None);
    }

    #[test]
    fn verdict_is_case_insensitive() {
        let r = parse_critique("<think>\n1: Q?\nYes.\n</think><result>tRUE</result>");
        assert!(r.format.valid);
        assert_eq!(r.verdict, Some(true));
        assert_eq!(r.steps[0].answer, "Yes.");
    }

    #[test]
    fn duplicate_and_misordered_tags() {
        let dup = "<think>\n1. Q?\n- Yes.\n</think><result>True</result><result>False</result>";
        let r = parse_critique(dup);
        assert!(r.format.has(Violation::TagOrder));
        assert_eq!(r.verdict, Some(true), "first occurrence wins");

        let order = "<result>True</result><think>\n1. Q?\n- Yes.\n</think>";
        assert!(parse_critique(order).format.has(Violation::TagOrder));
    }

    #[test]
    fn unparseable_steps_are_dropped() {
        let r = parse_critique("<think>\n1. Q?\n- A.\n2.\n- orphan\n3. Q3?\n</think><result>True</result>");
        assert!(r.format.has(Violation::UnparseableStep));
        assert_eq!(r.steps.len(), 1);
        assert_eq!(r.steps[0].index, 1);
    }

    #[test]
    fn steps_are_reindexed_from_one() {
        let r = parse_critique(
            "<think>\n...\n4: Did I order by time?\n- The query doesn't guarantee it.\n</think><result>False</result><correctedSQL>SELECT 1</correctedSQL>",
        );
        assert!(r.format.valid);
        assert_eq!(r.steps[0].index, 1);
        assert!(r.steps[0].flags_error);
    }

    #[test]
    fn fenced_correction_is_unwrapped() {
        let r = parse_critique(
            "<think>\n1. Q?\n- No.\n</think><result>False</result><correctedSQL>\n```sql\nSELECT 2\n```\n</correctedSQL>",
        );
        assert_eq!(r.corrected_sql.as_deref(), Some("SELECT 2"));
    }

    #[test]
    fn flag_heuristic() {
        assert!(answer_flags_error("No, the query does not join"));
        assert!(answer_flags_error("no."));
        assert!(!answer_flags_error("None of the columns are redundant."));
        assert!(!answer_flags_error("Yes, the clause correctly filters."));
        assert!(answer_flags_error("The condition is not specific enough."));
        assert!(!answer_flags_error("Nothing to add."));
    }

    #[test]
    fn render_round_trip() {
        let r = parse_critique(FIGURE_ONE);
        let again = parse_critique(&r.render());
        assert_eq!(again.steps, r.steps);
        assert_eq!(again.verdict, r.verdict);
        assert_eq!(again.corrected_sql, r.corrected_sql);
        assert_eq!(again.format, r.format);
    }
}
