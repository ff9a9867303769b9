//! Evaluation samples: corpus files, execution labeling, hardness classes,
//! class balancing and corpus statistics.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sqlparser::ast::{BinaryOperator, Expr, GroupByExpr, Query, Select, SetExpr, Visit, Visitor};

pub use crate::exec::DatabaseRef;
use crate::exec::{parse_sql, MatchOutcome, SqlExecutor, SqlParseError};
use crate::metrics::count_with_percent;
use crate::par::{self, Strategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Hardness {
    Easy,
    Medium,
    Hard,
    Extra,
    #[default]
    Unknown,
}

impl Hardness {
    pub const ALL: [Hardness; 5] = [
        Hardness::Easy,
        Hardness::Medium,
        Hardness::Hard,
        Hardness::Extra,
        Hardness::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Hardness::Easy => "easy",
            Hardness::Medium => "medium",
            Hardness::Hard => "hard",
            Hardness::Extra => "extra",
            Hardness::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Hardness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One judging task. Serialized one per line in corpus files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub sample_id: String,
    pub question: String,
    /// `CREATE TABLE` statements.
    pub schema_text: String,
    pub predicted_sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_sql: Option<String>,
    /// True when the predicted SQL is correct.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    #[serde(default)]
    pub db: DatabaseRef,
    #[serde(default)]
    pub hardness: Hardness,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critique_text: Option<String>,
}

impl EvalSample {
    pub fn new(
        sample_id: impl Into<String>,
        question: impl Into<String>,
        schema_text: impl Into<String>,
        predicted_sql: impl Into<String>,
    ) -> Self {
        EvalSample {
            sample_id: sample_id.into(),
            question: question.into(),
            schema_text: schema_text.into(),
            predicted_sql: predicted_sql.into(),
            gold_sql: None,
            label: None,
            db: DatabaseRef::default(),
            hardness: Hardness::Unknown,
            critique_text: None,
        }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold_sql = Some(gold.into());
        self
    }

    pub fn with_label(mut self, label: bool) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_db(mut self, db: DatabaseRef) -> Self {
        self.db = db;
        self
    }

    pub fn with_critique(mut self, text: impl Into<String>) -> Self {
        self.critique_text = Some(text.into());
        self
    }

    /// Anchors the database reference under `root`.
    pub fn resolve_db(&mut self, root: &Path) {
        self.db = self.db.resolved(root);
    }

    /// Checks the required text fields.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for (field, value) in [
            ("sample_id", &self.sample_id),
            ("question", &self.question),
            ("schema_text", &self.schema_text),
            ("predicted_sql", &self.predicted_sql),
        ] {
            if value.trim().is_empty() {
                return Err(DatasetError::EmptyField {
                    sample_id: self.sample_id.clone(),
                    field,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Record {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("sample `{sample_id}`: field `{field}` is empty")]
    EmptyField { sample_id: String, field: &'static str },
}

/// Reads a line-delimited corpus. Blank lines are skipped; every record is
/// validated.
pub fn read_corpus(path: &Path) -> Result<Vec<EvalSample>, DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: EvalSample = serde_json::from_str(&line).map_err(|source| DatasetError::Record {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, samples: &[EvalSample]) -> Result<(), DatasetError> {
    let io_err = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write_records(&mut w, samples).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Writes any serializable records one JSON document per line.
pub fn write_records<W: Write, T: Serialize>(w: &mut W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LabelOutcome {
    Labeled { label: bool },
    /// The gold query itself failed; the sample is quarantined.
    Unusable { reason: String },
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("sample `{0}` has no gold SQL")]
    MissingGold(String),
    #[error("database for sample `{0}` cannot be opened")]
    DbUnavailable(String),
}

/// Correctness of the predicted SQL by execution against the gold query.
pub fn label_by_execution(sample: &EvalSample, exec: &SqlExecutor) -> Result<LabelOutcome, LabelError> {
    let gold = sample
        .gold_sql
        .as_deref()
        .ok_or_else(|| LabelError::MissingGold(sample.sample_id.clone()))?;
    if !exec.can_open(&sample.db) {
        return Err(LabelError::DbUnavailable(sample.sample_id.clone()));
    }
    Ok(match exec.exec_match(&sample.predicted_sql, gold, &sample.db) {
        MatchOutcome::Equiv => LabelOutcome::Labeled { label: true },
        MatchOutcome::NotEquiv | MatchOutcome::PredError => LabelOutcome::Labeled { label: false },
        MatchOutcome::RefError => LabelOutcome::Unusable {
            reason: "gold query failed to execute".into(),
        },
    })
}

pub fn label_corpus(
    samples: &[EvalSample],
    exec: &SqlExecutor,
    strategy: Strategy,
) -> Vec<Result<LabelOutcome, LabelError>> {
    par::map(strategy, samples, |s| label_by_execution(s, exec))
}

/// Upper bounds on the component count for each hardness class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardnessThresholds {
    /// Easy: no joins, no advanced components, at most this many components.
    pub easy_max: usize,
    /// Medium: no advanced components.
    pub medium_max: usize,
    /// Hard without advanced components.
    pub hard_max: usize,
    /// Hard with exactly one advanced class present.
    pub hard_with_advanced_max: usize,
}

impl Default for HardnessThresholds {
    fn default() -> Self {
        HardnessThresholds {
            easy_max: 1,
            medium_max: 3,
            hard_max: 5,
            hard_with_advanced_max: 3,
        }
    }
}

/// Structural counts that drive hardness.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SqlComponents {
    pub select_columns: usize,
    pub aggregates: usize,
    pub where_predicates: usize,
    pub group_by: usize,
    pub having: usize,
    pub order_by: usize,
    pub limit: usize,
    pub joins: usize,
    pub or_ops: usize,
    pub like_ops: usize,
    pub set_ops: usize,
    /// Subqueries below the outermost query.
    pub nested: usize,
}

impl SqlComponents {
    /// Simple component total.
    pub fn count(&self) -> usize {
        self.where_predicates
            + self.group_by
            + self.having
            + self.order_by
            + self.limit
            + self.or_ops
            + self.like_ops
            + self.joins
            + usize::from(self.aggregates > 1)
            + usize::from(self.select_columns > 1)
    }

    /// Number of advanced classes (set operations, nesting) present.
    pub fn advanced_classes(&self) -> usize {
        usize::from(self.set_ops > 0) + usize::from(self.nested > 0)
    }
}

const AGGREGATES: [&str; 5] = ["count", "sum", "avg", "min", "max"];

fn predicate_leaves(e: &Expr) -> usize {
    match e {
        Expr::BinaryOp {
            left,
            op: BinaryOperator::And | BinaryOperator::Or,
            right,
        } => predicate_leaves(left) + predicate_leaves(right),
        Expr::Nested(inner) => predicate_leaves(inner),
        _ => 1,
    }
}

fn count_set_ops(body: &SetExpr) -> usize {
    match body {
        SetExpr::SetOperation { left, right, .. } => 1 + count_set_ops(left) + count_set_ops(right),
        _ => 0,
    }
}

#[derive(Default)]
struct ComponentCounter {
    c: SqlComponents,
    queries: usize,
}

impl Visitor for ComponentCounter {
    type Break = ();

    fn pre_visit_query(&mut self, q: &Query) -> ControlFlow<()> {
        self.queries += 1;
        self.c.set_ops += count_set_ops(&q.body);
        if let Some(ob) = &q.order_by {
            if let sqlparser::ast::OrderByKind::Expressions(exprs) = &ob.kind {
                self.c.order_by += usize::from(!exprs.is_empty());
            } else {
                self.c.order_by += 1;
            }
        }
        self.c.limit += usize::from(q.limit_clause.is_some());
        ControlFlow::Continue(())
    }

    fn pre_visit_select(&mut self, s: &Select) -> ControlFlow<()> {
        self.c.select_columns += s.projection.len();
        self.c.joins += s.from.iter().map(|t| t.joins.len()).sum::<usize>();
        // comma-separated FROM items are implicit joins
        self.c.joins += s.from.len().saturating_sub(1);
        if let Some(w) = &s.selection {
            self.c.where_predicates += predicate_leaves(w);
        }
        let grouped = match &s.group_by {
            GroupByExpr::All(_) => true,
            GroupByExpr::Expressions(exprs, _) => !exprs.is_empty(),
        };
        self.c.group_by += usize::from(grouped);
        self.c.having += usize::from(s.having.is_some());
        ControlFlow::Continue(())
    }

    fn pre_visit_expr(&mut self, e: &Expr) -> ControlFlow<()> {
        match e {
            Expr::BinaryOp { op: BinaryOperator::Or, .. } => self.c.or_ops += 1,
            Expr::Like { .. } | Expr::ILike { .. } => self.c.like_ops += 1,
            Expr::Function(f) => {
                let name = f.name.to_string().to_ascii_lowercase();
                if AGGREGATES.contains(&name.as_str()) {
                    self.c.aggregates += 1;
                }
            }
            _ => {}
        }
        ControlFlow::Continue(())
    }
}

/// Counts the structural components of a single SQL query.
pub fn sql_components(sql: &str) -> Result<SqlComponents, SqlParseError> {
    let stmts = parse_sql(sql)?;
    let mut v = ComponentCounter::default();
    let _ = stmts.visit(&mut v);
    v.c.nested = v.queries.saturating_sub(stmts.len());
    Ok(v.c)
}

/// Spider-style difficulty from component counts.
///
/// | class  | rule |
/// |--------|------|
/// | easy   | no set ops, no nesting, no joins, count <= `easy_max` |
/// | medium | no set ops, no nesting, count <= `medium_max` |
/// | hard   | no advanced class and count <= `hard_max`, or one advanced class and count <= `hard_with_advanced_max` |
/// | extra  | anything else |
pub fn classify_components(c: &SqlComponents, t: &HardnessThresholds) -> Hardness {
    let n = c.count();
    match c.advanced_classes() {
        0 if c.joins == 0 && n <= t.easy_max => Hardness::Easy,
        0 if n <= t.medium_max => Hardness::Medium,
        0 if n <= t.hard_max => Hardness::Hard,
        1 if n <= t.hard_with_advanced_max => Hardness::Hard,
        _ => Hardness::Extra,
    }
}

pub fn classify_hardness(sql: &str) -> Result<Hardness, SqlParseError> {
    classify_hardness_with(sql, &HardnessThresholds::default())
}

pub fn classify_hardness_with(sql: &str, t: &HardnessThresholds) -> Result<Hardness, SqlParseError> {
    Ok(classify_components(&sql_components(sql)?, t))
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum BalanceError {
    #[error("corpus needs both classes (positives: {positives}, negatives: {negatives})")]
    InsufficientClass { positives: usize, negatives: usize },
    #[error("target ratio must lie strictly between 0 and 1, got {0}")]
    BadRatio(f64),
    #[error("sample `{0}` has no label")]
    Unlabeled(String),
}

/// Down-samples the majority class so positives make up `target_pos_ratio`
/// of the result (within one sample). Minority samples are all kept and the
/// original order is preserved.
pub fn balance_sample(
    corpus: &[EvalSample],
    target_pos_ratio: f64,
    seed: u64,
) -> Result<Vec<EvalSample>, BalanceError> {
    if !(target_pos_ratio > 0.0 && target_pos_ratio < 1.0) {
        return Err(BalanceError::BadRatio(target_pos_ratio));
    }
    if let Some(s) = corpus.iter().find(|s| s.label.is_none()) {
        return Err(BalanceError::Unlabeled(s.sample_id.clone()));
    }
    let pos: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].label == Some(true)).collect();
    let neg: Vec<usize> = (0..corpus.len()).filter(|&i| corpus[i].label == Some(false)).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(BalanceError::InsufficientClass {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    let (p, n, r) = (pos.len() as f64, neg.len() as f64, target_pos_ratio);
    let (majority, keep) = if p / (p + n) > r {
        (&pos, ((r * n / (1.0 - r)).round() as usize).max(1))
    } else {
        (&neg, ((p * (1.0 - r) / r).round() as usize).max(1))
    };
    if keep >= majority.len() {
        return Ok(corpus.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, majority.len(), keep);
    let mut drop = vec![false; corpus.len()];
    for &i in majority.iter() {
        drop[i] = true;
    }
    for k in chosen.iter() {
        drop[majority[k]] = false;
    }
    Ok(corpus
        .iter()
        .zip(drop)
        .filter(|(_, d)| !d)
        .map(|(s, _)| s.clone())
        .collect())
}

/// Class and hardness counts in the shape of a corpus statistics table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub positive: usize,
    pub negative: usize,
    pub unlabeled: usize,
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
    pub extra: usize,
    pub unknown: usize,
}

pub fn corpus_stats(corpus: &[EvalSample]) -> CorpusStats {
    let mut s = CorpusStats {
        total: corpus.len(),
        ..CorpusStats::default()
    };
    for x in corpus {
        match x.label {
            Some(true) => s.positive += 1,
            Some(false) => s.negative += 1,
            None => s.unlabeled += 1,
        }
        *s.hardness_mut(x.hardness) += 1;
    }
    s
}

impl CorpusStats {
    fn hardness_mut(&mut self, h: Hardness) -> &mut usize {
        match h {
            Hardness::Easy => &mut self.easy,
            Hardness::Medium => &mut self.medium,
            Hardness::Hard => &mut self.hard,
            Hardness::Extra => &mut self.extra,
            Hardness::Unknown => &mut self.unknown,
        }
    }

    pub fn hardness_count(&self, h: Hardness) -> usize {
        match h {
            Hardness::Easy => self.easy,
            Hardness::Medium => self.medium,
            Hardness::Hard => self.hard,
            Hardness::Extra => self.extra,
            Hardness::Unknown => self.unknown,
        }
    }

    /// `(row label, "count (pct%)")` pairs. Unlabeled and unknown rows
    /// appear only when non-zero.
    pub fn rows(&self) -> Vec<(String, String)> {
        let mut rows = vec![
            ("Total".to_string(), self.total.to_string()),
            ("Positive".to_string(), count_with_percent(self.positive, self.total)),
            ("Negative".to_string(), count_with_percent(self.negative, self.total)),
        ];
        if self.unlabeled > 0 {
            rows.push(("Unlabeled".into(), count_with_percent(self.unlabeled, self.total)));
        }
        for h in Hardness::ALL {
            let n = self.hardness_count(h);
            if h == Hardness::Unknown && n == 0 {
                continue;
            }
            let mut name = h.as_str().to_string();
            name[..1].make_ascii_uppercase();
            rows.push((name, count_with_percent(n, self.total)));
        }
        rows
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: serde_json::Map<String, serde_json::Value> = self
            .rows()
            .into_iter()
            .map(|(k, v)| (k.to_ascii_lowercase(), serde_json::Value::String(v)))
            .collect();
        serde_json::json!({ "counts": self, "formatted": rows })
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Binary Distribution")?;
        for (k, v) in self.rows() {
            if k == "Easy" {
                writeln!(f, "Hardness Distribution")?;
            }
            writeln!(f, "  {k:<10} {v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(n_pos: usize, n_neg: usize) -> Vec<EvalSample> {
        (0..n_pos + n_neg)
            .map(|i| EvalSample::new(format!("s{i}"), "q", "CREATE TABLE t(a)", "SELECT a FROM t").with_label(i < n_pos))
            .collect()
    }

    #[test]
    fn record_round_trip() {
        let s = EvalSample::new("a", "q", "CREATE TABLE t(a)", "SELECT a FROM t")
            .with_gold("SELECT a FROM t")
            .with_label(true)
            .with_db(DatabaseRef::new("t", "/tmp/t.sqlite"));
        let line = serde_json::to_string(&s).unwrap();
        let back: EvalSample = serde_json::from_str(&line).unwrap();
        assert_eq!(back, s);

        let minimal: EvalSample = serde_json::from_str(
            r#"{"sample_id":"b","question":"q","schema_text":"m","predicted_sql":"SELECT 1","db":"superhero"}"#,
        )
        .unwrap();
        assert_eq!(minimal.db.db_id, "superhero");
        assert_eq!(minimal.hardness, Hardness::Unknown);
        let mut m = minimal;
        m.resolve_db(Path::new("/data"));
        assert_eq!(m.db.path, Path::new("/data/superhero/superhero.sqlite"));
    }

    #[test]
    fn validation_rejects_empty_fields() {
        let s = EvalSample::new("a", "  ", "m", "SELECT 1");
        assert!(matches!(s.validate(), Err(DatasetError::EmptyField { field: "question", .. })));
    }

    #[test]
    fn corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let corpus = labeled(2, 3);
        write_corpus(&path, &corpus).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), corpus);
        std::fs::write(&path, "{\"sample_id\":1}\n").unwrap();
        assert!(matches!(read_corpus(&path), Err(DatasetError::Record { line: 1, .. })));
    }

    #[test]
    fn hardness_examples() {
        assert_eq!(classify_hardness("SELECT count(*) FROM t").unwrap(), Hardness::Easy);
        assert_eq!(
            classify_hardness("SELECT count(*) FROM a JOIN b ON a.id = b.aid").unwrap(),
            Hardness::Medium
        );
        assert_eq!(
            classify_hardness("SELECT x FROM a WHERE y IN (SELECT y FROM b) UNION SELECT x FROM c").unwrap(),
            Hardness::Extra
        );
        assert_eq!(
            classify_hardness("SELECT name FROM t WHERE a > 1 AND b < 2 ORDER BY c LIMIT 3").unwrap(),
            Hardness::Hard
        );
        assert_eq!(
            classify_hardness("SELECT a FROM t WHERE b = (SELECT max(b) FROM t)").unwrap(),
            Hardness::Hard
        );
        assert!(classify_hardness("SELEC nonsense").is_err());
    }

    #[test]
    fn component_counts() {
        let c = sql_components(
            "SELECT a, count(*) FROM t JOIN u ON t.id = u.id WHERE x LIKE 'a%' OR y = 2 GROUP BY a HAVING count(*) > 1",
        )
        .unwrap();
        assert_eq!(c.select_columns, 2);
        assert_eq!(c.aggregates, 2);
        assert_eq!(c.joins, 1);
        assert_eq!(c.where_predicates, 2);
        assert_eq!((c.or_ops, c.like_ops, c.group_by, c.having), (1, 1, 1, 1));
        assert_eq!((c.set_ops, c.nested), (0, 0));
    }

    #[test]
    fn balance_arithmetic() {
        let corpus = labeled(100, 300);
        let out = balance_sample(&corpus, 0.5, 7).unwrap();
        let stats = corpus_stats(&out);
        assert_eq!((stats.positive, stats.negative), (100, 100));
        // every minority sample survives, order preserved
        assert!(out.iter().take(100).all(|s| s.label == Some(true)));
        assert_eq!(out, balance_sample(&corpus, 0.5, 7).unwrap());
        assert_ne!(out, balance_sample(&corpus, 0.5, 8).unwrap());

        assert_eq!(balance_sample(&corpus, 0.25, 1).unwrap(), corpus);
        let few_neg = balance_sample(&labeled(90, 10), 0.5, 1).unwrap();
        assert_eq!(corpus_stats(&few_neg).positive, 10);

        assert_eq!(
            balance_sample(&labeled(4, 0), 0.5, 1),
            Err(BalanceError::InsufficientClass { positives: 4, negatives: 0 })
        );
        assert_eq!(balance_sample(&corpus, 1.0, 1), Err(BalanceError::BadRatio(1.0)));
    }

    #[test]
    fn stats_shape() {
        let mut corpus = labeled(1, 3);
        corpus[0].hardness = Hardness::Easy;
        let s = corpus_stats(&corpus);
        let rows = s.rows();
        assert_eq!(rows[1], ("Positive".into(), "1 (25.00%)".into()));
        assert_eq!(rows[2], ("Negative".into(), "3 (75.00%)".into()));
        assert!(rows.iter().any(|(k, v)| k == "Unknown" && v == "3 (75.00%)"));

        let empty = corpus_stats(&[]);
        assert_eq!(empty, CorpusStats::default());
        assert!(empty.to_string().contains("Positive   0 (0.00%)"));
    }

    #[test]
    fn table_three_shape() {
        let s = CorpusStats {
            total: 1644,
            positive: 776,
            negative: 868,
            easy: 57,
            medium: 620,
            hard: 246,
            extra: 721,
            ..CorpusStats::default()
        };
        let text = s.to_string();
        assert!(text.contains("Positive   776 (47.20%)"));
        assert!(text.contains("Negative   868 (52.80%)"));
        assert!(text.contains("Easy       57 (3.47%)"));
        assert!(text.contains("Medium     620 (37.71%)"));
        assert!(text.contains("Hard       246 (14.96%)"));
        assert!(text.contains("Extra      721 (43.86%)"));
        assert!(!text.contains("Unknown"));
        assert_eq!(s.to_json()["formatted"]["positive"], "776 (47.20%)");
    }
}
