//! Read-only SQL execution and result-set equivalence.
//!
//! Queries run against single-file SQLite databases laid out as
//! `<root>/<db_id>/<db_id>.sqlite`. Connections are opened read-only and kept
//! in a small per-database pool; a connection is never used by two executions
//! at once. Statements that are not plain queries are rejected before they
//! reach SQLite.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use sqlparser::ast::{Query, SetExpr, Statement, Visit, Visitor};
use sqlparser::dialect::SQLiteDialect;
use sqlparser::parser::Parser;

/// A database the evaluator can run queries against.
///
/// Deserializes from either a bare `db_id` string or `{db_id, path}`. An
/// empty or relative path is resolved against a database root later.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(from = "DatabaseRefRepr")]
pub struct DatabaseRef {
    pub db_id: String,
    #[serde(default, skip_serializing_if = "path_is_empty")]
    pub path: PathBuf,
}

fn path_is_empty(p: &Path) -> bool {
    p.as_os_str().is_empty()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DatabaseRefRepr {
    Id(String),
    Full {
        db_id: String,
        #[serde(default)]
        path: PathBuf,
    },
}

impl From<DatabaseRefRepr> for DatabaseRef {
    fn from(r: DatabaseRefRepr) -> Self {
        match r {
            DatabaseRefRepr::Id(db_id) => DatabaseRef { db_id, path: PathBuf::new() },
            DatabaseRefRepr::Full { db_id, path } => DatabaseRef { db_id, path },
        }
    }
}

impl DatabaseRef {
    pub fn new(db_id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        DatabaseRef {
            db_id: db_id.into(),
            path: path.into(),
        }
    }

    /// Resolves `<root>/<db_id>/<db_id>.sqlite`.
    pub fn under_root(root: &Path, db_id: &str) -> Self {
        DatabaseRef {
            db_id: db_id.to_string(),
            path: root.join(db_id).join(format!("{db_id}.sqlite")),
        }
    }

    /// Fills in the conventional location under `root` when the path is
    /// empty, and anchors a relative path at `root`.
    pub fn resolved(&self, root: &Path) -> Self {
        if path_is_empty(&self.path) {
            DatabaseRef::under_root(root, &self.db_id)
        } else if self.path.is_relative() {
            DatabaseRef::new(self.db_id.clone(), root.join(&self.path))
        } else {
            self.clone()
        }
    }
}

/// One result cell, typed as SQLite reports it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    fn class(&self) -> u8 {
        match self {
            Cell::Null => 0,
            Cell::Integer(_) | Cell::Real(_) => 1,
            Cell::Text(_) => 2,
            Cell::Blob(_) => 3,
        }
    }

    /// Total order used to canonicalize rows for multiset comparison.
    /// Numerically equal integers and reals sort adjacent.
    fn canonical_cmp(&self, other: &Cell) -> Ordering {
        use Cell::*;
        match (self, other) {
            (Integer(a), Integer(b)) => a.cmp(b),
            (Real(a), Real(b)) => a.total_cmp(b),
            (Integer(a), Real(b)) => (*a as f64).total_cmp(b).then(Ordering::Less),
            (Real(a), Integer(b)) => a.total_cmp(&(*b as f64)).then(Ordering::Greater),
            (Text(a), Text(b)) => a.as_bytes().cmp(b.as_bytes()),
            (Blob(a), Blob(b)) => a.cmp(b),
            _ => self.class().cmp(&other.class()),
        }
    }
}

fn reals_equal(a: f64, b: f64, tol: f64) -> bool {
    a == b || (tol > 0.0 && (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs()))
}

fn int_real_equal(i: i64, r: f64, tol: f64) -> bool {
    // exact path avoids the rounding of i64 -> f64
    let exact = r.fract() == 0.0 && r.abs() < 9.2e18 && r as i64 == i;
    exact || (tol > 0.0 && reals_equal(i as f64, r, tol))
}

/// Cell equality: nulls match only nulls, reals match within `tol`
/// (relative-or-absolute), text and blobs are byte-exact.
pub fn cells_equal(a: &Cell, b: &Cell, tol: f64) -> bool {
    use Cell::*;
    match (a, b) {
        (Null, Null) => true,
        (Integer(x), Integer(y)) => x == y,
        (Real(x), Real(y)) => reals_equal(*x, *y, tol),
        (Integer(x), Real(y)) | (Real(y), Integer(x)) => int_real_equal(*x, *y, tol),
        (Text(x), Text(y)) => x == y,
        (Blob(x), Blob(y)) => x == y,
        _ => false,
    }
}

fn rows_equal(a: &[Cell], b: &[Cell], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| cells_equal(x, y, tol))
}

fn row_cmp(a: &[Cell], b: &[Cell]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.canonical_cmp(y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub columns: usize,
    pub rows: Vec<Vec<Cell>>,
    /// Set when the row cap cut the result short.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecErrorKind {
    Syntax,
    Schema,
    Timeout,
    Resource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExecOutcome {
    Ok(QueryResult),
    Error { kind: ExecErrorKind, message: String },
}

impl ExecOutcome {
    fn err(kind: ExecErrorKind, message: impl Into<String>) -> Self {
        ExecOutcome::Error {
            kind,
            message: message.into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, ExecOutcome::Ok(_))
    }

    pub fn result(&self) -> Option<&QueryResult> {
        match self {
            ExecOutcome::Ok(r) => Some(r),
            ExecOutcome::Error { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchOutcome {
    Equiv,
    NotEquiv,
    PredError,
    RefError,
}

/// How a corrected query earns `R_verify`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    /// Corrected query must be execution-equivalent to the gold query.
    Gold,
    /// Corrected query must run and behave differently from the prediction.
    Differential,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("corrected SQL is empty")]
    EmptyCorrection,
    #[error("gold verification requested without a gold query")]
    GoldRequired,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("cannot parse SQL: {0}")]
pub struct SqlParseError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecConfig {
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub row_cap: usize,
    pub float_tol: f64,
    /// Compare results up to a permutation of columns.
    pub permutation_invariant: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            timeout: Duration::from_secs(30),
            row_cap: 100_000,
            float_tol: 1e-6,
            permutation_invariant: false,
        }
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        if !(secs > 0.0 && secs.is_finite()) {
            return Err(serde::de::Error::custom("timeout must be a positive number of seconds"));
        }
        Ok(Duration::from_secs_f64(secs))
    }
}

pub(crate) fn parse_sql(sql: &str) -> Result<Vec<Statement>, SqlParseError> {
    Parser::parse_sql(&SQLiteDialect {}, sql).map_err(|e| SqlParseError(e.to_string()))
}

struct NonQueryFinder;

impl Visitor for NonQueryFinder {
    type Break = ();

    fn pre_visit_statement(&mut self, statement: &Statement) -> ControlFlow<()> {
        match statement {
            Statement::Query(_) => ControlFlow::Continue(()),
            _ => ControlFlow::Break(()),
        }
    }
}

/// Statement-level gate applied before execution. Returns the rejection, if
/// any. SQL that our parser cannot read is left to SQLite to judge.
fn screen_statement(sql: &str) -> Option<ExecOutcome> {
    let Ok(statements) = parse_sql(sql) else {
        return None;
    };
    match statements.len() {
        0 => Some(ExecOutcome::err(ExecErrorKind::Syntax, "empty statement")),
        1 if statements[0].visit(&mut NonQueryFinder).is_continue() => None,
        1 => Some(ExecOutcome::err(
            ExecErrorKind::Schema,
            "only read-only queries may be executed",
        )),
        _ => Some(ExecOutcome::err(
            ExecErrorKind::Syntax,
            "multiple statements provided",
        )),
    }
}

fn order_sensitive_query(q: &Query) -> bool {
    if q.order_by.is_some() {
        return true;
    }
    // `(SELECT ... ORDER BY x)` as the whole statement still orders the output
    match q.body.as_ref() {
        SetExpr::Query(inner) => order_sensitive_query(inner),
        _ => false,
    }
}

/// True iff the outermost query's ORDER BY determines the final row order.
pub fn order_sensitive(sql: &str) -> Result<bool, SqlParseError> {
    let statements = parse_sql(sql)?;
    match statements.first() {
        Some(Statement::Query(q)) => Ok(order_sensitive_query(q)),
        Some(_) => Ok(false),
        None => Err(SqlParseError("empty statement".into())),
    }
}

fn classify_sqlite_error(e: &rusqlite::Error) -> ExecErrorKind {
    use rusqlite::ErrorCode;
    let (err, msg) = match e {
        rusqlite::Error::SqliteFailure(err, msg) => (err, msg.as_deref().unwrap_or("")),
        rusqlite::Error::SqlInputError { error, msg, .. } => (error, msg.as_str()),
        rusqlite::Error::MultipleStatement | rusqlite::Error::InvalidQuery => return ExecErrorKind::Syntax,
        _ => return ExecErrorKind::Resource,
    };
    let msg = msg.to_ascii_lowercase();
    match err.code {
        ErrorCode::OperationInterrupted => ExecErrorKind::Timeout,
        ErrorCode::ReadOnly | ErrorCode::PermissionDenied | ErrorCode::AuthorizationForStatementDenied => {
            ExecErrorKind::Schema
        }
        ErrorCode::OutOfMemory
        | ErrorCode::DiskFull
        | ErrorCode::TooBig
        | ErrorCode::DatabaseBusy
        | ErrorCode::DatabaseLocked
        | ErrorCode::CannotOpen
        | ErrorCode::SystemIoFailure
        | ErrorCode::DatabaseCorrupt
        | ErrorCode::NotADatabase => ExecErrorKind::Resource,
        _ if msg.contains("no such table")
            || msg.contains("no such column")
            || msg.contains("ambiguous column")
            || msg.contains("no such function") =>
        {
            ExecErrorKind::Schema
        }
        _ if msg.contains("interrupted") => ExecErrorKind::Timeout,
        _ => ExecErrorKind::Syntax,
    }
}

fn cell_from(v: ValueRef<'_>) -> Cell {
    match v {
        ValueRef::Null => Cell::Null,
        ValueRef::Integer(i) => Cell::Integer(i),
        ValueRef::Real(r) => Cell::Real(r),
        ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
    }
}

const MAX_IDLE_PER_DB: usize = 16;

/// Executes queries with per-database connection pooling.
pub struct SqlExecutor {
    cfg: ExecConfig,
    idle: Mutex<HashMap<PathBuf, Vec<Connection>>>,
}

impl std::fmt::Debug for SqlExecutor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SqlExecutor").field("cfg", &self.cfg).finish()
    }
}

impl SqlExecutor {
    pub fn new(cfg: ExecConfig) -> Self {
        SqlExecutor {
            cfg,
            idle: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &ExecConfig {
        &self.cfg
    }

    fn checkout(&self, db: &DatabaseRef) -> rusqlite::Result<Connection> {
        if let Some(conn) = self
            .idle
            .lock()
            .expect("pool lock")
            .get_mut(&db.path)
            .and_then(Vec::pop)
        {
            return Ok(conn);
        }
        if !db.path.is_file() {
            return Err(rusqlite::Error::SqliteFailure(
                rusqlite::ffi::Error::new(rusqlite::ffi::SQLITE_CANTOPEN),
                Some(format!("database file not found: {}", db.path.display())),
            ));
        }
        Connection::open_with_flags(
            &db.path,
            OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
        )
    }

    fn checkin(&self, db: &DatabaseRef, conn: Connection) {
        let mut idle = self.idle.lock().expect("pool lock");
        let slot = idle.entry(db.path.clone()).or_default();
        if slot.len() < MAX_IDLE_PER_DB {
            slot.push(conn);
        }
    }

    /// True when the database file exists and opens.
    pub fn can_open(&self, db: &DatabaseRef) -> bool {
        match self.checkout(db) {
            Ok(conn) => {
                self.checkin(db, conn);
                true
            }
            Err(_) => false,
        }
    }

    /// Runs `sql` with the configured timeout and row cap.
    pub fn execute(&self, sql: &str, db: &DatabaseRef) -> ExecOutcome {
        self.execute_with(sql, db, self.cfg.timeout, self.cfg.row_cap)
    }

    pub fn execute_with(
        &self,
        sql: &str,
        db: &DatabaseRef,
        timeout: Duration,
        row_cap: usize,
    ) -> ExecOutcome {
        if let Some(rejected) = screen_statement(sql) {
            return rejected;
        }
        let conn = match self.checkout(db) {
            Ok(c) => c,
            Err(e) => return ExecOutcome::err(ExecErrorKind::Resource, e.to_string()),
        };
        let outcome = run_query(&conn, sql, timeout, row_cap);
        let _ = conn.progress_handler(0, None::<fn() -> bool>);
        self.checkin(db, conn);
        outcome
    }

    /// Executes both queries and compares denotations. Order sensitivity is
    /// taken from the reference query.
    pub fn exec_match(&self, pred: &str, reference: &str, db: &DatabaseRef) -> MatchOutcome {
        let ref_out = self.execute(reference, db);
        let Some(ref_res) = ref_out.result() else {
            return MatchOutcome::RefError;
        };
        let pred_out = self.execute(pred, db);
        let Some(pred_res) = pred_out.result() else {
            return MatchOutcome::PredError;
        };
        let ordered = order_sensitive(reference).unwrap_or(false);
        if self.equivalent(pred_res, ref_res, ordered) {
            MatchOutcome::Equiv
        } else {
            MatchOutcome::NotEquiv
        }
    }

    fn equivalent(&self, a: &QueryResult, b: &QueryResult, ordered: bool) -> bool {
        if self.cfg.permutation_invariant {
            results_equivalent_permuted(a, b, ordered, self.cfg.float_tol)
        } else {
            results_equivalent(a, b, ordered, self.cfg.float_tol)
        }
    }

    /// `R_verify` for a corrected query. `mode = None` picks gold
    /// verification when a gold query is available, differential otherwise.
    pub fn verify_correction(
        &self,
        pred: &str,
        corrected: &str,
        db: &DatabaseRef,
        gold: Option<&str>,
        mode: Option<VerifyMode>,
    ) -> Result<u8, VerifyError> {
        if corrected.trim().is_empty() {
            return Err(VerifyError::EmptyCorrection);
        }
        let mode = mode.unwrap_or(if gold.is_some() {
            VerifyMode::Gold
        } else {
            VerifyMode::Differential
        });
        let pass = match mode {
            VerifyMode::Gold => {
                let gold = gold.ok_or(VerifyError::GoldRequired)?;
                self.exec_match(corrected, gold, db) == MatchOutcome::Equiv
            }
            VerifyMode::Differential => {
                // a prediction that fails to run is trivially "changed" by any
                // working correction
                self.execute(corrected, db).is_ok()
                    && self.exec_match(corrected, pred, db) != MatchOutcome::Equiv
            }
        };
        Ok(u8::from(pass))
    }
}

fn run_query(conn: &Connection, sql: &str, timeout: Duration, row_cap: usize) -> ExecOutcome {
    let deadline = Instant::now() + timeout;
    if let Err(e) = conn.progress_handler(1000, Some(move || Instant::now() >= deadline)) {
        return ExecOutcome::err(ExecErrorKind::Resource, e.to_string());
    }
    let fail = |e: rusqlite::Error| ExecOutcome::err(classify_sqlite_error(&e), e.to_string());

    let mut stmt = match conn.prepare(sql) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    if !stmt.readonly() {
        return ExecOutcome::err(ExecErrorKind::Schema, "only read-only queries may be executed");
    }
    let columns = stmt.column_count();
    let mut rows_iter = match stmt.query([]) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let mut rows = Vec::new();
    let mut truncated = false;
    loop {
        match rows_iter.next() {
            Ok(Some(row)) => {
                if rows.len() == row_cap {
                    truncated = true;
                    break;
                }
                let mut cells = Vec::with_capacity(columns);
                for i in 0..columns {
                    match row.get_ref(i) {
                        Ok(v) => cells.push(cell_from(v)),
                        Err(e) => return fail(e),
                    }
                }
                rows.push(cells);
            }
            Ok(None) => break,
            Err(e) => return fail(e),
        }
    }
    ExecOutcome::Ok(QueryResult {
        columns,
        rows,
        truncated,
    })
}

/// Denotation equality of two results.
///
/// Column counts must agree; cells are compared by position. With
/// `order_sensitive` rows must match as sequences, otherwise as multisets.
pub fn results_equivalent(a: &QueryResult, b: &QueryResult, order_sensitive: bool, float_tol: f64) -> bool {
    if a.columns != b.columns || a.rows.len() != b.rows.len() {
        return false;
    }
    if order_sensitive {
        return a.rows.iter().zip(&b.rows).all(|(x, y)| rows_equal(x, y, float_tol));
    }
    let mut sa: Vec<&Vec<Cell>> = a.rows.iter().collect();
    let mut sb: Vec<&Vec<Cell>> = b.rows.iter().collect();
    sa.sort_by(|x, y| row_cmp(x, y));
    sb.sort_by(|x, y| row_cmp(x, y));
    if sa.iter().zip(&sb).all(|(x, y)| rows_equal(x, y, float_tol)) {
        return true;
    }
    // near-equal reals can sort differently on the two sides
    float_tol > 0.0 && greedy_multiset_match(&sa, &sb, float_tol)
}

const GREEDY_MATCH_LIMIT: usize = 5_000;

fn greedy_multiset_match(a: &[&Vec<Cell>], b: &[&Vec<Cell>], tol: f64) -> bool {
    let has_real = a.iter().any(|r| r.iter().any(|c| matches!(c, Cell::Real(_))));
    if !has_real || a.len() > GREEDY_MATCH_LIMIT {
        return false;
    }
    let mut used = vec![false; b.len()];
    a.iter().all(|ra| {
        match (0..b.len()).find(|&j| !used[j] && rows_equal(ra, b[j], tol)) {
            Some(j) => {
                used[j] = true;
                true
            }
            None => false,
        }
    })
}

fn permute_columns(r: &QueryResult, perm: &[usize]) -> QueryResult {
    QueryResult {
        columns: r.columns,
        rows: r
            .rows
            .iter()
            .map(|row| perm.iter().map(|&j| row[j].clone()).collect())
            .collect(),
        truncated: r.truncated,
    }
}

fn column_signature(r: &QueryResult, col: usize) -> Vec<Cell> {
    let mut v: Vec<Cell> = r.rows.iter().map(|row| row[col].clone()).collect();
    v.sort_by(|x, y| x.canonical_cmp(y));
    v
}

const MAX_PERMUTED_COLUMNS: usize = 6;

/// Like [`results_equivalent`] but tolerant of reordered columns.
pub fn results_equivalent_permuted(a: &QueryResult, b: &QueryResult, order_sensitive: bool, float_tol: f64) -> bool {
    if results_equivalent(a, b, order_sensitive, float_tol) {
        return true;
    }
    if a.columns != b.columns || a.rows.len() != b.rows.len() {
        return false;
    }
    let sig_a: Vec<Vec<Cell>> = (0..a.columns).map(|c| column_signature(a, c)).collect();
    let sig_b: Vec<Vec<Cell>> = (0..b.columns).map(|c| column_signature(b, c)).collect();
    // candidates[i] = columns of b whose value multiset matches column i of a
    let candidates: Vec<Vec<usize>> = sig_a
        .iter()
        .map(|sa| {
            (0..b.columns)
                .filter(|&j| rows_equal(sa, &sig_b[j], float_tol))
                .collect()
        })
        .collect();
    if candidates.iter().any(Vec::is_empty) {
        return false;
    }
    let mut perm = Vec::with_capacity(a.columns);
    let mut used = vec![false; b.columns];
    let exhaustive = a.columns <= MAX_PERMUTED_COLUMNS;
    search_permutation(a, b, order_sensitive, float_tol, &candidates, &mut perm, &mut used, exhaustive)
}

#[allow(clippy::too_many_arguments)]
fn search_permutation(
    a: &QueryResult,
    b: &QueryResult,
    ordered: bool,
    tol: f64,
    candidates: &[Vec<usize>],
    perm: &mut Vec<usize>,
    used: &mut [bool],
    exhaustive: bool,
) -> bool {
    let i = perm.len();
    if i == candidates.len() {
        return results_equivalent(a, &permute_columns(b, perm), ordered, tol);
    }
    for &j in &candidates[i] {
        if used[j] {
            continue;
        }
        used[j] = true;
        perm.push(j);
        let found = search_permutation(a, b, ordered, tol, candidates, perm, used, exhaustive);
        perm.pop();
        used[j] = false;
        if found {
            return true;
        }
        if !exhaustive {
            break;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(rows: &[&[i64]]) -> QueryResult {
        QueryResult {
            columns: rows.first().map_or(1, |r| r.len()),
            rows: rows
                .iter()
                .map(|r| r.iter().map(|&v| Cell::Integer(v)).collect())
                .collect(),
            truncated: false,
        }
    }

    fn scratch_db(dir: &Path, setup: &str) -> DatabaseRef {
        let db = DatabaseRef::under_root(dir, "t");
        std::fs::create_dir_all(db.path.parent().unwrap()).unwrap();
        Connection::open(&db.path).unwrap().execute_batch(setup).unwrap();
        db
    }

    #[test]
    fn constant_query() {
        let dir = tempfile::tempdir().unwrap();
        let db = scratch_db(dir.path(), "CREATE TABLE t(a INTEGER);");
        let ex = SqlExecutor::new(ExecConfig::default());
        assert_eq!(ex.execute("SELECT 1", &db), ExecOutcome::Ok(ints(&[&[1]])));
    }

    #[test]
    fn error_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let db = scratch_db(dir.path(), "CREATE TABLE t(a INTEGER); INSERT INTO t VALUES (1);");
        let ex = SqlExecutor::new(ExecConfig::default());
        let kind = |sql: &str| match ex.execute(sql, &db) {
            ExecOutcome::Error { kind, .. } => Some(kind),
            ExecOutcome::Ok(_) => None,
        };
        assert_eq!(kind("SELECT * FROM missing"), Some(ExecErrorKind::Schema));
        assert_eq!(kind("SELECT nope FROM t"), Some(ExecErrorKind::Schema));
        assert_eq!(kind("SELEC 1"), Some(ExecErrorKind::Syntax));
        assert_eq!(kind("DELETE FROM t"), Some(ExecErrorKind::Schema));
        assert_eq!(kind("INSERT INTO t VALUES (2)"), Some(ExecErrorKind::Schema));
        assert_eq!(kind("DROP TABLE t"), Some(ExecErrorKind::Schema));
        assert_eq!(kind("SELECT 1; SELECT 2"), Some(ExecErrorKind::Syntax));
        assert_eq!(kind(""), Some(ExecErrorKind::Syntax));
        // table survived every attempt
        assert!(ex.execute("SELECT a FROM t", &db).is_ok());
    }

    #[test]
    fn missing_database_is_resource_error() {
        let ex = SqlExecutor::new(ExecConfig::default());
        let db = DatabaseRef::new("nope", "/definitely/not/here.sqlite");
        assert!(matches!(
            ex.execute("SELECT 1", &db),
            ExecOutcome::Error { kind: ExecErrorKind::Resource, .. }
        ));
        assert!(!ex.can_open(&db));
    }

    #[test]
    fn timeout_is_reported_after_deadline() {
        let dir = tempfile::tempdir().unwrap();
        let db = scratch_db(dir.path(), "CREATE TABLE t(a INTEGER);");
        let ex = SqlExecutor::new(ExecConfig::default());
        let limit = Duration::from_millis(150);
        let start = Instant::now();
        let out = ex.execute_with(
            "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c",
            &db,
            limit,
            10,
        );
        assert!(start.elapsed() >= limit);
        assert!(matches!(out, ExecOutcome::Error { kind: ExecErrorKind::Timeout, .. }), "{out:?}");
        // the pooled connection is usable afterwards
        assert!(ex.execute("SELECT 1", &db).is_ok());
    }

    #[test]
    fn row_cap_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let db = scratch_db(dir.path(), "CREATE TABLE t(a INTEGER); INSERT INTO t VALUES (1),(2),(3);");
        let ex = SqlExecutor::new(ExecConfig::default());
        let ExecOutcome::Ok(r) = ex.execute_with("SELECT a FROM t", &db, Duration::from_secs(1), 2) else {
            panic!()
        };
        assert!(r.truncated);
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn order_sensitivity() {
        assert!(order_sensitive("SELECT a FROM t ORDER BY a").unwrap());
        assert!(order_sensitive("SELECT a FROM t ORDER BY a LIMIT 1").unwrap());
        assert!(!order_sensitive("SELECT a FROM (SELECT a FROM t ORDER BY a)").unwrap());
        assert!(!order_sensitive("SELECT a FROM t").unwrap());
        assert!(!order_sensitive("SELECT a FROM t WHERE a IN (SELECT a FROM t ORDER BY a LIMIT 2)").unwrap());
        assert!(order_sensitive("SELECT a FROM t UNION SELECT b FROM u ORDER BY 1").unwrap());
        assert!(order_sensitive("SELECT ((").is_err());
    }

    #[test]
    fn subquery_order_does_not_survive() {
        // Executing the inner-ordered query on data inserted in reverse still
        // yields SQLite's scan order, which the outer query does not promise.
        let dir = tempfile::tempdir().unwrap();
        let db = scratch_db(dir.path(), "CREATE TABLE t(a INTEGER); INSERT INTO t VALUES (3),(1),(2);");
        let ex = SqlExecutor::new(ExecConfig::default());
        let sorted = ex.execute("SELECT a FROM t ORDER BY a", &db);
        let scan = ex.execute("SELECT a FROM t", &db);
        assert_ne!(sorted, scan);
        assert_eq!(
            ex.exec_match("SELECT a FROM t", "SELECT a FROM (SELECT a FROM t ORDER BY a)", &db),
            MatchOutcome::Equiv
        );
        assert_eq!(ex.exec_match("SELECT a FROM t", "SELECT a FROM t ORDER BY a", &db), MatchOutcome::NotEquiv);
    }

    #[test]
    fn equivalence_rules() {
        let a = ints(&[&[1], &[2]]);
        let b = ints(&[&[2], &[1]]);
        assert!(results_equivalent(&a, &a, true, 0.0));
        assert!(results_equivalent(&a, &b, false, 0.0));
        assert!(!results_equivalent(&a, &b, true, 0.0));
        assert!(!results_equivalent(&a, &ints(&[&[1, 1], &[2, 2]]), false, 0.0));

        let empty = QueryResult { columns: 1, rows: vec![], truncated: false };
        assert!(!results_equivalent(&empty, &ints(&[&[1]]), false, 0.0));

        let real = |v: f64| QueryResult { columns: 1, rows: vec![vec![Cell::Real(v)]], truncated: false };
        assert!(results_equivalent(&real(1.0), &real(1.0 + 1e-9), false, 1e-6));
        assert!(!results_equivalent(&real(1.0), &real(1.0 + 1e-9), false, 0.0));
        assert!(results_equivalent(&real(3.0), &ints(&[&[3]]), false, 0.0));

        let null = QueryResult { columns: 1, rows: vec![vec![Cell::Null]], truncated: false };
        assert!(results_equivalent(&null, &null, false, 0.0));
        assert!(!results_equivalent(&null, &ints(&[&[0]]), false, 0.0));

        let text = |s: &str| QueryResult { columns: 1, rows: vec![vec![Cell::Text(s.into())]], truncated: false };
        assert!(!results_equivalent(&text("Cryokinesis"), &text("cryokinesis"), false, 1.0));
    }

    #[test]
    fn near_equal_reals_sorting_apart() {
        let r = |rows: Vec<(f64, i64)>| QueryResult {
            columns: 2,
            rows: rows.into_iter().map(|(x, y)| vec![Cell::Real(x), Cell::Integer(y)]).collect(),
            truncated: false,
        };
        let a = r(vec![(1.0, 2), (1.0 + 1e-9, 1)]);
        let b = r(vec![(1.0 + 1e-9, 2), (1.0, 1)]);
        assert!(results_equivalent(&a, &b, false, 1e-6));
    }

    #[test]
    fn column_permutation_flag() {
        let a = ints(&[&[1, 10], &[2, 20]]);
        let b = ints(&[&[10, 1], &[20, 2]]);
        assert!(!results_equivalent(&a, &b, false, 0.0));
        assert!(results_equivalent_permuted(&a, &b, false, 0.0));
        let c = ints(&[&[10, 2], &[20, 1]]);
        assert!(!results_equivalent_permuted(&a, &c, false, 0.0));
    }

    #[test]
    fn verification_modes() {
        let dir = tempfile::tempdir().unwrap();
        let db = scratch_db(dir.path(), "CREATE TABLE t(a INTEGER); INSERT INTO t VALUES (1),(2);");
        let ex = SqlExecutor::new(ExecConfig::default());
        let pred = "SELECT a FROM t";
        let gold = "SELECT a FROM t WHERE a = 2";
        assert_eq!(ex.verify_correction(pred, gold, &db, Some(gold), None), Ok(1));
        assert_eq!(ex.verify_correction(pred, pred, &db, None, None), Ok(0));
        assert_eq!(ex.verify_correction(pred, gold, &db, None, None), Ok(1));
        assert_eq!(ex.verify_correction(pred, "SELECT zz FROM t", &db, None, None), Ok(0));
        assert_eq!(ex.verify_correction(pred, "SELECT zz FROM t", &db, Some(gold), None), Ok(0));
        assert_eq!(
            ex.verify_correction(pred, gold, &db, None, Some(VerifyMode::Gold)),
            Err(VerifyError::GoldRequired)
        );
        assert_eq!(ex.verify_correction(pred, "  ", &db, None, None), Err(VerifyError::EmptyCorrection));
    }

    #[test]
    fn exec_match_errors() {
        let dir = tempfile::tempdir().unwrap();
        let db = scratch_db(dir.path(), "CREATE TABLE t(a INTEGER);");
        let ex = SqlExecutor::new(ExecConfig::default());
        assert_eq!(ex.exec_match("SELECT a FROM t", "SELECT a FROM t", &db), MatchOutcome::Equiv);
        assert_eq!(ex.exec_match("SELEC a", "SELECT a FROM t", &db), MatchOutcome::PredError);
        assert_eq!(ex.exec_match("SELECT a FROM t", "SELECT b FROM t", &db), MatchOutcome::RefError);
    }
}
