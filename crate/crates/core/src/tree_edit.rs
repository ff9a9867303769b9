//! Ordered-tree edit distance (Zhang-Shasha, unit costs) over normalized SQL
//! parse trees.

use serde_json::Value;

use crate::exec::{parse_sql, SqlParseError};

/// A labeled ordered tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tree {
    pub label: String,
    pub children: Vec<Tree>,
}

impl Tree {
    pub fn leaf(label: impl Into<String>) -> Self {
        Tree {
            label: label.into(),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<Tree>) -> Self {
        Tree {
            label: label.into(),
            children,
        }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Tree::size).sum::<usize>()
    }
}

fn is_empty_value(v: &Value) -> bool {
    match v {
        Value::Null | Value::Bool(false) => true,
        Value::Array(a) => a.is_empty(),
        Value::Object(o) => o.is_empty(),
        _ => false,
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.to_lowercase()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Converts a serialized AST into a tree. Source spans, nulls and empty
/// containers are dropped; text is lowercased. A key holding a scalar
/// becomes a single `key=value` leaf.
pub fn tree_from_json(label: &str, v: &Value) -> Tree {
    match v {
        Value::Object(map) => {
            let children = map
                .iter()
                .filter(|(k, v)| k.as_str() != "span" && !is_empty_value(v))
                .map(|(k, v)| match scalar(v) {
                    Some(s) => Tree::leaf(format!("{k}={s}")),
                    None => tree_from_json(k, v),
                })
                .collect();
            Tree::node(label, children)
        }
        Value::Array(items) => {
            let children = items
                .iter()
                .filter(|v| !is_empty_value(v))
                .map(|v| match scalar(v) {
                    Some(s) => Tree::leaf(s),
                    None => tree_from_json("item", v),
                })
                .collect();
            Tree::node(label, children)
        }
        other => Tree::leaf(scalar(other).unwrap_or_default()),
    }
}

pub fn sql_tree(sql: &str) -> Result<Tree, SqlParseError> {
    let stmts = parse_sql(sql)?;
    let v = serde_json::to_value(&stmts).map_err(|e| SqlParseError(e.to_string()))?;
    Ok(tree_from_json("sql", &v))
}

struct Flat<'a> {
    labels: Vec<&'a str>,
    /// Post-order index of each node's leftmost leaf.
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

fn flatten(t: &Tree) -> Flat<'_> {
    fn walk<'a>(t: &'a Tree, labels: &mut Vec<&'a str>, leftmost: &mut Vec<usize>) -> usize {
        let mut first_leaf = None;
        for c in &t.children {
            let l = walk(c, labels, leftmost);
            first_leaf.get_or_insert(l);
        }
        let me = labels.len();
        labels.push(&t.label);
        let l = first_leaf.unwrap_or(me);
        leftmost.push(l);
        l
    }
    let mut labels = Vec::new();
    let mut leftmost = Vec::new();
    walk(t, &mut labels, &mut leftmost);
    // a keyroot is the highest node sharing its leftmost leaf
    let n = labels.len();
    let mut seen = vec![false; n];
    let mut keyroots = Vec::new();
    for i in (0..n).rev() {
        if !seen[leftmost[i]] {
            seen[leftmost[i]] = true;
            keyroots.push(i);
        }
    }
    keyroots.sort_unstable();
    Flat {
        labels,
        leftmost,
        keyroots,
    }
}

/// Unit-cost edit distance between two ordered trees.
pub fn tree_edit_distance(a: &Tree, b: &Tree) -> usize {
    let fa = flatten(a);
    let fb = flatten(b);
    let (n, m) = (fa.labels.len(), fb.labels.len());
    let mut td = vec![vec![0usize; m]; n];
    let mut fd = vec![vec![0usize; m + 1]; n + 1];

    for &i in &fa.keyroots {
        for &j in &fb.keyroots {
            let (li, lj) = (fa.leftmost[i], fb.leftmost[j]);
            // fd indices are offset: row x stands for node li + x - 1
            fd[0][0] = 0;
            for x in 1..=(i - li + 1) {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..=(j - lj + 1) {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..=(i - li + 1) {
                let ni = li + x - 1;
                for y in 1..=(j - lj + 1) {
                    let nj = lj + y - 1;
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if fa.leftmost[ni] == li && fb.leftmost[nj] == lj {
                        let relabel = usize::from(fa.labels[ni] != fb.labels[nj]);
                        let v = del.min(ins).min(fd[x - 1][y - 1] + relabel);
                        fd[x][y] = v;
                        td[ni][nj] = v;
                    } else {
                        let px = fa.leftmost[ni] - li;
                        let py = fb.leftmost[nj] - lj;
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[ni][nj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// `1 - distance / max(|a|, |b|)`, in [0, 1].
pub fn tree_similarity(a: &Tree, b: &Tree) -> f64 {
    let denom = a.size().max(b.size()) as f64;
    1.0 - tree_edit_distance(a, b) as f64 / denom
}

pub fn sql_similarity(a: &str, b: &str) -> Result<f64, SqlParseError> {
    Ok(tree_similarity(&sql_tree(a)?, &sql_tree(b)?))
}

/// Accepts a candidate whose parse tree is at least `threshold` similar to
/// the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeEditMatcher {
    pub threshold: f64,
}

impl Default for TreeEditMatcher {
    fn default() -> Self {
        TreeEditMatcher { threshold: 0.9 }
    }
}

impl TreeEditMatcher {
    pub fn accepts(&self, candidate: &str, reference: &str) -> bool {
        sql_similarity(candidate, reference).is_ok_and(|s| s >= self.threshold)
    }
}
