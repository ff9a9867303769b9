mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use sqlcritic_core::dataset::{read_corpus, write_corpus};
use sqlcritic_core::grpo::RolloutGroup;
use sqlcritic_core::scoring::SampleScore;

use common::*;

fn sqlcritic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqlcritic"))
        .args(args)
        .env_remove("RUCO_DB_ROOT")
        .env_remove("RUCO_JUDGE_ENDPOINT")
        .env_remove("RUCO_JUDGE_KEY")
        .env_remove("RUCO_MAX_BATCH")
        .output()
        .expect("run sqlcritic")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn error_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect()
}

#[test]
fn score_fixture_batch_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let dbs = fixtures().join("databases");
    let batch = fixtures().join("batch.jsonl");
    for (out, extra) in [(&a, None), (&b, Some("--sequential"))] {
        let mut args = vec!["--db-root", p(&dbs), "score", "-i", p(&batch), "-o", p(out), "--mode", "ex_pr_vc", "--judge", "stub"];
        args.extend(extra);
        let run = sqlcritic(&args);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());

    let scores: Vec<SampleScore> = read_json_lines(&a);
    let totals: Vec<_> = scores.iter().map(|s| (s.sample_id.as_str(), s.total())).collect();
    assert_eq!(
        totals,
        [
            ("tox-1", Some(5.0)),
            ("hero-1", Some(1.0)),
            ("gas-1", Some(5.0)),
            ("fb-1", Some(0.0)),
            ("tox-2", Some(6.0)),
            ("hero-2", Some(5.0)),
            ("gas-2", None),
            ("tox-3", Some(0.0)),
        ]
    );
    assert!(scores[6].inference_only);
}

#[test]
fn cli_and_service_serialize_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scores.jsonl");
    let dbs = fixtures().join("databases");
    let run = sqlcritic(&["--db-root", p(&dbs), "score", "-i", p(&fixtures().join("batch.jsonl")), "-o", p(&out)]);
    assert!(run.status.success());
    let cli_lines: Vec<String> = std::fs::read_to_string(&out).unwrap().lines().map(String::from).collect();

    let base = spawn_service(fixture_config());
    let (status, body) = post_raw(&format!("{base}/v1/score"), &json!({"samples": fixture_batch()}).to_string());
    assert_eq!(status, 200);
    // the service's results array is the CLI's lines, byte for byte
    let want = format!("\"results\":[{}]", cli_lines.join(","));
    assert!(body.contains(&want), "{body}");
}

#[test]
fn partial_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut batch = fixture_batch();
    batch[0].critique_text = None;
    let input = dir.path().join("in.jsonl");
    write_corpus(&input, &batch).unwrap();
    let log = dir.path().join("errors.jsonl");
    let out = dir.path().join("out.jsonl");
    let dbs = fixtures().join("databases");
    let run = sqlcritic(&["--db-root", p(&dbs), "--error-log", p(&log), "score", "-i", p(&input), "-o", p(&out)]);
    assert_eq!(run.status.code(), Some(1));
    let errors: Vec<Value> = read_json_lines(&log);
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0]["id"], "tox-1");
    assert_eq!(errors[0]["command"], "score");
    assert_eq!(read_json_lines::<SampleScore>(&out).len(), batch.len());
}

#[test]
fn configuration_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[server]\nmax_batch = 0\n").unwrap();
    let batch = fixtures().join("batch.jsonl");
    assert_eq!(sqlcritic(&["--config", p(&cfg), "score", "-i", p(&batch)]).status.code(), Some(2));
    std::fs::write(&cfg, "[grpo]\nclip_eps = \"wide\"\n").unwrap();
    assert_eq!(sqlcritic(&["--config", p(&cfg), "show-config"]).status.code(), Some(2));
    assert_eq!(sqlcritic(&["--config", "/nonexistent.toml", "show-config"]).status.code(), Some(2));
    assert_eq!(sqlcritic(&["score", "-i", "/nonexistent.jsonl"]).status.code(), Some(2));
    assert_eq!(sqlcritic(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sqlcritic(&["score", "-i", p(&batch), "--mode", "ex_plus"]).status.code(), Some(2));

    let env_bad = Command::new(env!("CARGO_BIN_EXE_sqlcritic"))
        .arg("show-config")
        .env("RUCO_MAX_BATCH", "many")
        .output()
        .unwrap();
    assert_eq!(env_bad.status.code(), Some(2));
}

#[test]
fn show_config_round_trips() {
    let run = sqlcritic(&["show-config"]);
    assert!(run.status.success());
    let text = String::from_utf8(run.stdout).unwrap();
    assert_eq!(text, include_str!("../config/default.toml"));
}

#[test]
fn stats_reproduces_table_counts() {
    let run = sqlcritic(&["stats", "-i", p(&fixtures().join("spider_counts.jsonl"))]);
    assert!(run.status.success());
    let text = String::from_utf8(run.stdout).unwrap();
    assert!(text.lines().any(|l| l.trim() == "Positive   776 (47.20%)"), "{text}");

    let run = sqlcritic(&["stats", "--json", "-i", p(&fixtures().join("spider_counts.jsonl"))]);
    let v: Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(v["counts"]["positive"], 776);
}

#[test]
fn label_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let mut batch = fixture_batch();
    for s in &mut batch {
        s.label = None;
    }
    // a gold query that cannot run sends its sample to quarantine
    batch[5].gold_sql = Some("SELECT nope FROM nowhere".into());
    let input = dir.path().join("raw.jsonl");
    write_corpus(&input, &batch).unwrap();
    let (labeled, quarantine) = (dir.path().join("labeled.jsonl"), dir.path().join("q.jsonl"));
    let dbs = fixtures().join("databases");
    let run = sqlcritic(&[
        "--db-root", p(&dbs), "label", "-i", p(&input), "-o", p(&labeled), "--quarantine", p(&quarantine),
    ]);
    // hero-2 is quarantined and gas-2 has no gold query
    assert_eq!(run.status.code(), Some(1));
    let ids: Vec<_> = error_lines(&run).iter().map(|e| e["id"].as_str().unwrap().to_string()).collect();
    assert_eq!(ids, ["hero-2", "gas-2"]);
    let out = read_corpus(&labeled).unwrap();
    let original = fixture_batch();
    assert_eq!(out.len(), 6);
    for s in &out {
        let want = original.iter().find(|o| o.sample_id == s.sample_id).unwrap();
        assert_eq!(s.label, want.label, "{}", s.sample_id);
        assert_ne!(s.hardness, sqlcritic_core::Hardness::Unknown);
    }
    assert_eq!(read_corpus(&quarantine).unwrap().len(), 2);

    // tox-3's critique is malformed; the rest evaluate
    let report = dir.path().join("report.json");
    let run = sqlcritic(&["evaluate", "-i", p(&labeled), "--format", "json", "-o", p(&report)]);
    assert_eq!(run.status.code(), Some(1));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    let overall = rows.last().unwrap();
    assert_eq!(overall["group"], "overall");
    assert_eq!(overall["n"], 5);
    // verdicts: tox-1 F/F, gas-1 F/F, fb-1 F/T, tox-2 T/T, hero-1 T/F
    assert_eq!(overall["accuracy"], 0.6);
}

#[test]
fn evaluate_with_repeated_runs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus: Vec<_> = fixture_batch().into_iter().filter(|s| s.label.is_some() && s.sample_id != "tox-3").collect();
    let input = dir.path().join("c.jsonl");
    write_corpus(&input, &corpus).unwrap();
    let yes = "<think>\n1. Q?\n- Yes.\n</think><result>True</result>";
    let no = "<think>\n1. Q?\n- No.\n</think><result>False</result><correctedSQL>SELECT 1</correctedSQL>";
    let mut runs = String::new();
    for s in &corpus {
        // positives get 2 of 3 True runs, negatives 1 of 3
        let trues = if s.label == Some(true) { 2 } else { 1 };
        for k in 0..3 {
            let text = if k < trues { yes } else { no };
            runs.push_str(&json!({"sample_id": s.sample_id, "critique_text": text}).to_string());
            runs.push('\n');
        }
    }
    let runs_path = dir.path().join("runs.jsonl");
    std::fs::write(&runs_path, runs).unwrap();
    let run = sqlcritic(&["evaluate", "-i", p(&input), "--critiques", p(&runs_path)]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = String::from_utf8(run.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("group,n,auc,accuracy,f1"));
    let overall = text.lines().last().unwrap();
    assert!(overall.starts_with("overall,6,100.00,100.00,100.00"), "{overall}");
}

#[test]
fn advantages_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("groups.jsonl");
    std::fs::write(
        &input,
        "{\"prompt_id\":\"a\",\"rewards\":[1,2,3]}\n\n{\"prompt_id\":\"b\",\"rewards\":[]}\n{\"prompt_id\":\"c\",\"rewards\":[5,5]}\n",
    )
    .unwrap();
    let out = dir.path().join("adv.jsonl");
    let run = sqlcritic(&["advantages", "-i", p(&input), "-o", p(&out)]);
    assert_eq!(run.status.code(), Some(1));
    let groups: Vec<RolloutGroup> = read_json_lines(&out);
    assert_eq!(groups.len(), 2);
    let a = groups[0].advantages.as_ref().unwrap();
    assert!((a[2] - 1.224744871391589).abs() < 1e-12);
    assert_eq!(groups[1].advantages.as_deref(), Some(&[0.0, 0.0][..]));
    assert_eq!(error_lines(&run)[0]["id"], "b");
}

#[test]
fn balance_keeps_minority() {
    let dir = tempfile::tempdir().unwrap();
    let corpus: Vec<_> = read_corpus(&fixtures().join("spider_counts.jsonl")).unwrap();
    let input = dir.path().join("c.jsonl");
    write_corpus(&input, &corpus).unwrap();
    let out = dir.path().join("b.jsonl");
    let run = sqlcritic(&["balance", "-i", p(&input), "-o", p(&out), "--ratio", "0.5", "--seed", "7"]);
    assert!(run.status.success());
    let b = read_corpus(&out).unwrap();
    assert_eq!(b.iter().filter(|s| s.label == Some(true)).count(), 776);
    assert_eq!(b.iter().filter(|s| s.label == Some(false)).count(), 776);
    let run = sqlcritic(&["balance", "-i", p(&input), "--ratio", "1.5"]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn synthesize_against_mock_generator() {
    // critiques say False with the gold query as correction for gas samples,
    // and True everywhere else
    let endpoint = spawn_chat_mock(|req| {
        let text = user_text(req);
        if text.contains("gasstations") {
            (
                200,
                "<think>\n1. Is the ordering right?\n- No, the latest transaction must come first.\n</think>\n<result> False </result>\n<correctedSQL>SELECT T2.Country FROM transactions_1k AS T1 INNER JOIN gasstations AS T2 ON T1.GasStationID = T2.GasStationID WHERE T1.Date = '2012-08-25' ORDER BY T1.Time DESC LIMIT 1</correctedSQL>".into(),
            )
        } else {
            (200, "<think>\n1. Are the tables right?\n- Yes.\n</think>\n<result> True </result>".into())
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let corpus: Vec<_> = fixture_batch().into_iter().filter(|s| s.gold_sql.is_some()).collect();
    let input = dir.path().join("c.jsonl");
    write_corpus(&input, &corpus).unwrap();
    let (records, accepted) = (dir.path().join("records.jsonl"), dir.path().join("accepted.jsonl"));
    let dbs = fixtures().join("databases");
    let run = sqlcritic(&[
        "--db-root", p(&dbs), "synthesize", "-i", p(&input), "-o", p(&records), "--accepted", p(&accepted),
        "--generator-endpoint", &endpoint,
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let recs: Vec<Value> = read_json_lines(&records);
    let align: Vec<_> = recs.iter().map(|r| (r["sample"]["sample_id"].as_str().unwrap().to_string(), r["align"].as_str().unwrap().to_string())).collect();
    let want = |id: &str, a: &str| (id.to_string(), a.to_string());
    assert_eq!(
        align,
        [
            want("tox-1", "REJECTED_VERDICT"),
            want("hero-1", "REJECTED_VERDICT"),
            want("gas-1", "ACCEPTED"),
            want("fb-1", "ACCEPTED"),
            want("tox-2", "ACCEPTED"),
            want("hero-2", "ACCEPTED"),
            want("tox-3", "ACCEPTED"),
        ]
    );
    let acc = read_corpus(&accepted).unwrap();
    assert_eq!(acc.len(), 5);
    assert!(acc.iter().all(|s| s.critique_text.is_some() && s.label.is_some()));
}
