use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use crash_core::inference::stub::{canned_classifier, user_text, StubReply, StubServer};
use crash_core::ingest::{Category, UnifiedRecord};
use crash_core::jsonl;
use crash_core::scoring::{ReviewDimension, ReviewRecord, Verdict};
use crash_core::taxonomy::{validate, AvFailed, Cause, ClassificationRecord, FailedSystem, Labels, Source};
use serde_json::{json, Value};

fn crash(args: &[&str], cwd: &Path, endpoint: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crash"));
    cmd.args(args).current_dir(cwd).env_remove("CRASH_MODEL");
    match endpoint {
        Some(url) => cmd.env("CRASH_ENDPOINT", url),
        None => cmd.env_remove("CRASH_ENDPOINT"),
    };
    cmd.output().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {text}");
    serde_json::from_str(lines[0]).unwrap()
}

fn records(dir: &Path, n: usize) {
    let recs: Vec<UnifiedRecord> = (0..n)
        .map(|i| UnifiedRecord {
            report_id: format!("R{i}"),
            entity_make: "Acme/Acme".into(),
            full_text: format!(
                "Narrative:\nRecord {i}: {}",
                ["the AV failed to detect a cone", "rear-ended at a light", "rain"][i % 3]
            ),
            category: Category::Ads,
        })
        .collect();
    jsonl::write(&dir.join("records.jsonl"), &recs).unwrap();
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = crash(&[], dir.path(), None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_config_exits_2_with_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), "[inference]\nmax_retries = 0\n").unwrap();
    let out = crash(&["--config", "c.toml", "agree", "--reviews", "x"], dir.path(), None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "config");

    fs::write(dir.path().join("d.toml"), "template_path = \"missing.txt\"\n").unwrap();
    let out = crash(&["--config", "d.toml", "agree", "--reviews", "x"], dir.path(), None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn classify_writes_one_line_per_record() {
    let dir = tempfile::tempdir().unwrap();
    records(dir.path(), 10);
    let server = StubServer::start(canned_classifier).unwrap();
    let out = crash(
        &["classify", "--input", "records.jsonl", "--out", "out.jsonl", "--parallelism", "3"],
        dir.path(),
        Some(&server.url()),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs: Vec<ClassificationRecord> = jsonl::read(&dir.path().join("out.jsonl")).unwrap();
    assert_eq!(recs.len(), 10);
    let ids: Vec<_> = recs.iter().map(|r| r.report_id.clone()).collect();
    assert_eq!(ids, (0..10).map(|i| format!("R{i}")).collect::<Vec<_>>());
    assert!(recs.iter().all(|r| validate(r).is_empty() && r.prompt_version.is_some()));
}

#[test]
fn partial_failure_exits_1_and_lists_failed_records() {
    let dir = tempfile::tempdir().unwrap();
    records(dir.path(), 6);
    let server = StubServer::start(|body, i| {
        if user_text(body).contains("Record 4") {
            StubReply::text("I would rather not say.")
        } else {
            canned_classifier(body, i)
        }
    })
    .unwrap();
    let args = ["classify", "--input", "records.jsonl", "--out", "out.jsonl"];
    let out = crash(&args, dir.path(), Some(&server.url()));
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "partial_failure");
    assert_eq!(err["details"], json!([{"report_id": "R4", "failure": "exhausted_retries", "attempts": 3}]));
    let recs: Vec<ClassificationRecord> = jsonl::read(&dir.path().join("out.jsonl")).unwrap();
    assert_eq!(recs.len(), 5);

    // failures are remembered; --retry-failed asks again
    let calls = server.request_count();
    let out = crash(&args, dir.path(), Some(&server.url()));
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(server.request_count(), calls);
    let mut retry = args.to_vec();
    retry.push("--retry-failed");
    crash(&retry, dir.path(), Some(&server.url()));
    assert_eq!(server.request_count(), calls + 3);
}

fn review(case: &str, reviewer: &str, v: [Verdict; 4]) -> ReviewRecord {
    ReviewRecord {
        case_id: case.into(),
        reviewer_id: reviewer.into(),
        verdicts: ReviewDimension::ALL.into_iter().zip(v).collect(),
        timestamp: "2025-01-01T00:00:00Z".into(),
        note: None,
    }
}

#[test]
fn score_and_agree_print_tables() {
    use Verdict::{Correct as C, Incorrect as X, InsufficientContext as I};
    let dir = tempfile::tempdir().unwrap();
    let labels = Labels::new(AvFailed::Y, Cause::S, FailedSystem::PE, true, Cause::N);
    let crash_out: Vec<_> = ["a", "b", "c", "d"]
        .iter()
        .map(|id| ClassificationRecord::new(*id, labels, Source::Llm))
        .collect();
    let reviews = vec![
        review("a", "r1", [C, C, C, C]),
        review("a", "r2", [C, X, C, I]),
        review("b", "r1", [X, C, X, I]),
        review("b", "r2", [C, C, X, I]),
        review("c", "r1", [C, X, C, X]),
        review("c", "r2", [X, X, C, X]),
        review("d", "r1", [I, I, I, I]),
        review("d", "r2", [I, X, C, I]),
    ];
    jsonl::write(&dir.path().join("crash.jsonl"), &crash_out).unwrap();
    jsonl::write(&dir.path().join("reviews.jsonl"), &reviews).unwrap();

    // hand count per dimension of cases with at least one Correct:
    // AV 3/4, Late 2/4, Cause 3/4, System 1/4
    let out = crash(
        &["score", "--reviews", "reviews.jsonl", "--crash", "crash.jsonl", "--out", "t.csv"],
        dir.path(),
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = "Method,AV Fail,Late AI,Cause,Sys. Fail\nCRASH,75%,50%,75%,25%\n";
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
    assert_eq!(fs::read_to_string(dir.path().join("t.csv")).unwrap(), table);

    // pairs giving the same verdict: AV a d, Late b c, Cause a b c, System b c d
    let out = crash(&["agree", "--reviews", "reviews.jsonl"], dir.path(), None);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let agreed: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(agreed, ["2", "2", "3", "3"], "{text}");
}

#[test]
fn reviews_survive_a_killed_server() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    records(root, 4);
    let labels = Labels::new(AvFailed::N, Cause::H, FailedSystem::N, false, Cause::N);
    let outputs: Vec<_> = (0..4)
        .map(|i| ClassificationRecord::new(format!("R{i}"), labels, Source::Llm))
        .collect();
    jsonl::write(&root.join("outputs.jsonl"), &outputs).unwrap();

    let spawn = || {
        let mut child = Command::new(env!("CARGO_BIN_EXE_crash"))
            .args([
                "review", "serve", "--cases", "records.jsonl", "--outputs", "outputs.jsonl",
                "--reviewers", "ann,ben", "--overlap", "2", "--port", "0", "--store", "reviews.log",
            ])
            .current_dir(root)
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line.trim().rsplit(' ').next().unwrap().to_string();
        (child, url)
    };
    let client = reqwest::blocking::Client::new();
    let verdicts = json!({"av_failed": "correct", "late_ai": "correct",
                          "primary_cause": "incorrect", "failed_system": "insufficient_context"});

    let (mut child, url) = spawn();
    let mut acked = Vec::new();
    for _ in 0..2 {
        let next: Value = client
            .get(format!("{url}/api/cases/next?reviewer=ann"))
            .send()
            .unwrap()
            .json()
            .unwrap();
        let resp = client
            .post(format!("{url}/api/reviews"))
            .json(&json!({"case_id": next["case_id"], "reviewer_id": "ann", "verdicts": verdicts}))
            .send()
            .unwrap();
        assert_eq!(resp.status(), 201);
        acked.push(resp.json::<ReviewRecord>().unwrap());
    }
    child.kill().unwrap();
    child.wait().unwrap();

    let (mut child, url) = spawn();
    let exported: Vec<ReviewRecord> = client
        .get(format!("{url}/api/reviews/export"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(exported, acked);
    let progress: Value = client
        .get(format!("{url}/api/assignment?reviewer=ann"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(progress["submitted"].as_array().unwrap().len(), 2);
    child.kill().unwrap();
    child.wait().unwrap();

    let out = crash(&["export", "--store", "reviews.log", "--out", "reviews.jsonl"], root, None);
    assert!(out.status.success());
    let from_file: Vec<ReviewRecord> = jsonl::read(&root.join("reviews.jsonl")).unwrap();
    assert_eq!(from_file, acked);
}

#[test]
fn infeasible_assignment_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    records(dir.path(), 4);
    let labels = Labels::new(AvFailed::N, Cause::H, FailedSystem::N, false, Cause::N);
    let outputs: Vec<_> = (0..4)
        .map(|i| ClassificationRecord::new(format!("R{i}"), labels, Source::Llm))
        .collect();
    jsonl::write(&dir.path().join("outputs.jsonl"), &outputs).unwrap();
    let out = crash(
        &["review", "serve", "--cases", "records.jsonl", "--outputs", "outputs.jsonl",
          "--reviewers", "solo", "--overlap", "2", "--port", "0"],
        dir.path(),
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
}
