use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use whymine_core::scoring::stub::{StubOptions, StubServer};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy")
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dest = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dest);
        } else {
            fs::copy(e.path(), dest).unwrap();
        }
    }
}

fn workdir() -> tempfile::TempDir {
    let d = tempfile::tempdir().unwrap();
    copy_dir(&fixture(), d.path());
    d
}

fn whymine(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whymine"))
        .arg("--workdir")
        .arg(dir)
        .args(["--config", "whymine.conf", "--log-level", "warn"])
        .args(args)
        .env_remove("WHYMINE_SCORER_ENDPOINT")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = whymine(dir, args);
    assert!(out.status.success(), "whymine {args:?} failed: {}\n{}", out.status, String::from_utf8_lossy(&out.stderr));
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    whymine(dir, args).status.code().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn close(v: &Value, want: f64) -> bool {
    (v.as_f64().unwrap() - want).abs() < 1e-12
}

fn prepare(dir: &Path) {
    ok(dir, &["ingest", "--split-manifest", "corpus/split.json"]);
    ok(dir, &["aggregate"]);
}

#[test]
fn most_frequent_report_on_toy_corpus() {
    let d = workdir();
    prepare(d.path());
    let out = ok(d.path(), &["eval", "--method", "most-frequent"]);
    let r = json(&d.path().join("report.json"));
    // Cleaning: declutter (tie with guests-are-coming broken by label) hits 2
    // of 4 test clips; writing predicts express-feelings, right on 2 of 4.
    assert!(close(&r["macro"]["f1"], 0.5));
    assert!(close(&r["macro"]["accuracy"], 2.0 / 3.0));
    assert!(close(&r["per_action"]["clean"]["f1"], 0.5));
    assert!(close(&r["per_action"]["write"]["f1"], 0.5));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("66.67") && text.contains("50.00"), "{text}");
    assert!(d.path().join("eval.manifest.json").exists());
    assert_eq!(jsonl(&d.path().join("predictions.jsonl")).len(), 8);
}

#[test]
fn full_toy_pipeline_writes_every_artifact() {
    let d = workdir();
    let p = d.path();
    prepare(p);
    ok(p, &["mine", "--export-verb-objects"]);
    ok(p, &["taxonomy", "--annotations", "corpus/annotations.jsonl"]);
    ok(p, &["stats"]);
    ok(p, &["eval"]);
    ok(p, &["report"]);
    for f in [
        "split.json",
        "gold.jsonl",
        "agreement.json",
        "agreement.txt",
        "candidates.jsonl",
        "mined_clips.jsonl",
        "verb_objects.json",
        "taxonomy.json",
        "funnel.json",
        "review_proposal.json",
        "stats.json",
        "stats.txt",
        "reason_distribution.json",
        "report_table.txt",
    ] {
        assert!(p.join(f).exists(), "{f} missing");
    }
    let stats = json(&p.join("stats.json"));
    assert_eq!(stats["clips"], 12);
    let tax = json(&p.join("taxonomy.json"));
    let clean: Vec<&str> =
        tax["actions"]["clean"]["reasons"].as_array().unwrap().iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert!(clean.contains(&"impress my mother"), "{clean:?}");
}

#[test]
fn mine_recovers_every_annotated_clip() {
    let d = workdir();
    ok(d.path(), &["mine"]);
    let mined: Vec<String> =
        jsonl(&d.path().join("mined_clips.jsonl")).iter().map(|c| c["clip_id"].as_str().unwrap().to_string()).collect();
    for c in jsonl(&d.path().join("corpus/clips.jsonl")) {
        let id = c["clip_id"].as_str().unwrap();
        assert!(mined.iter().any(|m| m == id), "{id} not mined");
    }
    for c in jsonl(&d.path().join("candidates.jsonl")) {
        assert!(c["distance"].as_u64().unwrap() < 15);
    }
}

#[test]
fn exit_codes() {
    let d = workdir();
    let p = d.path();
    assert_eq!(code(p, &["--bogus", "stats"]), 64);
    assert_eq!(code(p, &["--set", "no_equals_sign", "stats"]), 64);
    assert_eq!(code(p, &["--set", "quorum=abc", "stats"]), 64);
    assert_eq!(code(p, &["score", "--method", "sideways"]), 64);
    assert_eq!(code(p, &["stats", "--corpus", "nowhere"]), 66);
    assert_eq!(code(p, &["score", "--method", "nli", "--premise", "objects", "--endpoint", "127.0.0.1:9"]), 66);

    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let ep = format!("127.0.0.1:{port}");
    let args =
        ["--set", "scorer_retries=1", "--set", "scorer_backoff_ms=1", "score", "--method", "nli", "--endpoint", &ep];
    assert_eq!(code(p, &args), 2);
    assert!(!p.join("scores.jsonl").exists());
}

#[test]
fn dry_run_touches_nothing() {
    let d = workdir();
    let listing = |p: &Path| {
        let mut v: Vec<String> =
            fs::read_dir(p).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        v.sort();
        v
    };
    let before = listing(d.path());
    for args in [
        &["--dry-run", "ingest"][..],
        &["--dry-run", "mine"],
        &["--dry-run", "aggregate"],
        &["--dry-run", "stats", "--gold", "corpus/clips.jsonl"],
    ] {
        let out = ok(d.path(), args);
        let plan: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(plan["outputs"].as_array().is_some_and(|o| !o.is_empty()));
    }
    assert_eq!(before, listing(d.path()));
}

fn run_all(p: &Path, endpoint: &str) {
    prepare(p);
    ok(p, &["mine"]);
    ok(p, &["taxonomy"]);
    ok(p, &["eval", "--prefix", "mf_"]);
    ok(p, &["score", "--method", "fitb", "--endpoint", endpoint, "--output", "fitb_scores.jsonl"]);
    ok(p, &["calibrate", "--scores", "fitb_scores.jsonl", "--output", "fitb_cal.json"]);
    ok(
        p,
        &[
            "eval",
            "--method",
            "fitb",
            "--scores",
            "fitb_scores.jsonl",
            "--calibration",
            "fitb_cal.json",
            "--prefix",
            "fitb_",
        ],
    );
}

#[test]
fn outputs_are_deterministic() {
    let srv = StubServer::start(StubOptions::default()).unwrap();
    let (a, b) = (workdir(), workdir());
    run_all(a.path(), &srv.endpoint());
    run_all(b.path(), &srv.endpoint());
    let mut compared = 0;
    for e in fs::read_dir(a.path()).unwrap() {
        let name = e.unwrap().file_name();
        let name = name.to_string_lossy();
        if name.ends_with(".manifest.json") || name == "corpus" || name.ends_with(".conf") {
            continue;
        }
        let x = fs::read(a.path().join(&*name)).unwrap();
        let y = fs::read(b.path().join(&*name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
        compared += 1;
    }
    assert!(compared >= 15, "only {compared} files compared");
    let m = json(&a.path().join("score.manifest.json"));
    assert_eq!(m["command"], "score");
    assert_eq!(m["inputs"]["lexicon"].as_str().unwrap().len(), 64);
}

#[test]
fn stub_scorer_end_to_end() {
    let srv = StubServer::start(StubOptions::default()).unwrap();
    let d = workdir();
    let p = d.path();
    prepare(p);
    // Independently computed on this fixture: fitb calibrates to 0.0 and scores
    // test macro F1 1/2; cosine over stub embeddings calibrates to 0.5 and
    // scores 1/8.
    for (method, threshold, dev_f1, f1, shown) in
        [("fitb", 0.0, 0.65, 0.5, "50.00"), ("cosine", 0.5, 5.0 / 12.0, 0.125, "12.50")]
    {
        let scores = format!("{method}.jsonl");
        let cal = format!("{method}_cal.json");
        let prefix = format!("{method}_");
        ok(p, &["score", "--method", method, "--endpoint", &srv.endpoint(), "--output", &scores]);
        assert_eq!(jsonl(&p.join(&scores)).len(), 12);
        ok(p, &["calibrate", "--scores", &scores, "--output", &cal]);
        let c = json(&p.join(&cal));
        assert!(close(&c["threshold"], threshold), "{method}: {c}");
        assert!(close(&c["macro_f1"], dev_f1), "{method}: {c}");
        let out = ok(p, &["eval", "--method", method, "--scores", &scores, "--calibration", &cal, "--prefix", &prefix]);
        let r = json(&p.join(format!("{prefix}report.json")));
        assert!(close(&r["macro"]["f1"], f1), "{method}: {}", r["macro"]);
        assert!(String::from_utf8_lossy(&out.stdout).contains(shown));
    }
    ok(p, &["report", "--reports", "fitb_report.json", "cosine_report.json"]);
    let table = fs::read_to_string(p.join("report_table.txt")).unwrap();
    assert!(table.contains("fitb") && table.contains("cosine"), "{table}");
}

#[test]
fn endpoint_from_environment() {
    let srv = StubServer::start(StubOptions::default()).unwrap();
    let d = workdir();
    let out = Command::new(env!("CARGO_BIN_EXE_whymine"))
        .arg("--workdir")
        .arg(d.path())
        .args(["--config", "whymine.conf", "--log-level", "warn", "score", "--method", "nli"])
        .env("WHYMINE_SCORER_ENDPOINT", srv.endpoint())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = jsonl(&d.path().join("scores.jsonl"));
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r["scores"]
        .as_array()
        .unwrap()
        .iter()
        .all(|s| (0.0..=1.0).contains(&s.as_f64().unwrap()))));
}

#[test]
fn server_error_exits_two() {
    let srv = StubServer::start(StubOptions { malformed: true, ..StubOptions::default() }).unwrap();
    let d = workdir();
    assert_eq!(code(d.path(), &["score", "--method", "nli", "--endpoint", &srv.endpoint()]), 2);
}
