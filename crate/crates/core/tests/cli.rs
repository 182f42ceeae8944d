use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SPEC: &str = r#"seed = 3

[[questions]]
id = "Q1"
question_type = "replication"
correct = 60
incomplete = 20
incorrect = 40

[[questions]]
id = "Q2"
question_type = "transcription"
correct = 60
incomplete = 20
incorrect = 40
"#;

fn asag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asag"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = asag(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn corpus(dir: &Path) {
    fs::write(dir.join("s.toml"), SPEC).unwrap();
    ok(dir, &["synth", "--spec", "s.toml", "--out", "c.jsonl"]);
    ok(
        dir,
        &[
            "split",
            "--corpus",
            "c.jsonl",
            "--seed",
            "1",
            "--out",
            "split.json",
        ],
    );
}

const FAST: [&str; 4] = ["--learning-rate", "0.05", "--max-epochs", "4"];

#[test]
fn synth_is_deterministic_and_recorded() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("s.toml"), SPEC).unwrap();
    ok(p, &["synth", "--spec", "s.toml", "--out", "a.jsonl"]);
    ok(p, &["synth", "--spec", "s.toml", "--out", "b.jsonl"]);
    let a = fs::read(p.join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(p.join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 240);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("a.jsonl.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["command"], "synth");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 1);
    ok(p, &["replay", "--manifest", "a.jsonl.manifest.json"]);
}

#[test]
fn sweep_report_and_replay() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    corpus(p);
    let mut train = vec![
        "train",
        "--corpus",
        "c.jsonl",
        "--split",
        "split.json",
        "--question",
        "Q1",
        "--out",
        "bmq1",
    ];
    train.extend(FAST);
    ok(p, &train);
    assert!(p.join("bmq1/manifest.json").exists() && p.join("bmq1/params.bin").exists());

    let sweep = |base: Option<&str>, out: &str| {
        let mut args = vec![
            "sweep",
            "--corpus",
            "c.jsonl",
            "--split",
            "split.json",
            "--question",
            "Q2",
            "--out",
            out,
        ];
        if let Some(b) = base {
            args.extend(["--base", b]);
        }
        args.extend(FAST);
        ok(p, &args);
    };
    sweep(None, "scratch.csv");
    sweep(Some("bmq1"), "transfer.csv");
    let text = fs::read_to_string(p.join("transfer.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 42);
    assert!(rows[0].starts_with("model,question,fraction_pct"));
    assert!(rows[1].starts_with("BMQ1Q2,Q2,0.0,"));
    assert!(rows[41].starts_with("BMQ1Q2,Q2,100.0,"));

    ok(
        p,
        &[
            "advantage",
            "--scratch",
            "scratch.csv",
            "--transfer",
            "transfer.csv",
            "--out",
            "adv.json",
        ],
    );
    ok(
        p,
        &[
            "report",
            "--curves",
            "scratch.csv",
            "transfer.csv",
            "--out",
            "rep",
        ],
    );
    for f in [
        "curves_Q2.svg",
        "chosen_models.csv",
        "advantages.csv",
        "manifest.json",
    ] {
        assert!(p.join("rep").join(f).exists(), "{f}");
    }
    let svg = fs::read_to_string(p.join("rep/curves_Q2.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("BMQ1Q2") && svg.contains("BMQ2"));

    let before = fs::read(p.join("transfer.csv")).unwrap();
    ok(p, &["replay", "--manifest", "transfer.csv.manifest.json"]);
    assert_eq!(fs::read(p.join("transfer.csv")).unwrap(), before);
}

#[test]
fn tampered_input_blocks_replay() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    corpus(p);
    let m = fs::read_to_string(p.join("split.json.manifest.json")).unwrap();
    assert!(m.contains("c.jsonl"));
    fs::write(p.join("c.jsonl"), "").unwrap();
    let out = asag(p, &["replay", "--manifest", "split.json.manifest.json"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed"));
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&asag(p, &["--help"])), 0);
    assert_eq!(code(&asag(p, &["--version"])), 0);
    assert_eq!(code(&asag(p, &["frobnicate"])), 1);
    assert_eq!(
        code(&asag(
            p,
            &["split", "--corpus", "missing.jsonl", "--out", "s.json"]
        )),
        2
    );
    corpus(p);
    let neg = asag(
        p,
        &[
            "advantage",
            "--scratch",
            "a.csv",
            "--transfer",
            "b.csv",
            "--tolerance",
            "-1",
        ],
    );
    assert_eq!(code(&neg), 1);
    let bad_q = asag(
        p,
        &[
            "sweep",
            "--corpus",
            "c.jsonl",
            "--split",
            "split.json",
            "--question",
            "Q7",
            "--out",
            "x.csv",
        ],
    );
    assert_eq!(code(&bad_q), 1);
}

#[test]
fn outputs_never_replace_inputs() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    corpus(p);
    let before = fs::read(p.join("c.jsonl")).unwrap();
    let out = asag(p, &["split", "--corpus", "c.jsonl", "--out", "c.jsonl"]);
    assert_ne!(code(&out), 0);
    assert_eq!(fs::read(p.join("c.jsonl")).unwrap(), before);
}

#[test]
fn mock_llm_run_and_zipf() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    corpus(p);
    fs::write(p.join("mock.json"), r#"{"default_reply": "A. Correct"}"#).unwrap();
    ok(
        p,
        &[
            "llm-run",
            "--corpus",
            "c.jsonl",
            "--question",
            "Q1",
            "--limit",
            "12",
            "--mock",
            "mock.json",
            "--temperatures",
            "0,1",
            "--backoff-ms",
            "0",
            "--out",
            "llm",
        ],
    );
    let metrics = fs::read_to_string(p.join("llm/metrics.csv")).unwrap();
    assert!(metrics.lines().count() >= 2);
    assert!(p.join("llm/grades_t0.csv").exists() && p.join("llm/cost.json").exists());
    ok(p, &["replay", "--manifest", "llm/manifest.json"]);

    ok(p, &["zipf", "--corpus", "c.jsonl", "--out", "z.csv"]);
    let z = fs::read_to_string(p.join("z.csv")).unwrap();
    assert!(z.starts_with("rank,item,count\n1,"));
}
