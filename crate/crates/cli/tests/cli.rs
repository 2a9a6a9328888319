use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const TOY: &str = "alpha 0 0\nbravo 10 0\ncharlie 0 10\ndelta 10 10\necho 5 5\n";

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("toy.txt");
    fs::write(&emb, TOY).unwrap();
    (dir, emb)
}

fn dxtext(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_dxtext"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(stdin.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn perturb_at_huge_epsilon_keeps_tokens() {
    let (_d, emb) = setup();
    let line = "alpha bravo charlie delta echo ";
    let input: String = (0..200).map(|_| format!("{line}\n")).collect();
    let out = dxtext(
        &[
            "perturb",
            "--embeddings",
            s(&emb),
            "--mechanism",
            "baseline",
            "--epsilon",
            "1000",
            "-q",
        ],
        &input,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let got: Vec<Vec<&str>> = text
        .lines()
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert_eq!(got.len(), 200);
    let mut same = 0;
    for toks in &got {
        assert_eq!(toks.len(), 5);
        same += toks
            .iter()
            .zip(line.split_whitespace())
            .filter(|(a, b)| **a == *b)
            .count();
    }
    assert!(same as f64 / 1000.0 >= 0.99);
}

#[test]
fn perturb_empty_input() {
    let (_d, emb) = setup();
    let out = dxtext(&["perturb", "--embeddings", s(&emb), "--epsilon", "1"], "");
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}

#[test]
fn perturb_oov_exit_code_and_message() {
    let (_d, emb) = setup();
    let out = dxtext(
        &["perturb", "--embeddings", s(&emb), "--epsilon", "1"],
        "alpha\nbravo zzz\n",
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("zzz") && err.contains("line 2"), "{err}");
    assert!(out.stdout.is_empty());

    let out = dxtext(
        &[
            "perturb",
            "--embeddings",
            s(&emb),
            "--epsilon",
            "1000",
            "--skip-oov",
            "-q",
        ],
        "alpha zzz\n",
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "alpha zzz\n");
}

#[test]
fn perturb_is_seeded() {
    let (_d, emb) = setup();
    let input = "alpha bravo charlie delta echo\n".repeat(50);
    let run = |seed: &str, threads: &str| {
        stdout(&dxtext(
            &[
                "perturb",
                "--embeddings",
                s(&emb),
                "--epsilon",
                "0.3",
                "--seed",
                seed,
                "--threads",
                threads,
                "-q",
            ],
            &input,
        ))
    };
    assert_eq!(run("4", "1"), run("4", "3"));
    assert_ne!(run("4", "1"), run("5", "1"));
}

#[test]
fn matrix_rows_sum_to_one() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("three.txt");
    fs::write(&emb, "a 0 0\nb 1 0\nc 0 1\n").unwrap();
    let out_path = dir.path().join("m.tsv");
    let out = dxtext(
        &[
            "matrix",
            "--embeddings",
            s(&emb),
            "--mechanism",
            "baseline",
            "--epsilon",
            "2",
            "--samples",
            "1000",
            "-o",
            s(&out_path),
        ],
        "",
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&out_path).unwrap();
    assert!(text.contains("# schema_version 1"));
    assert!(text.contains("\"samples_per_word\":1000"));
    let mut sums = std::collections::BTreeMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#')) {
        let f: Vec<&str> = line.split('\t').collect();
        *sums.entry(f[0].to_owned()).or_insert(0.0) += f[2].parse::<f64>().unwrap();
    }
    assert_eq!(sums.len(), 3);
    for v in sums.values() {
        assert!((v - 1.0).abs() < 1e-9);
    }

    // the written matrix drives verify-dp and perturb
    let v = dxtext(
        &[
            "verify-dp",
            "--embeddings",
            s(&emb),
            "--matrix",
            s(&out_path),
            "--epsilon",
            "2",
        ],
        "",
    );
    assert_eq!(v.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["metadata"]["schema_version"], 1);
    assert!(report["report"]["private"].is_boolean());
    let p = dxtext(
        &[
            "perturb",
            "--embeddings",
            s(&emb),
            "--matrix",
            s(&out_path),
            "-q",
        ],
        "a b c\n",
    );
    assert_eq!(p.status.code(), Some(0));
    assert_eq!(stdout(&p).split_whitespace().count(), 3);
}

#[test]
fn sensitivity_beta_zero_is_constant() {
    let (_d, emb) = setup();
    let out = dxtext(&["sensitivity", "--embeddings", s(&emb), "--beta", "0"], "");
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let global: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("#global "))
        .unwrap()
        .parse()
        .unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("word\t"))
        .collect();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let smooth: f64 = r.split('\t').nth(2).unwrap().parse().unwrap();
        assert_eq!(smooth, global);
    }
}

fn write_pipeline_config(dir: &Path) -> PathBuf {
    let cfg = dir.join("lac.json");
    fs::write(
        &cfg,
        r#"{
  "n_users": 50,
  "m_per_user": 4,
  "mechanism": {"variant": "baseline", "epsilon": 1.0},
  "amplifiers": [{"kind": "subsample", "q": 0.5}, {"kind": "shuffle"}],
  "seed": 3,
  "corpus": {"kind": "zipf"}
}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn pipeline_reports_are_byte_identical() {
    let (dir, emb) = setup();
    let cfg = write_pipeline_config(dir.path());
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = dxtext(
            &[
                "pipeline",
                "--embeddings",
                s(&emb),
                "--config",
                s(&cfg),
                "--threads",
                threads,
                "-o",
                s(&out),
            ],
            "",
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        fs::read(out).unwrap()
    };
    let a = run("a.json", "1");
    assert_eq!(a, run("b.json", "1"));
    assert_eq!(a, run("c.json", "4"));
    let report: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["metadata"]["schema_version"], 1);
    assert_eq!(report["metadata"]["config"]["seed"], 3);
    assert_eq!(report["metadata"]["amplified_epsilon"]["value"], 0.5);
}

#[test]
fn pipeline_flags_override_config() {
    let (dir, emb) = setup();
    let cfg = write_pipeline_config(dir.path());
    let dump = dir.path().join("msgs.jsonl");
    let o = dxtext(
        &[
            "pipeline",
            "--embeddings",
            s(&emb),
            "--config",
            s(&cfg),
            "--seed",
            "9",
            "--epsilon",
            "2.5",
            "--n-users",
            "10",
            "--dump-messages",
            s(&dump),
        ],
        "",
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["metadata"]["config"]["seed"], 9);
    assert_eq!(report["metadata"]["config"]["n_users"], 10);
    assert_eq!(report["metadata"]["config"]["mechanism"]["epsilon"], 2.5);
    assert_eq!(report["true_total"], 40);
    let lines = fs::read_to_string(&dump).unwrap();
    assert_eq!(
        lines.lines().count() as u64,
        report["total"].as_u64().unwrap()
    );
    for l in lines.lines() {
        let m: Value = serde_json::from_str(l).unwrap();
        assert!(m["user"].is_null());
    }
}

#[test]
fn toml_mechanism_config() {
    let (dir, emb) = setup();
    let cfg = dir.path().join("mech.toml");
    fs::write(&cfg, "variant = \"trunc_knn\"\nepsilon = 1.0\nk = 2\n").unwrap();
    let o = dxtext(
        &[
            "stats",
            "--embeddings",
            s(&emb),
            "--config",
            s(&cfg),
            "--words",
            "alpha,echo",
            "--trials",
            "500",
            "--format",
            "json",
        ],
        "",
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["metadata"]["mechanism"]["variant"], "trunc_knn");
    assert_eq!(v["stats"].as_array().unwrap().len(), 2);
    // support is bounded by {w} plus 2 neighbours
    for st in v["stats"].as_array().unwrap() {
        assert!(st["support_size"].as_u64().unwrap() <= 3);
    }
}

#[test]
fn attack_runs_and_echoes_config() {
    let (_d, emb) = setup();
    let o = dxtext(
        &[
            "attack",
            "--embeddings",
            s(&emb),
            "--epsilon",
            "0.5",
            "--samples",
            "2000",
            "--trials",
            "2000",
        ],
        "",
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let acc = v["report"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(v["metadata"]["mechanism"]["variant"], "baseline");
    assert_eq!(v["metadata"]["prior"], "uniform");
}

#[test]
fn ingest_cache_loads_identically() {
    let (dir, emb) = setup();
    let cache = dir.path().join("toy.bin");
    let o = dxtext(&["ingest", "-i", s(&emb), "-o", s(&cache), "-q"], "");
    assert_eq!(o.status.code(), Some(0));
    let sens = |p: &Path| {
        stdout(&dxtext(
            &[
                "sensitivity",
                "--embeddings",
                s(p),
                "--beta",
                "1",
                "--format",
                "json",
            ],
            "",
        ))
    };
    let a: Value = serde_json::from_str(&sens(&emb)).unwrap();
    let b: Value = serde_json::from_str(&sens(&cache)).unwrap();
    assert_eq!(a["words"], b["words"]);
    assert_eq!(
        a["metadata"]["embeddings"]["fingerprint"],
        b["metadata"]["embeddings"]["fingerprint"]
    );
}

#[test]
fn exit_codes() {
    let (dir, emb) = setup();
    // invalid parameter
    let o = dxtext(&["matrix", "--embeddings", s(&emb), "--epsilon", "-1"], "");
    assert_eq!(o.status.code(), Some(2));
    // missing epsilon
    let o = dxtext(&["matrix", "--embeddings", s(&emb)], "");
    assert_eq!(o.status.code(), Some(2));
    // missing embeddings file
    let o = dxtext(
        &[
            "sensitivity",
            "--embeddings",
            "/nonexistent/x.txt",
            "--beta",
            "1",
        ],
        "",
    );
    assert_eq!(o.status.code(), Some(3));
    // malformed embeddings
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "a 1 2\nb 1\n").unwrap();
    let o = dxtext(&["sensitivity", "--embeddings", s(&bad), "--beta", "1"], "");
    assert_eq!(o.status.code(), Some(2));
    // unwritable output leaves nothing behind
    let target = dir.path().join("missing-dir").join("out.tsv");
    let o = dxtext(
        &[
            "sensitivity",
            "--embeddings",
            s(&emb),
            "--beta",
            "1",
            "-o",
            s(&target),
        ],
        "",
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(!target.exists());
    // failed run does not clobber an existing output
    let keep = dir.path().join("keep.tsv");
    fs::write(&keep, "old").unwrap();
    let o = dxtext(
        &[
            "matrix",
            "--embeddings",
            s(&emb),
            "--epsilon",
            "0",
            "-o",
            s(&keep),
        ],
        "",
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read_to_string(&keep).unwrap(), "old");
}
