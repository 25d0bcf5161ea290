use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tokenprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tokenprobe"))
        .args(args)
        .env_remove("GLITCH_ORACLE_URL")
        .env_remove("TOKENPROBE_K")
        .env_remove("TOKENPROBE_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tokenprobe(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, n: usize, glitch: usize) {
    ok(&[
        "simulate",
        "--n",
        &n.to_string(),
        "--m",
        "16",
        "--glitch",
        &glitch.to_string(),
        "--clusters",
        "3",
        "--seed",
        "42",
        "--out",
        p(dir),
    ]);
}

#[test]
fn simulate_writes_bundle_and_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&[
        "simulate", "--n", "2000", "--m", "32", "--glitch", "200", "--clusters", "3", "--seed", "42", "--out",
        p(&sim),
    ]);
    for f in ["meta.json", "vocab.json", "embeddings.bin", "truth.json"] {
        assert!(sim.join(f).is_file(), "{f}");
    }
    let truth: Vec<u64> = serde_json::from_value(json(&sim.join("truth.json"))).unwrap();
    assert_eq!(truth.len(), 200);
    assert!(truth.windows(2).all(|w| w[0] < w[1]));
    let vocab: Vec<String> = serde_json::from_value(json(&sim.join("vocab.json"))).unwrap();
    assert_eq!(vocab.len(), 2000);
}

#[test]
fn hunt_then_score() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 500, 40);
    let truth = sim.join("truth.json");
    let report = tmp.path().join("r.json");
    ok(&[
        "hunt", "--embeddings", p(&sim), "--mock", p(&truth), "--seed", "42", "--resolution", "10", "--out",
        p(&report),
    ]);
    let r = json(&report);
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["verified"], true);
    assert_eq!(r["config"]["hunter"]["seed"], 42);
    assert_eq!(r["config"]["hunter"]["resolution"], 10.0);

    let planted: BTreeSet<u64> = serde_json::from_value(json(&truth)).unwrap();
    let found: BTreeSet<u64> = r["glitch_tokens"].as_array().unwrap().iter().map(|t| t["id"].as_u64().unwrap()).collect();
    assert!(!found.is_empty());
    assert!(found.is_subset(&planted), "verified hunt reported a non-glitch token");

    let scored = tmp.path().join("s.json");
    let out = ok(&["score", p(&report), p(&truth), "--out", p(&scored)]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("precision 1.0000 recall "), "{stdout}");
    let eval = &json(&scored)["evaluation"];
    assert_eq!(eval["counts"]["tp"].as_u64().unwrap() as usize, found.len());
    assert_eq!(eval["counts"]["fp"], 0);
    assert_eq!(eval["counts"]["fn"].as_u64().unwrap() as usize, planted.len() - found.len());
}

#[test]
fn hunt_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 300, 20);
    let truth = sim.join("truth.json");
    let mut ids = Vec::new();
    for name in ["a.json", "b.json"] {
        let out = tmp.path().join(name);
        ok(&["hunt", "--embeddings", p(&sim), "--mock", p(&truth), "--seed", "7", "--out", p(&out)]);
        let r = json(&out);
        ids.push((r["glitch_tokens"].clone(), r["trace"].clone(), r["ledger"]["queries"].clone()));
    }
    assert_eq!(ids[0], ids[1]);
}

#[test]
fn no_verify_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 300, 20);
    let out = tmp.path().join("r.json");
    ok(&[
        "hunt", "--embeddings", p(&sim), "--mock", p(&sim.join("truth.json")), "--no-verify", "--out", p(&out),
    ]);
    let r = json(&out);
    assert_eq!(r["verified"], false);
    assert_eq!(r["config"]["hunter"]["verify_final"], false);
}

#[test]
fn missing_embeddings_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tokenprobe(&["hunt", "--mock", "t.json", "--out", p(&tmp.path().join("r.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let missing_dir = tokenprobe(&[
        "hunt",
        "--embeddings",
        p(&tmp.path().join("absent")),
        "--mock",
        "t.json",
        "--out",
        p(&tmp.path().join("r.json")),
    ]);
    assert_eq!(missing_dir.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&missing_dir.stderr).is_empty());
}

#[test]
fn oracle_and_mock_are_exclusive() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 50, 5);
    let both = tokenprobe(&[
        "hunt", "--embeddings", p(&sim), "--mock", "t.json", "--oracle-url", "http://x", "--out", "r.json",
    ]);
    assert_eq!(both.status.code(), Some(2));
    let neither = tokenprobe(&["hunt", "--embeddings", p(&sim), "--out", p(&tmp.path().join("r.json"))]);
    assert_eq!(neither.status.code(), Some(2));
}

#[test]
fn bad_values_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 50, 5);
    let truth = sim.join("truth.json");
    let out = p(&tmp.path().join("r.json")).to_string();
    for extra in [["--sample-frac", "1.5"], ["--resolution", "0"], ["--k", "0"]] {
        let mut args = vec!["hunt", "--embeddings", p(&sim), "--mock", p(&truth), "--out", &out];
        args.extend(extra);
        assert_eq!(tokenprobe(&args).status.code(), Some(2), "{extra:?}");
    }
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"hunter": {"kk": 3}}"#).unwrap();
    let mut args = vec!["--config", p(&cfg), "hunt", "--embeddings", p(&sim), "--mock", p(&truth), "--out", &out];
    assert_eq!(tokenprobe(&args).status.code(), Some(2));
    fs::write(&cfg, r#"{"hunter": {"k": 4}}"#).unwrap();
    ok(&args);
    assert_eq!(json(Path::new(&out))["config"]["hunter"]["k"], 4);
    args.extend(["--k", "6"]);
    ok(&args);
    assert_eq!(json(Path::new(&out))["config"]["hunter"]["k"], 6);
}

#[test]
fn unreachable_oracle_aborts_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 50, 5);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/v1/completions");
    let out = tokenprobe(&[
        "hunt",
        "--embeddings",
        p(&sim),
        "--oracle-url",
        &url,
        "--max-retries",
        "0",
        "--timeout",
        "2",
        "--out",
        p(&tmp.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_flag_is_rejected() {
    let out = tokenprobe(&["hunt", "--embedings", "x", "--mock", "t.json", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--embedings"));
}

#[test]
fn help_lists_flags() {
    let out = ok(&["hunt", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--embeddings", "--out", "--k", "--resolution", "--objective", "--sample-frac", "--min-sample",
        "--threshold-r", "--max-iterations", "--no-verify", "--strict-rho", "--seed", "--oracle-url", "--mock",
        "--model", "--temperature", "--max-tokens", "--repeats", "--timeout", "--concurrency",
        "--glitch-threshold", "--chat", "--length-unit", "--max-retries", "--config", "--jobs",
    ] {
        assert!(help.contains(flag), "{flag} missing from help");
    }
}

#[test]
fn classify_reproduces_type_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let tokens = tmp.path().join("tokens.json");
    fs::write(&tokens, r#"["ByPrimaryKey", "davidjl", " }}\"\">", "\\GeneratedValue", "réalis"]"#).unwrap();
    let words = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/words.txt");
    let out = ok(&["classify", "--tokens", p(&tokens), "--wordlist", p(&words)]);
    let labels: Vec<Value> = serde_json::from_slice(&out.stdout).unwrap();
    let types: Vec<&str> = labels.iter().map(|l| l["type"].as_str().unwrap()).collect();
    assert_eq!(
        types,
        ["word_token", "letter_token", "character_token", "letter_character_token", "special_token"]
    );
}

#[test]
fn baseline_kmeans_then_score() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 400, 40);
    let report = tmp.path().join("b.json");
    ok(&["baseline", "--method", "kmeans", "--embeddings", p(&sim), "--clusters", "10", "--out", p(&report)]);
    let r = json(&report);
    assert_eq!(r["method"], "kmeans_centroid");
    // one whole cluster is reported
    let n = r["glitch_tokens"].as_array().unwrap().len();
    assert!((1..400).contains(&n));
    let out = ok(&["score", p(&report), p(&sim.join("truth.json"))]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("precision ") && stdout.contains(" recall "), "{stdout}");
    let tp = count_tp(&stdout);
    assert!(stdout.contains(&format!("fp {}, fn {})", n - tp, 40 - tp)), "{stdout}");
}

fn count_tp(line: &str) -> usize {
    let start = line.find("tp ").unwrap() + 3;
    line[start..].split(',').next().unwrap().parse().unwrap()
}

#[test]
fn random_and_rule_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 200, 10);
    let out = tmp.path().join("b.json");
    ok(&["baseline", "--method", "random", "--fraction", "0.25", "--embeddings", p(&sim), "--out", p(&out)]);
    assert_eq!(json(&out)["glitch_tokens"].as_array().unwrap().len(), 50);
    // vocabulary entries that are plain dictionary words are filtered out
    let vocab: Vec<String> = serde_json::from_value(json(&sim.join("vocab.json"))).unwrap();
    let mut edited = vocab.clone();
    edited[0] = "the".into();
    edited[1] = " Apple".into();
    fs::write(sim.join("vocab.json"), serde_json::to_string(&edited).unwrap()).unwrap();
    let words = tmp.path().join("w.txt");
    fs::write(&words, "the\napple\n").unwrap();
    ok(&[
        "baseline", "--method", "rule", "--fraction", "1", "--wordlist", p(&words), "--embeddings", p(&sim), "--out",
        p(&out),
    ]);
    let ids: BTreeSet<u64> =
        json(&out)["glitch_tokens"].as_array().unwrap().iter().map(|t| t["id"].as_u64().unwrap()).collect();
    assert_eq!(ids, (2..200).collect());
    assert_eq!(
        tokenprobe(&["baseline", "--method", "random", "--fraction", "2", "--embeddings", p(&sim), "--out", p(&out)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn scan_counts_occurrences() {
    let tmp = tempfile::tempdir().unwrap();
    let glitch = tmp.path().join("g.json");
    fs::write(&glitch, "[1, 5]").unwrap();
    let stream = tmp.path().join("s.jsonl");
    fs::write(&stream, "[1, 2, 3, 4]\n[5, 5, 6, 7]\n[8, 9, 10, 11, 12, 13, 14, 15]\n").unwrap();
    let out = ok(&["scan", "--glitch", p(&glitch), "--stream", p(&stream), "--vocab-size", "16"]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["glitch_tokens"], 3);
    assert_eq!(r["tokens"], 16);
    assert_eq!(r["glitch_ratio_percent"], "18.75%");
    let bad = tokenprobe(&["scan", "--glitch", p(&glitch), "--stream", p(&stream), "--vocab-size", "10"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn scan_raw_text_is_flagged_approximate() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 100, 5);
    let vocab: Vec<String> = serde_json::from_value(json(&sim.join("vocab.json"))).unwrap();
    let text = tmp.path().join("t.txt");
    fs::write(&text, format!("{}{}", vocab[3], vocab[4])).unwrap();
    let out = ok(&[
        "scan", "--glitch", p(&sim.join("truth.json")), "--text", p(&text), "--embeddings", p(&sim),
    ]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["approximate"], true);
    assert!(r["tokens"].as_u64().unwrap() >= 1);
}

#[test]
fn traverse_tests_every_token() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim, 120, 12);
    let truth = sim.join("truth.json");
    let out = tmp.path().join("t.json");
    ok(&["traverse", "--embeddings", p(&sim), "--mock", p(&truth), "--out", p(&out)]);
    let r = json(&out);
    assert_eq!(r["ledger"]["tokens_tested"], 120);
    assert_eq!(r["glitch_tokens"].as_array().unwrap().len(), 12);
}
