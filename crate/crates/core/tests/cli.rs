mod common;

use std::path::Path;
use std::process::Command;

use common::{corpus, corpus_path};
use ilysa::cli::{run, EXIT_FAIL, EXIT_OK, EXIT_USAGE};
use ilysa::semantics::{explore, Machine, DEFAULT_STATE_CAP};

fn ilysa(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("ilysa").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path(file: &str) -> String {
    corpus_path(file).display().to_string()
}

fn write(dir: &Path, file: &str, text: &str) -> String {
    let p = dir.join(file);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn parse_accepts_the_corpus() {
    for f in common::CORPUS {
        let (code, out, err) = ilysa(&["parse", &path(f)]);
        assert_eq!(code, EXIT_OK, "{f}: {err}");
        assert!(out.contains("// nodes"));
    }
}

#[test]
fn parse_json_lists_the_nodes() {
    let (code, out, _) = ilysa(&["--format", "json", "parse", &path("ping.ilysa")]);
    assert_eq!(code, EXIT_OK);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 2);
}

#[test]
fn garbage_input_is_a_parse_failure() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "bad.ilysa", "system { node a { store proc out( } }");
    let (code, _, err) = ilysa(&["parse", &f]);
    assert_eq!(code, EXIT_FAIL);
    assert!(err.contains("bad.ilysa:"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(ilysa(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(ilysa(&["parse", "/no/such/file.ilysa"]).0, EXIT_USAGE);
    assert_eq!(ilysa(&["simulate", &path("ping.ilysa"), "--steps", "many"]).0, EXIT_USAGE);
}

#[test]
fn analyze_text_is_a_summary() {
    let (code, out, _) = ilysa(&["analyze", &path("ping.ilysa")]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(out, "a: sigma 2 kappa 0 theta 1 alpha 0\nb: sigma 2 kappa 1 theta 3 alpha 0\n");
}

#[test]
fn analyze_is_deterministic() {
    let a = ilysa(&["--format", "json", "analyze", &path("street_light.ilysa")]);
    let b = ilysa(&["--format", "json", "analyze", &path("street_light.ilysa")]);
    assert_eq!(a.0, EXIT_OK);
    assert_eq!(a.1, b.1);
    let v: serde_json::Value = serde_json::from_str(&a.1).unwrap();
    assert!(v["kappa"].as_array().is_some_and(|k| !k.is_empty()));
}

#[test]
fn strict_mode_omits_alpha() {
    let (_, out, _) = ilysa(&["--strict-paper", "--format", "json", "analyze", &path("street_light.ilysa")]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v.get("alpha").is_none_or(|a| a.is_null()));
}

#[test]
fn zero_steps_give_an_empty_trace() {
    let (code, out, _) = ilysa(&["simulate", &path("ping.ilysa"), "--steps", "0"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.trim().is_empty());
}

#[test]
fn camera_reading_reaches_the_access_supervisor() {
    let (code, out, _) = ilysa(&["simulate", &path("street_light.ilysa"), "--seed", "1", "--steps", "50"]);
    assert_eq!(code, EXIT_OK);
    let hit = out.lines().any(|l| {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        v["event"] == "msg_delivered" && v["from"] == "cp" && v["to"] == "a"
    });
    assert!(hit);
}

#[test]
fn simulation_is_reproducible() {
    let a = ilysa(&["simulate", &path("street_light.ilysa"), "--seed", "7", "--steps", "120"]);
    let b = ilysa(&["simulate", &path("street_light.ilysa"), "--seed", "7", "--steps", "120"]);
    assert_eq!(a.1, b.1);
    let c = ilysa(&["simulate", &path("street_light.ilysa"), "--seed", "8", "--steps", "120"]);
    assert_ne!(a.1, c.1);
}

#[test]
fn exhaustive_mode_matches_explore() {
    let (code, out, _) = ilysa(&["--format", "json", "simulate", &path("ping.ilysa"), "--exhaustive", "--depth", "6"]);
    assert_eq!(code, EXIT_OK);
    let m = Machine::new(&corpus("ping.ilysa"));
    let x = explore(&m, &m.initial(), 6, DEFAULT_STATE_CAP);
    assert_eq!(out.lines().count(), x.transitions.len());
}

#[test]
fn audit_accepts_real_traces_and_rejects_a_trimmed_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("e.json").display().to_string();
    let trace = dir.path().join("t.jsonl").display().to_string();
    let f = path("ping.ilysa");
    assert_eq!(ilysa(&["analyze", &f, "-o", &est]).0, EXIT_OK);
    let (code, out, _) = ilysa(&["simulate", &f, "--seed", "3", "--steps", "40", "-o", &trace]);
    assert_eq!(code, EXIT_OK);
    assert!(out.starts_with("steps 40"));
    let (code, out, _) = ilysa(&["audit", &f, "--estimate", &est, "--trace", &trace]);
    assert_eq!(code, EXIT_OK, "{out}");

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&est).unwrap()).unwrap();
    v["kappa"] = serde_json::json!([]);
    let bad = write(dir.path(), "bad.json", &v.to_string());
    let (code, out, _) = ilysa(&["audit", &f, "--estimate", &bad, "--trace", &trace]);
    assert_eq!(code, EXIT_FAIL);
    assert!(out.contains("kappa(b)"), "{out}");
}

#[test]
fn audit_rejects_foreign_labels() {
    let dir = tempfile::tempdir().unwrap();
    let est = dir.path().join("e.json").display().to_string();
    let trace = dir.path().join("t.jsonl").display().to_string();
    ilysa(&["analyze", &path("street_light.ilysa"), "-o", &est]);
    ilysa(&["simulate", &path("street_light.ilysa"), "--steps", "30", "-o", &trace]);
    let (code, _, err) = ilysa(&["audit", &path("ping.ilysa"), "--estimate", &est, "--trace", &trace]);
    assert_eq!(code, EXIT_USAGE, "{err}");
}

#[test]
fn empty_policy_passes() {
    let dir = tempfile::tempdir().unwrap();
    for text in ["", "{}"] {
        let pol = write(dir.path(), "p.json", text);
        let (code, out, _) = ilysa(&["check", &path("street_light.ilysa"), "--policy", &pol]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("PASS"));
    }
}

#[test]
fn check_reports_failures_with_witnesses() {
    let (code, out, _) = ilysa(&["check", &path("street_light.ilysa")]);
    assert_eq!(code, EXIT_FAIL);
    assert!(out.contains("secrecy: FAIL"));
    assert!(out.contains("may-flow cp -> a"));
    assert!(out.contains("actuator p1.5: may fire {turnoff, turnon}"));
}

#[test]
fn policy_file_overrides_the_preamble() {
    let dir = tempfile::tempdir().unwrap();
    let pol = write(dir.path(), "p.json", r#"{"confined": [["cp", 1]], "anonymisers": ["an"], "allowed": ["cp", "a", "pd"]}"#);
    let (code, out, _) = ilysa(&["check", &path("street_light_amended.ilysa"), "--policy", &pol]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("selective-propagation: PASS"));
    let bad = write(dir.path(), "q.json", r#"{"levels": {"cp": 1}}"#);
    assert_eq!(ilysa(&["check", &path("street_light.ilysa"), "--policy", &bad]).0, EXIT_USAGE);
}

#[test]
fn whatif_reports_lost_messages() {
    let (code, out, _) = ilysa(&["whatif", &path("street_light.ilysa")]);
    assert_eq!(code, EXIT_OK);
    assert!(out.lines().any(|l| l == "no change"), "{out}");
    let (_, out, _) = ilysa(&["whatif", &path("street_light.ilysa"), "--drop-edge", "cp:a"]);
    assert!(out.lines().any(|l| l.starts_with("- kappa(a)")), "{out}");
    assert_eq!(ilysa(&["whatif", &path("street_light.ilysa"), "--drop-edge", "cp"]).0, EXIT_USAGE);
}

#[test]
fn binary_reads_the_seed_from_the_environment() {
    let bin = env!("CARGO_BIN_EXE_ilysa");
    let f = path("street_light.ilysa");
    let by_env = Command::new(bin).args(["simulate", &f, "--steps", "60"]).env("ILYSA_SEED", "5").output().unwrap();
    let by_flag = Command::new(bin).args(["simulate", &f, "--steps", "60", "--seed", "5"]).env_remove("ILYSA_SEED").output().unwrap();
    assert!(by_env.status.success());
    assert_eq!(by_env.stdout, by_flag.stdout);
    let bad = Command::new(bin).args(["parse", "/no/such/file"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_USAGE));
}
