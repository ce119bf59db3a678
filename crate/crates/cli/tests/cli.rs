use std::path::Path;
use std::process::{Command, Output};

use clap::CommandFactory;
use pathsim_cli::Cli;
use pathsim_core::io::read_dataset;
use pathsim_core::metrics::MetricsReport;

fn pathsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathsim")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pathsim(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small scenario-3 dataset: 2 configs x 3 patterns x 4 s.
fn small_gen(dir: &Path, protocol: &str) {
    ok(&[
        "gen",
        "--scenario",
        "3",
        "--bandwidth-range",
        "0.5,2",
        "--configs",
        "2",
        "--patterns",
        "3",
        "--duration",
        "4",
        "--protocol",
        protocol,
        "--out",
        s(dir),
    ]);
}

fn small_train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", s(data), "--epochs", "1", "--hidden", "4", "--layers", "1", "--out", s(out)];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn help_documents_every_flag() {
    let mut root = Cli::command();
    root.build();
    for sub in root.get_subcommands() {
        let name = sub.get_name().to_string();
        let help = String::from_utf8(pathsim(&[&name, "--help"]).stdout).unwrap();
        for arg in sub.get_arguments() {
            let Some(long) = arg.get_long() else { continue };
            assert!(help.contains(&format!("--{long}")), "{name} --help lacks --{long}");
            if long != "help" && long != "version" {
                let doc = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
                assert!(!doc.is_empty(), "{name} --{long} has no description");
            }
        }
    }
    let top = String::from_utf8(ok(&["--help"]).stdout).unwrap();
    for c in ["gen", "train", "simulate", "eval", "gradcheck", "--jobs", "--config", "--force"] {
        assert!(top.contains(c), "top-level help lacks {c}");
    }
}

#[test]
fn desk_default_generates_120_tagged_traces() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen", "--protocol", "cubic", "--duration", "1", "--out", s(dir.path())]);
    let ds = read_dataset(&dir.path().join("traces.jsonl")).unwrap();
    assert_eq!(ds.len(), 120);
    assert!(ds.traces.iter().all(|t| t.protocol_tag == "cubic"));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "gen");
    assert_eq!(m["config"]["configs"], 4);
    assert_eq!(m["config"]["patterns"], 10);
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    small_gen(&gt, "cubic");
    let m = dir.path().join("m");
    small_train(&gt, &m, &[]);
    assert!(m.join("checkpoint.json").exists());
    assert_eq!(std::fs::read_to_string(m.join("loss.csv")).unwrap().lines().count(), 2);
    let again = pathsim(&["train", "--data", s(&gt), "--epochs", "1", "--hidden", "4", "--out", s(&m)]);
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["--force", "train", "--data", s(&gt), "--epochs", "1", "--hidden", "4", "--layers", "1", "--out", s(&m)]);
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    for args in [
        vec!["gen", "--scenario", "4", "--out", out],
        vec!["gen", "--protocol", "bbr", "--out", out],
        vec!["gen", "--bandwidth-range", "2,1", "--out", out],
        vec!["gen"],
        vec!["--jobs", "0", "gen", "--out", out],
        vec!["train", "--out", out],
    ] {
        assert_eq!(pathsim(&args).status.code(), Some(2), "{args:?}");
    }
    // Flags that only make sense for the RBU.
    let gt = dir.path().join("gt");
    small_gen(&gt, "cubic");
    let r = pathsim(&["train", "--data", s(&gt), "--model", "lstm-pkt", "--multipath", "--out", out]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn config_file_fills_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[gen]\nscenario = \"3\"\nconfigs = 1\npatterns = 2\nduration = 2.0\nprotocol = \"vegas\"\n")
        .unwrap();
    let out = dir.path().join("gt");
    ok(&["--config", s(&cfg), "gen", "--patterns", "3", "--out", s(&out)]);
    let ds = read_dataset(&out.join("traces.jsonl")).unwrap();
    assert_eq!(ds.len(), 3);
    assert!(ds.traces.iter().all(|t| t.protocol_tag == "vegas"));
    // The manifest alone reproduces the run.
    let again = dir.path().join("again");
    ok(&["--config", s(&out.join("manifest.json")), "gen", "--out", s(&again)]);
    assert_eq!(std::fs::read(out.join("traces.jsonl")).unwrap(), std::fs::read(again.join("traces.jsonl")).unwrap());
    // Unknown keys are validation errors.
    std::fs::write(&cfg, "[gen]\nscenarios = \"3\"\n").unwrap();
    assert_eq!(pathsim(&["--config", s(&cfg), "gen", "--out", s(&again)]).status.code(), Some(2));
}

#[test]
fn cross_protocol_simulation_and_self_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    small_gen(&gt, "cubic");
    let m = dir.path().join("m");
    small_train(&gt, &m, &[]);
    let sim = dir.path().join("sim");
    ok(&["simulate", "--model", s(&m), "--protocol", "vegas", "--runs", "3", "--duration", "3", "--out", s(&sim)]);
    let ds = read_dataset(&sim.join("traces.jsonl")).unwrap();
    assert_eq!(ds.len(), 3);
    assert!(ds.traces.iter().all(|t| t.protocol_tag == "vegas"));

    let ev = dir.path().join("ev");
    ok(&["eval", "--reference", s(&gt), "--evaluated", s(&gt), "--out", s(&ev)]);
    let report: MetricsReport =
        serde_json::from_str(&std::fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    for v in [report.wd1_mean_delay, report.wd1_p95_delay, report.wd2_tput_mean_delay, report.wd2_tput_p95_delay] {
        assert!(v.abs() < 1e-12, "{v}");
    }
    assert!(report.mmd_curve.iter().all(|(_, v)| v.abs() < 1e-12));
    let csv = std::fs::read_to_string(ev.join("report.csv")).unwrap();
    assert!(csv.starts_with("metric,x,value\n"));
    assert!(csv.contains("wd2_tput_mean_delay"));
}

#[test]
fn baselines_train_and_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    small_gen(&gt, "cubic");
    for kind in ["lstm-win", "lstm-pkt", "lstm-pkt-fifo"] {
        let m = dir.path().join(kind);
        small_train(&gt, &m, &["--model", kind]);
        let loss = std::fs::read_to_string(m.join("loss.csv")).unwrap();
        assert!(loss.starts_with("epoch,delay_ce,drop_ce\n"));
        let sim = dir.path().join(format!("{kind}-sim"));
        ok(&["simulate", "--model", s(&m), "--runs", "2", "--duration", "2", "--out", s(&sim)]);
    }
}

#[test]
fn multipath_training_and_hard_drops() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    small_gen(&gt, "cubic");
    let m = dir.path().join("m");
    small_train(&gt, &m, &["--multipath", "--q-head", "binned", "--no-tbptt"]);
    let sim = dir.path().join("sim");
    ok(&["simulate", "--model", s(&m), "--drop-mode", "hard", "--runs", "2", "--duration", "2", "--out", s(&sim)]);
}

#[test]
fn gradcheck_command_passes_its_gate() {
    let out = ok(&["gradcheck", "--hidden", "16"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("single-path: max relative error"));
    assert!(text.contains("two-path: max relative error"));
    assert!(text.contains("passed"));
}

#[test]
fn train_gradcheck_flag_runs_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    small_gen(&gt, "cubic");
    let m = dir.path().join("m");
    let out = ok(&["train", "--data", s(&gt), "--epochs", "1", "--hidden", "4", "--gradcheck", "--out", s(&m)]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("max relative error"));
    assert!(m.join("checkpoint.json").exists());
}
