use std::fs;
use std::path::Path;
use std::process::Command;

use quantswitch_cli::config::{AdversarialSpec, VariantSpec};
use quantswitch_cli::{parse_config, run, ExperimentConfig, RunOptions, Stage, Verb, REFERENCE_CONFIG};

fn reference() -> ExperimentConfig {
    parse_config(REFERENCE_CONFIG).unwrap()
}

fn options(dir: &Path) -> RunOptions {
    RunOptions {
        out_dir: Some(dir.to_path_buf()),
        ..RunOptions::default()
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reference_config_reproduces_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let config = reference();
    let first = run(&config, Path::new("."), Verb::Simulate, &options(&a)).unwrap();
    let bounds = first.report.bounds.as_ref().unwrap();
    assert_eq!(bounds.n_min, 76);
    assert!((bounds.kappa / 1.2864 - 1.0).abs() <= 1e-3);
    let campaign = first.report.campaign.as_ref().unwrap();
    assert_eq!(campaign.runs.len(), 20);
    assert_eq!(campaign.passed_runs, 20);
    assert!(campaign.audits.iter().all(|a| a.violations == 0));
    assert!(first.report.check.as_ref().unwrap().passed);
    assert_eq!(first.code, 0);
    let summary = fs::read_to_string(a.join("summary.txt")).unwrap();
    assert!(summary.contains("n_min = 76"));
    assert!(summary.contains("kappa = 1.286362"));
    assert!(a.join("plot/attractor_boundary.csv").exists());
    assert!(a.join("trajectories/run_20.csv").exists());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("bounds.json")).unwrap()).unwrap();
    assert_eq!(json["bounds"]["n_min"], 76);

    run(&config, Path::new("."), Verb::Simulate, &options(&b)).unwrap();
    assert_eq!(read_tree(&a), read_tree(&b));
}

#[test]
fn no_switching_decays_without_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = reference();
    config.check = None;
    let campaign = config.campaign.as_mut().unwrap();
    campaign.p_switch = 0.0;
    campaign.seeds = 4;
    campaign.write_trajectories = false;
    // Mode 0 alone decays slowly.
    campaign.horizon = 80.0;
    let out = run(&config, Path::new("."), Verb::Simulate, &options(tmp.path())).unwrap();
    let c = out.report.campaign.unwrap();
    for r in &c.runs {
        assert_eq!(r.switches, 0);
        assert_eq!(r.mismatch_time, 0.0);
        assert!(r.first_inner_entry.is_some());
        assert_eq!(r.exits, 0);
        assert!(r.passed);
    }
    assert_eq!(out.code, 0);
}

#[test]
fn dwell_one_adversarial_is_flagged_not_failed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = reference();
    config.check = None;
    config.campaign = None;
    config.adversarial = Some(AdversarialSpec {
        n: 1,
        eps: 1e-3,
        horizon: 3.0,
        variants: vec![VariantSpec::Global, VariantSpec::Anchored],
        initial_states: 2,
        initial_margin: 0.001,
        probes: 2,
    });
    let out = run(&config, Path::new("."), Verb::Adversarial, &options(tmp.path())).unwrap();
    let adv = out.report.adversarial.as_ref().unwrap();
    assert!(adv.expected_unstable);
    assert_eq!(adv.runs.len(), 4);
    assert!(adv.runs.iter().all(|r| r.conditions_passed == Some(false)));
    assert!(adv.runs.iter().all(|r| r.mismatch_fraction > 0.9));
    assert_eq!(out.code, 0);
    assert!(out.report.summary().contains("EXPECTED-UNSTABLE"));
}

#[test]
fn coarse_sampling_reports_the_bounds_stage_with_a_hint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = reference();
    config.check = None;
    config.plant.sampling_period = 0.2;
    let err = run(&config, Path::new("."), Verb::Bounds, &options(tmp.path())).unwrap_err();
    assert_eq!(err.stage, Stage::Bounds);
    assert!(err.hint.as_deref().unwrap().contains("eta"));
}

#[test]
fn synthesized_certificate_round_trips_through_a_file() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = reference();
    config.check = None;
    config.campaign = None;
    let synth = config.synthesis.as_mut().unwrap();
    synth.samples_per_run = Some(20_000);
    synth.max_runs = Some(50);
    let out = run(&config, Path::new("."), Verb::Synthesize, &options(&tmp.path().join("s"))).unwrap();
    assert_eq!(out.report.certificate.source, "synthesized");
    assert!(out.report.bounds.is_none());

    let mut stored = reference();
    stored.check = None;
    stored.campaign = None;
    stored.bounds.d_override = None;
    let cert = stored.certificate.as_mut().unwrap();
    cert.p = None;
    cert.decrease_rate = None;
    cert.outer_radius = None;
    cert.inner_radius = None;
    cert.path = Some("s/certificate.txt".into());
    let out2 = run(&stored, tmp.path(), Verb::Bounds, &options(&tmp.path().join("b"))).unwrap();
    assert_eq!(out2.report.certificate.p, out.report.certificate.p);
    assert_eq!(out2.report.certificate.source, "config");
}

#[test]
fn unknown_keys_are_config_errors() {
    let err = parse_config("name = \"x\"\nbogus = 1\n").unwrap_err();
    assert_eq!(err.stage, Stage::Config);
}

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_quantswitch"))
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = binary().args(["bounds", "--config", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("[config]"));

    let bad_workers = binary()
        .env("QUANTSWITCH_WORKERS", "zero")
        .args(["reproduce-sec5", "--out"])
        .arg(tmp.path().join("w"))
        .output()
        .unwrap();
    assert_eq!(bad_workers.status.code(), Some(2));

    let cfg = tmp.path().join("bounds.toml");
    let text = REFERENCE_CONFIG.replace("[campaign]", "[unused_campaign]");
    fs::write(&cfg, text.split("[unused_campaign]").next().unwrap()).unwrap();
    let ok = binary()
        .env("QUANTSWITCH_WORKERS", "1")
        .args(["bounds", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(tmp.path().join("out/bounds.json").exists());
}
