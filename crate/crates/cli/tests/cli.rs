//! Drives the `bprx` binary through each subcommand and checks exit codes.

use std::path::Path;
use std::process::{Command, Output};

use bprx_core::env::{make_target_suite, Domain, TargetSuite};
use bprx_core::harness::{BaselineSettings, ExperimentConfig, Method};

fn bprx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bprx")).args(args).output().unwrap()
}

fn write_small_config(dir: &Path) -> String {
    let targets = make_target_suite(Domain::Nav2d, TargetSuite::NearSource);
    let config = ExperimentConfig {
        trials: 1,
        episodes: 2,
        samples_per_task: 40,
        methods: vec![Method::OursGp, Method::BprReturn],
        targets: Some(targets[..1].to_vec()),
        baselines: BaselineSettings {
            return_episodes: 1,
            ..Default::default()
        },
        ..ExperimentConfig::for_domain(Domain::Nav2d)
    };
    let path = dir.join("config.toml");
    std::fs::write(&path, config.to_toml_string().unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let lib = dir.path().join("lib");
    let out = dir.path().join("out");
    let plots = dir.path().join("plots");

    let fit = bprx(&["fit-sources", "--config", &config, "--out", s(&lib)]);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    assert!(lib.join("manifest.json").exists());

    let run = bprx(&[
        "run",
        "--config",
        &config,
        "--library",
        s(&lib),
        "--out",
        s(&out),
        "--seed",
        "3",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let results = out.join("results.csv");
    let text = std::fs::read_to_string(&results).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 2);

    let plot = bprx(&["plot", "--results", s(&results), "--out", s(&plots)]);
    assert!(plot.status.success(), "{}", String::from_utf8_lossy(&plot.stderr));
    assert!(std::fs::read_dir(&plots).unwrap().count() >= 1);
}

#[test]
fn ablate_accepts_size_list() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let out = dir.path().join("ablate");
    let ablate = bprx(&["ablate", "--config", &config, "--sizes", "20,40", "--out", s(&out)]);
    assert!(ablate.status.success(), "{}", String::from_utf8_lossy(&ablate.stderr));
    assert!(std::fs::read_dir(&out).unwrap().count() >= 1);
}

#[test]
fn bad_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "domain = \"nav2d\"\nepisodes = 0\n").unwrap();
    let out = bprx(&["fit-sources", "--config", s(&config), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let out = bprx(&[
        "fit-sources",
        "--config",
        s(&dir.path().join("absent.toml")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = bprx(&["ablate", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_library_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_config(dir.path());
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = bprx(&[
        "run",
        "--config",
        &config,
        "--library",
        s(&empty),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
