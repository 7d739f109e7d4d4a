//! End-to-end harness behaviour: reproducibility, completeness and artifacts.

use std::collections::BTreeSet;
use std::path::Path;

use bprx_core::env::{make_target_suite, Domain, TargetSuite};
use bprx_core::harness::{
    emit_plots, fit_sources, read_csv, read_manifest, run_ablation, run_continual, run_experiment, write_experiment,
    BaselineSettings, ExperimentConfig, HarnessError, Libraries, Method, ResultRow,
};

fn small(domain: Domain) -> ExperimentConfig {
    let targets = make_target_suite(domain, TargetSuite::NearSource);
    ExperimentConfig {
        trials: 2,
        episodes: 3,
        samples_per_task: 60,
        targets: Some(targets[..2].to_vec()),
        baselines: BaselineSettings {
            return_episodes: 2,
            ..Default::default()
        },
        mlp: bprx_core::dynamics::MlpConfig {
            epochs: 5,
            batch_size: 16,
            ..Default::default()
        },
        ..ExperimentConfig::for_domain(domain)
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn identical_seeds_give_identical_files() {
    let config = small(Domain::Nav2d);
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        let libs = Libraries::build(&config, config.samples_per_task, config.seed).unwrap();
        let out = run_experiment(&config, &libs).unwrap();
        write_experiment(dir.path(), &config, &out).unwrap();
    }
    for name in ["results.csv", "summary.csv", "events.jsonl", "config.toml"] {
        assert_eq!(
            read(&dirs[0].path().join(name)),
            read(&dirs[1].path().join(name)),
            "{name}"
        );
    }
}

#[test]
fn different_seeds_change_cartpole_results() {
    let a = small(Domain::Cartpole);
    let b = ExperimentConfig {
        seed: a.seed + 1,
        ..a.clone()
    };
    let rows = |c: &ExperimentConfig| {
        let libs = Libraries::build(c, c.samples_per_task, c.seed).unwrap();
        run_experiment(c, &libs).unwrap().rows
    };
    let (ra, rb) = (rows(&a), rows(&b));
    assert_eq!(ra.len(), rb.len());
    let ea = run_experiment(&a, &Libraries::build(&a, 60, a.seed).unwrap())
        .unwrap()
        .events;
    let eb = run_experiment(&b, &Libraries::build(&b, 60, b.seed).unwrap())
        .unwrap()
        .events;
    assert_ne!(ea, eb);
}

#[test]
fn every_cell_has_one_row_per_episode() {
    for domain in [Domain::Nav2d, Domain::Cartpole] {
        let config = small(domain);
        let libs = Libraries::build(&config, config.samples_per_task, config.seed).unwrap();
        let rows = run_experiment(&config, &libs).unwrap().rows;
        let n_targets = config.target_tasks().len();
        assert_eq!(
            rows.len(),
            config.trials * config.methods.len() * n_targets * config.episodes
        );
        let keys: BTreeSet<(usize, String, String, usize)> = rows
            .iter()
            .map(|r| (r.trial, r.method.clone(), r.target_task.clone(), r.episode))
            .collect();
        assert_eq!(keys.len(), rows.len());
        assert!(rows.iter().all(|r| (1..=config.episodes).contains(&r.episode)));
        assert!(rows.iter().all(|r| r.wall_time_ms == 0.0));
    }
}

#[test]
fn methods_share_environment_randomness() {
    // a single opposite-sign source: every method runs the same policy, whose
    // return depends on the cart-pole start state drawn from the env seed
    let base = small(Domain::Cartpole);
    let config = ExperimentConfig {
        methods: vec![Method::OursGp, Method::BprReturn, Method::PrDrl, Method::OpsDrl],
        sources: Some(base.source_tasks()[1..2].to_vec()),
        ..base
    };
    let libs = Libraries::build(&config, config.samples_per_task, config.seed).unwrap();
    let rows = run_experiment(&config, &libs).unwrap().rows;
    let of = |m: &str| -> Vec<(usize, String, usize, f64)> {
        rows.iter()
            .filter(|r| r.method == m)
            .map(|r| (r.trial, r.target_task.clone(), r.episode, r.episode_return))
            .collect()
    };
    let reference = of("ours-gp");
    let distinct: BTreeSet<u64> = reference.iter().map(|r| r.3.to_bits()).collect();
    assert!(distinct.len() > 1, "start states should vary across trials");
    for m in ["bpr-return", "pr-drl", "ops-drl"] {
        assert_eq!(of(m), reference, "{m}");
    }
}

#[test]
fn fitting_sources_is_reproducible() {
    let config = ExperimentConfig {
        methods: vec![Method::OursGp, Method::OursMlp],
        ..small(Domain::Nav2d)
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let manifest = fit_sources(&config, a.path()).unwrap();
    fit_sources(&config, b.path()).unwrap();
    assert_eq!(manifest.tasks.len(), 4);
    let mut files: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert!(files.contains(&"manifest.json".to_string()));
    assert!(files.contains(&"task_0.gp.json".to_string()));
    assert!(files.contains(&"task_3.mlp.json".to_string()));
    for f in &files {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    assert_eq!(read_manifest(a.path()).unwrap(), manifest);
}

#[test]
fn loaded_libraries_reproduce_in_memory_runs() {
    let config = small(Domain::Nav2d);
    let dir = tempfile::tempdir().unwrap();
    fit_sources(&config, dir.path()).unwrap();
    let loaded = Libraries::load(&config, dir.path()).unwrap();
    let built = Libraries::build(&config, config.samples_per_task, config.seed).unwrap();
    let a = run_experiment(&config, &loaded).unwrap().rows;
    let b = run_experiment(&config, &built).unwrap().rows;
    assert_eq!(a, b);
}

#[test]
fn missing_or_mismatched_library_is_reported() {
    let config = small(Domain::Nav2d);
    let empty = tempfile::tempdir().unwrap();
    assert!(Libraries::load(&config, empty.path()).is_err());
    let dir = tempfile::tempdir().unwrap();
    fit_sources(&config, dir.path()).unwrap();
    let cartpole = small(Domain::Cartpole);
    assert!(matches!(
        Libraries::load(&cartpole, dir.path()),
        Err(HarnessError::LibraryMismatch(_))
    ));
}

#[test]
fn ablation_has_a_row_per_size_trial_and_target() {
    let config = ExperimentConfig {
        methods: vec![Method::OursGp],
        ..small(Domain::Nav2d)
    };
    let rows = run_ablation(&config, &[30, 60]).unwrap();
    assert_eq!(rows.len(), 2 * config.trials * 2 * config.episodes);
}

#[test]
fn continual_run_records_growth() {
    let config = ExperimentConfig {
        methods: vec![Method::OursGp],
        target_suite: TargetSuite::Novel,
        trials: 1,
        episodes: 5,
        samples_per_task: 100,
        learner: bprx_core::harness::LearnerKind::OracleScripted,
        ..ExperimentConfig::for_domain(Domain::Nav2d)
    };
    let libs = Libraries::build(&config, config.samples_per_task, config.seed).unwrap();
    let out = run_continual(&config, &libs).unwrap();
    assert_eq!(out.growth.len(), 4);
    let mut size = 4;
    for g in &out.growth {
        assert_eq!(g.library_size_before, size);
        let grown = usize::from(g.detection_episode.is_some());
        assert_eq!(g.library_size_after, size + grown);
        assert_eq!(g.learner_best_return.is_some(), grown == 1);
        size = g.library_size_after;
    }
    assert!(size > 4);
    let methods: BTreeSet<&str> = out.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(methods, BTreeSet::from(["bpr-return", "ours-gp"]));
}

#[test]
fn plots_written_per_domain() {
    let config = small(Domain::Nav2d);
    let libs = Libraries::build(&config, config.samples_per_task, config.seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_experiment(dir.path(), &config, &run_experiment(&config, &libs).unwrap()).unwrap();
    let written = emit_plots(&dir.path().join("results.csv"), &dir.path().join("plots")).unwrap();
    assert_eq!(written.len(), 1);
    let svg = std::fs::read_to_string(&written[0]).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("class=\"mean\"").count(), config.methods.len());

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "trial,method,target_task,episode,return,wall_time_ms\n").unwrap();
    assert!(matches!(emit_plots(&empty, dir.path()), Err(HarnessError::NoData(_))));
}

#[test]
fn results_csv_parses_back() {
    let config = small(Domain::Cartpole);
    let libs = Libraries::build(&config, config.samples_per_task, config.seed).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&config, &libs).unwrap();
    write_experiment(dir.path(), &config, &out).unwrap();
    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(text.starts_with("trial,method,target_task,episode,return,wall_time_ms\n"));
    assert!(!text.contains('\r'));
    let back: Vec<ResultRow> = read_csv(text.as_bytes()).unwrap();
    assert_eq!(back, out.rows);
}

#[test]
fn config_survives_toml_round_trip() {
    let config = small(Domain::Cartpole);
    let text = config.to_toml_string().unwrap();
    let back = ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(back.to_toml_string().unwrap(), text);
    assert!(ExperimentConfig::from_toml_str("domain = \"nav2d\"\nbogus = 1\n")
        .unwrap_err()
        .is_config_error());
    assert!(ExperimentConfig::from_toml_str("domain = \"nav2d\"\nepisodes = 0\n")
        .unwrap_err()
        .is_config_error());
}
