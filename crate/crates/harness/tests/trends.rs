//! Shape of clean desk-default training and schedule contracts on full runs.

use std::path::Path;

use migo_harness::config::AttackKind;
use migo_harness::{run_experiment, Config};

fn config(name: &str) -> Config {
    Config::load(
        &Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../configs")
            .join(format!("{name}.toml")),
    )
    .unwrap()
}

fn moving_average(xs: &[f64], end: usize, width: usize) -> f64 {
    xs[end + 1 - width..=end].iter().sum::<f64>() / width as f64
}

#[test]
fn clean_ben_acc_improves() {
    let res = run_experiment(&config("no-attack")).unwrap();
    let ben: Vec<f64> = res.records.iter().map(|r| r.ben_acc).collect();
    let first = moving_average(&ben, 9, 10);
    let hundredth = moving_average(&ben, 99, 10);
    assert!(hundredth > first, "ben acc {first} -> {hundredth}");
    assert!(res.records.iter().all(|r| r.malicious_ids.is_empty()));
}

#[test]
fn clean_distance_from_init_flattens() {
    let res = run_experiment(&config("no-attack")).unwrap();

    // Distance from the initial model grows, then its 20-round average moves
    // by less than 10% per 100 rounds from round 50 on.
    let dist: Vec<f64> = res.records.iter().map(|r| r.distance_from_init).collect();
    assert!(moving_average(&dist, 49, 20) > moving_average(&dist, 19, 20));
    for r in (50..dist.len() - 100).step_by(10) {
        let (a, b) = (moving_average(&dist, r, 20), moving_average(&dist, r + 100, 20));
        assert!((b - a).abs() / a < 0.1, "distance {a} -> {b} at round {r}");
    }
}

#[test]
fn attackers_only_act_inside_the_window() {
    let mut cfg = config("desk-edge");
    cfg.experiment.total_rounds = 120;
    cfg.experiment.attack_window = (0, 30);
    let res = run_experiment(&cfg).unwrap();
    for r in &res.records {
        assert_eq!(r.malicious_ids.len(), usize::from(r.round < 30), "round {}", r.round);
        let mut all: Vec<usize> = r.accepted_ids.iter().chain(&r.rejected_ids).copied().collect();
        all.sort_unstable();
        let mut sel = r.selected.clone();
        sel.sort_unstable();
        assert_eq!(all, sel);
    }
}

#[test]
fn repeated_runs_are_identical() {
    for name in ["random-layer-forcing", "flshield-backpgd", "freqfed-neurotoxin"] {
        let mut cfg = config(name);
        cfg.experiment.total_rounds = 80;
        cfg.experiment.attack_window = (20, 60);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.series, b.series, "{name}");
        assert_eq!(a.final_model, b.final_model, "{name}");
    }
}

#[test]
fn every_shipped_config_loads() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = Config::load(&path).unwrap();
            assert_eq!(path.file_stem().unwrap().to_string_lossy(), cfg.name);
            n += 1;
        }
    }
    assert!(n >= 10);
}

#[test]
fn baseline_attacks_run_to_completion() {
    for kind in [AttackKind::Backpgd, AttackKind::Mrepl, AttackKind::Neurotoxin] {
        let mut cfg = config("desk-edge");
        cfg.experiment.total_rounds = 70;
        cfg.experiment.attack_window = (50, 70);
        cfg.attack.kind = kind;
        let res = run_experiment(&cfg).unwrap();
        assert_eq!(res.records.len(), 70);
        assert!(res.records[50..].iter().all(|r| r.malicious_ids.len() == 1));
    }
}
