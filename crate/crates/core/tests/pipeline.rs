use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use socattack::attack::{audit_fakes, run_attack, Scenario, Strategy};
use socattack::recenv::{inject_poison, Budget, FakeUser};
use socattack::runner::{build_partition, build_target, load_world, RunConfig};

fn small(seed: u64) -> RunConfig {
    let mut cfg = RunConfig { dataset: "small".into(), seed, ..RunConfig::default() };
    cfg.target.epochs = 30;
    cfg.attack.degree_threshold = 3;
    cfg
}

#[test]
fn same_seed_same_target_and_attack() {
    let mut cfg = small(5);
    let world = load_world(&cfg).unwrap();
    cfg.resolve(&world.dataset);
    let a = build_target(&cfg, &world).unwrap();
    let b = build_target(&cfg, &world).unwrap();
    assert_eq!(a.to_archive(), b.to_archive());
    let part = build_partition(&cfg, &world).unwrap();
    let scenario = Scenario::new(&world.dataset, &world.split, &a, &part);
    cfg.attack.strategy = Strategy::Multi;
    let mut x = run_attack(&cfg.attack, &scenario).unwrap();
    let mut y = run_attack(&cfg.attack, &scenario).unwrap();
    x.wall_clock_ms = 0;
    y.wall_clock_ms = 0;
    assert_eq!(x, y);
}

#[test]
fn poison_budget_is_enforced() {
    let cfg = small(1);
    let world = load_world(&cfg).unwrap();
    let budget = Budget { max_fake_users: 1, profile_length: 2 };
    let fake = FakeUser { items: vec![0, 1], pairs: vec![] };
    assert!(inject_poison(&world.dataset, &[fake.clone()], &budget).is_ok());
    assert!(inject_poison(&world.dataset, &[fake.clone(), fake.clone()], &budget).is_err());
    let long = FakeUser { items: vec![0, 1, 2], pairs: vec![] };
    assert!(inject_poison(&world.dataset, &[long], &budget).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn every_strategy_respects_constraints(seed in 0u64..1000) {
        let mut cfg = small(seed);
        let world = load_world(&cfg).unwrap();
        cfg.resolve(&world.dataset);
        let model = build_target(&cfg, &world).unwrap();
        let part = build_partition(&cfg, &world).unwrap();
        let scenario = Scenario::new(&world.dataset, &world.split, &model, &part);
        for strategy in Strategy::ALL {
            cfg.attack.strategy = strategy;
            let result = run_attack(&cfg.attack, &scenario).unwrap();
            prop_assert!(result.audit.passed(), "{:?} {:?}", strategy, result.audit);
            prop_assert_eq!(&audit_fakes(&result.fakes, &part.partition, &cfg.attack.budget), &result.audit);
            prop_assert_eq!(result.fakes.len(), cfg.attack.budget.max_fake_users);
        }
    }
}

fn cli(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_socattack"))
        .args(args)
        .env("SOCATTACK_RUN_DIR", dir)
        .output()
        .unwrap()
}

#[test]
fn cli_runs_are_reproducible_from_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let first = root.join("first");
    let out = cli(root, &["attack", "--dataset", "small", "--epochs", "20", "--strategy", "cold", "--out", first.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(first.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["subcommand"], "attack");
    assert!(manifest["inputs"]["dataset"].as_str().unwrap().len() == 64);

    let replay = root.join("replay");
    let out = cli(root, &["attack", "--config", first.join("manifest.json").to_str().unwrap(), "--out", replay.to_str().unwrap()]);
    assert!(out.status.success());
    for name in ["metrics.csv", "rewards.csv", "fakes.csv"] {
        assert_eq!(std::fs::read(first.join(name)).unwrap(), std::fs::read(replay.join(name)).unwrap(), "{name}");
    }

    let report = root.join("report");
    let out = cli(root, &["report", first.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(out.status.success());
    let table = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert!(table.starts_with("strategy,metric,clean,attacked,drop,best_baseline,improvement"));

    let out = cli(root, &["attack", "--dataset", "ciao"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ciao"));
}

#[test]
fn preliminary_replays_from_manifest_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let first = root.join("first");
    let args = ["preliminary", "--dataset", "small", "--epochs", "20", "--study", "connection-type", "--out", first.to_str().unwrap()];
    let out = cli(root, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let replay = root.join("replay");
    let out = cli(root, &["preliminary", "--config", first.join("manifest.json").to_str().unwrap(), "--out", replay.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(first.join("study.csv")).unwrap(), std::fs::read(replay.join("study.csv")).unwrap());

    let out = cli(root, &["preliminary", "--dataset", "small"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no study"));
}

#[test]
fn probed_training_matches_plain_training() {
    let mut cfg = small(9);
    cfg.study.probe_every = 7;
    let world = load_world(&cfg).unwrap();
    let plain = build_target(&cfg, &world).unwrap();
    let (report, probed) = socattack::attack::cold_hit_trend(&world.dataset, &world.split, &cfg.target, &cfg.study, cfg.seed).unwrap();
    assert_eq!(plain.to_archive(), probed.to_archive());
    let conditions: std::collections::BTreeSet<&str> = report.rows.iter().map(|r| r.condition.as_str()).collect();
    assert!(conditions.contains("epoch-0000"));
    assert!(conditions.contains(format!("epoch-{:04}", cfg.target.epochs).as_str()));
}

#[test]
fn report_columns_follow_relative_drops() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let target = root.join("target");
    assert!(cli(root, &["train-target", "--dataset", "small", "--epochs", "20", "--out", target.to_str().unwrap()]).status.success());
    let model = target.join("model.json");
    let mut dirs = Vec::new();
    for s in ["random", "cold", "multi"] {
        let d = root.join(s);
        let out = cli(root, &["attack", "--dataset", "small", "--target", model.to_str().unwrap(), "--strategy", s, "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dirs.push(d);
    }
    let report = root.join("report");
    let mut args = vec!["report".to_string()];
    args.extend(dirs.iter().map(|d| d.to_str().unwrap().to_string()));
    args.extend(["--out".into(), report.to_str().unwrap().into()]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    assert!(cli(root, &args).status.success());

    let results: Vec<serde_json::Value> =
        dirs.iter().map(|d| serde_json::from_slice(&std::fs::read(d.join("result.json")).unwrap()).unwrap()).collect();
    let value = |r: &serde_json::Value, which: &str, key: &str| r[which]["values"][key].as_f64().unwrap();
    let best = results
        .iter()
        .filter(|r| r["strategy"] != "multi")
        .min_by(|a, b| value(a, "attacked", "NDCG@10").total_cmp(&value(b, "attacked", "NDCG@10")))
        .unwrap();
    let mut rows = csv::Reader::from_path(report.join("report.csv")).unwrap();
    let mut seen = 0;
    for row in rows.records() {
        let row = row.unwrap();
        let r = results.iter().find(|r| r["strategy"] == row[0]).unwrap();
        let key = &row[1];
        let (clean, attacked, base) = (value(r, "clean", key), value(r, "attacked", key), value(best, "attacked", key));
        let parse = |i: usize| row[i].parse::<f64>().unwrap();
        assert!((parse(4) - (clean - attacked) / clean).abs() < 1e-6, "{row:?}");
        assert!((parse(5) - base).abs() < 1e-6, "{row:?}");
        assert!((parse(6) - (base - attacked) / base).abs() < 1e-6, "{row:?}");
        seen += 1;
    }
    assert_eq!(seen, 3 * 9);
}
