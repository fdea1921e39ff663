//! Acceptance run: one PASS/FAIL line per criterion on stdout, progress on
//! stderr. Exits non-zero on any FAIL only when ACCEPTANCE_STRICT is set.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use socattack::attack::{band_label, filler_popularity, connection_type, cold_hit_trend, run_attack, AttackResult, Scenario, Strategy};
use socattack::community::{adjacency, louvain, modularity};
use socattack::guard::{adversarial_train, detect_anomalies};
use socattack::recenv::{inject_poison, RecModel};
use socattack::runner::{build_partition, load_world, RunConfig};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn progress(msg: &str, since: Instant) {
    eprintln!("[{:>7.1}s] {msg}", since.elapsed().as_secs_f64());
}

fn batch(name: &str, count: u64, case: fn(u64) -> common::Check) -> Result<(), String> {
    (0..count).try_for_each(|s| case(s.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xACCE).map_err(|e| format!("{name} case {s}: {e}")))
}

fn timed(limit: Duration, body: impl FnOnce() -> Result<(), String>) -> (bool, String) {
    let start = Instant::now();
    let outcome = body();
    let took = start.elapsed();
    match outcome {
        Ok(()) if took <= limit => (true, format!("{:.2}s", took.as_secs_f64())),
        Ok(()) => (false, format!("correct but took {:.2}s (limit {:.0}s)", took.as_secs_f64(), limit.as_secs_f64())),
        Err(e) => (false, e),
    }
}

fn fast_criteria(out: &mut Vec<Verdict>) {
    let (pass, detail) = timed(Duration::from_secs(5), || batch("metric", 1000, common::metric_case));
    out.push(Verdict { id: 1, name: "metric oracle equivalence", pass, detail: format!("1000 instances, {detail}") });

    let (pass, detail) = timed(Duration::from_secs(30), || {
        batch("bpr", 100, common::bpr_grad_case)?;
        batch("social actor", 100, common::social_actor_grad_case)?;
        batch("item actor", 100, common::item_actor_grad_case)?;
        batch("critic", 100, common::critic_grad_case)
    });
    out.push(Verdict { id: 2, name: "gradient checks", pass, detail: format!("100 configs per stack, {detail}") });

    let (pass, detail) = timed(Duration::from_secs(60), || batch("gae", 1000, common::gae_case));
    out.push(Verdict { id: 3, name: "GAE oracle", pass, detail: format!("1000 trajectories, {detail}") });

    let (pass, detail) = timed(Duration::from_secs(60), || {
        let adj = adjacency(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]);
        let part = louvain(&adj).map_err(|e| e.to_string())?;
        if (part.modularity - 0.5).abs() > 1e-9 || part.n_c != 2 {
            return Err(format!("two triangles: Q={} n_c={}", part.modularity, part.n_c));
        }
        if part.assignment[..3].iter().any(|&c| c != part.assignment[0]) || part.assignment[3..].iter().any(|&c| c != part.assignment[3]) {
            return Err(format!("components not recovered: {:?}", part.assignment));
        }
        let q = modularity(&adj, &[0; 6]);
        if q != 0.0 {
            return Err(format!("all-in-one Q = {q}"));
        }
        batch("kmeans", 100, common::kmeans_case)
    });
    out.push(Verdict { id: 4, name: "community math", pass, detail });
}

/// Everything measured on one seed of the LastFM-scale world.
struct SeedRun {
    filler_cold_drop: f64,
    filler_popular_drop: f64,
    connection: BTreeMap<&'static str, f64>,
    trend_first: f64,
    trend_last: f64,
    results: BTreeMap<Strategy, AttackResult>,
    detection: BTreeMap<Strategy, f64>,
    robust_random_drop: f64,
    timings: BTreeMap<&'static str, f64>,
}

fn run_seed(seed: u64, model_out: Option<&Path>, clock: Instant) -> Result<SeedRun, String> {
    let e = |e: socattack::Error| e.to_string();
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    let world = load_world(&cfg).map_err(e)?;
    cfg.resolve(&world.dataset);
    let mut timings = BTreeMap::new();

    let t = Instant::now();
    let (trend, model): (_, RecModel) = cold_hit_trend(&world.dataset, &world.split, &cfg.target, &cfg.study, seed).map_err(e)?;
    timings.insert("train", t.elapsed().as_secs_f64());
    progress(&format!("seed {seed}: target trained"), clock);
    if let Some(path) = model_out {
        std::fs::write(path, model.to_archive().to_json().map_err(e)?).map_err(|x| x.to_string())?;
    }
    let hr: Vec<f64> = trend.rows.iter().filter(|r| r.metric == "HR@10").map(|r| r.value).collect();

    let part = build_partition(&cfg, &world).map_err(e)?;
    let scenario = Scenario::new(&world.dataset, &world.split, &model, &part);

    let t = Instant::now();
    let filler = filler_popularity(&scenario, &cfg.study, seed).map_err(e)?;
    timings.insert("filler study", t.elapsed().as_secs_f64());
    let connection_report = connection_type(&scenario, &cfg.study, seed).map_err(e)?;
    let connection: BTreeMap<&'static str, f64> = ["random", "intra", "cross"]
        .into_iter()
        .map(|c| (c, connection_report.value(c, "NDCG@10").unwrap_or(f64::NAN)))
        .collect();
    progress(&format!("seed {seed}: preliminary studies done"), clock);

    let mut results = BTreeMap::new();
    for strategy in Strategy::ALL {
        let mut attack = cfg.attack.clone();
        attack.strategy = strategy;
        let t = Instant::now();
        let r = run_attack(&attack, &scenario).map_err(e)?;
        timings.insert(strategy.name(), t.elapsed().as_secs_f64());
        progress(&format!("seed {seed}: {} drop {:.2}%", strategy.name(), 100.0 * r.ndcg10_drop()), clock);
        results.insert(strategy, r);
    }

    let mut detection = BTreeMap::new();
    for strategy in [Strategy::Multi, Strategy::Degree] {
        let poisoned = inject_poison(&world.dataset, &results[&strategy].fakes, &cfg.attack.budget).map_err(e)?;
        let report = detect_anomalies(&poisoned, &part.partition, cfg.lof).map_err(e)?;
        detection.insert(strategy, report.rate);
    }

    let t = Instant::now();
    let robust = adversarial_train(&model, cfg.defense.eps, cfg.defense.epochs, cfg.master().derive("defense")).map_err(e)?;
    let robust_scenario = Scenario::new(&world.dataset, &world.split, &robust, &part);
    let mut attack = cfg.attack.clone();
    attack.strategy = Strategy::Random;
    let robust_random = run_attack(&attack, &robust_scenario).map_err(e)?;
    timings.insert("defense", t.elapsed().as_secs_f64());
    progress(&format!("seed {seed}: defense done"), clock);

    Ok(SeedRun {
        filler_cold_drop: filler.value(&band_label(0.0, 0.1), "drop:NDCG@10").unwrap_or(f64::NAN),
        filler_popular_drop: filler.value(&band_label(0.8, 1.0), "drop:NDCG@10").unwrap_or(f64::NAN),
        connection,
        trend_first: hr.first().copied().unwrap_or(f64::NAN),
        trend_last: hr.last().copied().unwrap_or(f64::NAN),
        results,
        detection,
        robust_random_drop: robust_random.ndcg10_drop(),
        timings,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn world_criteria(runs: &[SeedRun], out: &mut Vec<Verdict>) {
    let med = |f: &dyn Fn(&SeedRun) -> f64| median(runs.iter().map(f).collect());
    let per_seed = |f: &dyn Fn(&SeedRun) -> f64| runs.iter().map(|r| pct(f(r))).collect::<Vec<_>>().join("/");

    let (cold, pop) = (med(&|r| r.filler_cold_drop), med(&|r| r.filler_popular_drop));
    let filler_secs: f64 = runs.iter().map(|r| r.timings["filler study"]).sum();
    out.push(Verdict {
        id: 5,
        name: "filler popularity ordering",
        pass: cold > pop && filler_secs <= 1800.0,
        detail: format!("median NDCG@10 drop cold decile {} vs top fifth {} (seeds {} vs {}), {filler_secs:.0}s", pct(cold), pct(pop), per_seed(&|r| r.filler_cold_drop), per_seed(&|r| r.filler_popular_drop)),
    });

    let [random, intra, cross] = ["random", "intra", "cross"].map(|c| med(&|r| r.connection[c]));
    out.push(Verdict {
        id: 6,
        name: "connection type ordering",
        pass: cross <= intra && cross <= random,
        detail: format!("median attacked NDCG@10 cross {cross:.4}, intra {intra:.4}, random {random:.4}"),
    });

    let ratios: Vec<f64> = runs.iter().map(|r| r.trend_last / r.trend_first).collect();
    out.push(Verdict {
        id: 7,
        name: "cold-hit trend",
        pass: ratios.iter().all(|&q| q < 0.5),
        detail: runs.iter().map(|r| format!("{:.4}->{:.4}", r.trend_first, r.trend_last)).collect::<Vec<_>>().join(", "),
    });

    let drop = |s: Strategy| move |r: &SeedRun| r.results[&s].ndcg10_drop();
    let (multi, rand, prec) = (med(&drop(Strategy::Multi)), med(&drop(Strategy::Random)), med(&drop(Strategy::PoisonrecUntargeted)));
    let learn_secs: f64 = runs.iter().map(|r| r.timings["multi"]).sum();
    out.push(Verdict {
        id: 8,
        name: "main result",
        pass: multi >= 0.15 && multi > rand && multi > prec,
        detail: format!(
            "median NDCG@10 drop multi {} random {} poisonrec {} (multi per seed {}), multi {learn_secs:.0}s total",
            pct(multi),
            pct(rand),
            pct(prec),
            per_seed(&drop(Strategy::Multi))
        ),
    });

    let mut checked = 0;
    let mut failed = Vec::new();
    for (i, r) in runs.iter().enumerate() {
        for (s, res) in &r.results {
            checked += res.fakes.len();
            if !res.audit.passed() {
                failed.push(format!("seed {} {}", SEEDS[i], s.name()));
            }
        }
    }
    out.push(Verdict {
        id: 9,
        name: "constraint audit",
        pass: failed.is_empty(),
        detail: if failed.is_empty() { format!("{checked} fakes over {} strategies x {} seeds", Strategy::ALL.len(), runs.len()) } else { failed.join(", ") },
    });

    let (m, d) = (med(&|r| r.detection[&Strategy::Multi]), med(&|r| r.detection[&Strategy::Degree]));
    out.push(Verdict {
        id: 10,
        name: "detection ordering",
        pass: m <= d,
        detail: format!(
            "median LOF detection multi {} vs degree {} (seeds {} vs {})",
            pct(m),
            pct(d),
            per_seed(&|r| r.detection[&Strategy::Multi]),
            per_seed(&|r| r.detection[&Strategy::Degree])
        ),
    });

    let (plain, robust) = (med(&drop(Strategy::Random)), med(&|r| r.robust_random_drop));
    out.push(Verdict {
        id: 11,
        name: "defense reduction",
        pass: plain > 0.0 && robust <= 0.5 * plain,
        detail: format!("median random-attack drop plain {} vs adversarially trained {}", pct(plain), pct(robust)),
    });
}

fn determinism(model: &Path, dir: &Path) -> (bool, String) {
    let bin = env!("CARGO_BIN_EXE_socattack");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(())
        } else {
            Err(String::from_utf8_lossy(&out.stderr).into_owned())
        }
    };
    let check = || -> Result<usize, String> {
        let model = model.to_str().ok_or("path")?;
        let mut compared = 0;
        for (sub, extra) in [("attack", vec!["--strategy", "multi"]), ("preliminary", vec!["--study", "connection-type"]), ("detect", vec!["--strategy", "degree"])] {
            let first = dir.join(format!("{sub}-first"));
            let mut args = vec![sub, "--seed", "0", "--target", model, "--out", first.to_str().ok_or("path")?];
            args.extend(&extra);
            run(&args)?;
            let second = dir.join(format!("{sub}-second"));
            let manifest = first.join("manifest.json");
            run(&[sub, "--config", manifest.to_str().ok_or("path")?, "--out", second.to_str().ok_or("path")?])?;
            for entry in std::fs::read_dir(&first).map_err(|e| e.to_string())? {
                let path = entry.map_err(|e| e.to_string())?.path();
                if path.extension().is_some_and(|x| x == "csv") {
                    let name = path.file_name().ok_or("name")?;
                    let a = std::fs::read(&path).map_err(|e| e.to_string())?;
                    let b = std::fs::read(second.join(name)).map_err(|e| e.to_string())?;
                    if a != b {
                        return Err(format!("{sub}/{} differs", name.to_string_lossy()));
                    }
                    compared += 1;
                }
            }
        }
        Ok(compared)
    };
    match check() {
        Ok(n) => (n > 0, format!("{n} CSV files byte-identical across repeated runs")),
        Err(e) => (false, e),
    }
}

fn main() {
    let clock = Instant::now();
    let mut verdicts = Vec::new();
    fast_criteria(&mut verdicts);
    progress("fast criteria done", clock);

    let scratch = tempfile::tempdir().expect("temp dir");
    let model_path = scratch.path().join("seed0-model.json");
    let mut runs = Vec::new();
    let mut world_error = None;
    for &seed in &SEEDS {
        match run_seed(seed, (seed == SEEDS[0]).then_some(model_path.as_path()), clock) {
            Ok(r) => runs.push(r),
            Err(e) => {
                world_error = Some(format!("seed {seed}: {e}"));
                break;
            }
        }
    }
    match &world_error {
        None => world_criteria(&runs, &mut verdicts),
        Some(e) => {
            for (id, name) in [(5, "filler popularity ordering"), (6, "connection type ordering"), (7, "cold-hit trend"), (8, "main result"), (9, "constraint audit"), (10, "detection ordering"), (11, "defense reduction")] {
                verdicts.push(Verdict { id, name, pass: false, detail: e.clone() });
            }
        }
    }
    for r in &runs {
        let t: Vec<String> = r.timings.iter().map(|(k, v)| format!("{k} {v:.0}s")).collect();
        eprintln!("timings: {}", t.join(", "));
    }

    let (pass, detail) = if model_path.exists() { determinism(&model_path, scratch.path()) } else { (false, "no trained target".into()) };
    verdicts.push(Verdict { id: 12, name: "determinism", pass, detail });

    verdicts.sort_by_key(|v| v.id);
    for v in &verdicts {
        println!("{} criterion {:>2} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.id, v.name, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} of {} criteria pass ({:.0}s)", verdicts.len() - failed, verdicts.len(), clock.elapsed().as_secs_f64());
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
