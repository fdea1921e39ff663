use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use socattack::attack::{
    evaluate_attack, run_baseline, run_multiattack_logged, run_preliminary, AttackMode, AttackResult, Scenario, Strategy, Study,
};
use socattack::data::{write_dataset, UserId};
use socattack::guard::{adversarial_train, detect_anomalies};
use socattack::metrics::{write_reports_csv, MetricsReport};
use socattack::recenv::{inject_poison, Variant};
use socattack::runner::{
    build_partition, build_target, default_run_base, file_digest, load_world, RunConfig, RunDir, World, RUN_DIR_ENV,
};
use socattack::{Error, Result};

#[derive(Parser)]
#[command(name = "socattack", version, about = "Untargeted injection attacks on simulated social recommenders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config file (a previous run's manifest.json also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parent directory for run directories.
    #[arg(long, env = RUN_DIR_ENV)]
    runs_dir: Option<PathBuf>,
    /// Exact output directory, overriding the timestamped default.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// lastfm, small or files.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    interactions: Option<PathBuf>,
    #[arg(long)]
    social: Option<PathBuf>,
    #[arg(long)]
    skip_header: bool,
    /// Target model: mf-bpr, sbpr, social-lgn or sage-lite.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Trained target archive (model.json from train-target).
    #[arg(long)]
    target: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct AttackArgs {
    #[arg(long)]
    strategy: Option<String>,
    /// Fake users as a percentage of real users.
    #[arg(long)]
    budget_pct: Option<f64>,
    /// Profile length T.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    passes: Option<usize>,
    /// evasion or poison.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    spies: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Load or generate a dataset and write its summary and split.
    Ingest(Common),
    /// Partition the social graph into communities.
    Partition(Common),
    /// Train the clean target and report its metrics.
    TrainTarget {
        #[command(flatten)]
        common: Common,
        /// Probe the spies' cold-item hit ratio every N epochs.
        #[arg(long)]
        probe_every: Option<usize>,
    },
    /// Run one attack strategy against the target.
    Attack {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Run a preliminary study.
    Preliminary {
        #[command(flatten)]
        common: Common,
        /// filler-popularity, connection-type or cold-hit-trend. Defaults to
        /// the study named in the config.
        #[arg(long)]
        study: Option<String>,
    },
    /// Score users of an attacked dataset with local outlier factors.
    Detect {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long)]
        neighbors: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compare an attack on the plain target and an adversarially trained one.
    Defend {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        adv_epochs: Option<usize>,
    },
    /// Merge attack runs into one comparison table.
    Report {
        /// Attack run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, env = RUN_DIR_ENV)]
        runs_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_variant(name: &str) -> Result<Variant> {
    serde_json::from_value(json!(name)).map_err(|_| Error::InvalidConfig(format!("unknown variant '{name}'")))
}

fn resolve_config(common: &Common, attack: Option<&AttackArgs>) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = &common.dataset {
        cfg.dataset = d.clone();
    }
    if common.interactions.is_some() || common.social.is_some() {
        cfg.interactions = common.interactions.clone();
        cfg.social = common.social.clone();
        if common.dataset.is_none() {
            cfg.dataset = "files".into();
        }
    }
    cfg.skip_header |= common.skip_header;
    if let Some(v) = &common.variant {
        cfg.target.variant = parse_variant(v)?;
    }
    if let Some(e) = common.epochs {
        cfg.target.epochs = e;
    }
    if let Some(t) = &common.target {
        cfg.target_archive = Some(t.clone());
    }
    if let Some(a) = attack {
        if let Some(s) = &a.strategy {
            cfg.attack.strategy = Strategy::parse(s)?;
        }
        if let Some(b) = a.budget_pct {
            cfg.budget_pct = b;
        }
        if let Some(t) = a.steps {
            cfg.attack.budget.profile_length = t;
        }
        if let Some(p) = a.passes {
            cfg.attack.passes = p;
        }
        if let Some(m) = &a.mode {
            cfg.attack.mode = match m.as_str() {
                "evasion" => AttackMode::Evasion,
                "poison" => AttackMode::Poison,
                other => return Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
            };
        }
        if let Some(s) = a.spies {
            cfg.attack.spies = s;
        }
    }
    Ok(cfg)
}

/// Opens the run directory, runs `body`, and always writes the manifest.
fn with_run(
    name: &str,
    common: &Common,
    cfg: RunConfig,
    body: impl FnOnce(&mut RunDir, &mut RunConfig) -> Result<()>,
) -> Result<PathBuf> {
    let base = common.runs_dir.clone().unwrap_or_else(default_run_base);
    let mut run = RunDir::create(common.out.as_deref(), &base, name, &cfg)?;
    let mut cfg = cfg;
    let outcome = body(&mut run, &mut cfg);
    run.set_config(&cfg);
    let path = run.finish(&outcome)?;
    outcome.map(|()| path)
}

fn open_world(run: &mut RunDir, cfg: &mut RunConfig) -> Result<World> {
    let world = load_world(cfg)?;
    cfg.resolve(&world.dataset);
    run.input("dataset", world.digest.clone());
    if let Some(path) = &cfg.target_archive {
        run.input("target", file_digest(path)?);
    }
    run.log("data", json!({ "summary": world.dataset.summary() }))?;
    Ok(world)
}

fn write_metrics(run: &mut RunDir, name: &str, reports: &[&MetricsReport]) -> Result<()> {
    let mut w = run.output(name)?;
    write_reports_csv(reports, &mut w)
}

fn attack_once(run: &mut RunDir, cfg: &RunConfig, scenario: &Scenario<'_>) -> Result<AttackResult> {
    let attack = &cfg.attack;
    if attack.strategy.is_learned() {
        let mut events = Vec::new();
        let result = run_multiattack_logged(attack, scenario, &mut |e| {
            events.push(serde_json::to_value(e)?);
            Ok(())
        })?;
        for e in events {
            run.log("marl", e)?;
        }
        Ok(result)
    } else {
        run_baseline(attack, scenario)
    }
}

fn write_attack(run: &mut RunDir, result: &AttackResult) -> Result<()> {
    write_metrics(run, "metrics.csv", &[&result.clean, &result.attacked])?;
    let mut w = run.output("rewards.csv")?;
    let mut c = csv::Writer::from_writer(&mut w);
    c.write_record(["pass", "fakes", "reward"])?;
    for p in &result.rewards {
        c.write_record([p.pass.to_string(), p.fakes.to_string(), format!("{:.6}", p.reward)])?;
    }
    c.flush()?;
    drop(c);
    let mut w = run.output("fakes.csv")?;
    let mut c = csv::Writer::from_writer(&mut w);
    c.write_record(["fake", "kind", "a", "b"])?;
    for (f, fake) in result.fakes.iter().enumerate() {
        for &i in &fake.items {
            c.write_record([f.to_string(), "item".into(), i.to_string(), String::new()])?;
        }
        for &(a, b) in &fake.pairs {
            c.write_record([f.to_string(), "pair".into(), a.to_string(), b.to_string()])?;
        }
    }
    c.flush()?;
    drop(c);
    let mut stored = result.clone();
    stored.wall_clock_ms = 0;
    stored.training.clear();
    run.write_json("result.json", &stored)?;
    run.log("attack", json!({ "strategy": result.strategy, "wall_clock_ms": result.wall_clock_ms as u64, "audit": result.audit }))
}

fn cmd_ingest(run: &mut RunDir, cfg: &mut RunConfig) -> Result<()> {
    let world = open_world(run, cfg)?;
    run.write_json("summary.json", &world.dataset.summary())?;
    let mut inter = run.output("interactions.tsv")?;
    let mut social = run.output("social.tsv")?;
    write_dataset(&world.dataset, &mut inter, &mut social)?;
    let mut w = run.output("split.csv")?;
    let mut c = csv::Writer::from_writer(&mut w);
    c.write_record(["user", "item", "fold"])?;
    for (fold, pairs) in [("train", &world.split.train), ("test", &world.split.test)] {
        for &(u, i) in pairs.iter() {
            c.write_record([u.to_string(), i.to_string(), fold.into()])?;
        }
    }
    c.flush()?;
    Ok(())
}

fn cmd_partition(run: &mut RunDir, cfg: &mut RunConfig) -> Result<()> {
    let world = open_world(run, cfg)?;
    let result = build_partition(cfg, &world)?;
    let mut w = run.output("communities.csv")?;
    let mut c = csv::Writer::from_writer(&mut w);
    c.write_record(["user", "community", "louvain"])?;
    for u in 0..world.dataset.user_count() {
        c.write_record([u.to_string(), result.partition.assignment[u].to_string(), result.louvain.assignment[u].to_string()])?;
    }
    c.flush()?;
    drop(c);
    let summary = json!({
        "n_c": result.partition.n_c,
        "louvain_communities": result.louvain.n_c,
        "modularity": result.partition.modularity,
        "louvain_modularity": result.louvain.modularity,
        "roster_sizes": result.partition.roster_sizes(),
    });
    run.write_json("partition.json", &summary)?;
    run.log("partition", summary)
}

fn cmd_train_target(run: &mut RunDir, cfg: &mut RunConfig, probe_every: Option<usize>) -> Result<()> {
    let world = open_world(run, cfg)?;
    if let Some(every) = probe_every {
        cfg.study.kind = Some(Study::ColdHitTrend);
        cfg.study.probe_every = every;
    }
    let model = match cfg.study.kind {
        Some(Study::ColdHitTrend) => {
            let (report, model) = socattack::attack::cold_hit_trend(&world.dataset, &world.split, &cfg.target, &cfg.study, cfg.seed)?;
            let mut w = run.output("cold_hit_trend.csv")?;
            report.write_csv(&mut w)?;
            model
        }
        _ => build_target(cfg, &world)?,
    };
    run.log("target", json!({ "final_loss": model.loss_trend.last() }))?;
    let mut w = run.output("model.json")?;
    std::io::Write::write_all(&mut w, model.to_archive().to_json()?.as_bytes())?;
    drop(w);
    let n = world.dataset.user_count();
    let users: Vec<UserId> = (0..n as UserId).collect();
    let report = socattack::recenv::evaluate_view(model.view(), &world.split.train_items(n), &world.split.test_items(n), &users, "clean")?;
    write_metrics(run, "metrics.csv", &[&report])
}

fn cmd_attack(run: &mut RunDir, cfg: &mut RunConfig) -> Result<()> {
    let world = open_world(run, cfg)?;
    let model = build_target(cfg, &world)?;
    let part = build_partition(cfg, &world)?;
    let scenario = Scenario::new(&world.dataset, &world.split, &model, &part);
    let result = attack_once(run, cfg, &scenario)?;
    write_attack(run, &result)
}

fn cmd_preliminary(run: &mut RunDir, cfg: &mut RunConfig, study: Study) -> Result<()> {
    let world = open_world(run, cfg)?;
    let report = if study == Study::ColdHitTrend {
        socattack::attack::cold_hit_trend(&world.dataset, &world.split, &cfg.target, &cfg.study, cfg.seed)?.0
    } else {
        let model = build_target(cfg, &world)?;
        let part = build_partition(cfg, &world)?;
        let scenario = Scenario::new(&world.dataset, &world.split, &model, &part);
        run_preliminary(study, &scenario, &cfg.study, cfg.seed)?
    };
    let mut w = run.output("study.csv")?;
    report.write_csv(&mut w)
}

fn cmd_detect(run: &mut RunDir, cfg: &mut RunConfig) -> Result<()> {
    let world = open_world(run, cfg)?;
    let model = build_target(cfg, &world)?;
    let part = build_partition(cfg, &world)?;
    let scenario = Scenario::new(&world.dataset, &world.split, &model, &part);
    let result = attack_once(run, cfg, &scenario)?;
    let poisoned = inject_poison(&world.dataset, &result.fakes, &cfg.attack.budget)?;
    let report = detect_anomalies(&poisoned, &part.partition, cfg.lof)?;
    let mut w = run.output("detection.csv")?;
    let mut c = csv::Writer::from_writer(&mut w);
    c.write_record(["strategy", "fakes", "flagged", "flagged_fakes", "rate", "neighbors", "threshold"])?;
    c.write_record([
        cfg.attack.strategy.name().to_string(),
        report.fakes.to_string(),
        report.flagged.len().to_string(),
        report.flagged_fakes.to_string(),
        format!("{:.6}", report.rate),
        report.config.neighbors.to_string(),
        format!("{}", report.config.threshold),
    ])?;
    c.flush()?;
    Ok(())
}

fn cmd_defend(run: &mut RunDir, cfg: &mut RunConfig) -> Result<()> {
    let world = open_world(run, cfg)?;
    let model = build_target(cfg, &world)?;
    let robust = adversarial_train(&model, cfg.defense.eps, cfg.defense.epochs, cfg.master().derive("defense"))?;
    let part = build_partition(cfg, &world)?;
    let mut w = run.output("defense.csv")?;
    let mut c = csv::Writer::from_writer(&mut w);
    c.write_record(["target", "eps", "clean_ndcg10", "attacked_ndcg10", "drop"])?;
    for (name, target, eps) in [("plain", &model, 0.0), ("robust", &robust, cfg.defense.eps)] {
        let scenario = Scenario::new(&world.dataset, &world.split, target, &part);
        let result = attack_once(run, cfg, &scenario)?;
        c.write_record([
            name.to_string(),
            format!("{eps}"),
            format!("{:.6}", result.clean.ndcg10()),
            format!("{:.6}", result.attacked.ndcg10()),
            format!("{:.6}", result.ndcg10_drop()),
        ])?;
    }
    c.flush()?;
    Ok(())
}

fn read_result(dir: &Path) -> Result<AttackResult> {
    let text = std::fs::read_to_string(dir.join("result.json"))?;
    Ok(serde_json::from_str(&text)?)
}

fn cmd_report(run: &mut RunDir, dirs: &[PathBuf]) -> Result<()> {
    let mut results = Vec::new();
    for d in dirs {
        run.input(&d.display().to_string(), file_digest(&d.join("result.json"))?);
        results.push(read_result(d)?);
    }
    results.sort_by_key(|r| r.strategy);
    let clean = results.first().map(|r| r.clean.clone()).ok_or_else(|| Error::InvalidInput("no runs".into()))?;
    if results.iter().any(|r| r.clean != clean) {
        return Err(Error::InvalidInput("runs were made against different clean targets".into()));
    }
    let baselines: Vec<&AttackResult> = results.iter().filter(|r| !matches!(r.strategy, Strategy::Multi | Strategy::Double | Strategy::MultiSocial)).collect();
    let best = baselines.iter().min_by(|a, b| a.attacked.ndcg10().total_cmp(&b.attacked.ndcg10())).map(|r| &r.attacked);
    let mut w = run.output("report.csv")?;
    let mut c = csv::Writer::from_writer(&mut w);
    c.write_record(["strategy", "metric", "clean", "attacked", "drop", "best_baseline", "improvement"])?;
    for r in &results {
        let reference = best.unwrap_or(&clean);
        let summary = evaluate_attack(&clean, &r.attacked, reference)?;
        for row in summary.rows {
            let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
            c.write_record([
                r.strategy.name().to_string(),
                row.key,
                format!("{:.6}", row.clean),
                format!("{:.6}", row.attacked),
                fmt(row.drop),
                format!("{:.6}", row.baseline),
                fmt(row.improvement),
            ])?;
        }
    }
    c.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<PathBuf> {
    match cli.command {
        Command::Ingest(common) => {
            let cfg = resolve_config(&common, None)?;
            with_run("ingest", &common, cfg, cmd_ingest)
        }
        Command::Partition(common) => {
            let cfg = resolve_config(&common, None)?;
            with_run("partition", &common, cfg, cmd_partition)
        }
        Command::TrainTarget { common, probe_every } => {
            let cfg = resolve_config(&common, None)?;
            with_run("train-target", &common, cfg, |r, c| cmd_train_target(r, c, probe_every))
        }
        Command::Attack { common, attack } => {
            let cfg = resolve_config(&common, Some(&attack))?;
            with_run("attack", &common, cfg, cmd_attack)
        }
        Command::Preliminary { common, study } => {
            let mut cfg = resolve_config(&common, None)?;
            if let Some(name) = study {
                cfg.study.kind = Some(Study::parse(&name)?);
            }
            let Some(study) = cfg.study.kind else {
                return Err(Error::InvalidConfig("no study given: pass --study or set study.kind".into()));
            };
            with_run("preliminary", &common, cfg, |r, c| cmd_preliminary(r, c, study))
        }
        Command::Detect { common, attack, neighbors, threshold } => {
            let mut cfg = resolve_config(&common, Some(&attack))?;
            if let Some(k) = neighbors {
                cfg.lof.neighbors = k;
            }
            if let Some(t) = threshold {
                cfg.lof.threshold = t;
            }
            with_run("detect", &common, cfg, cmd_detect)
        }
        Command::Defend { common, attack, eps, adv_epochs } => {
            let mut cfg = resolve_config(&common, Some(&attack))?;
            if let Some(e) = eps {
                cfg.defense.eps = e;
            }
            if let Some(e) = adv_epochs {
                cfg.defense.epochs = e;
            }
            with_run("defend", &common, cfg, cmd_defend)
        }
        Command::Report { runs, runs_dir, out } => {
            let common = Common { runs_dir, out, ..Common::default() };
            with_run("report", &common, RunConfig::default(), |r, _| cmd_report(r, &runs))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
