//! Attack orchestration: the multi-agent attack and its variants, the
//! heuristic baselines, evaluation against a clean target and the
//! preliminary studies on filler popularity, connection type and the
//! cold-item hit trend.

use std::time::Instant;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::community::{CommunityPartition, PartitionResult};
use crate::data::{cold_start_pool, popular_pool, popularity_band, Dataset, ItemId, ItemPool, Split, SpySet, UserId};
use crate::error::{invalid, Error, Result};
use crate::gradcore::EmbeddingTable;
use crate::marl::{policy_rng, Critic, ItemActor, PpoConfig, Rollout, SocialActor, Team};
use crate::metrics::{cold_hit_reward, Metric, MetricsReport};
use crate::recenv::{evaluate_view, Budget, EvasionTarget, FakeUser, PoisonTarget, RecConfig, RecModel};
use crate::seed::{Rng, SeedStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Multi,
    Double,
    MultiSocial,
    Random,
    Cold,
    Pop,
    Degree,
    PoisonrecUntargeted,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::Multi,
        Strategy::Double,
        Strategy::MultiSocial,
        Strategy::Random,
        Strategy::Cold,
        Strategy::Pop,
        Strategy::Degree,
        Strategy::PoisonrecUntargeted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Multi => "multi",
            Strategy::Double => "double",
            Strategy::MultiSocial => "multi-social",
            Strategy::Random => "random",
            Strategy::Cold => "cold",
            Strategy::Pop => "pop",
            Strategy::Degree => "degree",
            Strategy::PoisonrecUntargeted => "poisonrec-untargeted",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy '{name}'")))
    }

    pub fn is_learned(self) -> bool {
        matches!(self, Strategy::Multi | Strategy::Double | Strategy::MultiSocial | Strategy::PoisonrecUntargeted)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    #[default]
    Evasion,
    Poison,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Second social agent may pick from the first agent's community.
    pub community_mask_off: bool,
    /// Use the Louvain partition directly instead of K-means over walks.
    pub louvain_only: bool,
    /// One social actor serves both social roles.
    pub multiagent_off: bool,
    /// Item agent chooses among all items.
    pub cold_pool_off: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub strategy: Strategy,
    pub budget: Budget,
    pub cold_quantile: f64,
    pub spies: usize,
    pub reward_k: usize,
    pub cadence: usize,
    /// Fake users generated per episode.
    pub episode_fakes: usize,
    /// Full generation passes; the last pass yields the emitted fakes.
    pub passes: usize,
    pub ppo: PpoConfig,
    pub pop_top_k: usize,
    pub degree_threshold: usize,
    /// Warm-start social encoders from the partition's walk embeddings.
    pub warm_start: bool,
    /// Keep only the highest-degree users of each roster.
    pub roster_cap: Option<usize>,
    pub ablations: Ablations,
    pub mode: AttackMode,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            strategy: Strategy::Multi,
            budget: Budget { max_fake_users: 38, profile_length: 30 },
            cold_quantile: 0.1,
            spies: 50,
            reward_k: 10,
            cadence: 2,
            episode_fakes: 2,
            passes: 1,
            ppo: PpoConfig::default(),
            pop_top_k: 10,
            degree_threshold: 20,
            warm_start: true,
            roster_cap: None,
            ablations: Ablations::default(),
            mode: AttackMode::Evasion,
            seed: 0,
        }
    }
}

/// Fake-user count for a budget given as a percentage of real users.
pub fn budget_from_percent(real_users: usize, percent: f64) -> usize {
    (real_users as f64 * percent / 100.0).round() as usize
}

/// A trained clean target together with everything an attack reads.
pub struct Scenario<'a> {
    pub dataset: &'a Dataset,
    pub split: &'a Split,
    pub model: &'a RecModel,
    pub partition: &'a PartitionResult,
    pub train_items: Vec<Vec<ItemId>>,
    pub test_items: Vec<Vec<ItemId>>,
    train_view: Dataset,
}

impl<'a> Scenario<'a> {
    pub fn new(dataset: &'a Dataset, split: &'a Split, model: &'a RecModel, partition: &'a PartitionResult) -> Self {
        let n = dataset.user_count();
        Scenario {
            dataset,
            split,
            model,
            partition,
            train_items: split.train_items(n),
            test_items: split.test_items(n),
            train_view: dataset.with_interactions(&split.train),
        }
    }

    /// Training interactions only; popularity-based pools read this.
    pub fn train_view(&self) -> &Dataset {
        &self.train_view
    }

    pub fn real_users(&self) -> Vec<UserId> {
        (0..self.dataset.real_user_count() as UserId).collect()
    }

    pub fn cold_pool(&self, quantile: f64) -> Result<ItemPool> {
        cold_start_pool(&self.train_view, quantile)
    }

    pub fn clean_report(&self) -> Result<MetricsReport> {
        evaluate_view(self.model.view(), &self.train_items, &self.test_items, &self.real_users(), "clean")
    }

    /// Metrics over real users after injecting `fakes`.
    pub fn attacked_report(&self, fakes: &[FakeUser], mode: AttackMode, budget: &Budget, seed: SeedStream, label: &str) -> Result<MetricsReport> {
        match mode {
            AttackMode::Evasion => {
                let view = self.model.inject_evasion(fakes)?;
                evaluate_view(&view, &self.train_items, &self.test_items, &self.real_users(), label)
            }
            AttackMode::Poison => {
                let model = self.poison_target(budget, seed).retrain(fakes)?;
                evaluate_view(model.view(), &self.train_items, &self.test_items, &self.real_users(), label)
            }
        }
    }

    fn poison_target(&self, budget: &Budget, seed: SeedStream) -> PoisonTarget<'_> {
        PoisonTarget {
            config: self.model.config.clone(),
            dataset: self.dataset,
            train_pairs: &self.split.train,
            train_items: &self.train_items,
            budget: *budget,
            seed: seed.derive("poison-retrain"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintAudit {
    pub fakes: usize,
    pub cross_community: usize,
    pub distinct_items: usize,
    pub within_budget: usize,
    pub total_within_budget: bool,
}

impl ConstraintAudit {
    pub fn passed(&self) -> bool {
        self.total_within_budget
            && self.cross_community == self.fakes
            && self.distinct_items == self.fakes
            && self.within_budget == self.fakes
    }
}

/// Counts fakes whose pairs all straddle two communities, whose items are
/// distinct and whose profiles fit the budget.
pub fn audit_fakes(fakes: &[FakeUser], partition: &CommunityPartition, budget: &Budget) -> ConstraintAudit {
    let mut audit = ConstraintAudit { fakes: fakes.len(), total_within_budget: fakes.len() <= budget.max_fake_users, ..Default::default() };
    for fake in fakes {
        let cross = fake.pairs.iter().all(|&(a, b)| {
            (a as usize) < partition.assignment.len()
                && (b as usize) < partition.assignment.len()
                && partition.community_of(a) != partition.community_of(b)
        });
        let mut items = fake.items.clone();
        items.sort_unstable();
        items.dedup();
        audit.cross_community += usize::from(cross);
        audit.distinct_items += usize::from(items.len() == fake.items.len());
        audit.within_budget += usize::from(fake.items.len() <= budget.profile_length && fake.pairs.len() <= budget.profile_length);
    }
    audit
}

/// Per-agent action-space sizes of a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionSpaceSize {
    pub item_actions: usize,
    pub social_actions: usize,
    pub communities: usize,
    pub max_roster: usize,
    pub items: usize,
    pub users: usize,
}

impl ActionSpaceSize {
    /// Item choices well below `m` and social choices well below `n^2`.
    pub fn is_compact(&self) -> bool {
        self.item_actions * 2 <= self.items && (self.social_actions as f64) * 10.0 <= (self.users as f64).powi(2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardPoint {
    pub pass: usize,
    pub fakes: usize,
    pub reward: f64,
}

/// One PPO update as streamed to the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingEvent {
    pub pass: usize,
    pub episode: usize,
    pub fakes: usize,
    pub reward: Option<f64>,
    pub policy_entropy: f64,
    pub value_loss_first: f64,
    pub value_loss_last: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub fakes: Vec<FakeUser>,
    pub rewards: Vec<RewardPoint>,
    pub training: Vec<TrainingEvent>,
    pub clean: MetricsReport,
    pub attacked: MetricsReport,
    pub audit: ConstraintAudit,
    pub action_space: ActionSpaceSize,
    pub wall_clock_ms: u128,
}

impl AttackResult {
    /// Relative NDCG@10 drop against the clean target.
    pub fn ndcg10_drop(&self) -> f64 {
        relative_drop(self.clean.ndcg10(), self.attacked.ndcg10()).unwrap_or(f64::NAN)
    }
}

/// `(before - after) / before`; `None` when `before` is zero.
pub fn relative_drop(before: f64, after: f64) -> Option<f64> {
    (before != 0.0).then(|| (before - after) / before)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub key: String,
    pub clean: f64,
    pub attacked: f64,
    pub baseline: f64,
    /// `(clean - attacked) / clean`, absent for a zero clean value.
    pub drop: Option<f64>,
    /// `(baseline - attacked) / baseline`, absent for a zero baseline.
    pub improvement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementSummary {
    pub rows: Vec<ImprovementRow>,
}

impl ImprovementSummary {
    pub fn row(&self, key: &str) -> Option<&ImprovementRow> {
        self.rows.iter().find(|r| r.key == key)
    }

    pub fn undefined(&self) -> bool {
        self.rows.iter().any(|r| r.drop.is_none() || r.improvement.is_none())
    }
}

/// Per-metric drop against the clean target and improvement over the best
/// baseline.
pub fn evaluate_attack(clean: &MetricsReport, attacked: &MetricsReport, baseline: &MetricsReport) -> Result<ImprovementSummary> {
    let mut rows = Vec::new();
    for (key, &c) in &clean.values {
        let (Some(&a), Some(&b)) = (attacked.values.get(key), baseline.values.get(key)) else {
            return invalid(format!("metric {key} missing from a report"));
        };
        rows.push(ImprovementRow { key: key.clone(), clean: c, attacked: a, baseline: b, drop: relative_drop(c, a), improvement: relative_drop(b, a) });
    }
    if rows.len() != attacked.values.len() || rows.len() != baseline.values.len() {
        return invalid("reports carry different metric keys");
    }
    Ok(ImprovementSummary { rows })
}

/// `count` distinct picks from `pool` (all of it when shorter).
fn distinct_items(pool: &[ItemId], count: usize, rng: &mut Rng) -> Vec<ItemId> {
    sample(rng, pool.len(), count.min(pool.len())).into_iter().map(|k| pool[k]).collect()
}

/// How the partner in a pair relates to the first member's community.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairRule {
    Random,
    Intra,
    Cross,
}

/// `count` pairs drawn from `candidates` under `rule`.
pub fn draw_pairs(
    candidates: &[UserId],
    partition: &CommunityPartition,
    rule: PairRule,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<(UserId, UserId)>> {
    if candidates.len() < 2 {
        return Err(Error::ConstraintInfeasible("fewer than two candidate users".into()));
    }
    let partner_ok = |a: UserId, b: UserId| {
        a != b
            && match rule {
                PairRule::Random => true,
                PairRule::Intra => partition.community_of(a) == partition.community_of(b),
                PairRule::Cross => partition.community_of(a) != partition.community_of(b),
            }
    };
    let firsts: Vec<UserId> = candidates
        .iter()
        .copied()
        .filter(|&a| candidates.iter().any(|&b| partner_ok(a, b)))
        .collect();
    if firsts.is_empty() {
        return Err(Error::ConstraintInfeasible(format!("no candidate pair satisfies {rule:?}")));
    }
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let a = firsts[rng.gen_range(0..firsts.len())];
        let partners: Vec<UserId> = candidates.iter().copied().filter(|&b| partner_ok(a, b)).collect();
        pairs.push((a, partners[rng.gen_range(0..partners.len())]));
    }
    Ok(pairs)
}

fn check_partition(partition: &CommunityPartition, users: usize) -> Result<()> {
    if partition.assignment.len() != users {
        return invalid("partition does not cover the dataset's users");
    }
    Ok(())
}

/// Heuristic baselines: item profiles from a strategy-specific pool and
/// cross-community pairs of uniformly drawn users.
pub fn run_baseline(config: &AttackConfig, scenario: &Scenario<'_>) -> Result<AttackResult> {
    let started = Instant::now();
    let partition = &scenario.partition.partition;
    check_partition(partition, scenario.dataset.user_count())?;
    let clean = scenario.clean_report()?;
    let seed = SeedStream::new(config.seed).derive(config.strategy.name());
    let fakes = baseline_fakes(config, scenario, seed.derive("fakes"))?;
    let attacked = attacked_or_clean(scenario, config, &fakes, &clean, seed)?;
    let audit = audit_fakes(&fakes, partition, &config.budget);
    let pool_len = baseline_pool(config, scenario)?.len();
    Ok(AttackResult {
        strategy: config.strategy,
        seed: config.seed,
        action_space: ActionSpaceSize {
            item_actions: pool_len,
            social_actions: scenario.dataset.real_user_count(),
            communities: partition.n_c,
            max_roster: partition.max_roster(),
            items: scenario.dataset.item_count(),
            users: scenario.dataset.real_user_count(),
        },
        fakes,
        rewards: Vec::new(),
        training: Vec::new(),
        clean,
        attacked,
        audit,
        wall_clock_ms: started.elapsed().as_millis(),
    })
}

fn baseline_pool(config: &AttackConfig, scenario: &Scenario<'_>) -> Result<ItemPool> {
    match config.strategy {
        Strategy::Cold => scenario.cold_pool(config.cold_quantile),
        Strategy::Pop => popular_pool(scenario.train_view(), config.pop_top_k),
        Strategy::Random | Strategy::Degree => Ok(ItemPool::all(scenario.dataset.item_count())),
        s => Err(Error::InvalidConfig(format!("{} is not a heuristic baseline", s.name()))),
    }
}

/// The fake set a heuristic baseline emits.
pub fn baseline_fakes(config: &AttackConfig, scenario: &Scenario<'_>, seed: SeedStream) -> Result<Vec<FakeUser>> {
    let pool = baseline_pool(config, scenario)?;
    let real = scenario.real_users();
    let candidates: Vec<UserId> = if config.strategy == Strategy::Degree {
        let degrees = scenario.dataset.social_degrees();
        let picked: Vec<UserId> = real.into_iter().filter(|&u| degrees[u as usize] > config.degree_threshold).collect();
        if picked.is_empty() {
            return Err(Error::InvalidConfig(format!("no user has social degree above {}", config.degree_threshold)));
        }
        picked
    } else {
        real
    };
    let t = config.budget.profile_length;
    let mut rng = seed.rng();
    (0..config.budget.max_fake_users)
        .map(|_| {
            let items = distinct_items(&pool.items, t, &mut rng);
            let pairs = draw_pairs(&candidates, &scenario.partition.partition, PairRule::Cross, t, &mut rng)?;
            Ok(FakeUser { items, pairs })
        })
        .collect()
}

fn attacked_or_clean(scenario: &Scenario<'_>, config: &AttackConfig, fakes: &[FakeUser], clean: &MetricsReport, seed: SeedStream) -> Result<MetricsReport> {
    let label = config.strategy.name();
    if fakes.is_empty() {
        return Ok(MetricsReport { label: label.into(), ..clean.clone() });
    }
    scenario.attacked_report(fakes, config.mode, &config.budget, seed, label)
}

fn capped_rosters(partition: &CommunityPartition, degrees: &[usize], cap: Option<usize>) -> Vec<Vec<UserId>> {
    partition
        .rosters
        .iter()
        .map(|roster| {
            let mut r = roster.clone();
            if let Some(cap) = cap {
                r.sort_by_key(|&u| (std::cmp::Reverse(degrees[u as usize]), u));
                r.truncate(cap);
                r.sort_unstable();
            }
            r
        })
        .collect()
}

/// The learned strategies: MultiAttack, DoubleAttack, MultiAttack-Social and
/// the single-agent PoisonRec-style baseline.
pub fn run_multiattack(config: &AttackConfig, scenario: &Scenario<'_>) -> Result<AttackResult> {
    run_multiattack_logged(config, scenario, &mut |_| Ok(()))
}

/// [`run_multiattack`] streaming every update to `log`.
pub fn run_multiattack_logged(
    config: &AttackConfig,
    scenario: &Scenario<'_>,
    log: &mut dyn FnMut(&TrainingEvent) -> Result<()>,
) -> Result<AttackResult> {
    let started = Instant::now();
    let strategy = config.strategy;
    if !strategy.is_learned() {
        return Err(Error::InvalidConfig(format!("{} is not a learned strategy", strategy.name())));
    }
    if config.episode_fakes == 0 || config.budget.profile_length == 0 && config.budget.max_fake_users > 0 {
        return invalid("episodes need at least one fake user and one step");
    }
    let n = scenario.dataset.user_count();
    let m = scenario.dataset.item_count();
    let abl = config.ablations;
    let partition = if abl.louvain_only { &scenario.partition.louvain } else { &scenario.partition.partition };
    check_partition(partition, n)?;
    let seed = SeedStream::new(config.seed).derive(strategy.name());
    let clean = scenario.clean_report()?;
    let spies = crate::data::select_spies(scenario.dataset, config.spies, seed.derive("spies"))?;
    let cold = scenario.cold_pool(config.cold_quantile)?;
    let all_items = ItemPool::all(m);
    let item_pool = match strategy {
        Strategy::Multi | Strategy::Double if !abl.cold_pool_off => Some(&cold),
        _ => None,
    };
    let rosters = capped_rosters(partition, &scenario.dataset.social_degrees(), config.roster_cap);
    let shape = &config.ppo.shape;
    let mut init = policy_rng(seed);
    let warm = |table: &EmbeddingTable| -> Option<EmbeddingTable> {
        (config.warm_start && table.dim == shape.embed_dim && table.rows == n).then(|| table.clone())
    };
    let social_count = match strategy {
        Strategy::Multi | Strategy::MultiSocial if !abl.multiagent_off => 2,
        _ => 1,
    };
    let mut social = Vec::with_capacity(social_count);
    for _ in 0..social_count {
        let mut actor = SocialActor::new(rosters.clone(), n, shape, config.ppo.lr, warm(&scenario.partition.embeddings), &mut init)?;
        actor.flat = strategy == Strategy::PoisonrecUntargeted;
        social.push(actor);
    }
    let item = match strategy {
        Strategy::MultiSocial => None,
        _ => {
            let candidates = item_pool.unwrap_or(&all_items).items.clone();
            Some(ItemActor::new(m, candidates, shape, config.ppo.lr, &mut init)?)
        }
    };
    let observations = 2 + usize::from(item.is_some());
    let critic = Critic::new(observations * (shape.embed_dim + 1) + 1, shape, config.ppo.lr, config.ppo.popart_rate, &mut init)?;
    let mut team = Team { social, item, critic };

    let target = EvasionTarget { model: scenario.model, train_items: &scenario.train_items };
    let poison = scenario.poison_target(&config.budget, seed);
    let env = Rollout {
        target: match config.mode {
            AttackMode::Evasion => &target,
            AttackMode::Poison => &poison,
        },
        partition,
        items: item_pool,
        item_count: m,
        spies: &spies,
        cold: &cold,
        reward_k: config.reward_k,
        cadence: config.cadence,
        horizon: config.budget.profile_length,
        require_cross: !abl.community_mask_off,
        budget: config.budget.max_fake_users,
    };
    let budget_n = config.budget.max_fake_users;
    let mut rng = seed.derive("rollout").rng();
    let mut rewards = Vec::new();
    let mut training = Vec::new();
    let mut fakes = Vec::new();
    for pass in 0..config.passes.max(1) {
        fakes = Vec::with_capacity(budget_n);
        let mut episode = 0;
        while fakes.len() < budget_n {
            let count = config.episode_fakes.min(budget_n - fakes.len());
            let (mut buffer, ep_log) = team.run_episode(&env, &mut fakes, count, &mut rng)?;
            buffer.finish(config.ppo.gamma, config.ppo.lambda)?;
            let stats = team.ppo_update(&buffer, &config.ppo)?;
            for &(f, r) in &ep_log.rewards {
                rewards.push(RewardPoint { pass, fakes: f, reward: r });
            }
            let entropy = stats.social.iter().map(|s| s.entropy).sum::<f64>() + stats.item.as_ref().map_or(0.0, |s| s.entropy);
            let event = TrainingEvent {
                pass,
                episode,
                fakes: fakes.len(),
                reward: ep_log.rewards.last().map(|&(_, r)| r),
                policy_entropy: entropy,
                value_loss_first: stats.value_loss_first,
                value_loss_last: stats.value_loss_last,
            };
            log(&event)?;
            training.push(event);
            episode += 1;
        }
    }
    let attacked = attacked_or_clean(scenario, config, &fakes, &clean, seed)?;
    let audit = audit_fakes(&fakes, partition, &config.budget);
    let item_actions = team.item.as_ref().map_or(m, |a| a.candidates().len());
    let max_roster = rosters.iter().map(Vec::len).max().unwrap_or(0);
    let social_actions = if strategy == Strategy::PoisonrecUntargeted { n } else { rosters.len() * max_roster };
    Ok(AttackResult {
        strategy,
        seed: config.seed,
        fakes,
        rewards,
        training,
        clean,
        attacked,
        audit,
        action_space: ActionSpaceSize { item_actions, social_actions, communities: rosters.len(), max_roster, items: m, users: n },
        wall_clock_ms: started.elapsed().as_millis(),
    })
}

/// Dispatches on the configured strategy.
pub fn run_attack(config: &AttackConfig, scenario: &Scenario<'_>) -> Result<AttackResult> {
    if config.strategy.is_learned() {
        run_multiattack(config, scenario)
    } else {
        run_baseline(config, scenario)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    FillerPopularity,
    ConnectionType,
    ColdHitTrend,
}

impl Study {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "filler-popularity" => Ok(Study::FillerPopularity),
            "connection-type" => Ok(Study::ConnectionType),
            "cold-hit-trend" => Ok(Study::ColdHitTrend),
            _ => Err(Error::InvalidConfig(format!("unknown study '{name}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub condition: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: Study,
    pub seed: u64,
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn value(&self, condition: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.condition == condition && r.metric == metric).map(|r| r.value)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["condition", "metric", "value"])?;
        for r in &self.rows {
            w.write_record([r.condition.as_str(), r.metric.as_str(), &format!("{:.6}", r.value)])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    /// Study run by `preliminary`; `cold-hit-trend` also makes
    /// `train-target` record the probe trend.
    pub kind: Option<Study>,
    pub fakes: usize,
    pub profile_length: usize,
    /// Epoch interval between hit-ratio probes in the trend study.
    pub probe_every: usize,
    pub spies: usize,
    pub cold_quantile: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig { kind: None, fakes: 10, profile_length: 30, probe_every: 50, spies: 50, cold_quantile: 0.1 }
    }
}

/// Ascending-popularity bands: eight deciles and the top fifth.
pub const FILLER_BANDS: [(f64, f64); 9] =
    [(0.0, 0.1), (0.1, 0.2), (0.2, 0.3), (0.3, 0.4), (0.4, 0.5), (0.5, 0.6), (0.6, 0.7), (0.7, 0.8), (0.8, 1.0)];

pub fn band_label(lo: f64, hi: f64) -> String {
    format!("p{:02}-{:02}", (lo * 100.0).round() as u32, (hi * 100.0).round() as u32)
}

fn push_metrics(rows: &mut Vec<StudyRow>, condition: &str, clean: &MetricsReport, attacked: &MetricsReport, metrics: &[(Metric, usize)]) {
    for &(metric, k) in metrics {
        let key = crate::metrics::metric_key(metric, k);
        let a = attacked.get(metric, k);
        rows.push(StudyRow { condition: condition.into(), metric: key.clone(), value: a });
        rows.push(StudyRow {
            condition: condition.into(),
            metric: format!("drop:{key}"),
            value: relative_drop(clean.get(metric, k), a).unwrap_or(f64::NAN),
        });
    }
}

/// Item-only fakes whose profiles come from each popularity band.
pub fn filler_popularity(scenario: &Scenario<'_>, cfg: &StudyConfig, seed: u64) -> Result<StudyReport> {
    let clean = scenario.clean_report()?;
    let stream = SeedStream::new(seed).derive("filler-popularity");
    let mut rows = Vec::new();
    let metrics = [(Metric::Ndcg, 10), (Metric::Recall, 10)];
    push_metrics(&mut rows, "clean", &clean, &clean, &metrics);
    for (b, &(lo, hi)) in FILLER_BANDS.iter().enumerate() {
        let pool = popularity_band(scenario.train_view(), lo, hi)?;
        let mut rng = stream.index(b as u64).rng();
        let fakes: Vec<FakeUser> = (0..cfg.fakes)
            .map(|_| FakeUser { items: distinct_items(&pool.items, cfg.profile_length, &mut rng), pairs: Vec::new() })
            .collect();
        let label = band_label(lo, hi);
        let attacked = scenario.attacked_report(&fakes, AttackMode::Evasion, &unbounded(&fakes), stream, &label)?;
        push_metrics(&mut rows, &label, &clean, &attacked, &metrics);
    }
    Ok(StudyReport { study: Study::FillerPopularity, seed, rows })
}

fn unbounded(fakes: &[FakeUser]) -> Budget {
    let len = fakes.iter().map(|f| f.items.len().max(f.pairs.len())).max().unwrap_or(0);
    Budget { max_fake_users: fakes.len(), profile_length: len }
}

/// Social-only fakes with random, intra-community or cross-community pairs
/// (communities from Louvain).
pub fn connection_type(scenario: &Scenario<'_>, cfg: &StudyConfig, seed: u64) -> Result<StudyReport> {
    let clean = scenario.clean_report()?;
    let stream = SeedStream::new(seed).derive("connection-type");
    let louvain = &scenario.partition.louvain;
    check_partition(louvain, scenario.dataset.user_count())?;
    let real = scenario.real_users();
    let mut rows = Vec::new();
    let metrics = [(Metric::Ndcg, 5), (Metric::Ndcg, 10)];
    push_metrics(&mut rows, "clean", &clean, &clean, &metrics);
    for (idx, (rule, label)) in [(PairRule::Random, "random"), (PairRule::Intra, "intra"), (PairRule::Cross, "cross")].into_iter().enumerate() {
        let mut rng = stream.index(idx as u64).rng();
        let fakes = (0..cfg.fakes)
            .map(|_| Ok(FakeUser { items: Vec::new(), pairs: draw_pairs(&real, louvain, rule, cfg.profile_length, &mut rng)? }))
            .collect::<Result<Vec<_>>>()?;
        let attacked = scenario.attacked_report(&fakes, AttackMode::Evasion, &unbounded(&fakes), stream, label)?;
        push_metrics(&mut rows, label, &clean, &attacked, &metrics);
    }
    Ok(StudyReport { study: Study::ConnectionType, seed, rows })
}

/// Trains a fresh target and probes the spies' cold-item hit ratio in their
/// top-10 and top-20 lists every `probe_every` epochs.
pub fn cold_hit_trend(dataset: &Dataset, split: &Split, config: &RecConfig, cfg: &StudyConfig, seed: u64) -> Result<(StudyReport, RecModel)> {
    let stream = SeedStream::new(seed);
    let train_view = dataset.with_interactions(&split.train);
    let cold = cold_start_pool(&train_view, cfg.cold_quantile)?;
    let spies = crate::data::select_spies(dataset, cfg.spies, stream.derive("trend-spies"))?;
    let train_items = split.train_items(dataset.user_count());
    let mut model = RecModel::new(config.clone(), dataset, &split.train, stream.derive("target").derive("init"))?;
    let mut rows = Vec::new();
    model.fit_observed(stream.derive("target").derive("fit"), cfg.probe_every, &mut |epoch, view| {
        let condition = format!("epoch-{epoch:04}");
        for k in [10, 20] {
            let lists = spy_top(view, &train_items, &spies, k)?;
            rows.push(StudyRow { condition: condition.clone(), metric: format!("HR@{k}"), value: cold_hit_reward(&lists, &cold, k)? });
        }
        Ok(())
    })?;
    Ok((StudyReport { study: Study::ColdHitTrend, seed, rows }, model))
}

fn spy_top(view: &crate::recenv::EmbeddingView, train_items: &[Vec<ItemId>], spies: &SpySet, k: usize) -> Result<Vec<crate::metrics::RankedList>> {
    spies.users.iter().map(|&u| view.topk(u, k, &train_items[u as usize])).collect()
}

/// Runs one preliminary study on a trained scenario. The hit-trend study
/// retrains its own target with the scenario model's configuration.
pub fn run_preliminary(study: Study, scenario: &Scenario<'_>, cfg: &StudyConfig, seed: u64) -> Result<StudyReport> {
    match study {
        Study::FillerPopularity => filler_popularity(scenario, cfg, seed),
        Study::ConnectionType => connection_type(scenario, cfg, seed),
        Study::ColdHitTrend => Ok(cold_hit_trend(scenario.dataset, scenario.split, &scenario.model.config, cfg, seed)?.0),
    }
}
