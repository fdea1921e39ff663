//! Target recommenders: BPR-trained embedding models that answer top-k
//! queries and accept injected fake users.
//!
//! Every variant ends in a dot-product scorer over final user and item
//! embeddings, exposed as an [`EmbeddingView`].

mod graph;

pub use graph::{propagate, Graph};

use std::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ItemId, UserId};
use crate::error::{invalid, Error, Result};
use crate::gradcore::{Adam, EmbeddingTable, TensorArchive};
use crate::metrics::{MetricsReport, RankedList, CUTOFFS};
use crate::seed::{Rng, SeedStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    MfBpr,
    Sbpr,
    SocialLgn,
    SageLite,
}

impl Variant {
    pub fn is_inductive(self) -> bool {
        self == Variant::SageLite
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecConfig {
    pub variant: Variant,
    pub dim: usize,
    pub depth: usize,
    pub reg: f64,
    pub lr: f64,
    pub epochs: usize,
    /// Score scale applied to SAGE-lite's unit-norm user vectors.
    pub temperature: f64,
    pub init_scale: f64,
    /// Adversarial perturbation radius on base embeddings; 0 disables it.
    pub adv_eps: f64,
}

impl Default for RecConfig {
    fn default() -> Self {
        RecConfig {
            variant: Variant::SageLite,
            dim: 64,
            depth: 3,
            reg: 1e-4,
            lr: 0.01,
            epochs: 400,
            temperature: 10.0,
            init_scale: 0.1,
            adv_eps: 0.0,
        }
    }
}

impl RecConfig {
    pub fn for_variant(variant: Variant) -> Self {
        RecConfig { variant, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.reg < 0.0 || self.adv_eps < 0.0 || self.lr <= 0.0 {
            return Err(Error::InvalidConfig("dim > 0, lr > 0, reg >= 0, adv_eps >= 0 required".into()));
        }
        Ok(())
    }
}

/// Final embeddings; `score(u, i) = user[u] . item[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingView {
    pub user: EmbeddingTable,
    pub item: EmbeddingTable,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rank_order(a: &(f64, ItemId), b: &(f64, ItemId)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
}

impl EmbeddingView {
    pub fn score(&self, user: UserId, item: ItemId) -> f64 {
        dot(self.user.row(user as usize), self.item.row(item as usize))
    }

    /// The `k` highest-scoring items outside `exclude`, ties by ascending id.
    pub fn topk(&self, user: UserId, k: usize, exclude: &[ItemId]) -> Result<RankedList> {
        if user as usize >= self.user.rows {
            return invalid(format!("user {user} out of range"));
        }
        let mut excluded = exclude.to_vec();
        excluded.sort_unstable();
        excluded.dedup();
        let m = self.item.rows;
        let available = m - excluded.iter().filter(|&&i| (i as usize) < m).count();
        if k == 0 || k > available {
            return invalid(format!("k={k} with {available} rankable items"));
        }
        let u = self.user.row(user as usize);
        let mut cand: Vec<(f64, ItemId)> = (0..m as ItemId)
            .filter(|i| excluded.binary_search(i).is_err())
            .map(|i| (dot(u, self.item.row(i as usize)), i))
            .collect();
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, rank_order);
            cand.truncate(k);
        }
        cand.sort_by(rank_order);
        Ok(RankedList { user, items: cand.into_iter().map(|(_, i)| i).collect(), k })
    }
}

/// Ranks every listed user with its training items excluded and averages
/// metrics over users that have test items.
pub fn evaluate_view(
    view: &EmbeddingView,
    train_items: &[Vec<ItemId>],
    test_items: &[Vec<ItemId>],
    users: &[UserId],
    label: &str,
) -> Result<MetricsReport> {
    let kmax = *CUTOFFS.iter().max().expect("cutoffs");
    let mut lists = Vec::new();
    for &u in users {
        let relevant = &test_items[u as usize];
        if relevant.is_empty() {
            continue;
        }
        let excl = &train_items[u as usize];
        let k = kmax.min(view.item.rows - excl.len());
        lists.push((view.topk(u, k, excl)?, relevant.as_slice()));
    }
    MetricsReport::from_lists(label, lists.iter().map(|(l, r)| (l, *r)))
}

/// A fake account: items it claims to have consumed and pairs of real users
/// it befriends. Each pair attaches the fake to both members.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FakeUser {
    pub items: Vec<ItemId>,
    pub pairs: Vec<(UserId, UserId)>,
}

impl FakeUser {
    /// Distinct befriended users in first-seen order.
    pub fn friends(&self) -> Vec<UserId> {
        let mut out: Vec<UserId> = Vec::new();
        for &(a, b) in &self.pairs {
            for v in [a, b] {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_fake_users: usize,
    pub profile_length: usize,
}

impl Budget {
    pub fn check(&self, fakes: &[FakeUser]) -> Result<()> {
        if fakes.len() > self.max_fake_users {
            return Err(Error::BudgetViolation(format!(
                "{} fake users exceed the budget of {}",
                fakes.len(),
                self.max_fake_users
            )));
        }
        for (f, fake) in fakes.iter().enumerate() {
            if fake.items.len() > self.profile_length || fake.pairs.len() > self.profile_length {
                return Err(Error::BudgetViolation(format!(
                    "fake {f} profile exceeds length {}",
                    self.profile_length
                )));
            }
        }
        Ok(())
    }
}

/// Appends fake users (labelled `fake_<k>`) to a copy of the dataset.
pub fn inject_poison(dataset: &Dataset, fakes: &[FakeUser], budget: &Budget) -> Result<Dataset> {
    budget.check(fakes)?;
    let (inter, social) = fake_edges(dataset.user_count(), dataset.item_count(), fakes)?;
    if fakes.is_empty() {
        return Ok(dataset.clone());
    }
    let labels = (0..fakes.len()).map(|f| format!("fake_{f}")).collect();
    dataset.append_users(labels, &inter, &social)
}

/// Interaction and social pairs contributed by fakes numbered from `n`.
fn fake_edges(n: usize, m: usize, fakes: &[FakeUser]) -> Result<(Vec<(UserId, ItemId)>, Vec<(UserId, UserId)>)> {
    let mut inter = Vec::new();
    let mut social = Vec::new();
    for (f, fake) in fakes.iter().enumerate() {
        let id = (n + f) as UserId;
        for &i in &fake.items {
            if i as usize >= m {
                return invalid(format!("fake {f} item {i} out of range"));
            }
            inter.push((id, i));
        }
        for v in fake.friends() {
            if v as usize >= n {
                return invalid(format!("fake {f} befriends unknown user {v}"));
            }
            social.push((v, id));
        }
    }
    Ok((inter, social))
}

/// One BPR triple; SBPR adds a friend-consumed item with its friend count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub user: UserId,
    pub pos: ItemId,
    pub neg: ItemId,
    pub social: Option<(ItemId, f64)>,
}

/// `-ln sigmoid(x)`, stable for large |x|.
pub fn softplus_neg(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Forward {
    zu: Vec<f64>,
    zi: Vec<f64>,
    tape: Option<graph::SageTape>,
}

fn forward(cfg: &RecConfig, g: &Graph, eu: &[f64], ei: &[f64]) -> Forward {
    match cfg.variant {
        Variant::MfBpr | Variant::Sbpr => Forward { zu: eu.to_vec(), zi: ei.to_vec(), tape: None },
        Variant::SocialLgn => {
            let (zu, zi) = propagate(g, eu, ei, cfg.dim, cfg.depth);
            Forward { zu, zi, tape: None }
        }
        Variant::SageLite => {
            let tape = graph::sage_forward(g, eu, ei, cfg.dim, cfg.depth);
            let zu = tape.user_out().iter().map(|v| v * cfg.temperature).collect();
            let zi = tape.item_out().to_vec();
            Forward { zu, zi, tape: Some(tape) }
        }
    }
}

fn backward(cfg: &RecConfig, g: &Graph, fw: &Forward, gzu: Vec<f64>, gzi: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    match cfg.variant {
        Variant::MfBpr | Variant::Sbpr => (gzu, gzi),
        Variant::SocialLgn => graph::propagate_backward(g, &gzu, &gzi, cfg.dim, cfg.depth),
        Variant::SageLite => {
            let gu: Vec<f64> = gzu.iter().map(|v| v * cfg.temperature).collect();
            graph::sage_backward(g, fw.tape.as_ref().expect("sage tape"), &gu, &gzi, cfg.dim)
        }
    }
}

/// Mean ranking loss over `samples` and its gradient w.r.t. final embeddings.
fn ranking_terms(zu: &[f64], zi: &[f64], d: usize, samples: &[Sample]) -> (f64, Vec<f64>, Vec<f64>) {
    let mut gu = vec![0.0; zu.len()];
    let mut gi = vec![0.0; zi.len()];
    let mut loss = 0.0;
    let w = 1.0 / samples.len().max(1) as f64;
    let pair = |gu: &mut [f64], gi: &mut [f64], u: usize, a: usize, b: usize, scale: f64| -> f64 {
        let (ur, ar, br) = (&zu[u * d..(u + 1) * d], &zi[a * d..(a + 1) * d], &zi[b * d..(b + 1) * d]);
        let x = scale * (dot(ur, ar) - dot(ur, br));
        let dx = -sigmoid(-x) * w * scale;
        for k in 0..d {
            gu[u * d + k] += dx * (ar[k] - br[k]);
            gi[a * d + k] += dx * ur[k];
            gi[b * d + k] -= dx * ur[k];
        }
        softplus_neg(x)
    };
    for s in samples {
        let (u, i, j) = (s.user as usize, s.pos as usize, s.neg as usize);
        loss += match s.social {
            None => pair(&mut gu, &mut gi, u, i, j, 1.0),
            Some((k, count)) => {
                let k = k as usize;
                pair(&mut gu, &mut gi, u, i, k, 1.0 / (1.0 + count)) + pair(&mut gu, &mut gi, u, k, j, 1.0)
            }
        };
    }
    (loss * w, gu, gi)
}

/// L2 penalty on the base rows touched by `samples`, averaged per sample.
fn reg_terms(eu: &[f64], ei: &[f64], d: usize, samples: &[Sample], reg: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let mut gu = vec![0.0; eu.len()];
    let mut gi = vec![0.0; ei.len()];
    if reg == 0.0 {
        return (0.0, gu, gi);
    }
    let w = reg / samples.len().max(1) as f64;
    let mut loss = 0.0;
    let mut touch = |table: &[f64], grad: &mut [f64], r: usize| {
        let row = &table[r * d..(r + 1) * d];
        loss += w * dot(row, row);
        for k in 0..d {
            grad[r * d + k] += 2.0 * w * row[k];
        }
    };
    for s in samples {
        touch(eu, &mut gu, s.user as usize);
        touch(ei, &mut gi, s.pos as usize);
        touch(ei, &mut gi, s.neg as usize);
        if let Some((k, _)) = s.social {
            touch(ei, &mut gi, k as usize);
        }
    }
    (loss, gu, gi)
}

/// Full objective (ranking loss + touched-row L2) and its exact gradient
/// w.r.t. the base embeddings, through the variant's propagation.
pub fn bpr_objective(
    cfg: &RecConfig,
    g: &Graph,
    eu: &[f64],
    ei: &[f64],
    samples: &[Sample],
) -> (f64, Vec<f64>, Vec<f64>) {
    let fw = forward(cfg, g, eu, ei);
    let (loss, gzu, gzi) = ranking_terms(&fw.zu, &fw.zi, cfg.dim, samples);
    let (mut gu, mut gi) = backward(cfg, g, &fw, gzu, gzi);
    let (rl, ru, ri) = reg_terms(eu, ei, cfg.dim, samples, cfg.reg);
    gu.iter_mut().zip(&ru).for_each(|(a, b)| *a += b);
    gi.iter_mut().zip(&ri).for_each(|(a, b)| *a += b);
    (loss + rl, gu, gi)
}

/// Moves every row of `base` by `eps` along its gradient row; rows with a
/// zero gradient stay put.
pub fn apr_perturbation(base: &[f64], grad: &[f64], dim: usize, eps: f64) -> Vec<f64> {
    let mut out = base.to_vec();
    for (o, gr) in out.chunks_mut(dim).zip(grad.chunks(dim)) {
        let n = dot(gr, gr).sqrt();
        if n > 0.0 {
            for (v, gv) in o.iter_mut().zip(gr) {
                *v += eps * gv / n;
            }
        }
    }
    out
}

/// Clean objective plus the ranking loss at base + eps * g/|g| per row,
/// where g is the clean ranking-loss gradient (APR style).
fn adversarial_objective(
    cfg: &RecConfig,
    g: &Graph,
    eu: &[f64],
    ei: &[f64],
    samples: &[Sample],
) -> (f64, Vec<f64>, Vec<f64>) {
    let d = cfg.dim;
    let fw = forward(cfg, g, eu, ei);
    let (clean, gzu, gzi) = ranking_terms(&fw.zu, &fw.zi, d, samples);
    let (du, di) = backward(cfg, g, &fw, gzu, gzi);
    let (pu, pi) = (apr_perturbation(eu, &du, d, cfg.adv_eps), apr_perturbation(ei, &di, d, cfg.adv_eps));
    let fw = forward(cfg, g, &pu, &pi);
    let (adv, gzu, gzi) = ranking_terms(&fw.zu, &fw.zi, d, samples);
    let (mut gu, mut gi) = backward(cfg, g, &fw, gzu, gzi);
    let (rl, ru, ri) = reg_terms(eu, ei, d, samples, cfg.reg);
    for (a, (b, c)) in gu.iter_mut().zip(du.iter().zip(&ru)) {
        *a += b + c;
    }
    for (a, (b, c)) in gi.iter_mut().zip(di.iter().zip(&ri)) {
        *a += b + c;
    }
    (clean + adv + rl, gu, gi)
}

/// Rows seeded independently so that appending users never changes the
/// initialization of existing rows.
fn init_table(rows: usize, dim: usize, scale: f64, seed: SeedStream) -> EmbeddingTable {
    let mut t = EmbeddingTable::zeros(rows, dim);
    for r in 0..rows {
        let mut rng = seed.index(r as u64).rng();
        let row = EmbeddingTable::normal(1, dim, scale, &mut rng);
        t.row_mut(r).copy_from_slice(&row.values);
    }
    t
}

struct Sampler {
    items: usize,
    own: Vec<Vec<ItemId>>,
    /// Friend-consumed items not consumed by the user, with friend counts.
    social: Option<Vec<Vec<(ItemId, f64)>>>,
}

impl Sampler {
    fn new(cfg: &RecConfig, g: &Graph) -> Self {
        let own: Vec<Vec<ItemId>> = (0..g.users).map(|u| g.ui.row(u).to_vec()).collect();
        let social = (cfg.variant == Variant::Sbpr).then(|| {
            (0..g.users)
                .map(|u| {
                    let mut all: Vec<ItemId> = g
                        .uu
                        .row(u)
                        .iter()
                        .flat_map(|&v| g.ui.row(v as usize).iter().copied())
                        .filter(|i| own[u].binary_search(i).is_err())
                        .collect();
                    all.sort_unstable();
                    let mut out: Vec<(ItemId, f64)> = Vec::new();
                    for i in all {
                        match out.last_mut() {
                            Some((last, c)) if *last == i => *c += 1.0,
                            _ => out.push((i, 1.0)),
                        }
                    }
                    out
                })
                .collect()
        });
        Sampler { items: g.items, own, social }
    }

    fn negative(&self, u: usize, rng: &mut Rng) -> ItemId {
        let own = &self.own[u];
        let mut j = rng.gen_range(0..self.items) as ItemId;
        for _ in 0..32 {
            if own.binary_search(&j).is_err() {
                break;
            }
            j = rng.gen_range(0..self.items) as ItemId;
        }
        j
    }

    fn epoch(&self, pairs: &[(UserId, ItemId)], rng: &mut Rng) -> Vec<Sample> {
        pairs
            .iter()
            .map(|&(u, i)| {
                let neg = self.negative(u as usize, rng);
                let social = self.social.as_ref().and_then(|s| {
                    let cands = &s[u as usize];
                    (!cands.is_empty()).then(|| cands[rng.gen_range(0..cands.len())])
                });
                Sample { user: u, pos: i, neg, social }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RecModel {
    pub config: RecConfig,
    pub user: EmbeddingTable,
    pub item: EmbeddingTable,
    pub trained: bool,
    /// Mean objective per epoch.
    pub loss_trend: Vec<f64>,
    train_pairs: Vec<(UserId, ItemId)>,
    social: Vec<(UserId, UserId)>,
    graph: Graph,
    view: EmbeddingView,
}

impl RecModel {
    /// Fresh, untrained model over `dataset`'s users, items and social graph
    /// with `train_pairs` as the observed interactions.
    pub fn new(config: RecConfig, dataset: &Dataset, train_pairs: &[(UserId, ItemId)], seed: SeedStream) -> Result<Self> {
        config.validate()?;
        let (n, m) = (dataset.user_count(), dataset.item_count());
        if let Some(&(u, i)) = train_pairs.iter().find(|&&(u, i)| u as usize >= n || i as usize >= m) {
            return invalid(format!("training pair ({u}, {i}) out of range"));
        }
        let user = init_table(n, config.dim, config.init_scale, seed.derive("user-init"));
        let item = init_table(m, config.dim, config.init_scale, seed.derive("item-init"));
        let social = dataset.social_edges().to_vec();
        let graph = Graph::build(n, m, train_pairs, &social);
        let mut model = RecModel {
            config,
            user,
            item,
            trained: false,
            loss_trend: Vec::new(),
            train_pairs: train_pairs.to_vec(),
            social,
            graph,
            view: EmbeddingView { user: EmbeddingTable::zeros(0, 0), item: EmbeddingTable::zeros(0, 0) },
        };
        model.refresh();
        Ok(model)
    }

    fn refresh(&mut self) {
        let fw = forward(&self.config, &self.graph, &self.user.values, &self.item.values);
        let d = self.config.dim;
        self.view = EmbeddingView {
            user: EmbeddingTable { rows: self.graph.users, dim: d, values: fw.zu },
            item: EmbeddingTable { rows: self.graph.items, dim: d, values: fw.zi },
        };
    }

    pub fn view(&self) -> &EmbeddingView {
        &self.view
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn train_pairs(&self) -> &[(UserId, ItemId)] {
        &self.train_pairs
    }

    /// Runs `config.epochs` full-batch Adam steps with fresh uniform
    /// negatives each epoch. `observe` sees the view before the first epoch,
    /// after every `every`-th epoch and after the last one.
    pub fn fit_observed(
        &mut self,
        seed: SeedStream,
        every: usize,
        observe: &mut dyn FnMut(usize, &EmbeddingView) -> Result<()>,
    ) -> Result<()> {
        let cfg = self.config.clone();
        let sampler = Sampler::new(&cfg, &self.graph);
        let mut rng = seed.derive("negatives").rng();
        let (n_u, n_i) = (self.user.values.len(), self.item.values.len());
        let mut adam = Adam::new(n_u + n_i, cfg.lr);
        let mut params = Vec::with_capacity(n_u + n_i);
        observe(0, &self.view)?;
        if self.train_pairs.is_empty() {
            self.trained = true;
            return Ok(());
        }
        for epoch in 1..=cfg.epochs {
            let samples = sampler.epoch(&self.train_pairs, &mut rng);
            let (loss, gu, gi) = if cfg.adv_eps > 0.0 {
                adversarial_objective(&cfg, &self.graph, &self.user.values, &self.item.values, &samples)
            } else {
                bpr_objective(&cfg, &self.graph, &self.user.values, &self.item.values, &samples)
            };
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence(format!("loss {loss} at epoch {epoch}")));
            }
            self.loss_trend.push(loss);
            params.clear();
            params.extend_from_slice(&self.user.values);
            params.extend_from_slice(&self.item.values);
            let grads: Vec<f64> = gu.into_iter().chain(gi).collect();
            adam.step(&mut params, &grads)?;
            self.user.values.copy_from_slice(&params[..n_u]);
            self.item.values.copy_from_slice(&params[n_u..]);
            if every > 0 && epoch % every == 0 {
                self.refresh();
                observe(epoch, &self.view)?;
            }
        }
        self.refresh();
        if every > 0 && cfg.epochs % every != 0 {
            observe(cfg.epochs, &self.view)?;
        }
        self.trained = true;
        Ok(())
    }

    pub fn fit(&mut self, seed: SeedStream) -> Result<()> {
        self.fit_observed(seed, 0, &mut |_, _| Ok(()))
    }

    /// Single-triple objective with the penalty on its three base rows.
    pub fn bpr_loss(&self, user: UserId, pos: ItemId, neg: ItemId) -> Result<f64> {
        let (n, m) = (self.graph.users, self.graph.items);
        if user as usize >= n || pos as usize >= m || neg as usize >= m {
            return invalid(format!("triple ({user}, {pos}, {neg}) out of range"));
        }
        let x = self.view.score(user, pos) - self.view.score(user, neg);
        let sq = |t: &EmbeddingTable, r: u32| dot(t.row(r as usize), t.row(r as usize));
        let reg = self.config.reg * (sq(&self.user, user) + sq(&self.item, pos) + sq(&self.item, neg));
        Ok(softplus_neg(x) + reg)
    }

    /// Frozen-parameter view with fakes wired into the graph. Each fake's
    /// base vector is the mean of its items' base vectors.
    pub fn inject_evasion(&self, fakes: &[FakeUser]) -> Result<EmbeddingView> {
        if !self.config.variant.is_inductive() {
            return Err(Error::UnsupportedMode(format!(
                "{:?} is transductive; evasion needs an inductive model",
                self.config.variant
            )));
        }
        let (n, m, d) = (self.graph.users, self.graph.items, self.config.dim);
        let (inter, social) = fake_edges(n, m, fakes)?;
        let mut pairs = self.train_pairs.clone();
        pairs.extend(inter);
        let mut soc = self.social.clone();
        soc.extend(social);
        let graph = Graph::build(n + fakes.len(), m, &pairs, &soc);
        let mut eu = self.user.clone();
        for fake in fakes {
            let mut base = vec![0.0; d];
            if !fake.items.is_empty() {
                for &i in &fake.items {
                    for (b, v) in base.iter_mut().zip(self.item.row(i as usize)) {
                        *b += v;
                    }
                }
                base.iter_mut().for_each(|b| *b /= fake.items.len() as f64);
            }
            eu.push_row(&base);
        }
        let fw = forward(&self.config, &graph, &eu.values, &self.item.values);
        Ok(EmbeddingView {
            user: EmbeddingTable { rows: n + fakes.len(), dim: d, values: fw.zu },
            item: EmbeddingTable { rows: m, dim: d, values: fw.zi },
        })
    }

    pub fn to_archive(&self) -> TensorArchive {
        let mut a = TensorArchive::default();
        a.put_table("user", &self.user);
        a.put_table("item", &self.item);
        a
    }

    /// Restores base embeddings saved by [`to_archive`](Self::to_archive).
    pub fn load_archive(&mut self, archive: &TensorArchive) -> Result<()> {
        let (u, i) = (archive.table("user")?, archive.table("item")?);
        if u.rows != self.user.rows || u.dim != self.user.dim || i.rows != self.item.rows || i.dim != self.item.dim {
            return invalid("archive shape does not match the model");
        }
        self.user = u;
        self.item = i;
        self.refresh();
        self.trained = true;
        Ok(())
    }
}

/// Builds and trains a model in one call.
pub fn train(config: &RecConfig, dataset: &Dataset, train_pairs: &[(UserId, ItemId)], seed: SeedStream) -> Result<RecModel> {
    let mut model = RecModel::new(config.clone(), dataset, train_pairs, seed.derive("init"))?;
    model.fit(seed.derive("fit"))?;
    Ok(model)
}

/// Query access to a target: inject fakes, read spy top-k lists.
pub trait BlackBox {
    fn spy_lists(&self, fakes: &[FakeUser], spies: &[UserId], k: usize) -> Result<Vec<RankedList>>;
}

/// A frozen inductive model; fakes are wired in at inference time.
pub struct EvasionTarget<'a> {
    pub model: &'a RecModel,
    pub train_items: &'a [Vec<ItemId>],
}

fn lists_for(view: &EmbeddingView, train_items: &[Vec<ItemId>], spies: &[UserId], k: usize) -> Result<Vec<RankedList>> {
    spies
        .iter()
        .map(|&u| {
            let excl = train_items.get(u as usize).map(Vec::as_slice).unwrap_or(&[]);
            view.topk(u, k, excl)
        })
        .collect()
}

impl BlackBox for EvasionTarget<'_> {
    fn spy_lists(&self, fakes: &[FakeUser], spies: &[UserId], k: usize) -> Result<Vec<RankedList>> {
        let view = self.model.inject_evasion(fakes)?;
        lists_for(&view, self.train_items, spies, k)
    }
}

/// Retrains a fresh model on the poisoned training data for every query.
pub struct PoisonTarget<'a> {
    pub config: RecConfig,
    pub dataset: &'a Dataset,
    pub train_pairs: &'a [(UserId, ItemId)],
    pub train_items: &'a [Vec<ItemId>],
    pub budget: Budget,
    pub seed: SeedStream,
}

impl PoisonTarget<'_> {
    /// The retrained model for a fake set.
    pub fn retrain(&self, fakes: &[FakeUser]) -> Result<RecModel> {
        let poisoned = inject_poison(self.dataset, fakes, &self.budget)?;
        let n = self.dataset.user_count();
        let mut pairs = self.train_pairs.to_vec();
        pairs.extend(
            poisoned.interactions().iter().filter(|&&(u, _)| u as usize >= n).copied(),
        );
        train(&self.config, &poisoned, &pairs, self.seed)
    }
}

impl BlackBox for PoisonTarget<'_> {
    fn spy_lists(&self, fakes: &[FakeUser], spies: &[UserId], k: usize) -> Result<Vec<RankedList>> {
        let model = self.retrain(fakes)?;
        lists_for(model.view(), self.train_items, spies, k)
    }
}
