//! The injection environment and multi-agent PPO machinery: hierarchical
//! social agents, the item agent, a centralized PopArt critic, GAE and the
//! clipped policy update.
//!
//! Every agent observes a mean-pooled encoding of its part of the profile
//! built so far (from its own trainable id-embedding table) plus the
//! normalized step `t/T`.

use serde::{Deserialize, Serialize};

use crate::community::CommunityPartition;
use crate::data::{ItemId, ItemPool, SpySet, UserId};
use crate::error::{invalid, Error, Result};
use crate::gradcore::{masked_log_softmax, Activation, Adam, DenseStack, EmbeddingTable, ForwardCache};
use crate::metrics::cold_hit_reward;
use crate::recenv::{BlackBox, FakeUser};
use crate::seed::{Rng, SeedStream};
use rand::Rng as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Social1,
    Social2,
    Item,
}

/// The fake user under construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackState {
    pub items: Vec<ItemId>,
    pub pairs: Vec<(UserId, UserId)>,
    pub t: usize,
    pub horizon: usize,
    pub fake_index: usize,
}

impl AttackState {
    pub fn new(horizon: usize, fake_index: usize) -> Self {
        AttackState { items: Vec::new(), pairs: Vec::new(), t: 0, horizon, fake_index }
    }

    pub fn finished(&self) -> bool {
        self.t >= self.horizon
    }

    /// Users appearing in the social profile, pair by pair.
    pub fn social_ids(&self) -> Vec<UserId> {
        self.pairs.iter().flat_map(|&(a, b)| [a, b]).collect()
    }

    pub fn step_fraction(&self) -> f64 {
        if self.horizon == 0 {
            0.0
        } else {
            self.t as f64 / self.horizon as f64
        }
    }

    pub fn to_fake(&self) -> FakeUser {
        FakeUser { items: self.items.clone(), pairs: self.pairs.clone() }
    }
}

/// Removes repeated items, keeping first occurrences in order.
pub fn clip_profile(items: &[ItemId]) -> Vec<ItemId> {
    let mut out: Vec<ItemId> = Vec::with_capacity(items.len());
    for &i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// What the environment accepts as a step.
pub struct ActionSpace<'a> {
    pub partition: &'a CommunityPartition,
    /// Allowed items; `None` admits every item id.
    pub items: Option<&'a ItemPool>,
    pub item_count: usize,
    pub require_cross: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialAction {
    pub community: usize,
    pub user: UserId,
    pub log_prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    pub first: SocialAction,
    pub second: SocialAction,
    pub item: ItemId,
    pub item_log_prob: f64,
}

/// Applies one joint action: the pair joins the social profile, the item
/// joins the item profile (duplicates clipped) and `t` advances.
pub fn env_step(state: &mut AttackState, action: &JointAction, space: &ActionSpace<'_>) -> Result<()> {
    if state.finished() {
        return Err(Error::EpisodeFinished(state.horizon));
    }
    let p = space.partition;
    let (a, b) = (action.first, action.second);
    for s in [a, b] {
        if s.user as usize >= p.assignment.len() || p.community_of(s.user) != s.community {
            return Err(Error::InvalidAction(format!("user {} is not in community {}", s.user, s.community)));
        }
    }
    if a.user == b.user {
        return Err(Error::InvalidAction("pair members must differ".into()));
    }
    if space.require_cross && a.community == b.community {
        return Err(Error::InvalidAction("pair members must come from different communities".into()));
    }
    let allowed = match space.items {
        Some(pool) => pool.contains(action.item),
        None => (action.item as usize) < space.item_count,
    };
    if !allowed {
        return Err(Error::InvalidAction(format!("item {} is outside the action space", action.item)));
    }
    state.pairs.push((a.user, b.user));
    state.items.push(action.item);
    state.items = clip_profile(&state.items);
    state.t += 1;
    Ok(())
}

/// Trainable id embeddings pooled into an observation.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub table: EmbeddingTable,
    adam: Adam,
}

impl Encoder {
    pub fn new(table: EmbeddingTable, lr: f64) -> Self {
        let adam = Adam::new(table.values.len(), lr);
        Encoder { table, adam }
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    /// Mean of the rows of `ids`, zero for an empty list.
    pub fn pool(&self, ids: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.table.dim];
        if ids.is_empty() {
            return out;
        }
        for &id in ids {
            for (o, v) in out.iter_mut().zip(self.table.row(id as usize)) {
                *o += v;
            }
        }
        let w = 1.0 / ids.len() as f64;
        out.iter_mut().for_each(|o| *o *= w);
        out
    }

    fn scatter(&self, ids: &[u32], grad: &[f64], out: &mut [f64]) {
        if ids.is_empty() {
            return;
        }
        let (d, w) = (self.table.dim, 1.0 / ids.len() as f64);
        for &id in ids {
            let row = &mut out[id as usize * d..(id as usize + 1) * d];
            for (o, g) in row.iter_mut().zip(grad) {
                *o += w * g;
            }
        }
    }

    fn apply(&mut self, grad: &[f64]) -> Result<()> {
        self.adam.step(&mut self.table.values, grad)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub role: Role,
    pub pooled: Vec<f64>,
    pub step: f64,
}

impl Observation {
    pub fn vector(&self) -> Vec<f64> {
        let mut v = self.pooled.clone();
        v.push(self.step);
        v
    }
}

/// Social roles pool the users of the social profile; the item role pools
/// the item profile.
pub fn observe(state: &AttackState, role: Role, encoder: &Encoder) -> Observation {
    let pooled = match role {
        Role::Social1 | Role::Social2 => encoder.pool(&state.social_ids()),
        Role::Item => encoder.pool(&state.items),
    };
    Observation { role, pooled, step: state.step_fraction() }
}

/// A dense network with its own optimizer state.
#[derive(Clone, Debug)]
pub struct Net {
    pub stack: DenseStack,
    adam: Adam,
}

impl Net {
    fn new(stack: DenseStack, lr: f64) -> Self {
        let adam = Adam::new(stack.param_count(), lr);
        Net { stack, adam }
    }

    fn apply(&mut self, grad: &[f64]) -> Result<()> {
        let mut params = self.stack.params().to_vec();
        self.adam.step(&mut params, grad)?;
        self.stack.params_mut().copy_from_slice(&params);
        Ok(())
    }
}

/// `[input, hidden x (layers - 1), output]` with rectifier hidden units.
pub fn build_stack(input: usize, hidden: usize, layers: usize, output: usize, rng: &mut Rng) -> Result<DenseStack> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat(hidden).take(layers.saturating_sub(1)));
    dims.push(output);
    DenseStack::new(&dims, Activation::Relu, Activation::Identity, rng)
}

fn sample_index(logp: &[f64], rng: &mut Rng) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &l) in logp.iter().enumerate() {
        if l == f64::NEG_INFINITY {
            continue;
        }
        acc += l.exp();
        last = k;
        if x < acc {
            return k;
        }
    }
    last
}

fn entropy(logp: &[f64]) -> f64 {
    -logp.iter().filter(|l| l.is_finite()).map(|&l| l.exp() * l).sum::<f64>()
}

/// One categorical head evaluated on an input.
struct HeadEval {
    logp: Vec<f64>,
    cache: ForwardCache,
}

fn eval_head(stack: &DenseStack, input: &[f64], mask: &[bool]) -> Result<HeadEval> {
    let (logits, cache) = stack.forward(input)?;
    let logp = masked_log_softmax(&logits, mask)?;
    Ok(HeadEval { logp, cache })
}

/// d(loss)/d(logits) for `loss = coef * log p[action] - ent_coef * H`.
fn head_logit_grad(eval: &HeadEval, action: usize, coef: f64, ent_coef: f64) -> Vec<f64> {
    let h = entropy(&eval.logp);
    eval.logp
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            if l == f64::NEG_INFINITY {
                return 0.0;
            }
            let p = l.exp();
            let dlogp = f64::from(u8::from(k == action)) - p;
            let dent = -p * (l + h);
            coef * dlogp - ent_coef * dent
        })
        .collect()
}

fn add_into(acc: &mut [f64], g: &[f64], w: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += w * b;
    }
}

/// PPO-clip coefficient on `log pi(a)` in the loss `-min(rA, clip(r)A)`.
pub fn clip_coefficient(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let active = if advantage >= 0.0 { ratio < 1.0 + clip } else { ratio > 1.0 - clip };
    if active {
        -advantage * ratio
    } else {
        0.0
    }
}

/// `min(rA, clip(r, 1-eps, 1+eps)A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetShape {
    pub embed_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape { embed_dim: 32, hidden: 32, layers: 4 }
    }
}

/// Community head then user head (conditioned on a one-hot community).
/// A flat actor skips the community head and picks users directly from
/// every allowed community.
#[derive(Clone, Debug)]
pub struct SocialActor {
    pub encoder: Encoder,
    pub community: Net,
    pub user: Net,
    pub flat: bool,
    rosters: Vec<Vec<UserId>>,
    membership: Vec<usize>,
}

/// Training record for one social pick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialSample {
    pub context: Vec<UserId>,
    pub step: f64,
    pub forbidden: Option<usize>,
    pub exclude_user: Option<UserId>,
    pub community: usize,
    pub user: UserId,
    pub old_log_prob: f64,
    pub advantage: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

struct SocialEval {
    community: Option<HeadEval>,
    user: HeadEval,
}

impl SocialActor {
    /// `rosters[c]` lists the users selectable in community `c`; users in
    /// no roster are never picked.
    pub fn new(rosters: Vec<Vec<UserId>>, users: usize, shape: &NetShape, lr: f64, table: Option<EmbeddingTable>, rng: &mut Rng) -> Result<Self> {
        let n_c = rosters.len();
        if n_c == 0 {
            return invalid("social actor needs at least one community");
        }
        let mut membership = vec![usize::MAX; users];
        for (c, roster) in rosters.iter().enumerate() {
            for &u in roster {
                if u as usize >= users {
                    return invalid(format!("roster user {u} out of range"));
                }
                membership[u as usize] = c;
            }
        }
        let table = match table {
            Some(t) if t.rows == users => t,
            Some(_) => return invalid("warm-start table does not match the user count"),
            None => EmbeddingTable::normal(users, shape.embed_dim, 0.1, rng),
        };
        let obs = table.dim + 1;
        let community = build_stack(obs, shape.hidden, shape.layers, n_c, rng)?;
        let user = build_stack(obs + n_c, shape.hidden, shape.layers, users, rng)?;
        Ok(SocialActor {
            encoder: Encoder::new(table, lr),
            community: Net::new(community, lr),
            user: Net::new(user, lr),
            flat: false,
            rosters,
            membership,
        })
    }

    pub fn communities(&self) -> usize {
        self.rosters.len()
    }

    pub fn roster(&self, c: usize) -> &[UserId] {
        &self.rosters[c]
    }

    fn users(&self) -> usize {
        self.membership.len()
    }

    fn community_mask(&self, forbidden: Option<usize>, exclude: Option<UserId>) -> Vec<bool> {
        (0..self.rosters.len())
            .map(|c| Some(c) != forbidden && self.rosters[c].iter().any(|&u| Some(u) != exclude))
            .collect()
    }

    fn user_mask(&self, community: Option<usize>, forbidden: Option<usize>, exclude: Option<UserId>) -> Vec<bool> {
        (0..self.users() as UserId)
            .map(|u| {
                let c = self.membership[u as usize];
                let in_scope = match community {
                    Some(target) => c == target,
                    None => c != usize::MAX && Some(c) != forbidden,
                };
                in_scope && Some(u) != exclude
            })
            .collect()
    }

    fn user_input(obs: &[f64], c: Option<usize>, n_c: usize) -> Vec<f64> {
        let mut x = obs.to_vec();
        x.extend((0..n_c).map(|k| f64::from(u8::from(Some(k) == c))));
        x
    }

    fn obs_vector(&self, context: &[UserId], step: f64) -> Vec<f64> {
        let mut x = self.encoder.pool(context);
        x.push(step);
        x
    }

    /// Evaluates the heads for a pick in community `c` (ignored when flat).
    fn evaluate(&self, x: &[f64], c: usize, forbidden: Option<usize>, exclude: Option<UserId>) -> Result<SocialEval> {
        let n_c = self.rosters.len();
        if self.flat {
            let user = eval_head(&self.user.stack, &Self::user_input(x, None, n_c), &self.user_mask(None, forbidden, exclude))?;
            return Ok(SocialEval { community: None, user });
        }
        let community = eval_head(&self.community.stack, x, &self.community_mask(forbidden, exclude))?;
        let user = eval_head(&self.user.stack, &Self::user_input(x, Some(c), n_c), &self.user_mask(Some(c), None, exclude))?;
        Ok(SocialEval { community: Some(community), user })
    }

    /// Community distribution (with `forbidden` masked), then user
    /// distribution over the chosen roster.
    pub fn act(&self, obs: &Observation, forbidden: Option<usize>, exclude_user: Option<UserId>, rng: &mut Rng) -> Result<SocialAction> {
        let cmask = self.community_mask(forbidden, exclude_user);
        if !cmask.iter().any(|&m| m) {
            return Err(Error::ConstraintInfeasible("no community left to pick from".into()));
        }
        let x = obs.vector();
        let n_c = self.rosters.len();
        if self.flat {
            let ue = eval_head(&self.user.stack, &Self::user_input(&x, None, n_c), &self.user_mask(None, forbidden, exclude_user))?;
            let u = sample_index(&ue.logp, rng);
            return Ok(SocialAction { community: self.membership[u], user: u as UserId, log_prob: ue.logp[u] });
        }
        let ce = eval_head(&self.community.stack, &x, &cmask)?;
        let c = sample_index(&ce.logp, rng);
        let ue = eval_head(&self.user.stack, &Self::user_input(&x, Some(c), n_c), &self.user_mask(Some(c), None, exclude_user))?;
        let u = sample_index(&ue.logp, rng);
        Ok(SocialAction { community: c, user: u as UserId, log_prob: ce.logp[c] + ue.logp[u] })
    }

    /// Joint log-probability of a recorded pick under current parameters.
    pub fn log_prob(&self, s: &SocialSample) -> Result<f64> {
        let e = self.evaluate(&self.obs_vector(&s.context, s.step), s.community, s.forbidden, s.exclude_user)?;
        Ok(e.community.map_or(0.0, |c| c.logp[s.community]) + e.user.logp[s.user as usize])
    }

    /// Clipped-surrogate loss with entropy bonus, averaged over samples,
    /// and its gradients (encoder table, community head, user head).
    pub fn loss_and_grad(&self, samples: &[SocialSample], clip: f64, ent_coef: f64) -> Result<(PolicyStats, [Vec<f64>; 3])> {
        let mut g_enc = vec![0.0; self.encoder.table.values.len()];
        let mut g_com = vec![0.0; self.community.stack.param_count()];
        let mut g_usr = vec![0.0; self.user.stack.param_count()];
        let mut stats = PolicyStats::default();
        let w = 1.0 / samples.len().max(1) as f64;
        let d = self.encoder.dim();
        for s in samples {
            let x = self.obs_vector(&s.context, s.step);
            let e = self.evaluate(&x, s.community, s.forbidden, s.exclude_user)?;
            let c_logp = e.community.as_ref().map_or(0.0, |c| c.logp[s.community]);
            let logp = c_logp + e.user.logp[s.user as usize];
            let ratio = (logp - s.old_log_prob).exp();
            let h = e.community.as_ref().map_or(0.0, |c| entropy(&c.logp)) + entropy(&e.user.logp);
            stats.loss += w * (-clipped_surrogate(ratio, s.advantage, clip) - ent_coef * h);
            stats.entropy += w * h;
            if (ratio - 1.0).abs() > clip {
                stats.clip_fraction += w;
            }
            let coef = clip_coefficient(ratio, s.advantage, clip);
            let mut gx = vec![0.0; d];
            if let Some(ce) = &e.community {
                let dz = head_logit_grad(ce, s.community, coef, ent_coef);
                let (pc, xc) = self.community.stack.backward(&ce.cache, &dz)?;
                add_into(&mut g_com, &pc, w);
                add_into(&mut gx, &xc[..d], w);
            }
            let dz = head_logit_grad(&e.user, s.user as usize, coef, ent_coef);
            let (pu, xu) = self.user.stack.backward(&e.user.cache, &dz)?;
            add_into(&mut g_usr, &pu, w);
            add_into(&mut gx, &xu[..d], w);
            self.encoder.scatter(&s.context, &gx, &mut g_enc);
        }
        Ok((stats, [g_enc, g_com, g_usr]))
    }

    fn apply(&mut self, grads: &[Vec<f64>; 3]) -> Result<()> {
        self.encoder.apply(&grads[0])?;
        if !self.flat {
            self.community.apply(&grads[1])?;
        }
        self.user.apply(&grads[2])
    }
}

/// Samples a community (with `forbidden` masked) and then a user from its
/// roster; returns the pick with its joint log-probability.
pub fn act_social(actor: &SocialActor, obs: &Observation, forbidden: Option<usize>, rng: &mut Rng) -> Result<SocialAction> {
    actor.act(obs, forbidden, None, rng)
}

/// Categorical policy over a fixed candidate list.
#[derive(Clone, Debug)]
pub struct ItemActor {
    pub encoder: Encoder,
    pub head: Net,
    candidates: Vec<ItemId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemSample {
    pub context: Vec<ItemId>,
    pub step: f64,
    pub index: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
}

impl ItemActor {
    pub fn new(items: usize, candidates: Vec<ItemId>, shape: &NetShape, lr: f64, rng: &mut Rng) -> Result<Self> {
        if candidates.is_empty() {
            return invalid("item actor needs a non-empty candidate pool");
        }
        let table = EmbeddingTable::normal(items, shape.embed_dim, 0.1, rng);
        let head = build_stack(shape.embed_dim + 1, shape.hidden, shape.layers, candidates.len(), rng)?;
        Ok(ItemActor { encoder: Encoder::new(table, lr), head: Net::new(head, lr), candidates })
    }

    pub fn candidates(&self) -> &[ItemId] {
        &self.candidates
    }

    fn obs_vector(&self, context: &[ItemId], step: f64) -> Vec<f64> {
        let mut x = self.encoder.pool(context);
        x.push(step);
        x
    }

    pub fn act(&self, obs: &Observation, rng: &mut Rng) -> Result<(usize, f64)> {
        let e = eval_head(&self.head.stack, &obs.vector(), &vec![true; self.candidates.len()])?;
        let k = sample_index(&e.logp, rng);
        Ok((k, e.logp[k]))
    }

    pub fn probabilities(&self, obs: &Observation) -> Result<Vec<f64>> {
        let e = eval_head(&self.head.stack, &obs.vector(), &vec![true; self.candidates.len()])?;
        Ok(e.logp.iter().map(|l| l.exp()).collect())
    }

    pub fn loss_and_grad(&self, samples: &[ItemSample], clip: f64, ent_coef: f64) -> Result<(PolicyStats, [Vec<f64>; 2])> {
        let mut g_enc = vec![0.0; self.encoder.table.values.len()];
        let mut g_head = vec![0.0; self.head.stack.param_count()];
        let mut stats = PolicyStats::default();
        let w = 1.0 / samples.len().max(1) as f64;
        let mask = vec![true; self.candidates.len()];
        let d = self.encoder.dim();
        for s in samples {
            let x = self.obs_vector(&s.context, s.step);
            let e = eval_head(&self.head.stack, &x, &mask)?;
            let ratio = (e.logp[s.index] - s.old_log_prob).exp();
            let h = entropy(&e.logp);
            stats.loss += w * (-clipped_surrogate(ratio, s.advantage, clip) - ent_coef * h);
            stats.entropy += w * h;
            if (ratio - 1.0).abs() > clip {
                stats.clip_fraction += w;
            }
            let dz = head_logit_grad(&e, s.index, clip_coefficient(ratio, s.advantage, clip), ent_coef);
            let (pg, xg) = self.head.stack.backward(&e.cache, &dz)?;
            add_into(&mut g_head, &pg, w);
            let gx: Vec<f64> = xg[..d].iter().map(|v| v * w).collect();
            self.encoder.scatter(&s.context, &gx, &mut g_enc);
        }
        Ok((stats, [g_enc, g_head]))
    }

    fn apply(&mut self, grads: &[Vec<f64>; 2]) -> Result<()> {
        self.encoder.apply(&grads[0])?;
        self.head.apply(&grads[1])
    }
}

/// Samples an item from the actor's pool.
pub fn act_item(actor: &ItemActor, obs: &Observation, rng: &mut Rng) -> Result<(ItemId, f64)> {
    let (k, logp) = actor.act(obs, rng)?;
    Ok((actor.candidates[k], logp))
}

/// Running return statistics for value-target normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopArtStats {
    pub mean: f64,
    pub second: f64,
    pub rate: f64,
    pub eps: f64,
}

impl PopArtStats {
    pub fn new(rate: f64) -> Self {
        PopArtStats { mean: 0.0, second: 1.0, rate, eps: 1e-4 }
    }

    pub fn std(&self) -> f64 {
        (self.second - self.mean * self.mean).max(self.eps).sqrt()
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std() + self.mean
    }
}

/// Updates the statistics with a batch of returns, rescales the critic's
/// last affine layer so its denormalized outputs are unchanged, and
/// returns the standardized targets.
pub fn popart_normalize(stats: &mut PopArtStats, returns: &[f64], critic: &mut DenseStack) -> Vec<f64> {
    if returns.is_empty() {
        return Vec::new();
    }
    let (old_mean, old_std) = (stats.mean, stats.std());
    let n = returns.len() as f64;
    let m1 = returns.iter().sum::<f64>() / n;
    let m2 = returns.iter().map(|r| r * r).sum::<f64>() / n;
    stats.mean = (1.0 - stats.rate) * stats.mean + stats.rate * m1;
    stats.second = (1.0 - stats.rate) * stats.second + stats.rate * m2;
    let new_std = stats.std();
    let last = critic.depth() - 1;
    let (w, b) = critic.layer_mut(last);
    for v in w.iter_mut() {
        *v *= old_std / new_std;
    }
    for v in b.iter_mut() {
        *v = (old_std * *v + old_mean - stats.mean) / new_std;
    }
    returns.iter().map(|r| (r - stats.mean) / new_std).collect()
}

/// Centralized value function over the concatenated agent observations.
#[derive(Clone, Debug)]
pub struct Critic {
    pub net: Net,
    pub popart: PopArtStats,
}

impl Critic {
    pub fn new(input: usize, shape: &NetShape, lr: f64, popart_rate: f64, rng: &mut Rng) -> Result<Self> {
        let stack = build_stack(input, shape.hidden, shape.layers, 1, rng)?;
        Ok(Critic { net: Net::new(stack, lr), popart: PopArtStats::new(popart_rate) })
    }

    /// Value in return units.
    pub fn value(&self, input: &[f64]) -> Result<f64> {
        Ok(self.popart.denormalize(self.net.stack.forward(input)?.0[0]))
    }

    /// Mean of `value_coef * (v - target)^2` on normalized targets.
    pub fn loss_and_grad(&self, inputs: &[Vec<f64>], targets: &[f64], value_coef: f64) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.net.stack.param_count()];
        let mut loss = 0.0;
        let w = 1.0 / inputs.len().max(1) as f64;
        for (x, &t) in inputs.iter().zip(targets) {
            let (v, cache) = self.net.stack.forward(x)?;
            let diff = v[0] - t;
            loss += w * value_coef * diff * diff;
            let (g, _) = self.net.stack.backward(&cache, &[2.0 * w * value_coef * diff])?;
            add_into(&mut grad, &g, 1.0);
        }
        Ok((loss, grad))
    }
}

/// Generalized advantage estimation over one trajectory ending in
/// `bootstrap`. Returns `(advantages, returns)` with `returns = A + V`.
pub fn gae(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return invalid("rewards and values differ in length");
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Queries the target every `cadence` injected fakes and scores the spies'
/// cold-item hit ratio; `None` between queries.
pub fn query_reward(
    target: &dyn BlackBox,
    fakes: &[FakeUser],
    spies: &SpySet,
    cold: &ItemPool,
    k: usize,
    cadence: usize,
) -> Result<Option<f64>> {
    if cadence == 0 || fakes.is_empty() || fakes.len() % cadence != 0 {
        return Ok(None);
    }
    let lists = target.spy_lists(fakes, &spies.users, k)?;
    cold_hit_reward(&lists, cold, k).map(Some)
}

/// How advantages are scaled before the policy step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageNorm {
    /// Zero mean, unit variance within the update batch.
    Batch,
    /// Divided by the PopArt return scale, keeping the critic baseline.
    PopArt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub lr: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub popart_rate: f64,
    pub advantage_norm: AdvantageNorm,
    pub shape: NetShape,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lr: 5e-4,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 10,
            popart_rate: 0.1,
            advantage_norm: AdvantageNorm::PopArt,
            shape: NetShape::default(),
        }
    }
}

/// One environment step as stored for the update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub social: Vec<SocialSample>,
    pub item: Option<ItemSample>,
    pub critic_input: Vec<f64>,
    pub value: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub steps: Vec<StepRecord>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    /// Fills advantages and returns for a trajectory that ends here.
    pub fn finish(&mut self, gamma: f64, lambda: f64) -> Result<()> {
        let rewards: Vec<f64> = self.steps.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = self.steps.iter().map(|s| s.value).collect();
        let (adv, ret) = gae(&rewards, &values, 0.0, gamma, lambda)?;
        if adv.iter().any(|a| !a.is_finite()) {
            return Err(Error::TrainingDivergence("non-finite advantage".into()));
        }
        self.advantages = adv;
        self.returns = ret;
        Ok(())
    }
}

/// Standardizes advantages when they have spread.
fn standardize(adv: &[f64]) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    if var.sqrt() < 1e-8 {
        return adv.iter().map(|a| a - mean).collect();
    }
    adv.iter().map(|a| (a - mean) / var.sqrt()).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub social: Vec<PolicyStats>,
    pub item: Option<PolicyStats>,
    pub value_loss_first: f64,
    pub value_loss_last: f64,
}

/// The attacking team: one or two social actors, an optional item actor
/// and the shared critic.
#[derive(Clone, Debug)]
pub struct Team {
    pub social: Vec<SocialActor>,
    pub item: Option<ItemActor>,
    pub critic: Critic,
}

impl Team {
    /// Clipped PPO for every actor on its own samples plus critic regression
    /// on PopArt-normalized returns, for `cfg.epochs` passes.
    pub fn ppo_update(&mut self, buffer: &RolloutBuffer, cfg: &PpoConfig) -> Result<UpdateStats> {
        if buffer.steps.is_empty() {
            return Ok(UpdateStats::default());
        }
        if buffer.advantages.len() != buffer.steps.len() {
            return Err(Error::InvalidState("rollout buffer not finished".into()));
        }
        let inputs: Vec<Vec<f64>> = buffer.steps.iter().map(|s| s.critic_input.clone()).collect();
        let targets = popart_normalize(&mut self.critic.popart, &buffer.returns, &mut self.critic.net.stack);
        let adv = match cfg.advantage_norm {
            AdvantageNorm::Batch => standardize(&buffer.advantages),
            AdvantageNorm::PopArt => {
                let sd = self.critic.popart.std();
                buffer.advantages.iter().map(|a| a / sd).collect()
            }
        };
        let mut social_samples: Vec<Vec<SocialSample>> = vec![Vec::new(); self.social.len()];
        let mut item_samples = Vec::new();
        for (step, &a) in buffer.steps.iter().zip(&adv) {
            for (slot, s) in step.social.iter().enumerate() {
                let actor = slot.min(self.social.len() - 1);
                social_samples[actor].push(SocialSample { advantage: a, ..s.clone() });
            }
            if let Some(s) = &step.item {
                item_samples.push(ItemSample { advantage: a, ..s.clone() });
            }
        }
        let mut stats = UpdateStats { social: vec![PolicyStats::default(); self.social.len()], ..Default::default() };
        for epoch in 0..cfg.epochs {
            for (slot, (actor, samples)) in self.social.iter_mut().zip(&social_samples).enumerate() {
                if samples.is_empty() {
                    continue;
                }
                let (st, grads) = actor.loss_and_grad(samples, cfg.clip, cfg.entropy_coef)?;
                check_finite(st.loss)?;
                actor.apply(&grads)?;
                if epoch == 0 {
                    stats.social[slot] = st;
                }
            }
            if let Some(item) = self.item.as_mut() {
                let (st, grads) = item.loss_and_grad(&item_samples, cfg.clip, cfg.entropy_coef)?;
                check_finite(st.loss)?;
                item.apply(&grads)?;
                if epoch == 0 {
                    stats.item = Some(st);
                }
            }
            let (vl, vg) = self.critic.loss_and_grad(&inputs, &targets, cfg.value_coef)?;
            check_finite(vl)?;
            if epoch == 0 {
                stats.value_loss_first = vl;
            }
            stats.value_loss_last = vl;
            self.critic.net.apply(&vg)?;
        }
        Ok(stats)
    }
}

fn check_finite(loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::TrainingDivergence(format!("policy loss {loss}")))
    }
}

/// Wires the environment pieces for rollouts.
pub struct Rollout<'a> {
    pub target: &'a dyn BlackBox,
    pub partition: &'a CommunityPartition,
    pub items: Option<&'a ItemPool>,
    pub item_count: usize,
    pub spies: &'a SpySet,
    pub cold: &'a ItemPool,
    pub reward_k: usize,
    pub cadence: usize,
    pub horizon: usize,
    pub require_cross: bool,
    /// Fake users in a full pass.
    pub budget: usize,
}

/// Outcome of one episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub rewards: Vec<(usize, f64)>,
}

impl Team {
    /// Agent observations plus the share of the budget already injected.
    fn critic_input(&self, obs: &[Observation], progress: f64) -> Vec<f64> {
        let mut x: Vec<f64> = obs.iter().flat_map(|o| o.vector()).collect();
        x.push(progress);
        x
    }

    /// Builds `count` fakes, appending them to `fakes` (which already holds
    /// the fakes injected earlier in the pass). Rewards land on the final
    /// step of each fake that triggers a query.
    pub fn run_episode(
        &self,
        env: &Rollout<'_>,
        fakes: &mut Vec<FakeUser>,
        count: usize,
        rng: &mut Rng,
    ) -> Result<(RolloutBuffer, EpisodeLog)> {
        let mut buffer = RolloutBuffer::default();
        let mut log = EpisodeLog::default();
        let space = ActionSpace {
            partition: env.partition,
            items: env.items,
            item_count: env.item_count,
            require_cross: env.require_cross,
        };
        for _ in 0..count {
            let mut state = AttackState::new(env.horizon, fakes.len());
            while !state.finished() {
                let a1 = &self.social[0];
                let a2 = &self.social[self.social.len() - 1];
                let o1 = observe(&state, Role::Social1, &a1.encoder);
                let o2 = observe(&state, Role::Social2, &a2.encoder);
                let first = a1.act(&o1, None, None, rng)?;
                let forbidden = env.require_cross.then_some(first.community);
                let second = a2.act(&o2, forbidden, Some(first.user), rng)?;
                let mut obs = vec![o1, o2];
                let (item, item_log_prob, item_sample) = match &self.item {
                    Some(actor) => {
                        let oi = observe(&state, Role::Item, &actor.encoder);
                        let (k, lp) = actor.act(&oi, rng)?;
                        obs.push(oi);
                        let sample = ItemSample { context: state.items.clone(), step: state.step_fraction(), index: k, old_log_prob: lp, advantage: 0.0 };
                        (actor.candidates[k], lp, Some(sample))
                    }
                    None => {
                        let item = match env.items {
                            Some(pool) => pool.items[rng.gen_range(0..pool.len())],
                            None => rng.gen_range(0..env.item_count) as ItemId,
                        };
                        (item, 0.0, None)
                    }
                };
                let progress = state.fake_index as f64 / env.budget.max(1) as f64;
                let critic_input = self.critic_input(&obs, progress);
                let value = self.critic.value(&critic_input)?;
                let ctx = state.social_ids();
                let step = state.step_fraction();
                let social = vec![
                    SocialSample { context: ctx.clone(), step, forbidden: None, exclude_user: None, community: first.community, user: first.user, old_log_prob: first.log_prob, advantage: 0.0 },
                    SocialSample { context: ctx, step, forbidden, exclude_user: Some(first.user), community: second.community, user: second.user, old_log_prob: second.log_prob, advantage: 0.0 },
                ];
                env_step(&mut state, &JointAction { first, second, item, item_log_prob }, &space)?;
                buffer.steps.push(StepRecord { social, item: item_sample, critic_input, value, reward: 0.0 });
            }
            fakes.push(state.to_fake());
            if let Some(r) = query_reward(env.target, fakes, env.spies, env.cold, env.reward_k, env.cadence)? {
                buffer.steps.last_mut().expect("horizon > 0").reward = r;
                log.rewards.push((fakes.len(), r));
            }
        }
        Ok((buffer, log))
    }
}

/// Seed streams for one MARL run.
pub fn policy_rng(seed: SeedStream) -> Rng {
    seed.derive("policy-init").rng()
}
