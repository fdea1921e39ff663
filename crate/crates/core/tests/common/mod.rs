//! Seeded oracle cases shared by the property tests and the acceptance run.
//! Each case builds a random instance from `seed` and returns a description
//! of the first mismatch.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use socattack::community::kmeans;
use socattack::data::{ItemId, UserId};
use socattack::gradcore::EmbeddingTable;
use socattack::marl::{gae, Critic, ItemActor, ItemSample, NetShape, Observation, Role, SocialActor, SocialSample};
use socattack::metrics::{ndcg_at_k, precision_at_k, recall_at_k, RankedList};
use socattack::recenv::{bpr_objective, Graph, RecConfig, Sample, Variant};
use socattack::seed::{Rng, SeedStream};

pub type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// Largest DCG@k reachable by any ordering of `n` candidates of which
/// `rel` are relevant, found by trying every set of top-k positions.
fn brute_ideal_dcg(n: usize, rel: usize, k: usize) -> f64 {
    let slots = k.min(n);
    let mut best = 0.0f64;
    for mask in 0u32..(1 << slots) {
        let ones = mask.count_ones() as usize;
        if ones > rel || slots - ones > n - rel {
            continue;
        }
        let dcg: f64 = (0..slots).filter(|p| mask & (1 << p) != 0).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
        best = best.max(dcg);
    }
    best
}

/// Up to 10 items, k up to 5, a non-empty relevant set.
pub fn metric_case(seed: u64) -> Check {
    let mut rng = Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=10usize);
    let mut order: Vec<ItemId> = (0..n as ItemId).collect();
    order.shuffle(&mut rng);
    let mut relevant: Vec<ItemId> = (0..n as ItemId).filter(|_| rng.gen_bool(0.4)).collect();
    if relevant.is_empty() {
        relevant.push(rng.gen_range(0..n) as ItemId);
    }
    let k = rng.gen_range(1..=5usize);
    let list = RankedList { user: 0, items: order.clone(), k: n };
    let mut dcg = 0.0;
    let mut hits = 0usize;
    for (p, item) in order.iter().take(k).enumerate() {
        if relevant.contains(item) {
            hits += 1;
            dcg += 1.0 / ((p + 2) as f64).log2();
        }
    }
    let expect = [
        ("ndcg", ndcg_at_k(&list, &relevant, k), dcg / brute_ideal_dcg(n, relevant.len(), k)),
        ("recall", recall_at_k(&list, &relevant, k), hits as f64 / relevant.len() as f64),
        ("precision", precision_at_k(&list, &relevant, k), hits as f64 / k as f64),
    ];
    for (name, got, want) in expect {
        let got = got.map_err(|e| e.to_string())?;
        ensure!((got - want).abs() <= 1e-9, "{name}@{k}: {got} vs {want} (n={n}, rel={relevant:?}, order={order:?})");
    }
    Ok(())
}

const STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
const GRAD_FLOOR: f64 = 1e-5;

/// Central differences of `f` at up to `probes` random coordinates of `x`.
fn fd_check(name: &str, x: &[f64], analytic: &[f64], probes: usize, rng: &mut Rng, mut f: impl FnMut(&[f64]) -> f64) -> Check {
    ensure!(x.len() == analytic.len(), "{name}: gradient length {} for {} params", analytic.len(), x.len());
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.shuffle(rng);
    let mut probe = x.to_vec();
    for &i in idx.iter().take(probes) {
        probe[i] = x[i] + STEP;
        let up = f(&probe);
        probe[i] = x[i] - STEP;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * STEP);
        let scale = analytic[i].abs().max(numeric.abs()).max(GRAD_FLOOR);
        ensure!((analytic[i] - numeric).abs() <= GRAD_TOL * scale, "{name}[{i}]: analytic {} numeric {numeric}", analytic[i]);
    }
    Ok(())
}

/// Moves every parameter off zero so no rectifier sits exactly on its kink.
fn jitter(params: &mut [f64], rng: &mut Rng) {
    for v in params {
        *v += rng.gen_range(-0.1..0.1);
    }
}

fn ratio_noise(rng: &mut Rng) -> f64 {
    // Keeps the probability ratio clear of the clip boundaries at 0.8 and 1.2.
    match rng.gen_range(0..3) {
        0 => rng.gen_range(-0.6..-0.3),
        1 => rng.gen_range(-0.1..0.1),
        _ => rng.gen_range(0.3..0.6),
    }
}

pub fn bpr_grad_case(seed: u64) -> Check {
    let mut rng = Rng::seed_from_u64(seed);
    let variant = [Variant::MfBpr, Variant::Sbpr, Variant::SocialLgn, Variant::SageLite][rng.gen_range(0..4)];
    let (users, items) = (rng.gen_range(3..8usize), rng.gen_range(4..10usize));
    let cfg = RecConfig { variant, dim: rng.gen_range(2..5), depth: rng.gen_range(1..4), reg: rng.gen_range(0.0..0.1), ..RecConfig::default() };
    let inter: Vec<(UserId, ItemId)> = (0..users * 2).map(|_| (rng.gen_range(0..users) as UserId, rng.gen_range(0..items) as ItemId)).collect();
    let social: Vec<(UserId, UserId)> = (0..users).map(|_| (rng.gen_range(0..users) as UserId, rng.gen_range(0..users) as UserId)).collect();
    let g = Graph::build(users, items, &inter, &social);
    let samples: Vec<Sample> = (0..rng.gen_range(2..8))
        .map(|_| Sample {
            user: rng.gen_range(0..users) as UserId,
            pos: rng.gen_range(0..items) as ItemId,
            neg: rng.gen_range(0..items) as ItemId,
            social: (variant == Variant::Sbpr && rng.gen_bool(0.5)).then(|| (rng.gen_range(0..items) as ItemId, f64::from(rng.gen_range(1..4u8)))),
        })
        .collect();
    let eu: Vec<f64> = (0..users * cfg.dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let ei: Vec<f64> = (0..items * cfg.dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let (_, gu, gi) = bpr_objective(&cfg, &g, &eu, &ei, &samples);
    fd_check("bpr user", &eu, &gu, 12, &mut rng, |p| bpr_objective(&cfg, &g, p, &ei, &samples).0)?;
    fd_check("bpr item", &ei, &gi, 12, &mut rng, |p| bpr_objective(&cfg, &g, &eu, p, &samples).0)
}

pub fn social_actor_grad_case(seed: u64) -> Check {
    let mut rng = Rng::seed_from_u64(seed);
    let users = rng.gen_range(4..10usize);
    let n_c = rng.gen_range(2..4usize);
    let mut order: Vec<UserId> = (0..users as UserId).collect();
    order.shuffle(&mut rng);
    let mut rosters = vec![Vec::new(); n_c];
    for (k, &u) in order.iter().enumerate() {
        rosters[k % n_c].push(u);
    }
    let shape = NetShape { embed_dim: 3, hidden: 5, layers: rng.gen_range(1..4) };
    let mut actor = SocialActor::new(rosters.clone(), users, &shape, 1e-3, None, &mut rng).map_err(|e| e.to_string())?;
    actor.flat = rng.gen_bool(0.3);
    jitter(actor.community.stack.params_mut(), &mut rng);
    jitter(actor.user.stack.params_mut(), &mut rng);
    let mut samples = Vec::new();
    for _ in 0..rng.gen_range(1..5) {
        let community = rng.gen_range(0..n_c);
        let user = rosters[community][rng.gen_range(0..rosters[community].len())];
        let mut s = SocialSample {
            context: (0..rng.gen_range(0..3)).map(|_| rng.gen_range(0..users) as UserId).collect(),
            step: rng.gen_range(0.0..1.0),
            forbidden: rng.gen_bool(0.5).then(|| (community + 1) % n_c),
            exclude_user: None,
            community,
            user,
            old_log_prob: 0.0,
            advantage: rng.gen_range(-2.0..2.0),
        };
        s.old_log_prob = actor.log_prob(&s).map_err(|e| e.to_string())? + ratio_noise(&mut rng);
        samples.push(s);
    }
    let (_, [g_enc, g_com, g_usr]) = actor.loss_and_grad(&samples, 0.2, 0.01).map_err(|e| e.to_string())?;
    let loss = |a: &SocialActor| a.loss_and_grad(&samples, 0.2, 0.01).expect("loss").0.loss;
    let enc = actor.encoder.table.values.clone();
    fd_check("social encoder", &enc, &g_enc, 12, &mut rng, |p| {
        let mut a = actor.clone();
        a.encoder.table.values.copy_from_slice(p);
        loss(&a)
    })?;
    if !actor.flat {
        let com = actor.community.stack.params().to_vec();
        fd_check("community head", &com, &g_com, 16, &mut rng, |p| {
            let mut a = actor.clone();
            a.community.stack.params_mut().copy_from_slice(p);
            loss(&a)
        })?;
    }
    let usr = actor.user.stack.params().to_vec();
    fd_check("user head", &usr, &g_usr, 16, &mut rng, |p| {
        let mut a = actor.clone();
        a.user.stack.params_mut().copy_from_slice(p);
        loss(&a)
    })
}

pub fn item_actor_grad_case(seed: u64) -> Check {
    let mut rng = Rng::seed_from_u64(seed);
    let items = rng.gen_range(3..12usize);
    let mut candidates: Vec<ItemId> = (0..items as ItemId).filter(|_| rng.gen_bool(0.7)).collect();
    if candidates.is_empty() {
        candidates.push(0);
    }
    let shape = NetShape { embed_dim: 3, hidden: 5, layers: rng.gen_range(1..4) };
    let mut actor = ItemActor::new(items, candidates.clone(), &shape, 1e-3, &mut rng).map_err(|e| e.to_string())?;
    jitter(actor.head.stack.params_mut(), &mut rng);
    let mut samples = Vec::new();
    for _ in 0..rng.gen_range(1..5) {
        let context: Vec<ItemId> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..items) as ItemId).collect();
        let step = rng.gen_range(0.0..1.0);
        let index = rng.gen_range(0..candidates.len());
        let obs = Observation { role: Role::Item, pooled: actor.encoder.pool(&context), step };
        let logp = actor.probabilities(&obs).map_err(|e| e.to_string())?[index].ln();
        samples.push(ItemSample { context, step, index, old_log_prob: logp + ratio_noise(&mut rng), advantage: rng.gen_range(-2.0..2.0) });
    }
    let (_, [g_enc, g_head]) = actor.loss_and_grad(&samples, 0.2, 0.01).map_err(|e| e.to_string())?;
    let loss = |a: &ItemActor| a.loss_and_grad(&samples, 0.2, 0.01).expect("loss").0.loss;
    let enc = actor.encoder.table.values.clone();
    fd_check("item encoder", &enc, &g_enc, 12, &mut rng, |p| {
        let mut a = actor.clone();
        a.encoder.table.values.copy_from_slice(p);
        loss(&a)
    })?;
    let head = actor.head.stack.params().to_vec();
    fd_check("item head", &head, &g_head, 16, &mut rng, |p| {
        let mut a = actor.clone();
        a.head.stack.params_mut().copy_from_slice(p);
        loss(&a)
    })
}

pub fn critic_grad_case(seed: u64) -> Check {
    let mut rng = Rng::seed_from_u64(seed);
    let input = rng.gen_range(2..8usize);
    let shape = NetShape { embed_dim: 3, hidden: rng.gen_range(3..8), layers: rng.gen_range(1..5) };
    let mut critic = Critic::new(input, &shape, 1e-3, 0.1, &mut rng).map_err(|e| e.to_string())?;
    jitter(critic.net.stack.params_mut(), &mut rng);
    let n = rng.gen_range(1..6);
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let (_, grad) = critic.loss_and_grad(&inputs, &targets, 0.5).map_err(|e| e.to_string())?;
    let params = critic.net.stack.params().to_vec();
    fd_check("critic", &params, &grad, 24, &mut rng, |p| {
        let mut c = critic.clone();
        c.net.stack.params_mut().copy_from_slice(p);
        c.loss_and_grad(&inputs, &targets, 0.5).expect("loss").0
    })
}

/// lambda = 1 against discounted returns minus the baseline, lambda = 0
/// against one-step residuals (bitwise).
pub fn gae_case(seed: u64) -> Check {
    let mut rng = Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..40usize);
    let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let bootstrap = rng.gen_range(-5.0..5.0);
    let gamma = rng.gen_range(0.0..=1.0);
    let (adv, _) = gae(&rewards, &values, bootstrap, gamma, 1.0).map_err(|e| e.to_string())?;
    for t in 0..n {
        let mut discounted = 0.0;
        let mut w = 1.0;
        for r in &rewards[t..] {
            discounted += w * r;
            w *= gamma;
        }
        let expect = discounted + gamma.powi((n - t) as i32) * bootstrap - values[t];
        ensure!((adv[t] - expect).abs() <= 1e-9, "lambda=1 t={t}: {} vs {expect}", adv[t]);
    }
    let (adv, _) = gae(&rewards, &values, bootstrap, gamma, 0.0).map_err(|e| e.to_string())?;
    for t in 0..n {
        let next = if t + 1 < n { values[t + 1] } else { bootstrap };
        let expect = rewards[t] + gamma * next - values[t];
        ensure!(adv[t] == expect, "lambda=0 t={t}: {} vs {expect}", adv[t]);
    }
    Ok(())
}

pub fn kmeans_case(seed: u64) -> Check {
    let mut rng = Rng::seed_from_u64(seed);
    let rows = rng.gen_range(2..60usize);
    let dim = rng.gen_range(1..6usize);
    let emb = EmbeddingTable::normal(rows, dim, 1.0, &mut rng);
    let k = rng.gen_range(1..=rows.min(8));
    let c = kmeans(&emb, k, 100, SeedStream::new(seed)).map_err(|e| e.to_string())?;
    for w in c.objective_trace.windows(2) {
        ensure!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "objective rose: {:?}", c.objective_trace);
    }
    Ok(())
}
