//! Social-graph community partitioning: DeepWalk embeddings clustered by
//! K-means, with the cluster count taken from a Louvain run.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::UserId;
use crate::error::{invalid, Result};
use crate::gradcore::EmbeddingTable;
use crate::seed::SeedStream;

/// Undirected adjacency lists with ascending neighbours.
pub fn adjacency(nodes: usize, edges: &[(UserId, UserId)]) -> Vec<Vec<UserId>> {
    let mut adj = vec![Vec::new(); nodes];
    for &(a, b) in edges {
        if a != b {
            adj[a as usize].push(b);
            adj[b as usize].push(a);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkCorpus {
    pub nodes: usize,
    pub walks: Vec<Vec<UserId>>,
    pub walk_length: usize,
    pub walks_per_node: usize,
}

/// `walks_per_node` uniform random walks of `length` nodes from every node.
/// Walk `r` from node `v` draws from its own seed stream.
pub fn random_walks(adj: &[Vec<UserId>], walks_per_node: usize, length: usize, seed: SeedStream) -> Result<WalkCorpus> {
    if length == 0 {
        return invalid("walk length must be at least 1");
    }
    let n = adj.len();
    let mut walks = Vec::with_capacity(n * walks_per_node);
    for r in 0..walks_per_node {
        let round = seed.index(r as u64);
        for start in 0..n {
            let mut rng = round.index(start as u64).rng();
            let mut walk = vec![start as UserId];
            let mut cur = start;
            while walk.len() < length && !adj[cur].is_empty() {
                cur = adj[cur][rng.gen_range(0..adj[cur].len())] as usize;
                walk.push(cur as UserId);
            }
            walks.push(walk);
        }
    }
    Ok(WalkCorpus { nodes: n, walks, walk_length: length, walks_per_node })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig { dim: 32, window: 5, negatives: 5, epochs: 1, lr: 0.025 }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Skip-gram with negative sampling over the walk corpus. The learning rate
/// decays linearly to 1e-4 of its start over all updates.
pub fn skipgram_train(corpus: &WalkCorpus, cfg: &SkipGramConfig, seed: SeedStream) -> Result<EmbeddingTable> {
    if corpus.walks.is_empty() || corpus.nodes == 0 {
        return invalid("empty walk corpus");
    }
    if cfg.window == 0 {
        return invalid("window 0 yields no training pairs");
    }
    let (n, d) = (corpus.nodes, cfg.dim);
    let mut rng = seed.derive("init").rng();
    let mut input = EmbeddingTable::zeros(n, d);
    for v in input.values.iter_mut() {
        *v = (rng.gen::<f64>() - 0.5) / d as f64;
    }
    let mut output = vec![0.0; n * d];
    let mut rng = seed.derive("negatives").rng();
    let total: usize = cfg.epochs * corpus.walks.iter().map(|w| w.len()).sum::<usize>();
    let mut done = 0usize;
    let mut grad = vec![0.0; d];
    for _ in 0..cfg.epochs {
        for walk in &corpus.walks {
            for (p, &center) in walk.iter().enumerate() {
                let lr = cfg.lr * (1.0 - done as f64 / total as f64).max(1e-4);
                done += 1;
                let lo = p.saturating_sub(cfg.window);
                let hi = (p + cfg.window + 1).min(walk.len());
                let c = center as usize;
                for (q, &ctx) in walk.iter().enumerate().take(hi).skip(lo) {
                    if q == p {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let vin = &input.values[c * d..(c + 1) * d];
                    for s in 0..=cfg.negatives {
                        let (target, label) = if s == 0 {
                            (ctx as usize, 1.0)
                        } else {
                            (rng.gen_range(0..n), 0.0)
                        };
                        let out = &mut output[target * d..(target + 1) * d];
                        let x: f64 = vin.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                        let step = lr * (label - sigmoid(x));
                        for k in 0..d {
                            grad[k] += step * out[k];
                            out[k] += step * vin[k];
                        }
                    }
                    for (v, g) in input.values[c * d..(c + 1) * d].iter_mut().zip(&grad) {
                        *v += g;
                    }
                }
            }
        }
    }
    Ok(input)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityPartition {
    pub assignment: Vec<usize>,
    pub rosters: Vec<Vec<UserId>>,
    pub n_c: usize,
    pub modularity: f64,
}

impl CommunityPartition {
    /// Relabels communities by order of first appearance over ascending user
    /// ids, builds rosters and evaluates modularity on `adj`.
    pub fn from_assignment(labels: &[usize], adj: &[Vec<UserId>]) -> Self {
        let mut remap: Vec<Option<usize>> = vec![None; labels.iter().max().map_or(0, |m| m + 1)];
        let mut assignment = Vec::with_capacity(labels.len());
        let mut rosters: Vec<Vec<UserId>> = Vec::new();
        for (u, &l) in labels.iter().enumerate() {
            let c = *remap[l].get_or_insert_with(|| {
                rosters.push(Vec::new());
                rosters.len() - 1
            });
            rosters[c].push(u as UserId);
            assignment.push(c);
        }
        let modularity = modularity(adj, &assignment);
        CommunityPartition { n_c: rosters.len(), assignment, rosters, modularity }
    }

    pub fn community_of(&self, user: UserId) -> usize {
        self.assignment[user as usize]
    }

    pub fn roster_sizes(&self) -> Vec<usize> {
        self.rosters.iter().map(Vec::len).collect()
    }

    pub fn max_roster(&self) -> usize {
        self.rosters.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Newman modularity of an unweighted undirected graph under `assignment`.
/// Returns 0 for a graph without edges.
pub fn modularity(adj: &[Vec<UserId>], assignment: &[usize]) -> f64 {
    let two_m: f64 = adj.iter().map(|a| a.len() as f64).sum();
    if two_m == 0.0 {
        return 0.0;
    }
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; k];
    let mut total = vec![0.0; k];
    for (u, nbrs) in adj.iter().enumerate() {
        let c = assignment[u];
        total[c] += nbrs.len() as f64;
        inside[c] += nbrs.iter().filter(|&&v| assignment[v as usize] == c).count() as f64;
    }
    inside.iter().zip(&total).map(|(i, t)| i / two_m - (t / two_m).powi(2)).sum()
}

/// Weighted graph for Louvain's aggregation levels; `self_w` holds twice
/// the internal edge weight of each super-node.
struct WGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_w: Vec<f64>,
}

impl WGraph {
    fn degree(&self, v: usize) -> f64 {
        self.self_w[v] + self.adj[v].iter().map(|(_, w)| w).sum::<f64>()
    }
}

/// One local-moving phase. Nodes are visited in ascending order and move
/// only on a strictly positive modularity gain. Returns whether anything
/// moved.
fn local_moves(g: &WGraph, comm: &mut [usize], two_m: f64) -> bool {
    let n = g.adj.len();
    let deg: Vec<f64> = (0..n).map(|v| g.degree(v)).collect();
    let mut tot = vec![0.0; n];
    for v in 0..n {
        tot[comm[v]] += deg[v];
    }
    let mut moved_any = false;
    let mut weight_to = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    loop {
        let mut moved = false;
        for v in 0..n {
            let own = comm[v];
            for &(u, w) in &g.adj[v] {
                let c = comm[u];
                if weight_to[c] == 0.0 {
                    touched.push(c);
                }
                weight_to[c] += w;
            }
            tot[own] -= deg[v];
            let gain = |c: usize| weight_to[c] - tot[c] * deg[v] / two_m;
            let mut best = own;
            let mut best_gain = gain(own);
            touched.sort_unstable();
            for &c in &touched {
                let gc = gain(c);
                if gc > best_gain + 1e-12 {
                    best = c;
                    best_gain = gc;
                }
            }
            tot[best] += deg[v];
            if best != own {
                comm[v] = best;
                moved = true;
                moved_any = true;
            }
            for &c in &touched {
                weight_to[c] = 0.0;
            }
            touched.clear();
        }
        if !moved {
            break;
        }
    }
    moved_any
}

/// Greedy modularity optimization from singletons, aggregating communities
/// into super-nodes until no move improves modularity.
pub fn louvain(adj: &[Vec<UserId>]) -> Result<CommunityPartition> {
    let two_m: f64 = adj.iter().map(|a| a.len() as f64).sum();
    if two_m == 0.0 {
        return invalid("louvain needs at least one edge");
    }
    let n = adj.len();
    let mut node_comm: Vec<usize> = (0..n).collect();
    let mut g = WGraph {
        adj: adj.iter().map(|a| a.iter().map(|&v| (v as usize, 1.0)).collect()).collect(),
        self_w: vec![0.0; n],
    };
    loop {
        let k = g.adj.len();
        let mut comm: Vec<usize> = (0..k).collect();
        if !local_moves(&g, &mut comm, two_m) {
            break;
        }
        let mut ids: Vec<Option<usize>> = vec![None; k];
        let mut next = 0;
        for c in comm.iter_mut() {
            *c = *ids[*c].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
        }
        for nc in node_comm.iter_mut() {
            *nc = comm[*nc];
        }
        let mut self_w = vec![0.0; next];
        let mut agg: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); next];
        for v in 0..k {
            self_w[comm[v]] += g.self_w[v];
            for &(u, w) in &g.adj[v] {
                if comm[u] == comm[v] {
                    self_w[comm[v]] += w;
                } else {
                    *agg[comm[v]].entry(comm[u]).or_default() += w;
                }
            }
        }
        g = WGraph { adj: agg.into_iter().map(|m| m.into_iter().collect()).collect(), self_w };
        if next == k {
            break;
        }
    }
    Ok(CommunityPartition::from_assignment(&node_comm, adj))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster squared distance after every assignment step.
    pub objective_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with farthest-point seeding from a random first point.
/// Ties go to the lower cluster id; an emptied cluster is re-seeded at the
/// point farthest from its current centroid.
pub fn kmeans(emb: &EmbeddingTable, n_c: usize, max_iters: usize, seed: SeedStream) -> Result<Clustering> {
    if n_c < 1 {
        return invalid("need at least one cluster");
    }
    if n_c > emb.rows {
        return invalid(format!("{n_c} clusters for {} points", emb.rows));
    }
    let n = emb.rows;
    let mut rng = seed.rng();
    let first = rng.gen_range(0..n);
    let mut centroids: Vec<Vec<f64>> = vec![emb.row(first).to_vec()];
    let mut nearest: Vec<f64> = (0..n).map(|p| sq_dist(emb.row(p), &centroids[0])).collect();
    while centroids.len() < n_c {
        let mut far = 0;
        for p in 1..n {
            if nearest[p] > nearest[far] {
                far = p;
            }
        }
        centroids.push(emb.row(far).to_vec());
        let c = centroids.last().expect("just pushed");
        for p in 0..n {
            nearest[p] = nearest[p].min(sq_dist(emb.row(p), c));
        }
    }
    let assign = |centroids: &[Vec<f64>], assignment: &mut Vec<usize>| -> f64 {
        let mut obj = 0.0;
        for p in 0..n {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (c, cen) in centroids.iter().enumerate() {
                let dist = sq_dist(emb.row(p), cen);
                if dist < best_d {
                    best = c;
                    best_d = dist;
                }
            }
            assignment[p] = best;
            obj += best_d;
        }
        obj
    };
    let mut assignment = vec![0usize; n];
    let mut trace = vec![assign(&centroids, &mut assignment)];
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; emb.dim]; n_c];
        let mut counts = vec![0usize; n_c];
        for p in 0..n {
            counts[assignment[p]] += 1;
            for (s, v) in sums[assignment[p]].iter_mut().zip(emb.row(p)) {
                *s += v;
            }
        }
        for c in 0..n_c {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..n_c {
            if counts[c] == 0 {
                let mut far = 0;
                let mut far_d = -1.0;
                for p in 0..n {
                    let dist = sq_dist(emb.row(p), &centroids[assignment[p]]);
                    if dist > far_d {
                        far = p;
                        far_d = dist;
                    }
                }
                centroids[c] = emb.row(far).to_vec();
            }
        }
        let before = assignment.clone();
        let obj = assign(&centroids, &mut assignment);
        trace.push(obj);
        if assignment == before {
            break;
        }
    }
    Ok(Clustering { assignment, centroids, objective_trace: trace })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub skipgram: SkipGramConfig,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub kmeans_iters: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig { skipgram: SkipGramConfig::default(), walks_per_node: 10, walk_length: 40, kmeans_iters: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionResult {
    /// K-means assignment over walk embeddings.
    pub partition: CommunityPartition,
    /// The Louvain partition that fixed the community count.
    pub louvain: CommunityPartition,
    pub embeddings: EmbeddingTable,
}

/// Louvain fixes `n_c` (counting only communities with at least two
/// members, so isolated users do not inflate it); K-means over DeepWalk
/// embeddings then assigns every user.
pub fn partition(nodes: usize, edges: &[(UserId, UserId)], cfg: &PartitionConfig, seed: SeedStream) -> Result<PartitionResult> {
    let adj = adjacency(nodes, edges);
    let louvain = louvain(&adj)?;
    let n_c = louvain.rosters.iter().filter(|r| r.len() >= 2).count().clamp(1, nodes);
    let corpus = random_walks(&adj, cfg.walks_per_node, cfg.walk_length, seed.derive("walks"))?;
    let embeddings = skipgram_train(&corpus, &cfg.skipgram, seed.derive("skipgram"))?;
    let clustering = kmeans(&embeddings, n_c, cfg.kmeans_iters, seed.derive("kmeans"))?;
    let partition = CommunityPartition::from_assignment(&clustering.assignment, &adj);
    Ok(PartitionResult { partition, louvain, embeddings })
}
