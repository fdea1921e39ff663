//! Sparse graphs and the propagation rules of the graph-based targets.
//!
//! Embedding matrices are flat row-major `rows x dim` slices.

use crate::data::{ItemId, UserId};

/// Compressed adjacency lists with ascending neighbours.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    pub(crate) fn from_pairs(rows: usize, pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut pairs: Vec<(u32, u32)> = pairs.into_iter().collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut offsets = vec![0usize; rows + 1];
        for &(r, _) in &pairs {
            offsets[r as usize + 1] += 1;
        }
        for r in 0..rows {
            offsets[r + 1] += offsets[r];
        }
        Csr { offsets, targets: pairs.into_iter().map(|(_, t)| t).collect() }
    }

    pub(crate) fn row(&self, r: usize) -> &[u32] {
        &self.targets[self.offsets[r]..self.offsets[r + 1]]
    }

    pub(crate) fn degree(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }
}

/// User-item bipartite graph plus the undirected social graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub(crate) users: usize,
    pub(crate) items: usize,
    pub(crate) ui: Csr,
    pub(crate) iu: Csr,
    pub(crate) uu: Csr,
}

impl Graph {
    pub fn build(
        users: usize,
        items: usize,
        interactions: &[(UserId, ItemId)],
        social: &[(UserId, UserId)],
    ) -> Self {
        let ui = Csr::from_pairs(users, interactions.iter().copied());
        let iu = Csr::from_pairs(items, interactions.iter().map(|&(u, i)| (i, u)));
        let uu = Csr::from_pairs(
            users,
            social.iter().filter(|(a, b)| a != b).flat_map(|&(a, b)| [(a, b), (b, a)]),
        );
        Graph { users, items, ui, iu, uu }
    }

    pub fn user_count(&self) -> usize {
        self.users
    }

    pub fn item_count(&self) -> usize {
        self.items
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn row(m: &[f64], r: usize, d: usize) -> &[f64] {
    &m[r * d..(r + 1) * d]
}

/// Symmetric-normalized propagation (LightGCN style) with the social
/// channel averaged into each user layer. Final embeddings are the mean of
/// layers `0..=depth`. The map is linear in the base embeddings.
pub fn propagate(g: &Graph, eu: &[f64], ei: &[f64], dim: usize, depth: usize) -> (Vec<f64>, Vec<f64>) {
    let (mut hu, mut hi) = (eu.to_vec(), ei.to_vec());
    let (mut su, mut si) = (eu.to_vec(), ei.to_vec());
    for _ in 0..depth {
        let (nu, ni) = lgn_layer(g, &hu, &hi, dim);
        axpy(&mut su, 1.0, &nu);
        axpy(&mut si, 1.0, &ni);
        hu = nu;
        hi = ni;
    }
    let scale = 1.0 / (depth + 1) as f64;
    su.iter_mut().for_each(|v| *v *= scale);
    si.iter_mut().for_each(|v| *v *= scale);
    (su, si)
}

fn lgn_layer(g: &Graph, hu: &[f64], hi: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nu = vec![0.0; hu.len()];
    let mut ni = vec![0.0; hi.len()];
    for u in 0..g.users {
        let (du, su) = (g.ui.degree(u), g.uu.degree(u));
        let out = &mut nu[u * d..(u + 1) * d];
        if du == 0 && su == 0 {
            out.copy_from_slice(row(hu, u, d));
            continue;
        }
        let channels = f64::from(u8::from(du > 0) + u8::from(su > 0));
        for &i in g.ui.row(u) {
            let w = 1.0 / (channels * ((du * g.iu.degree(i as usize)) as f64).sqrt());
            axpy(out, w, row(hi, i as usize, d));
        }
        for &v in g.uu.row(u) {
            let w = 1.0 / (channels * ((su * g.uu.degree(v as usize)) as f64).sqrt());
            axpy(out, w, row(hu, v as usize, d));
        }
    }
    for i in 0..g.items {
        let di = g.iu.degree(i);
        let out = &mut ni[i * d..(i + 1) * d];
        if di == 0 {
            out.copy_from_slice(row(hi, i, d));
            continue;
        }
        for &u in g.iu.row(i) {
            let w = 1.0 / ((di * g.ui.degree(u as usize)) as f64).sqrt();
            axpy(out, w, row(hu, u as usize, d));
        }
    }
    (nu, ni)
}

/// Transpose of [`lgn_layer`] applied to gradients.
fn lgn_layer_transpose(g: &Graph, gu: &[f64], gi: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pu = vec![0.0; gu.len()];
    let mut pi = vec![0.0; gi.len()];
    for u in 0..g.users {
        let (du, su) = (g.ui.degree(u), g.uu.degree(u));
        let src = row(gu, u, d);
        if du == 0 && su == 0 {
            axpy(&mut pu[u * d..(u + 1) * d], 1.0, src);
            continue;
        }
        let channels = f64::from(u8::from(du > 0) + u8::from(su > 0));
        for &i in g.ui.row(u) {
            let i = i as usize;
            let w = 1.0 / (channels * ((du * g.iu.degree(i)) as f64).sqrt());
            axpy(&mut pi[i * d..(i + 1) * d], w, src);
        }
        for &v in g.uu.row(u) {
            let v = v as usize;
            let w = 1.0 / (channels * ((su * g.uu.degree(v)) as f64).sqrt());
            axpy(&mut pu[v * d..(v + 1) * d], w, src);
        }
    }
    for i in 0..g.items {
        let di = g.iu.degree(i);
        let src = row(gi, i, d);
        if di == 0 {
            axpy(&mut pi[i * d..(i + 1) * d], 1.0, src);
            continue;
        }
        for &u in g.iu.row(i) {
            let u = u as usize;
            let w = 1.0 / ((di * g.ui.degree(u)) as f64).sqrt();
            axpy(&mut pu[u * d..(u + 1) * d], w, src);
        }
    }
    (pu, pi)
}

/// Gradient of the layer-mean output of [`propagate`] w.r.t. the base
/// embeddings.
pub(crate) fn propagate_backward(g: &Graph, gzu: &[f64], gzi: &[f64], dim: usize, depth: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / (depth + 1) as f64;
    let gu_layer: Vec<f64> = gzu.iter().map(|v| v * scale).collect();
    let gi_layer: Vec<f64> = gzi.iter().map(|v| v * scale).collect();
    let (mut au, mut ai) = (gu_layer.clone(), gi_layer.clone());
    for _ in 0..depth {
        let (pu, pi) = lgn_layer_transpose(g, &au, &ai, dim);
        au = pu;
        ai = pi;
        axpy(&mut au, 1.0, &gu_layer);
        axpy(&mut ai, 1.0, &gi_layer);
    }
    (au, ai)
}

const NORM_FLOOR: f64 = 1e-12;

/// Intermediate values of the SAGE-lite forward pass.
pub(crate) struct SageTape {
    /// Per layer `1..=depth`: unnormalized aggregate and its norm, for users
    /// and items.
    zu: Vec<Vec<f64>>,
    zi: Vec<Vec<f64>>,
    nu: Vec<Vec<f64>>,
    ni: Vec<Vec<f64>>,
    /// Per layer `0..=depth` outputs.
    hu: Vec<Vec<f64>>,
    hi: Vec<Vec<f64>>,
}

impl SageTape {
    pub(crate) fn user_out(&self) -> &[f64] {
        self.hu.last().expect("tape has layer 0")
    }

    pub(crate) fn item_out(&self) -> &[f64] {
        self.hi.last().expect("tape has layer 0")
    }
}

fn normalize_rows(z: &[f64], d: usize) -> (Vec<f64>, Vec<f64>) {
    let rows = z.len() / d;
    let mut out = vec![0.0; z.len()];
    let mut norms = vec![0.0; rows];
    for r in 0..rows {
        let zr = row(z, r, d);
        let n = zr.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
        norms[r] = n;
        for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(zr) {
            *o = v / n;
        }
    }
    (out, norms)
}

/// Mean aggregation with per-layer L2 normalization. A user combines its own
/// state with the mean of its items and the mean of its friends; an item
/// takes the mean of its users, or keeps its own state when it has none.
pub(crate) fn sage_forward(g: &Graph, eu: &[f64], ei: &[f64], d: usize, depth: usize) -> SageTape {
    let mut tape = SageTape {
        zu: Vec::new(),
        zi: Vec::new(),
        nu: Vec::new(),
        ni: Vec::new(),
        hu: vec![eu.to_vec()],
        hi: vec![ei.to_vec()],
    };
    for _ in 0..depth {
        let (hu, hi) = (tape.hu.last().unwrap(), tape.hi.last().unwrap());
        let mut zu = hu.clone();
        for u in 0..g.users {
            let out = &mut zu[u * d..(u + 1) * d];
            let items = g.ui.row(u);
            if !items.is_empty() {
                let w = 1.0 / items.len() as f64;
                for &i in items {
                    axpy(out, w, row(hi, i as usize, d));
                }
            }
            let friends = g.uu.row(u);
            if !friends.is_empty() {
                let w = 1.0 / friends.len() as f64;
                for &v in friends {
                    axpy(out, w, row(hu, v as usize, d));
                }
            }
        }
        let mut zi = vec![0.0; hi.len()];
        for i in 0..g.items {
            let out = &mut zi[i * d..(i + 1) * d];
            let users = g.iu.row(i);
            if users.is_empty() {
                out.copy_from_slice(row(hi, i, d));
            } else {
                let w = 1.0 / users.len() as f64;
                for &u in users {
                    axpy(out, w, row(hu, u as usize, d));
                }
            }
        }
        let (yu, nu) = normalize_rows(&zu, d);
        let (yi, ni) = normalize_rows(&zi, d);
        tape.zu.push(zu);
        tape.zi.push(zi);
        tape.nu.push(nu);
        tape.ni.push(ni);
        tape.hu.push(yu);
        tape.hi.push(yi);
    }
    tape
}

fn normalize_backward(y: &[f64], norms: &[f64], g: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for (r, &n) in norms.iter().enumerate() {
        let (yr, gr) = (row(y, r, d), row(g, r, d));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in out[r * d..(r + 1) * d].iter_mut().zip(yr).zip(gr) {
            *o = (gv - yv * dot) / n;
        }
    }
    out
}

pub(crate) fn sage_backward(
    g: &Graph,
    tape: &SageTape,
    gu_out: &[f64],
    gi_out: &[f64],
    d: usize,
) -> (Vec<f64>, Vec<f64>) {
    let (mut gu, mut gi) = (gu_out.to_vec(), gi_out.to_vec());
    for l in (0..tape.zu.len()).rev() {
        let dzu = normalize_backward(&tape.hu[l + 1], &tape.nu[l], &gu, d);
        let dzi = normalize_backward(&tape.hi[l + 1], &tape.ni[l], &gi, d);
        let mut pu = dzu.clone();
        let mut pi = vec![0.0; gi.len()];
        for u in 0..g.users {
            let src = row(&dzu, u, d);
            let items = g.ui.row(u);
            if !items.is_empty() {
                let w = 1.0 / items.len() as f64;
                for &i in items {
                    let i = i as usize;
                    axpy(&mut pi[i * d..(i + 1) * d], w, src);
                }
            }
            let friends = g.uu.row(u);
            if !friends.is_empty() {
                let w = 1.0 / friends.len() as f64;
                for &v in friends {
                    let v = v as usize;
                    axpy(&mut pu[v * d..(v + 1) * d], w, src);
                }
            }
        }
        for i in 0..g.items {
            let src = row(&dzi, i, d);
            let users = g.iu.row(i);
            if users.is_empty() {
                axpy(&mut pi[i * d..(i + 1) * d], 1.0, src);
            } else {
                let w = 1.0 / users.len() as f64;
                for &u in users {
                    let u = u as usize;
                    axpy(&mut pu[u * d..(u + 1) * d], w, src);
                }
            }
        }
        gu = pu;
        gi = pi;
    }
    (gu, gi)
}
