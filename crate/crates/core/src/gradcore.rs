//! A small dense-network stack with exact reverse-mode gradients, a masked
//! softmax, Adam, embedding tables and a JSON tensor archive.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::Rng;

static VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    /// Offset of the row-major `outputs x inputs` weight block; the bias
    /// follows immediately.
    offset: usize,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    fn len(&self) -> usize {
        self.weight_len() + self.outputs
    }
}

/// Affine layers with elementwise activations, parameters stored flat so a
/// single optimizer state covers the whole stack.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DenseStack {
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
    #[serde(skip, default = "next_version")]
    version: u64,
}

impl PartialEq for DenseStack {
    fn eq(&self, other: &Self) -> bool {
        self.shapes == other.shapes && self.params == other.params
    }
}

/// Values saved by [`DenseStack::forward`] for the matching backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

impl DenseStack {
    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer uses `output`. All parameters start at zero.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return invalid("a stack needs at least input and output dims, all positive");
        }
        let mut shapes = Vec::with_capacity(dims.len() - 1);
        let mut offset = 0;
        for (l, pair) in dims.windows(2).enumerate() {
            let activation = if l + 2 == dims.len() { output } else { hidden };
            let shape = LayerShape { inputs: pair[0], outputs: pair[1], activation, offset };
            offset += shape.len();
            shapes.push(shape);
        }
        Ok(DenseStack { shapes, params: vec![0.0; offset], version: next_version() })
    }

    /// He-style uniform init for weights, zero biases.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Result<Self> {
        let mut stack = Self::zeros(dims, hidden, output)?;
        for l in 0..stack.shapes.len() {
            let s = stack.shapes[l].clone();
            let bound = (6.0 / s.inputs as f64).sqrt();
            for w in &mut stack.params[s.offset..s.offset + s.weight_len()] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(stack)
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().map(|s| s.outputs).unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.shapes.len()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = next_version();
        &mut self.params
    }

    /// `(weight, bias)` of layer `l`, weight row-major `outputs x inputs`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let s = &self.shapes[l];
        let (w, b) = self.params[s.offset..s.offset + s.len()].split_at(s.weight_len());
        (w, b)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        self.version = next_version();
        let s = self.shapes[l].clone();
        self.params[s.offset..s.offset + s.len()].split_at_mut(s.weight_len())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim() {
            return invalid(format!("input has {} values, stack expects {}", input.len(), self.input_dim()));
        }
        let mut cache = ForwardCache { version: self.version, inputs: Vec::new(), pre: Vec::new() };
        let mut x = input.to_vec();
        for (l, s) in self.shapes.iter().enumerate() {
            let (w, b) = self.layer(l);
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * s.inputs..(o + 1) * s.inputs];
                *zo += row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            }
            let y = match s.activation {
                Activation::Identity => z.clone(),
                Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            };
            cache.inputs.push(std::mem::replace(&mut x, y));
            cache.pre.push(z);
        }
        Ok((x, cache))
    }

    /// Gradients of a scalar loss given `dL/d(output)`. Returns the flat
    /// parameter gradient (same layout as [`params`](Self::params)) and
    /// `dL/d(input)`.
    pub fn backward(&self, cache: &ForwardCache, out_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if cache.version != self.version || cache.pre.len() != self.shapes.len() {
            return Err(Error::InvalidState("forward cache does not match current parameters".into()));
        }
        if out_grad.len() != self.output_dim() {
            return invalid("output gradient has the wrong width");
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = out_grad.to_vec();
        for l in (0..self.shapes.len()).rev() {
            let s = &self.shapes[l];
            if s.activation == Activation::Relu {
                for (gi, &z) in g.iter_mut().zip(&cache.pre[l]) {
                    if z <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let x = &cache.inputs[l];
            let (w, _) = self.layer(l);
            let (gw, gb) = grads[s.offset..s.offset + s.len()].split_at_mut(s.weight_len());
            let mut gx = vec![0.0; s.inputs];
            for o in 0..s.outputs {
                let go = g[o];
                if go == 0.0 {
                    continue;
                }
                gb[o] = go;
                let row = &w[o * s.inputs..(o + 1) * s.inputs];
                for j in 0..s.inputs {
                    gw[o * s.inputs + j] = go * x[j];
                    gx[j] += go * row[j];
                }
            }
            g = gx;
        }
        Ok((grads, g))
    }
}

/// Softmax over unmasked entries; masked entries get probability exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let logp = masked_log_softmax(logits, mask)?;
    Ok(logp.iter().map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { l.exp() }).collect())
}

/// Log-probabilities under [`masked_softmax`]; masked entries are `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if logits.len() != mask.len() {
        return invalid("logits and mask lengths differ");
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return invalid("every softmax entry is masked");
    }
    let lse = max
        + logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&l, _)| (l - max).exp())
            .sum::<f64>()
            .ln();
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - lse } else { f64::NEG_INFINITY })
        .collect())
}

/// Adam with bias-corrected moments over a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return invalid("optimizer, parameter and gradient lengths differ");
        }
        if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::TrainingDivergence(format!("non-finite gradient at index {pos}")));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Row-major `rows x dim` matrix of embeddings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub rows: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        EmbeddingTable { rows, dim, values: vec![0.0; rows * dim] }
    }

    /// Gaussian entries with standard deviation `scale`.
    pub fn normal(rows: usize, dim: usize, scale: f64, rng: &mut Rng) -> Self {
        let values = (0..rows * dim)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        EmbeddingTable { rows, dim, values }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim);
        self.values.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named tensors, row-major f64, serialized as JSON.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TensorArchive {
    pub entries: BTreeMap<String, Tensor>,
}

impl TensorArchive {
    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.insert(name.into(), Tensor { shape, data });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).ok_or_else(|| Error::InvalidInput(format!("archive has no entry {name:?}")))
    }

    pub fn put_stack(&mut self, prefix: &str, stack: &DenseStack) {
        for (l, s) in stack.shapes.iter().enumerate() {
            let (w, b) = stack.layer(l);
            self.insert(format!("{prefix}.{l}.weight"), vec![s.outputs, s.inputs], w.to_vec());
            self.insert(format!("{prefix}.{l}.bias"), vec![s.outputs], b.to_vec());
        }
    }

    /// Loads weights into a stack whose shape is already known.
    pub fn fill_stack(&self, prefix: &str, stack: &mut DenseStack) -> Result<()> {
        for l in 0..stack.depth() {
            let w = self.get(&format!("{prefix}.{l}.weight"))?;
            let b = self.get(&format!("{prefix}.{l}.bias"))?;
            let (dw, db) = stack.layer_mut(l);
            if w.data.len() != dw.len() || b.data.len() != db.len() {
                return invalid(format!("archive layer {prefix}.{l} has the wrong shape"));
            }
            dw.copy_from_slice(&w.data);
            db.copy_from_slice(&b.data);
        }
        Ok(())
    }

    pub fn put_table(&mut self, name: &str, table: &EmbeddingTable) {
        self.insert(name, vec![table.rows, table.dim], table.values.clone());
    }

    pub fn table(&self, name: &str) -> Result<EmbeddingTable> {
        let t = self.get(name)?;
        if t.shape.len() != 2 {
            return invalid(format!("{name} is not a matrix"));
        }
        Ok(EmbeddingTable { rows: t.shape[0], dim: t.shape[1], values: t.data.clone() })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedStream;

    #[test]
    fn identity_layer_passes_input() {
        let mut s = DenseStack::zeros(&[3, 3], Activation::Identity, Activation::Identity).unwrap();
        let (w, _) = s.layer_mut(0);
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let (y, _) = s.forward(&[1.0, -2.0, 3.5]).unwrap();
        assert_eq!(y, vec![1.0, -2.0, 3.5]);
        assert!(s.forward(&[1.0]).is_err());
    }

    #[test]
    fn relu_on_negative_preactivations_is_zero() {
        let mut s = DenseStack::zeros(&[2, 2], Activation::Relu, Activation::Relu).unwrap();
        let (w, b) = s.layer_mut(0);
        w.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        b.copy_from_slice(&[-10.0, -10.0]);
        let (y, cache) = s.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
        let (g, gx) = s.backward(&cache, &[1.0, 1.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(gx, vec![0.0, 0.0]);
    }

    #[test]
    fn two_layer_hand_computed() {
        // layer0: W=[[1,2],[-1,1]], b=[0.5,-3], relu; layer1: W=[[2,-1]], b=[1]
        let mut s = DenseStack::zeros(&[2, 2, 1], Activation::Relu, Activation::Identity).unwrap();
        s.params_mut().copy_from_slice(&[1.0, 2.0, -1.0, 1.0, 0.5, -3.0, 2.0, -1.0, 1.0]);
        // x=[1,1]: z0=[3.5,-3] -> h=[3.5,0] -> y=2*3.5+1=8
        let (y, cache) = s.forward(&[1.0, 1.0]).unwrap();
        assert_eq!(y, vec![8.0]);
        let (g, gx) = s.backward(&cache, &[1.0]).unwrap();
        // dW1 = [3.5, 0], db1 = 1; dh = [2, -1] masked to [2, 0]
        assert_eq!(&g[6..], &[3.5, 0.0, 1.0]);
        assert_eq!(&g[..6], &[2.0, 2.0, 0.0, 0.0, 2.0, 0.0]);
        assert_eq!(gx, vec![2.0, 4.0]);
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let mut rng = SeedStream::new(3).rng();
        let s = DenseStack::new(&[3, 2], Activation::Identity, Activation::Identity, &mut rng).unwrap();
        let x = [0.3, -1.2, 2.0];
        let (_, cache) = s.forward(&x).unwrap();
        let (g, _) = s.backward(&cache, &[0.7, -0.4]).unwrap();
        for o in 0..2 {
            for j in 0..3 {
                let og = [0.7, -0.4][o];
                assert!((g[o * 3 + j] - og * x[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut s = DenseStack::zeros(&[2, 1], Activation::Identity, Activation::Identity).unwrap();
        let (_, cache) = s.forward(&[1.0, 1.0]).unwrap();
        s.params_mut()[0] = 1.0;
        assert!(matches!(s.backward(&cache, &[1.0]), Err(Error::InvalidState(_))));
        let other = s.clone();
        let (_, cache) = other.forward(&[1.0, 1.0]).unwrap();
        s.params_mut()[0] = 2.0;
        assert!(s.backward(&cache, &[1.0]).is_err());
    }

    #[test]
    fn masked_softmax_examples() {
        let p = masked_softmax(&[0.0; 3], &[true; 3]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(masked_softmax(&[0.0; 3], &[true, false, true]).unwrap(), vec![0.5, 0.0, 0.5]);
        let p = masked_softmax(&[2f64.ln(), 0.0, 0.0], &[true; 3]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        assert!(masked_softmax(&[1.0, 2.0], &[false, false]).is_err());
        let p = masked_softmax(&[1000.0, -1000.0, 999.0], &[true; 3]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn adam_examples() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![1.0, -1.0];
        adam.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -1.0]);
        assert_eq!(adam.step, 1);

        // one step on a scalar: m=0.1*g, v=0.001*g^2, corrected m=g, v=g^2,
        // update = lr * g / (|g| + eps)
        let mut adam = Adam::new(1, 0.01);
        let mut p = vec![0.5];
        adam.step(&mut p, &[2.0]).unwrap();
        let expected = 0.5 - 0.01 * 2.0 / (2.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);

        assert!(matches!(adam.step(&mut p, &[f64::NAN]), Err(Error::TrainingDivergence(_))));
    }

    #[test]
    fn archive_roundtrip_is_exact() {
        let mut rng = SeedStream::new(9).rng();
        let s = DenseStack::new(&[4, 3, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let t = EmbeddingTable::normal(5, 3, 0.1, &mut rng);
        let mut a = TensorArchive::default();
        a.put_stack("actor", &s);
        a.put_table("emb", &t);
        let back = TensorArchive::from_json(&a.to_json().unwrap()).unwrap();
        let mut s2 = DenseStack::zeros(&[4, 3, 2], Activation::Relu, Activation::Identity).unwrap();
        back.fill_stack("actor", &mut s2).unwrap();
        assert_eq!(s, s2);
        assert_eq!(back.table("emb").unwrap(), t);
    }
}
