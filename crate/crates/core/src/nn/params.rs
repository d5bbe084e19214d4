use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{label, stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Param {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
    #[serde(skip)]
    grad: Vec<f32>,
}

/// Named parameter tensors with gradient buffers.
///
/// Initial values are drawn from a stream keyed by `(seed, name)`, so two
/// models that share a seed agree on every parameter they have in common.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        let n = data.len();
        self.params.push(Param {
            name: name.to_string(),
            shape,
            data,
            grad: vec![0.0; n],
        });
        self.by_name.insert(name.to_string(), self.params.len() - 1);
        Ok(ParamId(self.params.len() - 1))
    }

    /// He-normal weights with the given fan-in.
    pub fn he_normal(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, seed: u64) -> Result<ParamId> {
        self.normal(name, shape, (2.0 / fan_in as f64).sqrt(), seed)
    }

    pub fn normal(&mut self, name: &str, shape: Vec<usize>, std: f64, seed: u64) -> Result<ParamId> {
        let n = shape.iter().product();
        let mut rng = stream(seed, Stream::Init, &[label(name)]);
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..n).map(|_| dist.sample(&mut rng) as f32).collect();
        self.insert(name, shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, value: f32) -> Result<ParamId> {
        let n = shape.iter().product();
        self.insert(name, shape, vec![value; n])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.params[id.0].shape
    }

    pub fn value(&self, id: ParamId) -> &[f32] {
        &self.params[id.0].data
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.params[id.0].data
    }

    pub fn grad(&self, id: ParamId) -> &[f32] {
        &self.params[id.0].grad
    }

    pub(crate) fn add_grad(&mut self, id: ParamId, g: &[f32]) {
        for (a, b) in self.params[id.0].grad.iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f32) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// `(name, shape)` pairs in name order.
    pub fn signature(&self) -> Vec<(String, Vec<usize>)> {
        self.by_name
            .keys()
            .map(|n| (n.clone(), self.params[self.by_name[n]].shape.clone()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.iter().all(|v| v.is_finite()))
    }

    /// Named tensors for serialization.
    pub fn export(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                data: p.data.clone(),
            })
            .collect()
    }

    /// Overwrite values from serialized tensors; names and shapes must match exactly.
    pub fn import(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                self.params.len()
            )));
        }
        for t in tensors {
            let id = self
                .id(&t.name)
                .ok_or_else(|| Error::Data(format!("unexpected parameter {}", t.name)))?;
            if self.shape(id) != t.shape.as_slice() || t.data.len() != self.value(id).len() {
                return Err(Error::Data(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    t.name,
                    t.shape,
                    self.shape(id)
                )));
            }
            self.value_mut(id).copy_from_slice(&t.data);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer over a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let m: Vec<Vec<f32>> = store.params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        Adam {
            cfg,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let lr_t = self.cfg.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let (b1, b2, lr_t, eps) = (b1 as f32, b2 as f32, lr_t as f32, self.cfg.eps as f32);
        for (k, p) in store.params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.data.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                p.data[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_names_share_initial_values() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let ia = a.he_normal("backbone.stem.w", vec![4, 3], 3, 11).unwrap();
        b.he_normal("heads.other.w", vec![2, 2], 2, 11).unwrap();
        let ib = b.he_normal("backbone.stem.w", vec![4, 3], 3, 11).unwrap();
        assert_eq!(a.value(ia), b.value(ib));
        assert!(a.constant("backbone.stem.w", vec![1], 0.0).is_err());
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut s = ParamStore::new();
        let id = s.constant("x", vec![2], 3.0).unwrap();
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..Default::default()
            },
            &s,
        );
        for _ in 0..500 {
            s.zero_grads();
            let g: Vec<f32> = s.value(id).iter().map(|x| 2.0 * (x - 1.0)).collect();
            s.add_grad(id, &g);
            opt.step(&mut s);
        }
        for &x in s.value(id) {
            assert!((x - 1.0).abs() < 1e-2, "{x}");
        }
    }
}
