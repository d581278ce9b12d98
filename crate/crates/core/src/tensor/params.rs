//! Named parameter storage shared by model layers and optimizers.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Vec<f32>,
    /// Trainable parameters receive gradients and optimizer updates.
    /// Non-trainable entries (running statistics) are state carried in
    /// checkpoints but excluded from parameter counts.
    pub trainable: bool,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

pub type ParamId = usize;

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f32>, trainable: bool) -> ParamId {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "{name}: shape/data mismatch");
        let grad = vec![0.0; if trainable { numel } else { 0 }];
        self.params.push(Param { name: name.to_string(), shape, data, grad, trainable });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total element count over trainable parameters.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.numel()).sum()
    }

    /// Global L2 norm of all trainable gradients, accumulated in f64.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.iter())
            .map(|&g| g as f64 * g as f64)
            .sum::<f64>()
            .sqrt()
    }

    pub fn grads_finite(&self) -> bool {
        self.params.iter().all(|p| p.grad.iter().all(|g| g.is_finite()))
    }

    /// Snapshot of trainable parameter values, for save/perturb/restore.
    pub fn snapshot(&self) -> Vec<Vec<f32>> {
        self.params
            .iter()
            .map(|p| if p.trainable { p.data.clone() } else { Vec::new() })
            .collect()
    }

    pub fn restore(&mut self, snap: &[Vec<f32>]) -> Result<()> {
        if snap.len() != self.params.len() {
            return Err(Error::Contract("snapshot size mismatch".into()));
        }
        for (p, s) in self.params.iter_mut().zip(snap) {
            if p.trainable {
                p.data.copy_from_slice(s);
            }
        }
        Ok(())
    }
}

/// Kaiming-uniform initialization for weights feeding ReLU stacks:
/// bound = sqrt(6 / fan_in).
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f32> {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Small-variance normal init for embeddings and the class token.
pub fn normal_init(rng: &mut ChaCha8Rng, std: f32, n: usize) -> Vec<f32> {
    use rand_distr::Distribution;
    let dist = rand_distr::Normal::new(0.0f32, std).unwrap();
    (0..n).map(|_| dist.sample(rng)).collect()
}
