//! Proportional prioritized replay on a sum tree.

use rand::Rng;

use crate::error::{Error, Result};

/// Added to every `|td error|` so no transition becomes unsampleable.
pub const PRIORITY_EPSILON: f64 = 1e-5;

/// Binary tree whose internal nodes hold the sum of their children.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut n = self.leaves + i;
        self.nodes[n] = value;
        while n > 1 {
            n /= 2;
            self.nodes[n] = self.nodes[2 * n] + self.nodes[2 * n + 1];
        }
    }

    /// Leaf whose cumulative range contains `mass`, clamped to a nonzero leaf.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut n = 1;
        while n < self.leaves {
            let left = self.nodes[2 * n];
            if mass < left || self.nodes[2 * n + 1] <= 0.0 {
                n *= 2;
            } else {
                mass -= left;
                n = 2 * n + 1;
            }
        }
        n - self.leaves
    }

    /// Largest relative deviation between a node and the sum of its children.
    pub fn consistency_error(&self) -> f64 {
        (1..self.leaves)
            .map(|n| {
                let s = self.nodes[2 * n] + self.nodes[2 * n + 1];
                (self.nodes[n] - s).abs() / s.abs().max(1e-300)
            })
            .fold(0.0, f64::max)
    }
}

/// `P(i) = p_i^alpha / sum_k p_k^alpha`.
pub fn sample_probability(priorities: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if priorities.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    if priorities.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::InvalidTensor("priorities must be positive and finite".into()));
    }
    let scaled: Vec<f64> = priorities.iter().map(|p| p.powf(alpha)).collect();
    let total: f64 = scaled.iter().sum();
    Ok(scaled.into_iter().map(|p| p / total).collect())
}

/// `(N P(i))^-beta`, normalized so the largest weight is 1.
pub fn importance_weights(probabilities: &[f64], buffer_len: usize, beta: f64) -> Vec<f64> {
    let raw: Vec<f64> = probabilities
        .iter()
        .map(|&p| (buffer_len as f64 * p).powf(-beta))
        .collect();
    let max = raw.iter().copied().fold(0.0, f64::max);
    raw.into_iter().map(|w| w / max).collect()
}

#[derive(Debug, Clone)]
pub struct SampledBatch<'a, T> {
    pub indices: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub items: Vec<&'a T>,
}

/// Ring buffer with proportional prioritization and stratified sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    alpha: f64,
    learn_start: usize,
    items: Vec<T>,
    next: usize,
    tree: SumTree,
    max_priority: f64,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize, alpha: f64, learn_start: usize) -> Self {
        Self {
            capacity,
            alpha,
            learn_start,
            items: Vec::with_capacity(capacity),
            next: 0,
            tree: SumTree::new(capacity),
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn ready(&self) -> bool {
        !self.items.is_empty() && self.items.len() >= self.learn_start
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    /// Raw priority of slot `i`.
    pub fn priority(&self, i: usize) -> f64 {
        self.tree.get(i).powf(1.0 / self.alpha)
    }

    /// Inserts at the current maximum priority, evicting the oldest item when full.
    pub fn push(&mut self, item: T) -> usize {
        let slot = self.next;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[slot] = item;
        }
        self.tree.set(slot, self.max_priority.powf(self.alpha));
        self.next = (slot + 1) % self.capacity;
        slot
    }

    /// Sampling probability of slot `i` under the current priorities.
    pub fn probability(&self, i: usize) -> f64 {
        self.tree.get(i) / self.tree.total()
    }

    /// One draw from each of `batch` equal slices of the cumulative priority mass.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<SampledBatch<'_, T>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        if self.items.len() < self.learn_start {
            return Err(Error::NotReady {
                size: self.items.len(),
                learn_start: self.learn_start,
            });
        }
        let segment = self.tree.total() / batch as f64;
        let indices: Vec<usize> = (0..batch)
            .map(|k| {
                let mass = (k as f64 + rng.random::<f64>()) * segment;
                self.tree.find(mass).min(self.items.len() - 1)
            })
            .collect();
        Ok(SampledBatch {
            probabilities: indices.iter().map(|&i| self.probability(i)).collect(),
            items: indices.iter().map(|&i| &self.items[i]).collect(),
            indices,
        })
    }

    /// Sets slot priorities to `|td| + PRIORITY_EPSILON`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&i, &td) in indices.iter().zip(td_errors) {
            let p = td.abs() + PRIORITY_EPSILON;
            self.max_priority = self.max_priority.max(p);
            self.tree.set(i, p.powf(self.alpha));
        }
    }
}
