use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::approx::StateEncoding;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: StateEncoding,
    pub a: usize,
    pub r: f64,
    pub s_next: StateEncoding,
    pub terminal: bool,
}

/// Ring buffer with uniform sampling (with replacement) from its own stream.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> ReplayBuffer {
        ReplayBuffer::with_rng(capacity, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uses `rng` for sampling, e.g. one stream of a shared seed.
    pub fn with_rng(capacity: usize, rng: ChaCha8Rng) -> ReplayBuffer {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { capacity, storage: Vec::with_capacity(capacity.min(1 << 16)), next: 0, rng }
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn sample(&mut self, batch: usize) -> Vec<Transition> {
        (0..batch).map(|_| self.storage[self.rng.random_range(0..self.storage.len())].clone()).collect()
    }
}
