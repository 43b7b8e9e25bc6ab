use rand::Rng;

use crate::gridworld::{Action, Observation, StateKey};

/// State representation consumed by a Q-function backend.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Features {
    Tabular(StateKey),
    Dense(Observation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Features,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Features,
    pub terminal: bool,
}

/// Fixed-capacity FIFO of transitions with uniform sampling (with
/// replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.items[rng.gen_range(0..self.items.len())].clone())
            .collect()
    }

    /// Oldest-first view, for tests and diagnostics.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }
}
