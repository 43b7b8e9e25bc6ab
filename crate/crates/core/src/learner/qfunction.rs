use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::{Features, Transition};
use super::LearnerError;
use crate::gridworld::{encode_observation, tabular_key, EnvConfig, EnvError, GridState, StateKey, NUM_ACTIONS};
use crate::nn::{relu_backward_in_place, relu_in_place, Adam, Dense, Parameters};
use crate::scalar::Scalar;

pub type ActionValues<T> = [T; NUM_ACTIONS];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Tabular,
    Neural,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Tabular => "tabular",
            Backend::Neural => "neural",
        })
    }
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tabular" => Ok(Backend::Tabular),
            "neural" => Ok(Backend::Neural),
            other => Err(format!("unknown backend '{other}' (expected tabular|neural)")),
        }
    }
}

/// Sparse state-action table; unseen states read as all zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TabularQ<T> {
    pub table: HashMap<StateKey, ActionValues<T>>,
}

impl<T: Scalar> TabularQ<T> {
    pub fn new() -> Self {
        TabularQ {
            table: HashMap::new(),
        }
    }

    pub fn values(&self, key: &StateKey) -> ActionValues<T> {
        self.table
            .get(key)
            .copied()
            .unwrap_or([T::zero(); NUM_ACTIONS])
    }

    /// Entries in ascending key order.
    pub fn sorted_entries(&self) -> Vec<(StateKey, ActionValues<T>)> {
        let mut entries: Vec<_> = self.table.iter().map(|(k, v)| (*k, *v)).collect();
        entries.sort_by_key(|(k, _)| *k);
        entries
    }

    /// Sequential per-transition update `Q[s][a] += lr * (target - Q[s][a])`.
    /// With no separate target table, targets bootstrap from `self`.
    /// Returns the mean squared TD error measured before each update.
    pub fn learn_step(
        &mut self,
        target: Option<&TabularQ<T>>,
        batch: &[Transition],
        gamma: T,
        learning_rate: T,
    ) -> Result<T, LearnerError> {
        if batch.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        let mut total = T::zero();
        for t in batch {
            let (Features::Tabular(key), Features::Tabular(next_key)) = (&t.obs, &t.next_obs) else {
                return Err(LearnerError::FeatureMismatch);
            };
            let bootstrap = if t.terminal {
                T::zero()
            } else {
                let next = match target {
                    Some(tq) => tq.values(next_key),
                    None => self.values(next_key),
                };
                max_value(&next)
            };
            let y = T::from_f64_lossy(t.reward) + gamma * bootstrap;
            let row = self.table.entry(*key).or_insert([T::zero(); NUM_ACTIONS]);
            let err = y - row[t.action.index()];
            row[t.action.index()] = row[t.action.index()] + learning_rate * err;
            total = total + err * err;
        }
        let loss = total / T::from_usize(batch.len()).unwrap();
        if !loss.is_finite() {
            return Err(LearnerError::NonFiniteLoss);
        }
        Ok(loss)
    }
}

pub fn max_value<T: Scalar>(values: &[T]) -> T {
    values
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Feed-forward action-value network over the flattened observation:
/// `obs -> hidden -> hidden -> 7`, rectified hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralQ<T> {
    pub input: Dense<T>,
    pub hidden: Dense<T>,
    pub output: Dense<T>,
}

/// Activations kept for the backward pass.
struct Trace<T> {
    active: Vec<usize>,
    h1: Vec<T>,
    h2: Vec<T>,
    q: Vec<T>,
}

impl<T: Scalar> NeuralQ<T> {
    pub fn new<R: Rng + ?Sized>(obs_len: usize, hidden: usize, rng: &mut R) -> Self {
        NeuralQ {
            input: Dense::uniform(obs_len, hidden, rng),
            hidden: Dense::uniform(hidden, hidden, rng),
            output: Dense::uniform(hidden, NUM_ACTIONS, rng),
        }
    }

    pub fn zeros(obs_len: usize, hidden: usize) -> Self {
        NeuralQ {
            input: Dense::zeros(obs_len, hidden),
            hidden: Dense::zeros(hidden, hidden),
            output: Dense::zeros(hidden, NUM_ACTIONS),
        }
    }

    pub fn obs_len(&self) -> usize {
        self.input.in_dim
    }

    fn trace(&self, active: Vec<usize>) -> Trace<T> {
        let mut h1 = vec![T::zero(); self.input.out_dim];
        self.input.forward_binary(&active, &mut h1);
        relu_in_place(&mut h1);
        let mut h2 = vec![T::zero(); self.hidden.out_dim];
        self.hidden.forward(&h1, &mut h2);
        relu_in_place(&mut h2);
        let mut q = vec![T::zero(); NUM_ACTIONS];
        self.output.forward(&h2, &mut q);
        Trace { active, h1, h2, q }
    }

    fn active_inputs(&self, f: &Features) -> Vec<usize> {
        match f {
            Features::Dense(obs) => {
                debug_assert_eq!(obs.len(), self.obs_len());
                obs.active().collect()
            }
            Features::Tabular(_) => panic!("neural backend fed tabular features"),
        }
    }

    pub fn values(&self, f: &Features) -> ActionValues<T> {
        let tr = self.trace(self.active_inputs(f));
        let mut out = [T::zero(); NUM_ACTIONS];
        out.copy_from_slice(&tr.q);
        out
    }

    /// Mean squared error between `q(obs)[action]` and fixed TD targets
    /// built from `target`, plus its gradient with respect to `self`.
    pub fn loss_and_grad(
        &self,
        target: &NeuralQ<T>,
        batch: &[Transition],
        gamma: T,
    ) -> (T, NeuralQ<T>) {
        let targets: Vec<T> = batch
            .iter()
            .map(|t| neural_td_target(t, target, gamma))
            .collect();
        self.loss_and_grad_for_targets(batch, &targets)
    }

    pub fn loss_for_targets(&self, batch: &[Transition], targets: &[T]) -> T {
        let n = T::from_usize(batch.len()).unwrap();
        batch
            .iter()
            .zip(targets)
            .map(|(t, &y)| {
                let q = self.values(&t.obs)[t.action.index()];
                (q - y) * (q - y)
            })
            .fold(T::zero(), |a, b| a + b)
            / n
    }

    pub fn loss_and_grad_for_targets(&self, batch: &[Transition], targets: &[T]) -> (T, NeuralQ<T>) {
        let mut grad = NeuralQ::zeros(self.obs_len(), self.input.out_dim);
        let n = T::from_usize(batch.len()).unwrap();
        let two = T::from_f64_lossy(2.0);
        let mut loss = T::zero();
        for (t, &y) in batch.iter().zip(targets) {
            let tr = self.trace(self.active_inputs(&t.obs));
            let a = t.action.index();
            let err = tr.q[a] - y;
            loss = loss + err * err;

            let mut g_q = vec![T::zero(); NUM_ACTIONS];
            g_q[a] = two * err / n;
            let mut g_h2 = vec![T::zero(); self.hidden.out_dim];
            self.output.backward(&tr.h2, &g_q, &mut grad.output, Some(&mut g_h2));
            relu_backward_in_place(&tr.h2, &mut g_h2);
            let mut g_h1 = vec![T::zero(); self.input.out_dim];
            self.hidden.backward(&tr.h1, &g_h2, &mut grad.hidden, Some(&mut g_h1));
            relu_backward_in_place(&tr.h1, &mut g_h1);
            self.input.backward_binary(&tr.active, &g_h1, &mut grad.input);
        }
        (loss / n, grad)
    }

    /// One Adam step on the batch; returns the pre-step loss.
    pub fn learn_step(
        &mut self,
        target: &NeuralQ<T>,
        batch: &[Transition],
        gamma: T,
        optimizer: &mut Adam<T>,
    ) -> Result<T, LearnerError> {
        if batch.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        let (loss, grad) = self.loss_and_grad(target, batch, gamma);
        if !loss.is_finite() {
            return Err(LearnerError::NonFiniteLoss);
        }
        optimizer.step(self, &grad);
        Ok(loss)
    }
}

fn neural_td_target<T: Scalar>(t: &Transition, target: &NeuralQ<T>, gamma: T) -> T {
    let r = T::from_f64_lossy(t.reward);
    if t.terminal {
        r
    } else {
        r + gamma * max_value(&target.values(&t.next_obs))
    }
}

impl<T: Scalar> Parameters<T> for NeuralQ<T> {
    fn param_groups(&self) -> Vec<&[T]> {
        vec![
            &self.input.weights,
            &self.input.bias,
            &self.hidden.weights,
            &self.hidden.bias,
            &self.output.weights,
            &self.output.bias,
        ]
    }

    fn param_groups_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.input.weights,
            &mut self.input.bias,
            &mut self.hidden.weights,
            &mut self.hidden.bias,
            &mut self.output.weights,
            &mut self.output.bias,
        ]
    }
}

/// Action-value function behind either backend.
#[derive(Debug, Clone, PartialEq)]
pub enum QFunction<T> {
    Tabular(TabularQ<T>),
    Neural(NeuralQ<T>),
}

impl<T: Scalar> QFunction<T> {
    pub fn fresh<R: Rng + ?Sized>(backend: Backend, env: &EnvConfig, hidden: usize, rng: &mut R) -> Self {
        match backend {
            Backend::Tabular => QFunction::Tabular(TabularQ::new()),
            Backend::Neural => QFunction::Neural(NeuralQ::new(env.observation_len(), hidden, rng)),
        }
    }

    pub fn backend(&self) -> Backend {
        match self {
            QFunction::Tabular(_) => Backend::Tabular,
            QFunction::Neural(_) => Backend::Neural,
        }
    }

    pub fn features(&self, state: &GridState) -> Result<Features, EnvError> {
        Ok(match self {
            QFunction::Tabular(_) => Features::Tabular(tabular_key(state)?),
            QFunction::Neural(_) => Features::Dense(encode_observation(state)),
        })
    }

    pub fn values(&self, f: &Features) -> ActionValues<T> {
        match (self, f) {
            (QFunction::Tabular(t), Features::Tabular(k)) => t.values(k),
            (QFunction::Neural(n), Features::Dense(_)) => n.values(f),
            _ => panic!("features do not match the {} backend", self.backend()),
        }
    }

    pub fn greedy(&self, f: &Features) -> usize {
        argmax(&self.values(f))
    }
}
