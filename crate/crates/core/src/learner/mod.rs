//! Epsilon-greedy Q-learning over the gridworld with a sparse tabular
//! backend and a small dense network backend (replay buffer + target
//! network), plus snapshot persistence for warm starts.

mod qfunction;
mod replay;
mod snapshot;
mod stats;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{reset, Action, EnvConfig, EnvError, GridState, NUM_ACTIONS};
use crate::instructions::Instruction;
use crate::nn::Adam;
use crate::scalar::Scalar;

pub use qfunction::{argmax, max_value, ActionValues, Backend, NeuralQ, QFunction, TabularQ};
pub use replay::{Features, ReplayBuffer, Transition};
pub use snapshot::{
    json_hash, load_snapshot, save_snapshot, PolicySnapshot, SnapshotError, SnapshotHeader,
    SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
};
pub use stats::{CurvePoint, EpisodeRecord, SuccessWindow, TrainStats};

/// Exploration rate used by [`evaluate`].
pub const EVAL_EPSILON: f64 = 0.01;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("loss is not finite; training diverged")]
    NonFiniteLoss,
    #[error("learn_step called with an empty batch")]
    EmptyBatch,
    #[error("transition features do not match the backend")]
    FeatureMismatch,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("warm start mismatch: {0}")]
    InitMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub backend: Backend,
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub target_update_steps: usize,
    pub warmup_random_steps: usize,
    pub epsilon_start: f64,
    /// Starting exploration rate when warm-started from a snapshot.
    pub warm_start_epsilon: f64,
    pub epsilon_decay_steps: usize,
    pub epsilon_min: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub hidden_units: usize,
    pub max_train_steps: usize,
    pub success_threshold: f64,
    pub success_window: usize,
    pub min_steps_before_convergence: usize,
    pub stop_on_convergence: bool,
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::tabular()
    }
}

impl TrainConfig {
    /// Desk-scale tabular preset.
    pub fn tabular() -> Self {
        TrainConfig {
            backend: Backend::Tabular,
            gamma: 0.99,
            learning_rate: 0.1,
            adam_epsilon: 1.5e-4,
            target_update_steps: 8_000,
            warmup_random_steps: 0,
            epsilon_start: 1.0,
            warm_start_epsilon: 0.1,
            epsilon_decay_steps: 60_000,
            epsilon_min: 0.01,
            batch_size: 1,
            replay_capacity: 100_000,
            hidden_units: 128,
            max_train_steps: 300_000,
            success_threshold: 0.95,
            success_window: 100,
            min_steps_before_convergence: 60_000,
            stop_on_convergence: true,
            log_interval: 1_000,
        }
    }

    /// Dense-network preset with the full-scale DQN hyperparameters.
    pub fn neural() -> Self {
        TrainConfig {
            backend: Backend::Neural,
            learning_rate: 6.25e-5,
            warmup_random_steps: 10_000,
            epsilon_decay_steps: 1_000_000,
            batch_size: 32,
            max_train_steps: 1_000_000,
            min_steps_before_convergence: 1_000_000,
            ..TrainConfig::tabular()
        }
    }

    pub fn for_backend(backend: Backend) -> Self {
        match backend {
            Backend::Tabular => TrainConfig::tabular(),
            Backend::Neural => TrainConfig::neural(),
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |m: String| Err(LearnerError::InvalidConfig(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(self.epsilon_min > 0.0 && self.epsilon_min <= 1.0) {
            return bad(format!("epsilon_min must be in (0, 1], got {}", self.epsilon_min));
        }
        for (name, v) in [("epsilon_start", self.epsilon_start), ("warm_start_epsilon", self.warm_start_epsilon)] {
            if !(v >= self.epsilon_min && v <= 1.0) {
                return bad(format!("{name} must be in [epsilon_min, 1], got {v}"));
            }
        }
        if self.success_window == 0 {
            return bad("success_window must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.replay_capacity == 0 || self.log_interval == 0 {
            return bad("batch_size, replay_capacity and log_interval must be >= 1".into());
        }
        if self.backend == Backend::Neural && (self.hidden_units == 0 || self.target_update_steps == 0) {
            return bad("hidden_units and target_update_steps must be >= 1".into());
        }
        Ok(())
    }

    /// Exploration rate after `step` env steps: 1 during warmup, then a
    /// linear anneal from `epsilon_start` to `epsilon_min`.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        self.schedule(step, self.epsilon_start)
    }

    /// As [`TrainConfig::epsilon_at`], for a run warm-started from a
    /// snapshot: the schedule restarts from `warm_start_epsilon`.
    pub fn warm_epsilon_at(&self, step: usize) -> f64 {
        self.schedule(step, self.warm_start_epsilon)
    }

    fn schedule(&self, step: usize, start: f64) -> f64 {
        if step < self.warmup_random_steps {
            return 1.0;
        }
        let t = step - self.warmup_random_steps;
        if self.epsilon_decay_steps == 0 || t >= self.epsilon_decay_steps {
            return self.epsilon_min;
        }
        let frac = t as f64 / self.epsilon_decay_steps as f64;
        start + frac * (self.epsilon_min - start)
    }
}

/// Uniform random action with probability `epsilon`, otherwise greedy with
/// ties to the lowest action index.
pub fn act_epsilon_greedy<T: Scalar, R: Rng + ?Sized>(
    q: &QFunction<T>,
    obs: &Features,
    epsilon: f64,
    rng: &mut R,
) -> Action {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        Action::ALL[rng.gen_range(0..NUM_ACTIONS)]
    } else {
        Action::ALL[q.greedy(obs)]
    }
}

/// One-step Q-learning target.
pub fn td_target<T: Scalar>(transition: &Transition, target_q: &QFunction<T>, gamma: T) -> T {
    let r = T::from_f64_lossy(transition.reward);
    if transition.terminal {
        r
    } else {
        r + gamma * max_value(&target_q.values(&transition.next_obs))
    }
}

/// Applies one update. Tabular: sequential per-transition updates with
/// bootstrap from `target_q` when given (else from `q` itself). Neural: one
/// Adam step against `target_q` (a frozen copy of `q` when absent).
pub fn learn_step<T: Scalar>(
    q: &mut QFunction<T>,
    target_q: Option<&QFunction<T>>,
    batch: &[Transition],
    cfg: &TrainConfig,
    optimizer: &mut Adam<T>,
) -> Result<T, LearnerError> {
    let gamma = T::from_f64_lossy(cfg.gamma);
    match q {
        QFunction::Tabular(table) => {
            let target = match target_q {
                Some(QFunction::Tabular(t)) => Some(t),
                Some(_) => return Err(LearnerError::FeatureMismatch),
                None => None,
            };
            table.learn_step(target, batch, gamma, T::from_f64_lossy(cfg.learning_rate))
        }
        QFunction::Neural(net) => match target_q {
            Some(QFunction::Neural(t)) => net.learn_step(t, batch, gamma, optimizer),
            Some(_) => Err(LearnerError::FeatureMismatch),
            None => {
                let frozen = net.clone();
                net.learn_step(&frozen, batch, gamma, optimizer)
            }
        },
    }
}

/// Trains a policy for `task`, optionally warm-started from `init`.
///
/// The exploration schedule always starts from `epsilon_start`, including on
/// warm starts, and the replay buffer starts empty. Stops at convergence
/// (trailing-window success at or above the threshold once
/// `min_steps_before_convergence` steps have elapsed) when enabled, or when
/// the step budget runs out.
pub fn train<T: Scalar>(
    env: &EnvConfig,
    task: Instruction,
    init: Option<&PolicySnapshot<T>>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(PolicySnapshot<T>, TrainStats), LearnerError> {
    env.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut q = match init {
        Some(snap) => {
            if snap.backend() != cfg.backend {
                return Err(LearnerError::InitMismatch(format!(
                    "snapshot backend {} vs config backend {}",
                    snap.backend(),
                    cfg.backend
                )));
            }
            if snap.env_config != *env {
                return Err(LearnerError::InitMismatch("environment configs differ".into()));
            }
            snap.q.clone()
        }
        None => QFunction::fresh(cfg.backend, env, cfg.hidden_units, &mut rng),
    };

    let mut stats = TrainStats::default();
    let mut window = SuccessWindow::new(cfg.success_window);
    if cfg.max_train_steps == 0 {
        return Ok((
            PolicySnapshot {
                q,
                instruction: task,
                env_config: *env,
                train_steps_used: 0,
                final_success_rate: init.map_or(0.0, |s| s.final_success_rate),
                seed,
            },
            stats,
        ));
    }

    let mut target = match &q {
        QFunction::Neural(_) => Some(q.clone()),
        QFunction::Tabular(_) => None,
    };
    let mut optimizer = Adam::<T>::new(cfg.learning_rate, cfg.adam_epsilon);
    let mut replay = match cfg.backend {
        Backend::Neural => Some(ReplayBuffer::new(cfg.replay_capacity)),
        Backend::Tabular => None,
    };

    let epsilon_at = |step: usize| {
        if init.is_some() {
            cfg.warm_epsilon_at(step)
        } else {
            cfg.epsilon_at(step)
        }
    };
    let mut step = 0usize;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut last_logged = 0usize;

    'episodes: while step < cfg.max_train_steps {
        let mut state = reset(env, task, &mut rng)?;
        let mut feats = q.features(&state)?;
        let mut episode_return = 0.0;
        loop {
            let epsilon = epsilon_at(step);
            let action = act_epsilon_greedy(&q, &feats, epsilon, &mut rng);
            let outcome = state.step(action)?;
            let next_feats = q.features(&state)?;
            episode_return += outcome.reward;
            let transition = Transition {
                obs: feats,
                action,
                reward: outcome.reward,
                next_obs: next_feats.clone(),
                terminal: outcome.done,
            };

            match &mut replay {
                None => {
                    let loss = learn_step(&mut q, None, std::slice::from_ref(&transition), cfg, &mut optimizer)?;
                    loss_sum += loss.to_f64_lossy();
                    loss_count += 1;
                }
                Some(buffer) => {
                    buffer.push(transition);
                    if step >= cfg.warmup_random_steps && buffer.len() >= cfg.batch_size {
                        let batch = buffer.sample(cfg.batch_size, &mut rng);
                        let loss = learn_step(&mut q, target.as_ref(), &batch, cfg, &mut optimizer)?;
                        loss_sum += loss.to_f64_lossy();
                        loss_count += 1;
                    }
                }
            }
            step += 1;
            if let Some(t) = target.as_mut() {
                if step.is_multiple_of(cfg.target_update_steps) {
                    *t = q.clone();
                }
            }

            if outcome.done {
                window.push(outcome.success);
                stats.episodes.push(EpisodeRecord {
                    episode: stats.episodes.len(),
                    env_steps: step,
                    episode_return,
                    success: outcome.success,
                });
            }
            if step.is_multiple_of(cfg.log_interval) {
                log_point(&mut stats, step, &window, epsilon_at(step), &mut loss_sum, &mut loss_count);
                last_logged = step;
            }
            if outcome.done {
                if cfg.stop_on_convergence
                    && step >= cfg.min_steps_before_convergence
                    && window.is_full()
                    && window.rate() >= cfg.success_threshold
                {
                    stats.converged = true;
                    break 'episodes;
                }
                break;
            }
            if step >= cfg.max_train_steps {
                break 'episodes;
            }
            feats = next_feats;
        }
    }
    if last_logged != step {
        log_point(&mut stats, step, &window, epsilon_at(step), &mut loss_sum, &mut loss_count);
    }

    stats.converged |= window.is_full() && window.rate() >= cfg.success_threshold;

    if let QFunction::Tabular(t) = &q {
        let bound = 1.0 / (1.0 - cfg.gamma);
        debug_assert!(t.table.values().flatten().all(|v| {
            let v = v.to_f64_lossy();
            (0.0..=bound + 1e-9).contains(&v)
        }));
    }

    Ok((
        PolicySnapshot {
            q,
            instruction: task,
            env_config: *env,
            train_steps_used: step,
            final_success_rate: window.rate(),
            seed,
        },
        stats,
    ))
}

fn log_point(
    stats: &mut TrainStats,
    step: usize,
    window: &SuccessWindow,
    epsilon: f64,
    loss_sum: &mut f64,
    loss_count: &mut usize,
) {
    let loss = if *loss_count == 0 { 0.0 } else { *loss_sum / *loss_count as f64 };
    stats.curve.push(CurvePoint {
        step,
        episode: stats.episodes.len(),
        rolling_success: window.rate(),
        epsilon,
        loss,
    });
    *loss_sum = 0.0;
    *loss_count = 0;
}

/// Runs `episodes` episodes of `task` under `policy` and returns the
/// fraction that ended in success.
pub fn run_episodes<R, P>(
    env: &EnvConfig,
    task: Instruction,
    episodes: usize,
    rng: &mut R,
    mut policy: P,
) -> Result<f64, EnvError>
where
    R: Rng + ?Sized,
    P: FnMut(&GridState, &mut R) -> Action,
{
    assert!(episodes >= 1, "need at least one episode");
    let mut successes = 0usize;
    for _ in 0..episodes {
        let mut state = reset(env, task, rng)?;
        loop {
            let action = policy(&state, rng);
            let out = state.step(action)?;
            if out.done {
                successes += out.success as usize;
                break;
            }
        }
    }
    Ok(successes as f64 / episodes as f64)
}

/// Success rate of the snapshot's near-greedy policy (epsilon
/// [`EVAL_EPSILON`]) on its own instruction.
pub fn evaluate<T: Scalar>(
    snapshot: &PolicySnapshot<T>,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<f64, LearnerError> {
    evaluate_on(snapshot, env, snapshot.instruction, episodes, seed)
}

/// As [`evaluate`], on an arbitrary task.
pub fn evaluate_on<T: Scalar>(
    snapshot: &PolicySnapshot<T>,
    env: &EnvConfig,
    task: Instruction,
    episodes: usize,
    seed: u64,
) -> Result<f64, LearnerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = &snapshot.q;
    let mut feature_error = None;
    let rate = run_episodes(env, task, episodes, &mut rng, |state, rng| match q.features(state) {
        Ok(f) => act_epsilon_greedy(q, &f, EVAL_EPSILON, rng),
        Err(e) => {
            feature_error.get_or_insert(e);
            Action::Done
        }
    })?;
    if let Some(e) = feature_error {
        return Err(e.into());
    }
    Ok(rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{shortest_solution, StateKey};
    use crate::instructions::parse;

    #[test]
    fn epsilon_schedule() {
        let cfg = TrainConfig {
            warmup_random_steps: 10,
            epsilon_decay_steps: 100,
            epsilon_min: 0.1,
            ..TrainConfig::tabular()
        };
        assert_eq!(cfg.epsilon_at(0), 1.0);
        assert_eq!(cfg.epsilon_at(9), 1.0);
        assert_eq!(cfg.epsilon_at(10), 1.0);
        assert!((cfg.epsilon_at(60) - 0.55).abs() < 1e-12);
        assert_eq!(cfg.epsilon_at(110), 0.1);
        assert_eq!(cfg.epsilon_at(10_000), 0.1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::tabular().validate().is_ok());
        assert!(TrainConfig::neural().validate().is_ok());
        assert!(TrainConfig { gamma: 0.0, ..TrainConfig::tabular() }.validate().is_err());
        assert!(TrainConfig { gamma: 1.5, ..TrainConfig::tabular() }.validate().is_err());
        assert!(TrainConfig { epsilon_min: 0.0, ..TrainConfig::tabular() }.validate().is_err());
        assert!(TrainConfig { success_window: 0, ..TrainConfig::tabular() }.validate().is_err());
    }

    #[test]
    fn full_scale_hyperparameters_in_neural_preset() {
        let c = TrainConfig::neural();
        assert_eq!(c.gamma, 0.99);
        assert_eq!(c.learning_rate, 0.0000625);
        assert_eq!(c.adam_epsilon, 0.00015);
        assert_eq!(c.target_update_steps, 8_000);
        assert_eq!(c.warmup_random_steps, 10_000);
        assert_eq!(c.epsilon_decay_steps, 1_000_000);
        assert_eq!(c.epsilon_min, 0.01);
        assert_eq!(c.replay_capacity, 100_000);
        assert_eq!(c.hidden_units, 128);
    }

    #[test]
    fn greedy_and_uniform_action_choice() {
        let mut table = TabularQ::<f64>::new();
        table.table.insert(StateKey(1), [0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0]);
        let q = QFunction::Tabular(table);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(act_epsilon_greedy(&q, &Features::Tabular(StateKey(1)), 0.0, &mut rng), Action::Pickup);
        assert_eq!(act_epsilon_greedy(&q, &Features::Tabular(StateKey(2)), 0.0, &mut rng), Action::Forward);

        let draws = 10_000;
        let mut counts = [0usize; NUM_ACTIONS];
        for _ in 0..draws {
            counts[act_epsilon_greedy(&q, &Features::Tabular(StateKey(1)), 1.0, &mut rng).index()] += 1;
        }
        let p = 1.0 / 7.0;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn td_target_cases() {
        let mut table = TabularQ::<f64>::new();
        table.table.insert(StateKey(2), [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let q = QFunction::Tabular(table);
        let t = |reward, terminal| Transition {
            obs: Features::Tabular(StateKey(1)),
            action: Action::Forward,
            reward,
            next_obs: Features::Tabular(StateKey(2)),
            terminal,
        };
        assert_eq!(td_target(&t(0.73, true), &q, 0.99), 0.73);
        assert!((td_target(&t(0.0, false), &q, 0.99) - 0.99).abs() < 1e-15);
        assert_eq!(td_target(&t(0.25, false), &q, 0.0), 0.25);
    }

    #[test]
    fn zero_budget_returns_init_untouched() {
        let env = EnvConfig::new(4, 0);
        let cfg = TrainConfig {
            max_train_steps: 0,
            ..TrainConfig::tabular()
        };
        let task = parse("goto the red ball").unwrap();
        let (snap, stats) = train::<f64>(&env, task, None, &cfg, 1).unwrap();
        assert!(stats.is_empty());
        assert_eq!(snap.train_steps_used, 0);
        assert_eq!(snap.q, QFunction::Tabular(TabularQ::new()));

        let mut table = TabularQ::new();
        table.table.insert(StateKey(9), [0.5; 7]);
        let init = PolicySnapshot {
            q: QFunction::Tabular(table),
            instruction: task,
            env_config: env,
            train_steps_used: 10,
            final_success_rate: 0.9,
            seed: 3,
        };
        let (snap, stats) = train(&env, task, Some(&init), &cfg, 1).unwrap();
        assert!(stats.is_empty());
        assert_eq!(snap.q, init.q);
    }

    #[test]
    fn warm_start_mismatches_are_rejected() {
        let env = EnvConfig::new(4, 0);
        let task = parse("goto the red ball").unwrap();
        let init = PolicySnapshot::<f64> {
            q: QFunction::Tabular(TabularQ::new()),
            instruction: task,
            env_config: EnvConfig::new(5, 0),
            train_steps_used: 0,
            final_success_rate: 0.0,
            seed: 0,
        };
        let err = train(&env, task, Some(&init), &TrainConfig::tabular(), 0).unwrap_err();
        assert!(matches!(err, LearnerError::InitMismatch(_)));
        let err = train(&env, task, Some(&init), &TrainConfig::neural(), 0).unwrap_err();
        assert!(matches!(err, LearnerError::InitMismatch(_)));
    }

    #[test]
    fn oracle_policy_always_succeeds() {
        let env = EnvConfig::new(6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for task in ["goto the red ball", "pickup the yellow key"] {
            let rate = run_episodes(&env, parse(task).unwrap(), 100, &mut rng, |s, _| {
                shortest_solution(s).expect("solvable")[0]
            })
            .unwrap();
            assert_eq!(rate, 1.0);
        }
    }

    #[test]
    fn random_policy_is_weak() {
        // measured once at ~0.05 for this configuration; frozen as a loose bound
        let env = EnvConfig::new(6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rate = run_episodes(&env, parse("goto the green box").unwrap(), 100, &mut rng, |_, r| {
            Action::ALL[r.gen_range(0..NUM_ACTIONS)]
        })
        .unwrap();
        assert!(rate < 0.5, "random policy success {rate}");
    }

    #[test]
    fn single_episode_evaluation_is_deterministic() {
        let env = EnvConfig::new(4, 0);
        let task = parse("goto the blue box").unwrap();
        let snap = PolicySnapshot::<f64> {
            q: QFunction::Tabular(TabularQ::new()),
            instruction: task,
            env_config: env,
            train_steps_used: 0,
            final_success_rate: 0.0,
            seed: 0,
        };
        let a = evaluate(&snap, &env, 1, 99).unwrap();
        let b = evaluate(&snap, &env, 1, 99).unwrap();
        assert!(a == 0.0 || a == 1.0);
        assert_eq!(a, b);
    }
}
