//! Base-policy training, the k×p adaptation grid, the pairwise comparison
//! dataset and match-type curve aggregation.

mod curves;
mod dataset;
mod io;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::EnvConfig;
use crate::instructions::{enumerate_all, sample_distinct, Instruction, NUM_INSTRUCTIONS};
use crate::learner::{train, LearnerError, PolicySnapshot, TrainConfig, TrainStats};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

pub use curves::{group_curves, mean_curve, mean_final_success, Curve, Dimension, MatchCurves};
pub use dataset::{build_dataset, ComparisonRecord};
pub use io::{
    read_curves, read_dataset, read_samples, write_curves, write_dataset, write_samples, CsvError,
    CurveKey, SCRATCH_LABEL,
};

#[derive(Debug, Error)]
pub enum AdaptationError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("no base policy converged ({0} attempted)")]
    NoPoliciesConverged(usize),
    #[error("no samples to aggregate")]
    NoSamples,
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// Everything needed to rerun one sampling experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub alpha: Vec<Instruction>,
    pub beta: Vec<Instruction>,
    pub n_adapt_steps: usize,
    pub master_seed: u64,
    pub env_config: EnvConfig,
    /// Base training settings; adaptation derives its own from these.
    pub train_config: TrainConfig,
    /// Exploration anneal length during adaptation.
    pub adapt_epsilon_decay_steps: usize,
}

impl ExperimentPlan {
    /// Draws alpha (k) then beta (p, disjoint from alpha) from the task
    /// space with a generator seeded from `master_seed`.
    pub fn sample(
        k: usize,
        p: usize,
        n_adapt_steps: usize,
        master_seed: u64,
        env_config: EnvConfig,
        train_config: TrainConfig,
        adapt_epsilon_decay_steps: usize,
    ) -> Result<Self, AdaptationError> {
        if k + p >= NUM_INSTRUCTIONS {
            return Err(AdaptationError::InvalidPlan(format!(
                "k + p = {} leaves no holdout instruction (need k + p <= {})",
                k + p,
                NUM_INSTRUCTIONS - 1
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, "plan", None, None));
        let bad = |e: crate::instructions::InstructionError| AdaptationError::InvalidPlan(e.to_string());
        let alpha = sample_distinct(&mut rng, k, &BTreeSet::new()).map_err(bad)?;
        let beta = sample_distinct(&mut rng, p, &alpha.iter().copied().collect()).map_err(bad)?;
        let plan = ExperimentPlan {
            alpha,
            beta,
            n_adapt_steps,
            master_seed,
            env_config,
            train_config,
            adapt_epsilon_decay_steps,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), AdaptationError> {
        let bad = |m: String| Err(AdaptationError::InvalidPlan(m));
        let k = self.alpha.len();
        if !(2..NUM_INSTRUCTIONS).contains(&k) {
            return bad(format!("alpha needs 2..=23 instructions, got {k}"));
        }
        if self.beta.is_empty() {
            return bad("beta is empty".into());
        }
        for (name, set) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            let distinct: BTreeSet<_> = set.iter().collect();
            if distinct.len() != set.len() {
                return bad(format!("{name} contains a duplicate instruction"));
            }
        }
        if self.n_adapt_steps == 0 {
            return bad("n_adapt_steps must be at least 1".into());
        }
        self.env_config
            .validate()
            .map_err(|e| AdaptationError::InvalidPlan(e.to_string()))?;
        self.adapt_config().validate()?;
        self.train_config.validate()?;
        Ok(())
    }

    /// Settings for an adaptation run: exactly `n_adapt_steps` steps, no
    /// early stop, the adaptation anneal length.
    pub fn adapt_config(&self) -> TrainConfig {
        TrainConfig {
            max_train_steps: self.n_adapt_steps,
            stop_on_convergence: false,
            epsilon_decay_steps: self.adapt_epsilon_decay_steps,
            ..self.train_config.clone()
        }
    }

    /// Transfer instructions seen neither as a base nor during sampling.
    pub fn holdout(&self) -> Vec<Instruction> {
        enumerate_all()
            .into_iter()
            .filter(|i| !self.alpha.contains(i) && !self.beta.contains(i))
            .collect()
    }

    pub fn base_seed(&self, base: &Instruction) -> u64 {
        derive_seed(self.master_seed, "base", Some(base), None)
    }

    pub fn adapt_seed(&self, base: &Instruction, transfer: &Instruction) -> u64 {
        derive_seed(self.master_seed, "adapt", Some(base), Some(transfer))
    }

    pub fn scratch_seed(&self, transfer: &Instruction) -> u64 {
        derive_seed(self.master_seed, "scratch", None, Some(transfer))
    }
}

/// Result of fine-tuning one base policy (or a fresh one) on a transfer
/// instruction for a fixed budget.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationSample {
    /// `None` for a from-scratch baseline.
    pub base: Option<Instruction>,
    pub transfer: Instruction,
    pub n_steps: usize,
    /// Trailing-window success after `n_steps`.
    pub success_rate: f64,
    /// `(step, rolling_success)` points.
    pub curve: Vec<(usize, f64)>,
    pub seed: u64,
}

impl AdaptationSample {
    fn from_run<T>(
        base: Option<Instruction>,
        transfer: Instruction,
        n: usize,
        seed: u64,
        snap: &PolicySnapshot<T>,
        stats: &TrainStats,
    ) -> Self {
        AdaptationSample {
            base,
            transfer,
            n_steps: n,
            success_rate: snap.final_success_rate,
            curve: stats.curve.iter().map(|p| (p.step, p.rolling_success)).collect(),
            seed,
        }
    }

    /// Canonical ordering key: scratch rows first, then by base, transfer.
    pub fn sort_key(&self) -> (Option<Instruction>, Instruction) {
        (self.base, self.transfer)
    }
}

#[derive(Debug)]
pub struct BaseOutcome<T> {
    pub snapshot: PolicySnapshot<T>,
    pub stats: TrainStats,
    pub converged: bool,
}

/// Trains one policy per alpha instruction (in parallel on the current
/// rayon pool), in alpha order. Non-converged policies are kept with
/// `converged == false`; the call fails only when none converged.
pub fn train_base_policies<T: Scalar>(plan: &ExperimentPlan) -> Result<Vec<BaseOutcome<T>>, AdaptationError> {
    plan.validate()?;
    let outcomes: Vec<BaseOutcome<T>> = plan
        .alpha
        .par_iter()
        .map(|instr| train_base(plan, instr))
        .collect::<Result<_, _>>()?;
    if outcomes.iter().all(|o| !o.converged) {
        return Err(AdaptationError::NoPoliciesConverged(outcomes.len()));
    }
    Ok(outcomes)
}

/// Trains the base policy for a single alpha instruction.
pub fn train_base<T: Scalar>(plan: &ExperimentPlan, instr: &Instruction) -> Result<BaseOutcome<T>, AdaptationError> {
    let (snapshot, stats) = train::<T>(
        &plan.env_config,
        *instr,
        None,
        &plan.train_config,
        plan.base_seed(instr),
    )?;
    let converged = stats.converged;
    Ok(BaseOutcome {
        snapshot,
        stats,
        converged,
    })
}

/// Warm-starts from `base` and trains on `transfer` for exactly `n` steps.
pub fn sample_adaptation<T: Scalar>(
    base: &PolicySnapshot<T>,
    transfer: Instruction,
    n: usize,
    env: &EnvConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<AdaptationSample, AdaptationError> {
    let cfg = fixed_budget(cfg, n)?;
    let (snap, stats) = train(env, transfer, Some(base), &cfg, seed)?;
    Ok(AdaptationSample::from_run(Some(base.instruction), transfer, n, seed, &snap, &stats))
}

fn fixed_budget(cfg: &TrainConfig, n: usize) -> Result<TrainConfig, AdaptationError> {
    if n == 0 {
        return Err(AdaptationError::InvalidPlan("adaptation budget must be at least 1 step".into()));
    }
    Ok(TrainConfig {
        max_train_steps: n,
        stop_on_convergence: false,
        ..cfg.clone()
    })
}

/// One grid cell that failed; the rest of the grid still runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub base: Instruction,
    pub transfer: Instruction,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridResult {
    pub samples: Vec<AdaptationSample>,
    pub failures: Vec<CellFailure>,
}

/// Runs one adaptation cell with the plan's seed for that pair.
pub fn run_cell<T: Scalar>(
    plan: &ExperimentPlan,
    base: &PolicySnapshot<T>,
    transfer: Instruction,
) -> Result<AdaptationSample, AdaptationError> {
    sample_adaptation(
        base,
        transfer,
        plan.n_adapt_steps,
        &plan.env_config,
        &plan.adapt_config(),
        plan.adapt_seed(&base.instruction, &transfer),
    )
}

/// Every (base, transfer) cell, computed in parallel and returned in
/// canonical (base, transfer) order.
pub fn run_grid<T: Scalar>(
    plan: &ExperimentPlan,
    bases: &[PolicySnapshot<T>],
    transfers: &[Instruction],
) -> GridResult {
    let cells: Vec<(&PolicySnapshot<T>, Instruction)> = bases
        .iter()
        .flat_map(|b| transfers.iter().map(move |&t| (b, t)))
        .collect();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(b, t)| (b.instruction, t, run_cell(plan, b, t)))
        .collect();
    let mut out = GridResult::default();
    for (base, transfer, r) in results {
        match r {
            Ok(s) => out.samples.push(s),
            Err(e) => out.failures.push(CellFailure {
                base,
                transfer,
                error: e.to_string(),
            }),
        }
    }
    out.samples.sort_by_key(|s| s.sort_key());
    out.failures.sort_by_key(|f| (f.base, f.transfer));
    out
}

/// From-scratch training on each instruction for `n` steps, in input order.
pub fn run_scratch_baselines<T: Scalar>(
    instructions: &[Instruction],
    n: usize,
    env: &EnvConfig,
    cfg: &TrainConfig,
    master_seed: u64,
) -> Result<Vec<AdaptationSample>, AdaptationError> {
    let cfg = fixed_budget(cfg, n)?;
    instructions
        .par_iter()
        .map(|&t| {
            let seed = derive_seed(master_seed, "scratch", None, Some(&t));
            let (snap, stats) = train::<T>(env, t, None, &cfg, seed)?;
            Ok(AdaptationSample::from_run(None, t, n, seed, &snap, &stats))
        })
        .collect()
}

#[cfg(test)]
mod tests;
