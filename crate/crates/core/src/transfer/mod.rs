//! Pairwise transfer classifier: given a transfer instruction `z_x` and two
//! base instructions `z_i`, `z_j`, the probability that the base trained on
//! `z_i` adapts to `z_x` better than the one trained on `z_j`.

mod file;
mod select;
mod synthetic;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::ComparisonRecord;
use crate::instructions::{Instruction, TOKENS_PER_INSTRUCTION, VOCAB_SIZE};
use crate::nn::{relu_backward_in_place, relu_in_place, sigmoid, Adam, Dense, Parameters};
use crate::scalar::Scalar;

pub use file::{
    load_model, model_from_bytes, model_to_bytes, save_model, write_predictions, ModelHeader, MODEL_MAGIC,
    MODEL_VERSION,
};
pub use select::{select_best, PairScorer, RankedBase};
pub use synthetic::{shuffled_labels, synthetic_split, verb_dominance_label};

/// Embedded features: three instructions of three tokens each.
pub const N_FEATURES: usize = 3 * TOKENS_PER_INSTRUCTION;
pub const HIDDEN: usize = 24;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("classifier loss is not finite")]
    NonFiniteLoss,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub dropout: f64,
    /// Fraction of comparison groups held back for early stopping.
    pub validation_fraction: f64,
    /// Steps between validation checks.
    pub eval_interval: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            learning_rate: 0.001,
            max_steps: 50_000,
            batch_size: 32,
            dropout: 0.2,
            validation_fraction: 0.2,
            eval_interval: 250,
            patience: 10,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    /// Full-scale budget.
    pub fn full_scale() -> Self {
        ClassifierConfig {
            max_steps: 1_000_000,
            ..ClassifierConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TransferError> {
        let bad = |m: &str| Err(TransferError::InvalidInput(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be positive");
        }
        Ok(())
    }
}

/// Token ids of `(z_x, z_i, z_j)` in that order.
pub fn feature_tokens(z_x: &Instruction, z_i: &Instruction, z_j: &Instruction) -> [usize; N_FEATURES] {
    let mut out = [0; N_FEATURES];
    for (k, instr) in [z_x, z_i, z_j].into_iter().enumerate() {
        for (t, tok) in instr.tokens().into_iter().enumerate() {
            out[k * TOKENS_PER_INSTRUCTION + t] = tok as usize;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferModel<T> {
    /// One learned scalar per vocabulary token.
    pub embedding: Vec<T>,
    pub input: Dense<T>,
    pub hidden: Dense<T>,
    pub output: Dense<T>,
}

struct Trace<T> {
    tokens: [usize; N_FEATURES],
    scale: [T; N_FEATURES],
    x: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
    logit: T,
}

impl<T: Scalar> TransferModel<T> {
    pub fn zeros() -> Self {
        TransferModel {
            embedding: vec![T::zero(); VOCAB_SIZE],
            input: Dense::zeros(N_FEATURES, HIDDEN),
            hidden: Dense::zeros(HIDDEN, HIDDEN),
            output: Dense::zeros(HIDDEN, 1),
        }
    }

    /// Embeddings uniform in ±0.1, dense layers uniform in ±1/sqrt(fan_in).
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let embedding = (0..VOCAB_SIZE)
            .map(|_| T::from_f64_lossy(rng.gen_range(-0.1..0.1)))
            .collect();
        TransferModel {
            embedding,
            input: Dense::uniform(N_FEATURES, HIDDEN, rng),
            hidden: Dense::uniform(HIDDEN, HIDDEN, rng),
            output: Dense::uniform(HIDDEN, 1, rng),
        }
    }

    fn trace(&self, tokens: [usize; N_FEATURES], scale: [T; N_FEATURES]) -> Trace<T> {
        let x: Vec<T> = tokens
            .iter()
            .zip(&scale)
            .map(|(&t, &s)| self.embedding[t] * s)
            .collect();
        let mut h1 = vec![T::zero(); HIDDEN];
        self.input.forward(&x, &mut h1);
        relu_in_place(&mut h1);
        let mut h2 = vec![T::zero(); HIDDEN];
        self.hidden.forward(&h1, &mut h2);
        relu_in_place(&mut h2);
        let mut out = [T::zero()];
        self.output.forward(&h2, &mut out);
        Trace {
            tokens,
            scale,
            x,
            h1,
            h2,
            logit: out[0],
        }
    }

    /// Inference-mode probability (no dropout).
    pub fn predict(&self, z_x: &Instruction, z_i: &Instruction, z_j: &Instruction) -> T {
        sigmoid(self.trace(feature_tokens(z_x, z_i, z_j), [T::one(); N_FEATURES]).logit)
    }

    /// Probability with optional dropout: pass a generator and rate to
    /// sample an inverted-dropout mask over the embedded features.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        z_x: &Instruction,
        z_i: &Instruction,
        z_j: &Instruction,
        dropout: Option<(f64, &mut R)>,
    ) -> T {
        let scale = match dropout {
            Some((p, rng)) => dropout_scale(p, rng),
            None => [T::one(); N_FEATURES],
        };
        sigmoid(self.trace(feature_tokens(z_x, z_i, z_j), scale).logit)
    }

    /// Mean binary cross-entropy over `records` and its gradient. `scales`
    /// gives one dropout scale vector per record (all ones for inference).
    pub fn loss_and_grad(
        &self,
        records: &[ComparisonRecord],
        scales: Option<&[[T; N_FEATURES]]>,
    ) -> (T, TransferModel<T>) {
        let mut grad = TransferModel::zeros();
        let n = T::from_usize(records.len()).unwrap();
        let mut loss = T::zero();
        for (r_idx, r) in records.iter().enumerate() {
            let scale = scales.map_or([T::one(); N_FEATURES], |s| s[r_idx]);
            let tr = self.trace(feature_tokens(&r.z_x, &r.z_i, &r.z_j), scale);
            let y = T::from_u8(r.label).unwrap();
            loss = loss + bce_with_logit(tr.logit, y);

            let g_logit = [(sigmoid(tr.logit) - y) / n];
            let mut g_h2 = vec![T::zero(); HIDDEN];
            self.output.backward(&tr.h2, &g_logit, &mut grad.output, Some(&mut g_h2));
            relu_backward_in_place(&tr.h2, &mut g_h2);
            let mut g_h1 = vec![T::zero(); HIDDEN];
            self.hidden.backward(&tr.h1, &g_h2, &mut grad.hidden, Some(&mut g_h1));
            relu_backward_in_place(&tr.h1, &mut g_h1);
            let mut g_x = vec![T::zero(); N_FEATURES];
            self.input.backward(&tr.x, &g_h1, &mut grad.input, Some(&mut g_x));
            for k in 0..N_FEATURES {
                let e = &mut grad.embedding[tr.tokens[k]];
                *e = *e + g_x[k] * tr.scale[k];
            }
        }
        (loss / n, grad)
    }

    /// Inference-mode mean cross-entropy.
    pub fn loss(&self, records: &[ComparisonRecord]) -> T {
        let n = T::from_usize(records.len().max(1)).unwrap();
        records
            .iter()
            .map(|r| {
                let tr = self.trace(feature_tokens(&r.z_x, &r.z_i, &r.z_j), [T::one(); N_FEATURES]);
                bce_with_logit(tr.logit, T::from_u8(r.label).unwrap())
            })
            .fold(T::zero(), |a, b| a + b)
            / n
    }
}

/// `-y log σ(z) - (1-y) log(1-σ(z))`, computed without overflow.
fn bce_with_logit<T: Scalar>(z: T, y: T) -> T {
    let softplus = z.max(T::zero()) + (-z.abs()).exp().ln_1p();
    softplus - y * z
}

fn dropout_scale<T: Scalar, R: Rng + ?Sized>(p: f64, rng: &mut R) -> [T; N_FEATURES] {
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let mut s = [keep; N_FEATURES];
    for v in s.iter_mut() {
        if rng.gen_bool(p) {
            *v = T::zero();
        }
    }
    s
}

impl<T: Scalar> Parameters<T> for TransferModel<T> {
    fn param_groups(&self) -> Vec<&[T]> {
        vec![
            &self.embedding,
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
            &mut self.embedding,
            &mut self.input.weights,
            &mut self.input.bias,
            &mut self.hidden.weights,
            &mut self.hidden.bias,
            &mut self.output.weights,
            &mut self.output.bias,
        ]
    }
}

/// Fraction of records where `probability >= 0.5` equals the label.
pub fn accuracy<T: Scalar>(model: &TransferModel<T>, records: &[ComparisonRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let correct = records
        .iter()
        .filter(|r| predicted_label(model.predict(&r.z_x, &r.z_i, &r.z_j)) == r.label)
        .count();
    correct as f64 / records.len() as f64
}

/// Threshold at one half; an exact tie predicts 1.
pub fn predicted_label<T: Scalar>(p: T) -> u8 {
    (p >= T::from_f64_lossy(0.5)) as u8
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    /// Training-batch loss at every step.
    pub step_loss: Vec<f64>,
    /// Mean training loss per pass over the data.
    pub epoch_loss: Vec<f64>,
    /// `(step, validation loss)` at each check.
    pub validation: Vec<(usize, f64)>,
    pub steps: usize,
    pub stopped_early: bool,
    pub validation_size: usize,
}

fn check_classes(records: &[ComparisonRecord], what: &str) -> Result<(), TransferError> {
    if records.is_empty() {
        return Err(TransferError::DegenerateDataset(format!("{what} has no records")));
    }
    let ones = records.iter().filter(|r| r.label == 1).count();
    if ones == 0 || ones == records.len() {
        return Err(TransferError::DegenerateDataset(format!(
            "{what} contains a single label class"
        )));
    }
    Ok(())
}

/// Splits off whole comparison groups (a record and its mirror stay
/// together) for early stopping. Falls back to no split when either side
/// would be empty or single-class.
fn validation_split(
    records: &[ComparisonRecord],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<ComparisonRecord>, Vec<ComparisonRecord>) {
    let group = |r: &ComparisonRecord| (r.z_x, r.z_i.min(r.z_j), r.z_i.max(r.z_j));
    let mut groups: Vec<_> = records.iter().map(group).collect();
    groups.sort();
    groups.dedup();
    groups.shuffle(rng);
    let n_val = (groups.len() as f64 * fraction).round() as usize;
    let held: std::collections::BTreeSet<_> = groups[..n_val].iter().copied().collect();
    let (val, train): (Vec<_>, Vec<_>) = records.iter().partition(|r| held.contains(&group(r)));
    if check_classes(&val, "").is_err() || check_classes(&train, "").is_err() {
        return (records.to_vec(), Vec::new());
    }
    (train, val)
}

/// Adam on mean binary cross-entropy over shuffled mini-batches, with
/// dropout on the embedded features and early stopping on a validation
/// split. The returned model holds the best validation parameters.
pub fn train_classifier<T: Scalar>(
    records: &[ComparisonRecord],
    cfg: &ClassifierConfig,
) -> Result<(TransferModel<T>, ClassifierReport), TransferError> {
    cfg.validate()?;
    check_classes(records, "training set")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = TransferModel::<T>::new(&mut rng);
    let (train, val) = validation_split(records, cfg.validation_fraction, &mut rng);
    let mut optimizer = Adam::<T>::new(cfg.learning_rate, 1e-8);
    let mut report = ClassifierReport {
        validation_size: val.len(),
        ..ClassifierReport::default()
    };

    let mut best = (f64::INFINITY, model.clone());
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    'epochs: while step < cfg.max_steps {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ComparisonRecord> = chunk.iter().map(|&i| train[i]).collect();
            let scales: Vec<[T; N_FEATURES]> = batch
                .iter()
                .map(|_| dropout_scale(cfg.dropout, &mut rng))
                .collect();
            let (loss, grad) = model.loss_and_grad(&batch, Some(&scales));
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(TransferError::NonFiniteLoss);
            }
            optimizer.step(&mut model, &grad);
            report.step_loss.push(loss);
            epoch_sum += loss;
            epoch_batches += 1;
            step += 1;

            if !val.is_empty() && step.is_multiple_of(cfg.eval_interval) {
                let v = model.loss(&val).to_f64_lossy();
                report.validation.push((step, v));
                if v < best.0 {
                    best = (v, model.clone());
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        report.stopped_early = true;
                        report.epoch_loss.push(epoch_sum / epoch_batches as f64);
                        break 'epochs;
                    }
                }
            }
            if step >= cfg.max_steps {
                break;
            }
        }
        report.epoch_loss.push(epoch_sum / epoch_batches.max(1) as f64);
    }
    report.steps = step;

    if !val.is_empty() {
        let v = model.loss(&val).to_f64_lossy();
        if v < best.0 {
            best = (v, model);
        }
        model = best.1;
    }
    Ok((model, report))
}
