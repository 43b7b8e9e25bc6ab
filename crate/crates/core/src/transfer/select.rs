use serde::Serialize;

use super::{TransferError, TransferModel};
use crate::instructions::Instruction;
use crate::scalar::Scalar;

/// Anything that scores "`z_i` adapts to `z_x` better than `z_j`".
pub trait PairScorer {
    fn score(&self, z_x: &Instruction, z_i: &Instruction, z_j: &Instruction) -> f64;
}

impl<T: Scalar> PairScorer for TransferModel<T> {
    fn score(&self, z_x: &Instruction, z_i: &Instruction, z_j: &Instruction) -> f64 {
        self.predict(z_x, z_i, z_j).to_f64_lossy()
    }
}

impl<F: Fn(&Instruction, &Instruction, &Instruction) -> f64> PairScorer for F {
    fn score(&self, z_x: &Instruction, z_i: &Instruction, z_j: &Instruction) -> f64 {
        self(z_x, z_i, z_j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedBase {
    pub instruction: Instruction,
    /// Orderings where this base was `z_i` and scored at least 0.5.
    pub wins: usize,
    /// Mean score over those orderings (0 with no opponents).
    pub mean_probability: f64,
}

/// Borda-style ranking of base policies for `z_x`: every base meets every
/// other as `z_i`; ties on wins go to the higher mean probability, then to
/// the smaller instruction.
pub fn select_best<S: PairScorer + ?Sized>(
    scorer: &S,
    z_x: &Instruction,
    bases: &[Instruction],
) -> Result<Vec<RankedBase>, TransferError> {
    if bases.is_empty() {
        return Err(TransferError::InvalidInput("no base instructions to rank".into()));
    }
    // canonical order makes the floating-point sums order independent
    let mut sorted = bases.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(TransferError::InvalidInput("base instructions must be distinct".into()));
    }
    let mut ranked: Vec<RankedBase> = sorted
        .iter()
        .map(|zi| {
            let scores: Vec<f64> = sorted
                .iter()
                .filter(|zj| *zj != zi)
                .map(|zj| scorer.score(z_x, zi, zj))
                .collect();
            let n = scores.len();
            RankedBase {
                instruction: *zi,
                wins: scores.iter().filter(|&&p| p >= 0.5).count(),
                mean_probability: if n == 0 { 0.0 } else { scores.iter().sum::<f64>() / n as f64 },
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.wins
            .cmp(&a.wins)
            .then(b.mean_probability.total_cmp(&a.mean_probability))
            .then(a.instruction.cmp(&b.instruction))
    });
    Ok(ranked)
}
