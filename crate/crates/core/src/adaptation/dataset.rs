use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AdaptationSample;
use crate::instructions::Instruction;

/// `label == 1` iff base `z_i` adapted to `z_x` better than base `z_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComparisonRecord {
    pub z_x: Instruction,
    pub z_i: Instruction,
    pub z_j: Instruction,
    pub label: u8,
}

impl ComparisonRecord {
    pub fn mirrored(&self) -> Self {
        ComparisonRecord {
            z_x: self.z_x,
            z_i: self.z_j,
            z_j: self.z_i,
            label: 1 - self.label,
        }
    }
}

/// Both orderings of every untied pair of bases sampled on the same
/// transfer instruction, sorted. Scratch samples are ignored; if a
/// (base, transfer) pair occurs twice the first sample wins.
pub fn build_dataset(samples: &[AdaptationSample]) -> Vec<ComparisonRecord> {
    let mut by_transfer: BTreeMap<Instruction, BTreeMap<Instruction, f64>> = BTreeMap::new();
    for s in samples {
        if let Some(base) = s.base {
            by_transfer
                .entry(s.transfer)
                .or_default()
                .entry(base)
                .or_insert(s.success_rate);
        }
    }
    let mut out = Vec::new();
    for (z_x, perf) in &by_transfer {
        let bases: Vec<(&Instruction, &f64)> = perf.iter().collect();
        for (a, &(z_i, &pi)) in bases.iter().enumerate() {
            for &(z_j, &pj) in &bases[a + 1..] {
                if pi == pj {
                    continue;
                }
                let rec = ComparisonRecord {
                    z_x: *z_x,
                    z_i: *z_i,
                    z_j: *z_j,
                    label: (pi > pj) as u8,
                };
                out.push(rec);
                out.push(rec.mirrored());
            }
        }
    }
    out.sort();
    out
}
