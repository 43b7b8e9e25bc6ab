//! Verb-dominance oracle data for exercising the classifier.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptation::ComparisonRecord;
use crate::instructions::{enumerate_all, Instruction};

/// 1 if only `z_i` shares `z_x`'s verb, 0 if only `z_j` does, `None` when
/// the verbs do not separate the pair.
pub fn verb_dominance_label(z_x: &Instruction, z_i: &Instruction, z_j: &Instruction) -> Option<u8> {
    match (z_i.verb == z_x.verb, z_j.verb == z_x.verb) {
        (true, false) => Some(1),
        (false, true) => Some(0),
        _ => None,
    }
}

/// Disjoint train and holdout sets of symmetrized verb-dominance records
/// (`n_train` and `n_holdout` are rounded down to even counts). No
/// comparison group appears on both sides.
pub fn synthetic_split(n_train: usize, n_holdout: usize, seed: u64) -> (Vec<ComparisonRecord>, Vec<ComparisonRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = enumerate_all();
    let mut seen = BTreeSet::new();
    let mut draw = |pairs: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(2 * pairs);
        while out.len() < 2 * pairs {
            let z_x = all[rng.gen_range(0..all.len())];
            let z_i = all[rng.gen_range(0..all.len())];
            let z_j = all[rng.gen_range(0..all.len())];
            let Some(label) = verb_dominance_label(&z_x, &z_i, &z_j) else {
                continue;
            };
            if !seen.insert((z_x, z_i.min(z_j), z_i.max(z_j))) {
                continue;
            }
            let r = ComparisonRecord { z_x, z_i, z_j, label };
            out.push(r);
            out.push(r.mirrored());
        }
        out.sort();
        out
    };
    let train = draw(n_train / 2, &mut rng);
    let holdout = draw(n_holdout / 2, &mut rng);
    (train, holdout)
}

/// Control set: each comparison group gets a fair-coin label (its mirror
/// the complement), destroying any relation to the instructions.
pub fn shuffled_labels(records: &[ComparisonRecord], seed: u64) -> Vec<ComparisonRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coins = BTreeMap::new();
    records
        .iter()
        .map(|r| {
            let key = (r.z_x, r.z_i.min(r.z_j), r.z_i.max(r.z_j));
            let l = *coins.entry(key).or_insert_with(|| rng.gen_range(0..2u8));
            ComparisonRecord {
                label: if r.z_i < r.z_j { l } else { 1 - l },
                ..*r
            }
        })
        .collect()
}
