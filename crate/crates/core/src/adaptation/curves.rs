use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AdaptationError, AdaptationSample};
use crate::instructions::Instruction;

/// Instruction component used to split samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Verb,
    Object,
    Color,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Verb, Dimension::Object, Dimension::Color];

    pub fn matches(self, a: &Instruction, b: &Instruction) -> bool {
        match self {
            Dimension::Verb => a.verb == b.verb,
            Dimension::Object => a.object == b.object,
            Dimension::Color => a.color == b.color,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Verb => "verb",
            Dimension::Object => "object",
            Dimension::Color => "color",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown dimension {s:?}"))
    }
}

pub type Curve = Vec<(usize, f64)>;

/// Mean learning curves split by whether base and transfer instruction
/// agree on `dimension`. An empty partition is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchCurves {
    pub dimension: Dimension,
    pub matching: Option<Curve>,
    pub differing: Option<Curve>,
    pub overall: Curve,
    pub scratch: Option<Curve>,
    pub n_matching: usize,
    pub n_differing: usize,
}

impl MatchCurves {
    pub fn has_empty_partition(&self) -> bool {
        self.matching.is_none() || self.differing.is_none()
    }
}

/// Pointwise mean over curves, aligned by step; a step missing from some
/// curves is averaged over the curves that have it.
pub fn mean_curve<'a, I: IntoIterator<Item = &'a Curve>>(curves: I) -> Option<Curve> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut any = false;
    for c in curves {
        any = true;
        for &(step, v) in c {
            let e = acc.entry(step).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    any.then(|| acc.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect())
}

/// Partitions transfer samples on `dimension` and averages their curves.
/// Scratch samples in `samples` are ignored; `scratch` supplies the
/// baseline curve.
pub fn group_curves(
    samples: &[AdaptationSample],
    dimension: Dimension,
    scratch: &[AdaptationSample],
) -> Result<MatchCurves, AdaptationError> {
    let transfer: Vec<&AdaptationSample> = samples.iter().filter(|s| s.base.is_some()).collect();
    if transfer.is_empty() {
        return Err(AdaptationError::NoSamples);
    }
    let (m, d): (Vec<&AdaptationSample>, Vec<&AdaptationSample>) = transfer
        .iter()
        .partition(|s| dimension.matches(&s.base.unwrap(), &s.transfer));
    Ok(MatchCurves {
        dimension,
        matching: mean_curve(m.iter().map(|s| &s.curve)),
        differing: mean_curve(d.iter().map(|s| &s.curve)),
        overall: mean_curve(transfer.iter().map(|s| &s.curve)).unwrap_or_default(),
        scratch: mean_curve(scratch.iter().map(|s| &s.curve)),
        n_matching: m.len(),
        n_differing: d.len(),
    })
}

/// Mean final success of (matching, differing) transfer samples.
pub fn mean_final_success(samples: &[AdaptationSample], dimension: Dimension) -> (Option<f64>, Option<f64>) {
    let mut sums = [(0.0, 0usize); 2];
    for s in samples {
        if let Some(b) = s.base {
            let slot = &mut sums[!dimension.matches(&b, &s.transfer) as usize];
            slot.0 += s.success_rate;
            slot.1 += 1;
        }
    }
    let mean = |(sum, n): (f64, usize)| (n > 0).then(|| sum / n as f64);
    (mean(sums[0]), mean(sums[1]))
}
