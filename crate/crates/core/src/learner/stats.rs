use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Env steps completed when the episode ended.
    pub env_steps: usize,
    pub episode_return: f64,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub episode: usize,
    pub rolling_success: f64,
    pub epsilon: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub episodes: Vec<EpisodeRecord>,
    pub curve: Vec<CurvePoint>,
    /// Trailing-window success reached the threshold.
    pub converged: bool,
}

impl TrainStats {
    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty() && self.curve.is_empty()
    }

    /// CSV with columns `step,episode,rolling_success,epsilon,loss`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "episode", "rolling_success", "epsilon", "loss"])?;
        for p in &self.curve {
            w.write_record([
                p.step.to_string(),
                p.episode.to_string(),
                format!("{:.6}", p.rolling_success),
                format!("{:.6}", p.epsilon),
                format!("{:.6}", p.loss),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Success rate over the most recent `window` finished episodes.
#[derive(Debug, Clone)]
pub struct SuccessWindow {
    window: usize,
    recent: VecDeque<bool>,
    successes: usize,
}

impl SuccessWindow {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1);
        SuccessWindow {
            window,
            recent: VecDeque::with_capacity(window),
            successes: 0,
        }
    }

    pub fn push(&mut self, success: bool) {
        if self.recent.len() == self.window
            && self.recent.pop_front() == Some(true) {
                self.successes -= 1;
            }
        self.recent.push_back(success);
        self.successes += success as usize;
    }

    pub fn is_full(&self) -> bool {
        self.recent.len() == self.window
    }

    pub fn len(&self) -> usize {
        self.recent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recent.is_empty()
    }

    /// Rate over the episodes seen so far (all of them while fewer than
    /// `window` have finished); 0 before the first episode.
    pub fn rate(&self) -> f64 {
        if self.recent.is_empty() {
            0.0
        } else {
            self.successes as f64 / self.recent.len() as f64
        }
    }
}
