//! Debug views of episodes: a one-char-per-cell text grid and JSON-lines
//! trajectory dumps.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Action, Direction, GridState, Pos, StepOutcome};
use crate::instructions::ObjectKind;

/// Short stable digest of a state (first 8 bytes of SHA-256 over its JSON
/// form, hex encoded).
pub fn state_hash(state: &GridState) -> String {
    let bytes = serde_json::to_vec(state).expect("GridState serializes");
    let digest = Sha256::digest(&bytes);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Walls `#`, empty `.`, agent `>v<^`, objects by kind: box `b`, key `k`,
/// ball `o`, uppercase when the object matches the task. A trailing line
/// lists the task and carried item.
pub fn render_text(state: &GridState) -> String {
    let n = state.room_size as i16;
    let mut out = String::new();
    for y in 0..=n + 1 {
        for x in 0..=n + 1 {
            let p = Pos::new(x, y);
            let c = if !p.inside(state.room_size) {
                '#'
            } else if p == state.agent_pos {
                match state.agent_dir {
                    Direction::East => '>',
                    Direction::South => 'v',
                    Direction::West => '<',
                    Direction::North => '^',
                }
            } else if let Some(o) = state.object_at(p) {
                let c = match o.item.kind {
                    ObjectKind::Box => 'b',
                    ObjectKind::Key => 'k',
                    ObjectKind::Ball => 'o',
                };
                if o.item.matches(&state.task) {
                    c.to_ascii_uppercase()
                } else {
                    c
                }
            } else {
                '.'
            };
            out.push(c);
        }
        out.push('\n');
    }
    let carrying = state
        .carrying
        .map(|i| format!("{} {}", i.color.word(), i.kind.word()))
        .unwrap_or_else(|| "nothing".into());
    out.push_str(&format!(
        "task: {} | carrying: {} | step {}/{}\n",
        state.task, carrying, state.steps_taken, state.max_steps
    ));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub state_hash: String,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
}

/// Writes one JSON object per step; `state_hash` is taken before the action.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        TraceWriter { out }
    }

    pub fn record(
        &mut self,
        before: &GridState,
        action: Action,
        outcome: &StepOutcome,
    ) -> std::io::Result<()> {
        let rec = TraceRecord {
            state_hash: state_hash(before),
            action,
            reward: outcome.reward,
            done: outcome.done,
        };
        serde_json::to_writer(&mut self.out, &rec)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
