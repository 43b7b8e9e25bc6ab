use serde::{Deserialize, Serialize};

use super::{EnvError, GridState, Item};
use crate::instructions::Instruction;

/// Per-cell channels: object kind (3), object color (4), agent (1),
/// agent direction (4), carried kind (3), carried color (4).
pub const OBS_CHANNELS: usize = 19;

const CH_KIND: usize = 0;
const CH_COLOR: usize = 3;
const CH_AGENT: usize = 7;
const CH_DIR: usize = 8;
const CH_CARRY_KIND: usize = 12;
const CH_CARRY_COLOR: usize = 15;

/// Largest object count representable by a [`StateKey`].
pub const MAX_TABULAR_OBJECTS: usize = 11;

/// One-hot symbolic observation, flattened row-major as
/// `(cell_y * room_size + cell_x) * OBS_CHANNELS + channel`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    data: Vec<u8>,
}

impl Observation {
    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Indices of the nonzero entries, ascending.
    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, _)| i)
    }

    pub fn from_raw(data: Vec<u8>) -> Self {
        Observation { data }
    }
}

pub fn encode_observation(state: &GridState) -> Observation {
    let n = state.room_size;
    let mut data = vec![0u8; n * n * OBS_CHANNELS];
    let base = |pos: super::Pos| pos.cell_index(n) * OBS_CHANNELS;

    for o in &state.objects {
        let b = base(o.pos);
        data[b + CH_KIND + o.item.kind.index()] = 1;
        data[b + CH_COLOR + o.item.color.index()] = 1;
    }
    let b = base(state.agent_pos);
    data[b + CH_AGENT] = 1;
    data[b + CH_DIR + state.agent_dir.index()] = 1;

    if let Some(item) = state.carrying {
        for cell in 0..n * n {
            let b = cell * OBS_CHANNELS;
            data[b + CH_CARRY_KIND + item.kind.index()] = 1;
            data[b + CH_CARRY_COLOR + item.color.index()] = 1;
        }
    }
    Observation { data }
}

/// Packed canonical state for the tabular backend.
///
/// Objects are described relative to the task: each carries two flags
/// (color matches, kind matches) rather than its absolute identity, so the
/// same table entries are meaningful across instructions that share a verb.
/// Layout from the low bits: agent cell (8), direction (2), carried code (3),
/// object count (4), then 10 bits per object in cell order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateKey(pub u128);

fn match_flags(item: &Item, task: &Instruction) -> u128 {
    (item.color == task.color) as u128 | (((item.kind == task.object) as u128) << 1)
}

pub fn tabular_key(state: &GridState) -> Result<StateKey, EnvError> {
    if state.objects.len() > MAX_TABULAR_OBJECTS {
        return Err(EnvError::InvalidConfig(format!(
            "tabular keys hold at most {MAX_TABULAR_OBJECTS} objects, state has {}",
            state.objects.len()
        )));
    }
    let n = state.room_size;
    let mut key = state.agent_pos.cell_index(n) as u128;
    key |= (state.agent_dir.index() as u128) << 8;
    let carried = match &state.carrying {
        None => 0,
        Some(item) => 0b100 | match_flags(item, &state.task),
    };
    key |= carried << 10;
    key |= (state.objects.len() as u128) << 13;
    for (i, o) in state.objects.iter().enumerate() {
        let packed = o.pos.cell_index(n) as u128 | (match_flags(&o.item, &state.task) << 8);
        key |= packed << (17 + 10 * i);
    }
    Ok(StateKey(key))
}
