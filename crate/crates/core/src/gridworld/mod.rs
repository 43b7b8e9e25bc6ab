//! Single-room, fully observable gridworld with goto/pickup tasks.
//!
//! Interior cells use 1-based coordinates `1..=room_size` on both axes; the
//! surrounding wall ring sits at `0` and `room_size + 1`. `y` grows downward.

mod observation;
mod oracle;
mod trace;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instructions::{Color, Instruction, ObjectKind, Verb};

pub use observation::{
    encode_observation, tabular_key, Observation, StateKey, MAX_TABULAR_OBJECTS, OBS_CHANNELS,
};
pub use oracle::{shortest_solution, shortest_solution_length, Unreachable};
pub use trace::{render_text, state_hash, TraceRecord, TraceWriter};

/// Largest supported room side; keeps every cell index below 256.
pub const MAX_ROOM_SIZE: usize = 15;
/// Agent placement retries in [`reset`] before giving up.
pub const PLACEMENT_RETRIES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("could not place agent in a non-successful start state after {0} retries")]
    PlacementImpossible(usize),
    #[error("step called on a finished episode")]
    SteppingFinishedEpisode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvConfig {
    pub room_size: usize,
    pub n_distractors: usize,
    pub max_steps: usize,
    pub randomize_agent_start: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::new(6, 3)
    }
}

impl EnvConfig {
    /// Config with the default episode cap of `8 * room_size`.
    pub fn new(room_size: usize, n_distractors: usize) -> Self {
        EnvConfig {
            room_size,
            n_distractors,
            max_steps: 8 * room_size,
            randomize_agent_start: true,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.room_size < 3 || self.room_size > MAX_ROOM_SIZE {
            return Err(EnvError::InvalidConfig(format!(
                "room_size must be in 3..={MAX_ROOM_SIZE}, got {}",
                self.room_size
            )));
        }
        let cells = self.room_size * self.room_size;
        if self.n_distractors + 1 > cells - 1 {
            return Err(EnvError::InvalidConfig(format!(
                "{} objects do not fit in {} cells next to the agent",
                self.n_distractors + 1,
                cells
            )));
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidConfig("max_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn observation_len(&self) -> usize {
        self.room_size * self.room_size * OBS_CHANNELS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Pickup,
    Drop,
    Open,
    Done,
}

pub const NUM_ACTIONS: usize = 7;

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [
        Action::Forward,
        Action::TurnLeft,
        Action::TurnRight,
        Action::Pickup,
        Action::Drop,
        Action::Open,
        Action::Done,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

/// Cardinal heading. Turning right cycles East -> South -> West -> North.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    East,
    South,
    West,
    North,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::East,
        Direction::South,
        Direction::West,
        Direction::North,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn right(self) -> Direction {
        Direction::ALL[(self.index() + 1) % 4]
    }

    pub fn left(self) -> Direction {
        Direction::ALL[(self.index() + 3) % 4]
    }

    pub fn delta(self) -> (i16, i16) {
        match self {
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
            Direction::North => (0, -1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub x: i16,
    pub y: i16,
}

impl Pos {
    pub const fn new(x: i16, y: i16) -> Self {
        Pos { x, y }
    }

    pub fn step(self, dir: Direction) -> Pos {
        let (dx, dy) = dir.delta();
        Pos::new(self.x + dx, self.y + dy)
    }

    pub fn inside(self, room_size: usize) -> bool {
        let n = room_size as i16;
        (1..=n).contains(&self.x) && (1..=n).contains(&self.y)
    }

    /// Row-major index of an interior cell, starting at 0.
    pub fn cell_index(self, room_size: usize) -> usize {
        (self.y as usize - 1) * room_size + (self.x as usize - 1)
    }

    pub fn from_cell_index(i: usize, room_size: usize) -> Pos {
        Pos::new((i % room_size) as i16 + 1, (i / room_size) as i16 + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Item {
    pub color: Color,
    pub kind: ObjectKind,
}

impl Item {
    pub fn matches(&self, task: &Instruction) -> bool {
        self.color == task.color && self.kind == task.object
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorldObject {
    pub pos: Pos,
    pub item: Item,
}

/// Full simulator state. `objects` is kept sorted by position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub room_size: usize,
    pub max_steps: usize,
    pub agent_pos: Pos,
    pub agent_dir: Direction,
    pub objects: Vec<WorldObject>,
    pub carrying: Option<Item>,
    pub steps_taken: usize,
    pub task: Instruction,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Reward paid on the step that completes the task.
pub fn success_reward(steps_taken: usize, max_steps: usize) -> f64 {
    1.0 - 0.9 * (steps_taken as f64 / max_steps as f64)
}

impl GridState {
    pub fn object_at(&self, pos: Pos) -> Option<&WorldObject> {
        self.objects
            .binary_search_by(|o| o.pos.cmp(&pos))
            .ok()
            .map(|i| &self.objects[i])
    }

    pub fn front_pos(&self) -> Pos {
        self.agent_pos.step(self.agent_dir)
    }

    pub fn success(&self) -> bool {
        success(self, &self.task)
    }

    /// Applies one action in place.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::SteppingFinishedEpisode);
        }
        let front = self.front_pos();
        match action {
            Action::Forward => {
                if front.inside(self.room_size) && self.object_at(front).is_none() {
                    self.agent_pos = front;
                }
            }
            Action::TurnLeft => self.agent_dir = self.agent_dir.left(),
            Action::TurnRight => self.agent_dir = self.agent_dir.right(),
            Action::Pickup => {
                if self.carrying.is_none() {
                    if let Ok(i) = self.objects.binary_search_by(|o| o.pos.cmp(&front)) {
                        self.carrying = Some(self.objects.remove(i).item);
                    }
                }
            }
            Action::Drop => {
                if let Some(item) = self.carrying {
                    if front.inside(self.room_size) {
                        if let Err(i) = self.objects.binary_search_by(|o| o.pos.cmp(&front)) {
                            self.objects.insert(i, WorldObject { pos: front, item });
                            self.carrying = None;
                        }
                    }
                }
            }
            Action::Open => {}
            Action::Done => {}
        }
        self.steps_taken += 1;

        if self.success() {
            self.done = true;
            return Ok(StepOutcome {
                reward: success_reward(self.steps_taken, self.max_steps),
                done: true,
                success: true,
            });
        }
        if self.steps_taken >= self.max_steps || action == Action::Done {
            self.done = true;
        }
        Ok(StepOutcome {
            reward: 0.0,
            done: self.done,
            success: false,
        })
    }
}

/// Goto: facing a matching object. Pickup: carrying a matching object.
pub fn success(state: &GridState, task: &Instruction) -> bool {
    match task.verb {
        Verb::Goto => state
            .object_at(state.front_pos())
            .is_some_and(|o| o.item.matches(task)),
        Verb::Pickup => state.carrying.is_some_and(|c| c.matches(task)),
    }
}

/// Samples a fresh episode: one target object, `n_distractors` uniform
/// distractors on distinct cells, and an agent start that does not already
/// satisfy the task.
pub fn reset<R: Rng + ?Sized>(
    config: &EnvConfig,
    task: Instruction,
    rng: &mut R,
) -> Result<GridState, EnvError> {
    config.validate()?;
    let n = config.room_size;
    let cells = n * n;
    let fixed_start = Pos::new(1, 1);

    let mut free: Vec<usize> = (0..cells)
        .filter(|&c| config.randomize_agent_start || Pos::from_cell_index(c, n) != fixed_start)
        .collect();
    let mut take_cell = |rng: &mut R| {
        let i = rng.gen_range(0..free.len());
        Pos::from_cell_index(free.swap_remove(i), n)
    };

    let mut objects = Vec::with_capacity(config.n_distractors + 1);
    objects.push(WorldObject {
        pos: take_cell(rng),
        item: Item {
            color: task.color,
            kind: task.object,
        },
    });
    for _ in 0..config.n_distractors {
        let pos = take_cell(rng);
        let color = Color::ALL[rng.gen_range(0..Color::ALL.len())];
        let kind = ObjectKind::ALL[rng.gen_range(0..ObjectKind::ALL.len())];
        objects.push(WorldObject {
            pos,
            item: Item { color, kind },
        });
    }
    objects.sort();

    let mut state = GridState {
        room_size: n,
        max_steps: config.max_steps,
        agent_pos: fixed_start,
        agent_dir: Direction::East,
        objects,
        carrying: None,
        steps_taken: 0,
        task,
        done: false,
    };

    for _ in 0..PLACEMENT_RETRIES {
        if config.randomize_agent_start {
            let free_cells: Vec<usize> = (0..cells)
                .filter(|&c| state.object_at(Pos::from_cell_index(c, n)).is_none())
                .collect();
            state.agent_pos = Pos::from_cell_index(free_cells[rng.gen_range(0..free_cells.len())], n);
            state.agent_dir = Direction::ALL[rng.gen_range(0..4)];
        }
        if !state.success() {
            return Ok(state);
        }
        if !config.randomize_agent_start {
            // fixed start: rotate instead of moving
            state.agent_dir = state.agent_dir.right();
        }
    }
    Err(EnvError::PlacementImpossible(PLACEMENT_RETRIES))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instructions::parse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bare_state(task: &str, agent: Pos, dir: Direction, objects: Vec<WorldObject>) -> GridState {
        let mut objects = objects;
        objects.sort();
        GridState {
            room_size: 6,
            max_steps: 48,
            agent_pos: agent,
            agent_dir: dir,
            objects,
            carrying: None,
            steps_taken: 0,
            task: parse(task).unwrap(),
            done: false,
        }
    }

    fn obj(x: i16, y: i16, color: Color, kind: ObjectKind) -> WorldObject {
        WorldObject {
            pos: Pos::new(x, y),
            item: Item { color, kind },
        }
    }

    fn check_invariants(s: &GridState) {
        assert!(s.agent_pos.inside(s.room_size));
        assert!(s.steps_taken <= s.max_steps);
        for w in s.objects.windows(2) {
            assert!(w[0].pos < w[1].pos);
        }
        for o in &s.objects {
            assert!(o.pos.inside(s.room_size));
            assert_ne!(o.pos, s.agent_pos);
        }
        let target = Item {
            color: s.task.color,
            kind: s.task.object,
        };
        assert!(s.objects.iter().any(|o| o.item == target) || s.carrying == Some(target));
    }

    #[test]
    fn reset_places_everything() {
        let cfg = EnvConfig::default();
        assert_eq!(cfg.max_steps, 48);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for instr in crate::instructions::enumerate_all() {
            let s = reset(&cfg, instr, &mut rng).unwrap();
            assert_eq!(s.objects.len(), 4);
            assert!(!s.success());
            check_invariants(&s);
        }
        let a = reset(&cfg, parse("goto the red ball").unwrap(), &mut ChaCha8Rng::seed_from_u64(9));
        let b = reset(&cfg, parse("goto the red ball").unwrap(), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_start_reset() {
        let cfg = EnvConfig {
            randomize_agent_start: false,
            ..EnvConfig::new(4, 2)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = reset(&cfg, parse("goto the red ball").unwrap(), &mut rng).unwrap();
            assert_eq!(s.agent_pos, Pos::new(1, 1));
            assert!(!s.success());
            check_invariants(&s);
        }
    }

    #[test]
    fn config_capacity_bound() {
        let cfg = EnvConfig::new(3, 8);
        assert!(matches!(cfg.validate(), Err(EnvError::InvalidConfig(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(reset(&cfg, parse("goto the red ball").unwrap(), &mut rng).is_err());
        assert!(EnvConfig::new(3, 7).validate().is_ok());
        assert!(EnvConfig::new(2, 0).validate().is_err());
        assert!(EnvConfig {
            max_steps: 0,
            ..EnvConfig::new(4, 0)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn turning_to_face_target_succeeds() {
        let mut s = bare_state(
            "goto the green key",
            Pos::new(3, 3),
            Direction::North,
            vec![obj(4, 3, Color::Green, ObjectKind::Key)],
        );
        let out = s.step(Action::TurnRight).unwrap();
        assert!(out.done && out.success);
        assert_eq!(out.reward, 1.0 - 0.9 * (1.0 / 48.0));
        assert!(out.reward > 0.0);
        assert_eq!(s.step(Action::Forward), Err(EnvError::SteppingFinishedEpisode));
    }

    #[test]
    fn forward_into_wall_and_objects() {
        let mut s = bare_state(
            "goto the green key",
            Pos::new(1, 1),
            Direction::West,
            vec![obj(5, 5, Color::Green, ObjectKind::Key), obj(1, 2, Color::Red, ObjectKind::Box)],
        );
        let out = s.step(Action::Forward).unwrap();
        assert_eq!(s.agent_pos, Pos::new(1, 1));
        assert_eq!(s.steps_taken, 1);
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
        s.agent_dir = Direction::South;
        s.step(Action::Forward).unwrap();
        assert_eq!(s.agent_pos, Pos::new(1, 1));
    }

    #[test]
    fn timeout_and_done_action() {
        let mut s = bare_state(
            "goto the green key",
            Pos::new(1, 1),
            Direction::West,
            vec![obj(5, 5, Color::Green, ObjectKind::Key)],
        );
        s.max_steps = 3;
        for _ in 0..2 {
            assert!(!s.step(Action::Open).unwrap().done);
        }
        let out = s.step(Action::Open).unwrap();
        assert!(out.done && !out.success);
        assert_eq!(out.reward, 0.0);

        let mut s = bare_state(
            "goto the green key",
            Pos::new(1, 1),
            Direction::West,
            vec![obj(5, 5, Color::Green, ObjectKind::Key)],
        );
        let out = s.step(Action::Done).unwrap();
        assert!(out.done && !out.success && out.reward == 0.0);
    }

    #[test]
    fn success_predicates() {
        let mut s = bare_state(
            "pickup the yellow box",
            Pos::new(2, 2),
            Direction::East,
            vec![obj(5, 5, Color::Red, ObjectKind::Ball)],
        );
        s.carrying = Some(Item {
            color: Color::Yellow,
            kind: ObjectKind::Box,
        });
        assert!(success(&s, &parse("pickup the yellow box").unwrap()));
        assert!(!success(&s, &parse("pickup the yellow key").unwrap()));

        let s = bare_state(
            "goto the red ball",
            Pos::new(4, 5),
            Direction::West,
            vec![obj(5, 5, Color::Red, ObjectKind::Ball)],
        );
        assert!(!s.success());

        let task = "goto the blue key";
        let keys = vec![obj(2, 1, Color::Blue, ObjectKind::Key), obj(4, 3, Color::Blue, ObjectKind::Key)];
        let a = bare_state(task, Pos::new(1, 1), Direction::East, keys.clone());
        let b = bare_state(task, Pos::new(4, 4), Direction::North, keys);
        assert!(a.success() && b.success());
    }

    #[test]
    fn pickup_and_drop_conserve_objects() {
        let mut s = bare_state(
            "pickup the blue ball",
            Pos::new(2, 2),
            Direction::East,
            vec![obj(3, 2, Color::Red, ObjectKind::Box), obj(6, 6, Color::Blue, ObjectKind::Ball)],
        );
        s.step(Action::Pickup).unwrap();
        assert_eq!(s.objects.len(), 1);
        assert_eq!(
            s.carrying,
            Some(Item {
                color: Color::Red,
                kind: ObjectKind::Box
            })
        );
        // already carrying: second pickup is a no-op
        s.agent_dir = Direction::South;
        s.step(Action::Pickup).unwrap();
        assert_eq!(s.objects.len(), 1);
        // dropping into the wall is refused
        s.agent_pos = Pos::new(1, 1);
        s.agent_dir = Direction::North;
        s.step(Action::Drop).unwrap();
        assert!(s.carrying.is_some());
        s.agent_dir = Direction::South;
        s.step(Action::Drop).unwrap();
        assert!(s.carrying.is_none());
        assert_eq!(s.objects.len(), 2);
        assert!(s.object_at(Pos::new(1, 2)).is_some());
        check_invariants(&s);
    }

    #[test]
    fn success_on_last_step_pays_floor_reward() {
        let mut s = bare_state(
            "pickup the blue ball",
            Pos::new(2, 2),
            Direction::East,
            vec![obj(3, 2, Color::Blue, ObjectKind::Ball)],
        );
        s.max_steps = 1;
        let out = s.step(Action::Pickup).unwrap();
        assert!(out.success);
        assert!((out.reward - 0.1).abs() < 1e-12);
    }

    #[test]
    fn direction_cycle() {
        for d in Direction::ALL {
            assert_eq!(d.left().right(), d);
            assert_eq!(d.right().right().right().right(), d);
        }
        assert_eq!(Direction::East.right(), Direction::South);
    }
}
