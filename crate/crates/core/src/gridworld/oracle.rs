//! Breadth-first planner over the exact step dynamics. Used as a test
//! oracle and as the scripted reference policy.

use std::collections::{HashSet, VecDeque};

use thiserror::Error;

use super::{Action, Direction, GridState, Item, Pos, WorldObject};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no action sequence reaches the goal within the remaining step budget")]
pub struct Unreachable;

/// Actions that can appear on a shortest plan. `Open` is a no-op and `Done`
/// ends the episode unsuccessfully.
const PLAN_ACTIONS: [Action; 5] = [
    Action::Forward,
    Action::TurnLeft,
    Action::TurnRight,
    Action::Pickup,
    Action::Drop,
];

#[derive(Clone, PartialEq, Eq, Hash)]
struct Layout {
    agent_pos: Pos,
    agent_dir: Direction,
    carrying: Option<Item>,
    objects: Vec<WorldObject>,
}

impl Layout {
    fn of(s: &GridState) -> Self {
        Layout {
            agent_pos: s.agent_pos,
            agent_dir: s.agent_dir,
            carrying: s.carrying,
            objects: s.objects.clone(),
        }
    }
}

/// Minimal action sequence that makes the task succeed, searched within
/// `max_steps - steps_taken` actions.
pub fn shortest_solution(state: &GridState) -> Result<Vec<Action>, Unreachable> {
    if state.success() {
        return Ok(Vec::new());
    }
    if state.done {
        return Err(Unreachable);
    }
    let budget = state.max_steps - state.steps_taken;

    // parent links: (parent node index, action)
    let mut nodes: Vec<(GridState, Option<(usize, Action)>)> = vec![(state.clone(), None)];
    let mut seen = HashSet::new();
    seen.insert(Layout::of(state));
    let mut queue = VecDeque::from([(0usize, 0usize)]);

    while let Some((idx, depth)) = queue.pop_front() {
        if depth == budget {
            continue;
        }
        for action in PLAN_ACTIONS {
            let mut next = nodes[idx].0.clone();
            let outcome = match next.step(action) {
                Ok(o) => o,
                Err(_) => continue,
            };
            if outcome.success {
                let mut plan = vec![action];
                let mut cur = idx;
                while let Some((parent, a)) = nodes[cur].1 {
                    plan.push(a);
                    cur = parent;
                }
                plan.reverse();
                return Ok(plan);
            }
            if outcome.done {
                continue;
            }
            if seen.insert(Layout::of(&next)) {
                nodes.push((next, Some((idx, action))));
                queue.push_back((nodes.len() - 1, depth + 1));
            }
        }
    }
    Err(Unreachable)
}

pub fn shortest_solution_length(state: &GridState) -> Result<usize, Unreachable> {
    shortest_solution(state).map(|p| p.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{reset, EnvConfig};
    use crate::instructions::{parse, Color, ObjectKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state_with(task: &str, agent: Pos, dir: Direction, objects: Vec<WorldObject>) -> GridState {
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

    fn green_key(x: i16, y: i16) -> WorldObject {
        WorldObject {
            pos: Pos::new(x, y),
            item: Item {
                color: Color::Green,
                kind: ObjectKind::Key,
            },
        }
    }

    #[test]
    fn already_successful_is_empty_plan() {
        let s = state_with("goto the green key", Pos::new(1, 1), Direction::East, vec![green_key(2, 1)]);
        assert_eq!(shortest_solution_length(&s), Ok(0));
    }

    #[test]
    fn one_gap_needs_one_forward() {
        let s = state_with("goto the green key", Pos::new(1, 1), Direction::East, vec![green_key(3, 1)]);
        assert_eq!(shortest_solution(&s), Ok(vec![Action::Forward]));
    }

    #[test]
    fn pickup_directly_ahead() {
        let s = state_with("pickup the green key", Pos::new(1, 1), Direction::East, vec![green_key(2, 1)]);
        assert_eq!(shortest_solution(&s), Ok(vec![Action::Pickup]));
    }

    #[test]
    fn blocked_target_is_reached_by_lifting_blocker() {
        // target in the corner, both neighbours blocked by other objects
        let blocker = |x, y| WorldObject {
            pos: Pos::new(x, y),
            item: Item {
                color: Color::Red,
                kind: ObjectKind::Box,
            },
        };
        let mut objs = vec![green_key(1, 1), blocker(2, 1), blocker(1, 2)];
        objs.sort();
        let s = state_with("goto the green key", Pos::new(3, 1), Direction::West, objs);
        let plan = shortest_solution(&s).unwrap();
        // lift the blocker, then step into the freed cell
        assert_eq!(plan, vec![Action::Pickup, Action::Forward]);
        let mut replay = s.clone();
        for a in &plan {
            replay.step(*a).unwrap();
        }
        assert!(replay.success());
    }

    #[test]
    fn budget_too_small_is_unreachable() {
        let mut s = state_with("goto the green key", Pos::new(1, 1), Direction::West, vec![green_key(6, 6)]);
        s.max_steps = 3;
        assert_eq!(shortest_solution_length(&s), Err(Unreachable));
    }

    #[test]
    fn plans_replay_to_success() {
        let cfg = EnvConfig::new(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for task in crate::instructions::enumerate_all() {
            let s = reset(&cfg, task, &mut rng).unwrap();
            let plan = shortest_solution(&s).unwrap();
            let mut replay = s.clone();
            let mut last = None;
            for a in &plan {
                last = Some(replay.step(*a).unwrap());
            }
            assert!(last.unwrap().success);
        }
    }
}
