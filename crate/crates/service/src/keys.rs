use serde::{Deserialize, Serialize};

use lfd_core::env::{Action, Direction};

/// What a physical key means to the games.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyRole {
    Direction(Direction),
    Fire,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyBinding {
    /// `KeyboardEvent.code` value.
    pub code: String,
    pub action: String,
}

const BINDINGS: [(&str, KeyRole); 9] = [
    ("ArrowLeft", KeyRole::Direction(Direction::Left)),
    ("ArrowRight", KeyRole::Direction(Direction::Right)),
    ("ArrowUp", KeyRole::Direction(Direction::Up)),
    ("ArrowDown", KeyRole::Direction(Direction::Down)),
    ("KeyA", KeyRole::Direction(Direction::Left)),
    ("KeyD", KeyRole::Direction(Direction::Right)),
    ("KeyW", KeyRole::Direction(Direction::Up)),
    ("KeyS", KeyRole::Direction(Direction::Down)),
    ("Space", KeyRole::Fire),
];

pub fn key_role(code: &str) -> Option<KeyRole> {
    BINDINGS.iter().find(|(c, _)| *c == code).map(|(_, r)| *r)
}

/// Bindings that produce an action present in `actions`.
pub fn bindings_for(actions: &[Action]) -> Vec<KeyBinding> {
    BINDINGS
        .iter()
        .filter_map(|(code, role)| {
            let action = match role {
                KeyRole::Direction(d) => Action::compose(Some(*d), false),
                KeyRole::Fire => Action::Fire,
            };
            actions.contains(&action).then(|| KeyBinding {
                code: code.to_string(),
                action: action.name().to_string(),
            })
        })
        .collect()
}

/// Currently held keys, in press order.
#[derive(Clone, Debug, Default)]
pub struct HeldKeys {
    held: Vec<String>,
}

impl HeldKeys {
    /// Records a key transition; unknown codes are ignored. Returns whether
    /// the key is bound.
    pub fn update(&mut self, code: &str, down: bool) -> bool {
        if key_role(code).is_none() {
            return false;
        }
        self.held.retain(|c| c != code);
        if down {
            self.held.push(code.to_string());
        }
        true
    }

    pub fn clear(&mut self) {
        self.held.clear();
    }

    pub fn held(&self) -> &[String] {
        &self.held
    }

    /// Resolves the chord to an index into `actions`: a direction plus fire
    /// beats a direction, which beats fire alone, which beats NOOP. Among
    /// held directions the most recently pressed wins.
    pub fn resolve(&self, actions: &[Action]) -> usize {
        let fire = self.held.iter().any(|c| key_role(c) == Some(KeyRole::Fire));
        let directions: Vec<Direction> = self
            .held
            .iter()
            .rev()
            .filter_map(|c| match key_role(c) {
                Some(KeyRole::Direction(d)) => Some(d),
                _ => None,
            })
            .collect();
        let mut candidates = Vec::new();
        if fire {
            candidates.extend(directions.iter().map(|&d| Action::compose(Some(d), true)));
        }
        candidates.extend(directions.iter().map(|&d| Action::compose(Some(d), false)));
        if fire {
            candidates.push(Action::Fire);
        }
        candidates.push(Action::Noop);
        candidates
            .into_iter()
            .find_map(|a| actions.iter().position(|&x| x == a))
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BREAKOUT: [Action; 6] = [
        Action::Noop,
        Action::Fire,
        Action::Left,
        Action::Right,
        Action::LeftFire,
        Action::RightFire,
    ];
    const CATCH: [Action; 3] = [Action::Noop, Action::Left, Action::Right];

    #[test]
    fn chord_priority() {
        let mut k = HeldKeys::default();
        assert_eq!(k.resolve(&BREAKOUT), 0);
        k.update("Space", true);
        assert_eq!(k.resolve(&BREAKOUT), 1);
        k.update("ArrowLeft", true);
        assert_eq!(k.resolve(&BREAKOUT), 4);
        k.update("Space", false);
        assert_eq!(k.resolve(&BREAKOUT), 2);
    }

    #[test]
    fn latest_direction_wins() {
        let mut k = HeldKeys::default();
        k.update("ArrowLeft", true);
        k.update("ArrowRight", true);
        assert_eq!(k.resolve(&CATCH), 2);
        k.update("ArrowRight", false);
        assert_eq!(k.resolve(&CATCH), 1);
    }

    #[test]
    fn unsupported_actions_fall_back() {
        let mut k = HeldKeys::default();
        k.update("Space", true);
        k.update("ArrowRight", true);
        assert_eq!(k.resolve(&CATCH), 2);
        k.update("ArrowRight", false);
        assert_eq!(k.resolve(&CATCH), 0);
        k.update("ArrowUp", true);
        assert_eq!(k.resolve(&CATCH), 0);
    }

    #[test]
    fn unknown_keys_are_ignored() {
        let mut k = HeldKeys::default();
        assert!(!k.update("KeyZ", true));
        assert!(k.held().is_empty());
    }

    #[test]
    fn bindings_follow_action_set() {
        let b = bindings_for(&CATCH);
        assert!(b.iter().all(|b| b.action == "LEFT" || b.action == "RIGHT"));
        assert_eq!(b.len(), 4);
    }
}
