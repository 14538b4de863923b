//! Key-and-door gridworld rendered to the policy's 32×32×3 input.

use rand::Rng;

use crate::error::{HarnessError, Result};

pub const OBS_SIDE: usize = 32;
pub const OBS_CHANNELS: usize = 3;
pub const NUM_ACTIONS: usize = 4;

/// Grid cell as `(x, y)`, `y` growing downwards.
pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(i: usize) -> Action {
        Self::ALL[i % NUM_ACTIONS]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// The agent must pick up the key and then reach the door.
///
/// Every step costs `1/max_steps`; reaching the door with the key pays 1 and
/// ends the episode. Moves into the border leave the agent in place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub agent: Cell,
    pub key: Cell,
    pub door: Cell,
    pub has_key: bool,
    pub steps: usize,
    pub max_steps: usize,
}

impl Default for GridWorld {
    fn default() -> Self {
        Self::new(8, 8, (3, 3), (4, 4), 64).expect("default layout is valid")
    }
}

impl GridWorld {
    pub fn new(width: usize, height: usize, key: Cell, door: Cell, max_steps: usize) -> Result<Self> {
        if width == 0 || height == 0 || !OBS_SIDE.is_multiple_of(width) || !OBS_SIDE.is_multiple_of(height) {
            return Err(HarnessError::Contract(format!("grid {width}x{height} must divide the {OBS_SIDE}-pixel image")));
        }
        let inside = |(x, y): Cell| x < width && y < height;
        if !inside(key) || !inside(door) || key == door || max_steps == 0 {
            return Err(HarnessError::Contract("key and door must be distinct cells inside the grid".into()));
        }
        Ok(Self { width, height, agent: (0, 0), key, door, has_key: false, steps: 0, max_steps })
    }

    /// Start a new episode from a uniformly drawn cell other than key and door.
    pub fn reset<R: Rng>(&mut self, rng: &mut R) {
        let free = self.width * self.height - 2;
        let mut k = rng.random_range(0..free);
        for y in 0..self.height {
            for x in 0..self.width {
                if (x, y) == self.key || (x, y) == self.door {
                    continue;
                }
                if k == 0 {
                    self.reset_to((x, y), false);
                    return;
                }
                k -= 1;
            }
        }
    }

    pub fn reset_to(&mut self, agent: Cell, has_key: bool) {
        self.agent = agent;
        self.has_key = has_key || agent == self.key;
        self.steps = 0;
    }

    pub fn step(&mut self, action: Action) -> Step {
        let (x, y) = self.agent;
        self.agent = match action {
            Action::Up => (x, y.saturating_sub(1)),
            Action::Down => (x, (y + 1).min(self.height - 1)),
            Action::Left => (x.saturating_sub(1), y),
            Action::Right => ((x + 1).min(self.width - 1), y),
        };
        self.steps += 1;
        if self.agent == self.key {
            self.has_key = true;
        }
        let success = self.has_key && self.agent == self.door;
        let mut reward = -1.0 / self.max_steps as f64;
        if success {
            reward += 1.0;
        }
        Step { reward, done: success || self.steps >= self.max_steps, success }
    }

    /// HWC image in `[0, 1]`: agent red, key green (until picked up), door blue.
    pub fn render(&self) -> Vec<f64> {
        let mut img = vec![0.0; OBS_SIDE * OBS_SIDE * OBS_CHANNELS];
        let (cw, ch) = (OBS_SIDE / self.width, OBS_SIDE / self.height);
        let mut paint = |(x, y): Cell, channel: usize| {
            for py in y * ch..(y + 1) * ch {
                for px in x * cw..(x + 1) * cw {
                    img[(py * OBS_SIDE + px) * OBS_CHANNELS + channel] = 1.0;
                }
            }
        };
        paint(self.door, 2);
        if !self.has_key {
            paint(self.key, 1);
        }
        paint(self.agent, 0);
        img
    }

    /// Shortest episode length from the current state.
    pub fn optimal_steps(&self) -> usize {
        let d = |a: Cell, b: Cell| a.0.abs_diff(b.0) + a.1.abs_diff(b.1);
        if self.has_key {
            d(self.agent, self.door)
        } else {
            d(self.agent, self.key) + d(self.key, self.door)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn border_bump_stays_put() {
        let mut env = GridWorld::default();
        env.reset_to((0, 0), false);
        env.step(Action::Up);
        assert_eq!(env.agent, (0, 0));
        env.step(Action::Left);
        assert_eq!(env.agent, (0, 0));
        env.reset_to((7, 7), false);
        env.step(Action::Down);
        env.step(Action::Right);
        assert_eq!(env.agent, (7, 7));
    }

    #[test]
    fn door_needs_key() {
        let mut env = GridWorld::default();
        env.reset_to((4, 5), false);
        let s = env.step(Action::Up);
        assert_eq!(env.agent, (4, 4));
        assert!(!s.done && !s.success);
        env.step(Action::Left);
        env.step(Action::Up);
        assert!(env.has_key);
        env.step(Action::Right);
        let s = env.step(Action::Down);
        assert!(s.success && s.done);
    }

    #[test]
    fn optimal_return() {
        let mut env = GridWorld::default();
        env.reset_to((0, 3), false);
        assert_eq!(env.optimal_steps(), 5);
        let mut total = 0.0;
        for a in [Action::Right, Action::Right, Action::Right, Action::Right, Action::Down] {
            total += env.step(a).reward;
        }
        assert!((total - (1.0 - 5.0 / 64.0)).abs() < 1e-12);
    }

    #[test]
    fn timeout() {
        let mut env = GridWorld::default();
        env.reset_to((0, 0), false);
        let mut last = None;
        for _ in 0..64 {
            last = Some(env.step(Action::Up));
        }
        let s = last.unwrap();
        assert!(s.done && !s.success);
    }

    #[test]
    fn reset_avoids_key_and_door() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut env = GridWorld::default();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..2000 {
            env.reset(&mut rng);
            assert!(env.agent != env.key && env.agent != env.door);
            assert!(!env.has_key && env.steps == 0);
            seen.insert(env.agent);
        }
        assert_eq!(seen.len(), 62);
    }

    #[test]
    fn render_layout() {
        let mut env = GridWorld::default();
        env.reset_to((1, 2), false);
        let img = env.render();
        let px = |x: usize, y: usize, c: usize| img[(y * OBS_SIDE + x) * OBS_CHANNELS + c];
        assert_eq!(px(4, 8, 0), 1.0);
        assert_eq!(px(7, 11, 0), 1.0);
        assert_eq!(px(8, 8, 0), 0.0);
        assert_eq!(px(12, 12, 1), 1.0);
        assert_eq!(px(16, 16, 2), 1.0);
        assert_eq!(img.iter().filter(|&&v| v == 1.0).count(), 48);
        env.reset_to(env.key, false);
        assert!(env.has_key);
        assert_eq!(env.render().iter().filter(|&&v| v == 1.0).count(), 32);
    }

    #[test]
    fn bad_layouts() {
        assert!(GridWorld::new(7, 8, (0, 0), (1, 1), 64).is_err());
        assert!(GridWorld::new(8, 8, (1, 1), (1, 1), 64).is_err());
        assert!(GridWorld::new(8, 8, (8, 1), (1, 1), 64).is_err());
    }
}
