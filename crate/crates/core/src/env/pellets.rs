use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::catch::{FALL_PERIOD, SERVE_DELAY};
use super::{check_action, Action, Canvas, Direction, Frame, GameConfig, RawGame, RawStep};

const PADDLE_WIDTH: i32 = 5;

const ACTIONS: [Action; 3] = [Action::Noop, Action::Left, Action::Right];

/// Chance that a wave's valuable pellet is the top-value kind.
const TOP_VALUE_PROB: f64 = 0.4;

/// Pellet brightness by value class (low, mid, top).
const SHADES: [u8; 3] = [90, 170, 255];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pellet {
    pub x: i32,
    /// 0 = low, 1 = mid, 2 = top value.
    pub class: usize,
}

/// Mixed-value catcher. Every wave drops two pellets side by side but too far
/// apart to catch both: one low-value pellet and one worth ten or fifty times
/// more. Missing both costs a life and the configured penalty.
#[derive(Clone, Debug)]
pub struct MiniPellets {
    grid: i32,
    cell_px: usize,
    waves: usize,
    start_lives: u32,
    values: [f64; 3],
    penalty: f64,
    flicker: bool,
    rng: ChaCha8Rng,
    paddle: i32,
    pellets: [Pellet; 2],
    row: i32,
    fall_timer: u32,
    serve_wait: u32,
    waves_done: usize,
    lives: u32,
    score: f64,
    frame_no: u64,
}

impl MiniPellets {
    pub fn new(config: &GameConfig) -> Self {
        let mut game = MiniPellets {
            grid: config.grid as i32,
            cell_px: config.cell_px,
            waves: config.rounds,
            start_lives: config.lives.unwrap_or(3),
            values: [config.reward(0, 1.0), config.reward(1, 10.0), config.reward(2, 50.0)],
            penalty: config.terminal_penalty,
            flicker: config.flicker,
            rng: ChaCha8Rng::seed_from_u64(0),
            paddle: 0,
            pellets: [Pellet { x: 0, class: 0 }; 2],
            row: 0,
            fall_timer: 0,
            serve_wait: 0,
            waves_done: 0,
            lives: 0,
            score: 0.0,
            frame_no: 0,
        };
        game.reset(0);
        game
    }

    fn spawn(&mut self) {
        let half = self.grid / 2;
        let left = self.rng.random_range(1..=half - 4);
        let right = self.rng.random_range(half + 2..=self.grid - 2);
        let valuable = if self.rng.random_bool(TOP_VALUE_PROB) { 2 } else { 1 };
        let (lc, rc) = if self.rng.random_bool(0.5) { (valuable, 0) } else { (0, valuable) };
        self.pellets = [Pellet { x: left, class: lc }, Pellet { x: right, class: rc }];
        self.row = 0;
        self.fall_timer = 0;
    }

    pub fn pellets(&self) -> [Pellet; 2] {
        self.pellets
    }

    pub fn values(&self) -> [f64; 3] {
        self.values
    }

    fn covers(&self, x: i32) -> bool {
        x >= self.paddle && x < self.paddle + PADDLE_WIDTH
    }
}

impl RawGame for MiniPellets {
    fn name(&self) -> &str {
        "mini_pellets"
    }

    fn actions(&self) -> &[Action] {
        &ACTIONS
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.paddle = (self.grid - PADDLE_WIDTH) / 2;
        self.waves_done = 0;
        self.lives = self.start_lives;
        self.score = 0.0;
        self.frame_no = 0;
        self.serve_wait = SERVE_DELAY;
        self.spawn();
    }

    fn step(&mut self, action: usize) -> Result<RawStep> {
        let action = check_action(&ACTIONS, action)?;
        let mut out = RawStep::default();
        self.frame_no += 1;
        match action.direction() {
            Some(Direction::Left) => self.paddle = (self.paddle - 1).max(0),
            Some(Direction::Right) => self.paddle = (self.paddle + 1).min(self.grid - PADDLE_WIDTH),
            _ => {}
        }
        if self.serve_wait > 0 {
            self.serve_wait -= 1;
            return Ok(out);
        }
        self.fall_timer += 1;
        if self.fall_timer < FALL_PERIOD {
            return Ok(out);
        }
        self.fall_timer = 0;
        self.row += 1;
        if self.row >= self.grid - 2 {
            let caught = self.pellets.iter().find(|p| self.covers(p.x)).copied();
            match caught {
                Some(p) => out.reward = self.values[p.class],
                None => {
                    out.reward = -self.penalty;
                    self.lives -= 1;
                    out.life_lost = true;
                    self.serve_wait = SERVE_DELAY;
                }
            }
            self.score += out.reward;
            self.waves_done += 1;
            out.game_over = self.lives == 0 || self.waves_done >= self.waves;
            self.spawn();
        }
        Ok(out)
    }

    fn render(&self, frame: &mut Frame) {
        let mut c = Canvas::new(frame, self.cell_px);
        for dx in 0..PADDLE_WIDTH {
            c.cell(self.paddle + dx, self.grid - 1, 255);
        }
        if !self.flicker || self.frame_no % 2 == 0 {
            for p in &self.pellets {
                c.cell(p.x, self.row, SHADES[p.class]);
                if p.class == 2 {
                    c.cell(p.x, self.row - 1, SHADES[1]);
                }
            }
        }
    }

    fn frame_size(&self) -> (usize, usize) {
        let side = self.grid as usize * self.cell_px;
        (side, side)
    }

    fn lives(&self) -> u32 {
        self.lives
    }

    fn score(&self) -> f64 {
        self.score
    }

    fn rules(&self) -> &str {
        "Two pellets fall at once; you can only reach one. Dim pellets are worth 1, \
         bright ones 10, bright ones with a tail 50. Missing both costs a life."
    }

    /// Heads for the more valuable pellet.
    fn expert_action(&self) -> usize {
        let target = if self.pellets[0].class > self.pellets[1].class {
            self.pellets[0].x
        } else {
            self.pellets[1].x
        };
        let centre = self.paddle + PADDLE_WIDTH / 2;
        match target.cmp(&centre) {
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Greater => 2,
            std::cmp::Ordering::Equal => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GameId;
    use std::collections::BTreeSet;

    #[test]
    fn expert_always_takes_the_valuable_pellet() {
        let mut g = MiniPellets::new(&GameConfig::small(GameId::MiniPellets));
        for seed in 0..10 {
            g.reset(seed);
            loop {
                let s = g.step(g.expert_action()).unwrap();
                assert!(!s.life_lost);
                assert!(s.reward == 0.0 || s.reward == 10.0 || s.reward == 50.0);
                if s.game_over {
                    break;
                }
            }
        }
    }

    #[test]
    fn reward_support_matches_configuration() {
        let mut cfg = GameConfig::small(GameId::MiniPellets);
        cfg.terminal_penalty = 5.0;
        cfg.rounds = 1000;
        cfg.lives = Some(1000);
        let mut g = MiniPellets::new(&cfg);
        g.reset(11);
        let mut seen = BTreeSet::new();
        for t in 0..200_000u64 {
            // alternate between drifting and chasing so every outcome occurs
            let a = if (t / 300) % 3 == 0 { g.expert_action() } else { ((t / 40) % 3) as usize };
            let s = g.step(a).unwrap();
            seen.insert((s.reward * 10.0) as i64);
            if s.game_over {
                g.reset(t);
            }
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![-50, 0, 10, 100, 500]);
    }

    #[test]
    fn pellets_are_out_of_joint_reach() {
        let mut g = MiniPellets::new(&GameConfig::small(GameId::MiniPellets));
        for seed in 0..200 {
            g.reset(seed);
            let [a, b] = g.pellets();
            assert!(b.x - a.x >= PADDLE_WIDTH + 1);
            assert!(a.class == 0 || b.class == 0);
            assert!(a.class != b.class);
        }
    }
}
