use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{check_action, Action, Canvas, Direction, Frame, GameConfig, RawGame, RawStep};

const PADDLE_WIDTH: i32 = 5;
/// Raw frames per one-cell fall.
pub(crate) const FALL_PERIOD: u32 = 2;
/// Raw frames the ball hangs at the top after a life starts.
pub(crate) const SERVE_DELAY: u32 = 32;

const ACTIONS: [Action; 3] = [Action::Noop, Action::Left, Action::Right];

/// A ball drops from a random column; a paddle on the bottom row catches it.
/// Each catch scores, each miss costs a life; the game ends after a fixed
/// number of drops or when the lives run out.
#[derive(Clone, Debug)]
pub struct MiniCatch {
    grid: i32,
    cell_px: usize,
    drops: usize,
    start_lives: u32,
    catch_reward: f64,
    flicker: bool,
    rng: ChaCha8Rng,
    paddle: i32,
    ball: (i32, i32),
    fall_timer: u32,
    serve_wait: u32,
    drops_done: usize,
    lives: u32,
    score: f64,
    frame_no: u64,
}

impl MiniCatch {
    pub fn new(config: &GameConfig) -> Self {
        let mut game = MiniCatch {
            grid: config.grid as i32,
            cell_px: config.cell_px,
            drops: config.rounds,
            start_lives: config.lives.unwrap_or(3),
            catch_reward: config.reward(0, 1.0),
            flicker: config.flicker,
            rng: ChaCha8Rng::seed_from_u64(0),
            paddle: 0,
            ball: (0, 0),
            fall_timer: 0,
            serve_wait: 0,
            drops_done: 0,
            lives: 0,
            score: 0.0,
            frame_no: 0,
        };
        game.reset(0);
        game
    }

    fn spawn(&mut self) {
        self.ball = (self.rng.random_range(0..self.grid), 0);
        self.fall_timer = 0;
    }

    /// Landing row: the row directly above the paddle.
    fn landing_row(&self) -> i32 {
        self.grid - 2
    }

    pub fn ball(&self) -> (i32, i32) {
        self.ball
    }

    pub fn paddle(&self) -> i32 {
        self.paddle
    }

    pub fn drops_per_game(&self) -> usize {
        self.drops
    }
}

impl RawGame for MiniCatch {
    fn name(&self) -> &str {
        "mini_catch"
    }

    fn actions(&self) -> &[Action] {
        &ACTIONS
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.paddle = (self.grid - PADDLE_WIDTH) / 2;
        self.drops_done = 0;
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
        self.ball.1 += 1;
        if self.ball.1 >= self.landing_row() {
            let x = self.ball.0;
            if x >= self.paddle && x < self.paddle + PADDLE_WIDTH {
                out.reward = self.catch_reward;
                self.score += self.catch_reward;
            } else {
                self.lives -= 1;
                out.life_lost = true;
                self.serve_wait = SERVE_DELAY;
            }
            self.drops_done += 1;
            out.game_over = self.lives == 0 || self.drops_done >= self.drops;
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
            c.cell(self.ball.0, self.ball.1, 255);
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
        "Move the paddle left and right to catch the falling ball. A miss costs a life."
    }

    fn expert_action(&self) -> usize {
        let centre = self.paddle + PADDLE_WIDTH / 2;
        match self.ball.0.cmp(&centre) {
            std::cmp::Ordering::Less => 1,
            std::cmp::Ordering::Greater => 2,
            std::cmp::Ordering::Equal => 0,
        }
    }
}
