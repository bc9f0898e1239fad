use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{check_action, Action, Canvas, Direction, Frame, GameConfig, RawGame, RawStep};

const ACTIONS: [Action; 6] = [
    Action::Noop,
    Action::Fire,
    Action::Left,
    Action::Right,
    Action::LeftFire,
    Action::RightFire,
];

const PADDLE_WIDTH: i32 = 4;
const BALL_PERIOD: u32 = 2;
const BRICK_TOP: i32 = 3;
const BRICK_ROWS: i32 = 3;
const BRICK_SHADES: [u8; 3] = [200, 160, 120];

/// Paddle-and-bricks game. The ball rests on the paddle until FIRE launches
/// it; each brick scores once and dropping the ball costs a life.
#[derive(Clone, Debug)]
pub struct MiniBreakout {
    grid: i32,
    cell_px: usize,
    start_lives: u32,
    brick_reward: f64,
    flicker: bool,
    rng: ChaCha8Rng,
    bricks: Vec<bool>,
    paddle: i32,
    ball: (i32, i32),
    velocity: (i32, i32),
    held: bool,
    ball_timer: u32,
    lives: u32,
    score: f64,
    frame_no: u64,
}

impl MiniBreakout {
    pub fn new(config: &GameConfig) -> Self {
        let grid = config.grid as i32;
        let mut game = MiniBreakout {
            grid,
            cell_px: config.cell_px,
            start_lives: config.lives.unwrap_or(3),
            brick_reward: config.reward(0, 1.0),
            flicker: config.flicker,
            rng: ChaCha8Rng::seed_from_u64(0),
            bricks: Vec::new(),
            paddle: 0,
            ball: (0, 0),
            velocity: (0, 0),
            held: true,
            ball_timer: 0,
            lives: 0,
            score: 0.0,
            frame_no: 0,
        };
        game.reset(0);
        game
    }

    pub fn bricks_left(&self) -> usize {
        self.bricks.iter().filter(|&&b| b).count()
    }

    pub fn is_held(&self) -> bool {
        self.held
    }

    fn brick_index(&self, x: i32, y: i32) -> Option<usize> {
        if x < 0 || x >= self.grid || y < BRICK_TOP || y >= BRICK_TOP + BRICK_ROWS {
            return None;
        }
        Some(((y - BRICK_TOP) * self.grid + x) as usize)
    }

    fn hit_brick(&mut self, x: i32, y: i32) -> bool {
        match self.brick_index(x, y) {
            Some(i) if self.bricks[i] => {
                self.bricks[i] = false;
                true
            }
            _ => false,
        }
    }

    fn rest_on_paddle(&mut self) {
        self.held = true;
        self.ball = (self.paddle + PADDLE_WIDTH / 2, self.grid - 2);
        self.velocity = (0, 0);
        self.ball_timer = 0;
    }

    fn move_ball(&mut self, out: &mut RawStep) {
        let (x, y) = self.ball;
        let (mut dx, mut dy) = self.velocity;
        if x + dx < 0 || x + dx >= self.grid {
            dx = -dx;
        }
        if y + dy < 0 {
            dy = -dy;
        }
        if self.hit_brick(x, y + dy) || self.hit_brick(x + dx, y + dy) {
            out.reward += self.brick_reward;
            dy = -dy;
        }
        let paddle_row = self.grid - 1;
        if dy > 0 && y + dy == paddle_row {
            let landing = x + dx;
            let offset = landing - self.paddle;
            if (0..PADDLE_WIDTH).contains(&offset) {
                dy = -1;
                dx = if offset < PADDLE_WIDTH / 2 { -1 } else { 1 };
                self.velocity = (dx, dy);
                self.ball = (x, y);
                return;
            }
            self.lives -= 1;
            out.life_lost = true;
            self.rest_on_paddle();
            return;
        }
        self.velocity = (dx, dy);
        self.ball = (x + dx, y + dy);
    }
}

impl RawGame for MiniBreakout {
    fn name(&self) -> &str {
        "mini_breakout"
    }

    fn actions(&self) -> &[Action] {
        &ACTIONS
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.bricks = vec![true; (self.grid * BRICK_ROWS) as usize];
        self.paddle = (self.grid - PADDLE_WIDTH) / 2;
        self.lives = self.start_lives;
        self.score = 0.0;
        self.frame_no = 0;
        self.rest_on_paddle();
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
        if self.held {
            self.ball.0 = self.paddle + PADDLE_WIDTH / 2;
            if action.fires() {
                self.held = false;
                self.velocity = (if self.rng.random_bool(0.5) { 1 } else { -1 }, -1);
            }
            return Ok(out);
        }
        self.ball_timer += 1;
        if self.ball_timer >= BALL_PERIOD {
            self.ball_timer = 0;
            self.move_ball(&mut out);
        }
        self.score += out.reward;
        out.game_over = self.lives == 0 || self.bricks_left() == 0;
        Ok(out)
    }

    fn render(&self, frame: &mut Frame) {
        let mut c = Canvas::new(frame, self.cell_px);
        for row in 0..BRICK_ROWS {
            for x in 0..self.grid {
                if self.bricks[(row * self.grid + x) as usize] {
                    c.cell(x, BRICK_TOP + row, BRICK_SHADES[row as usize % BRICK_SHADES.len()]);
                }
            }
        }
        for dx in 0..PADDLE_WIDTH {
            c.cell(self.paddle + dx, self.grid - 1, 255);
        }
        if self.held || !self.flicker || self.frame_no % 2 == 0 {
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

    fn needs_fire(&self) -> bool {
        true
    }

    fn rules(&self) -> &str {
        "Press FIRE to launch the ball, then keep it in play with the paddle. \
         Every brick scores a point; dropping the ball costs a life."
    }

    fn expert_action(&self) -> usize {
        if self.held {
            return 1;
        }
        let target = self.ball.0 + self.velocity.0;
        let centre = self.paddle + PADDLE_WIDTH / 2;
        match target.cmp(&centre) {
            std::cmp::Ordering::Less => 2,
            std::cmp::Ordering::Greater => 3,
            std::cmp::Ordering::Equal => 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::GameId;

    fn small() -> MiniBreakout {
        MiniBreakout::new(&GameConfig::small(GameId::MiniBreakout))
    }

    #[test]
    fn ball_waits_for_fire() {
        let mut g = small();
        g.reset(0);
        let before = g.ball;
        for _ in 0..100 {
            assert_eq!(g.step(0).unwrap(), RawStep::default());
        }
        assert!(g.is_held());
        assert_eq!(g.ball, before);
        g.step(1).unwrap();
        assert!(!g.is_held());
    }

    #[test]
    fn expert_scores_and_reward_counts_bricks() {
        let mut g = small();
        g.reset(5);
        let total_bricks = g.bricks_left();
        let mut total = 0.0;
        for _ in 0..20_000 {
            let s = g.step(g.expert_action()).unwrap();
            total += s.reward;
            if s.game_over {
                break;
            }
        }
        assert!(total >= 10.0, "expert scored {total}");
        assert_eq!(total as usize, total_bricks - g.bricks_left());
        assert_eq!(total, g.score());
    }

    #[test]
    fn missing_costs_lives_until_game_over() {
        let mut g = small();
        g.reset(2);
        let mut lost = 0;
        for t in 0..100_000 {
            // fire, then stand still at the left wall
            let a = if t % 50 == 0 { 1 } else { 2 };
            let s = g.step(a).unwrap();
            lost += s.life_lost as u32;
            if s.game_over {
                break;
            }
        }
        assert_eq!(lost, 3);
        assert_eq!(g.lives(), 0);
    }
}
