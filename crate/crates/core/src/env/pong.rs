use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{check_action, Action, Canvas, Direction, Frame, GameConfig, RawGame, RawStep};

const ACTIONS: [Action; 6] = [
    Action::Noop,
    Action::Fire,
    Action::Up,
    Action::Down,
    Action::UpFire,
    Action::DownFire,
];

const PADDLE_HEIGHT: i32 = 3;
const BALL_PERIOD: u32 = 2;
/// Raw frames per one-cell move of the computer paddle.
const OPPONENT_PERIOD: u32 = 2;
const SERVE_DELAY: u32 = 16;
const POINTS_TO_WIN: u32 = 5;

/// Two-paddle rally. The player controls the right paddle; the computer
/// tracks the ball at half the player's speed. Each point scores ±1 and the
/// game ends when either side reaches five.
#[derive(Clone, Debug)]
pub struct MiniPong {
    grid: i32,
    cell_px: usize,
    point_reward: f64,
    flicker: bool,
    rng: ChaCha8Rng,
    player: i32,
    opponent: i32,
    ball: (i32, i32),
    velocity: (i32, i32),
    ball_timer: u32,
    opponent_timer: u32,
    serve_wait: u32,
    points: (u32, u32),
    score: f64,
    frame_no: u64,
}

impl MiniPong {
    pub fn new(config: &GameConfig) -> Self {
        let mut game = MiniPong {
            grid: config.grid as i32,
            cell_px: config.cell_px,
            point_reward: config.reward(0, 1.0),
            flicker: config.flicker,
            rng: ChaCha8Rng::seed_from_u64(0),
            player: 0,
            opponent: 0,
            ball: (0, 0),
            velocity: (0, 0),
            ball_timer: 0,
            opponent_timer: 0,
            serve_wait: 0,
            points: (0, 0),
            score: 0.0,
            frame_no: 0,
        };
        game.reset(0);
        game
    }

    /// (player, computer) points in the current game.
    pub fn points(&self) -> (u32, u32) {
        self.points
    }

    fn serve(&mut self) {
        let mid = self.grid / 2;
        self.ball = (mid, self.rng.random_range(mid - 3..=mid + 3));
        let dx = if self.rng.random_bool(0.5) { 1 } else { -1 };
        let dy = self.rng.random_range(-1..=1);
        self.velocity = (dx, dy);
        self.ball_timer = 0;
        self.serve_wait = SERVE_DELAY;
    }

    fn player_column(&self) -> i32 {
        self.grid - 2
    }

    fn reflect_y(&self, y: i32, dy: i32) -> (i32, i32) {
        let max = self.grid - 1;
        if y < 0 {
            (-y, -dy)
        } else if y > max {
            (2 * max - y, -dy)
        } else {
            (y, dy)
        }
    }

    fn paddle_bounce(&mut self, paddle: i32, y: i32) -> Option<i32> {
        let offset = y - paddle;
        if !(0..PADDLE_HEIGHT).contains(&offset) {
            return None;
        }
        let dy = match offset {
            0 => -2,
            o if o == PADDLE_HEIGHT - 1 => 2,
            _ => match self.velocity.1.signum() {
                0 => {
                    if self.rng.random_bool(0.5) {
                        1
                    } else {
                        -1
                    }
                }
                s => s,
            },
        };
        Some(dy)
    }

    fn move_ball(&mut self, out: &mut RawStep) {
        let (x, y) = self.ball;
        let (dx, dy) = self.velocity;
        let (ny, ndy) = self.reflect_y(y + dy, dy);
        let nx = x + dx;
        let paddle = if dx > 0 && nx == self.player_column() {
            Some(self.player)
        } else if dx < 0 && nx == 1 {
            Some(self.opponent)
        } else {
            None
        };
        if let Some(p) = paddle {
            if let Some(bounce) = self.paddle_bounce(p, ny) {
                self.velocity = (-dx, bounce);
                self.ball = (x, ny);
                return;
            }
        }
        self.ball = (nx, ny);
        self.velocity = (dx, ndy);
        if nx <= 0 {
            self.points.0 += 1;
            out.reward = self.point_reward;
            self.serve();
        } else if nx >= self.grid - 1 {
            self.points.1 += 1;
            out.reward = -self.point_reward;
            self.serve();
        }
    }
}

impl RawGame for MiniPong {
    fn name(&self) -> &str {
        "mini_pong"
    }

    fn actions(&self) -> &[Action] {
        &ACTIONS
    }

    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.player = (self.grid - PADDLE_HEIGHT) / 2;
        self.opponent = self.player;
        self.points = (0, 0);
        self.score = 0.0;
        self.frame_no = 0;
        self.opponent_timer = 0;
        self.serve();
    }

    fn step(&mut self, action: usize) -> Result<RawStep> {
        let action = check_action(&ACTIONS, action)?;
        let mut out = RawStep::default();
        self.frame_no += 1;
        let lowest = self.grid - PADDLE_HEIGHT;
        match action.direction() {
            Some(Direction::Up) => self.player = (self.player - 1).max(0),
            Some(Direction::Down) => self.player = (self.player + 1).min(lowest),
            _ => {}
        }
        self.opponent_timer += 1;
        if self.opponent_timer >= OPPONENT_PERIOD {
            self.opponent_timer = 0;
            let centre = self.opponent + PADDLE_HEIGHT / 2;
            self.opponent = (self.opponent + (self.ball.1 - centre).signum()).clamp(0, lowest);
        }
        if self.serve_wait > 0 {
            self.serve_wait -= 1;
            return Ok(out);
        }
        self.ball_timer += 1;
        if self.ball_timer >= BALL_PERIOD {
            self.ball_timer = 0;
            self.move_ball(&mut out);
        }
        self.score += out.reward;
        out.game_over = self.points.0 >= POINTS_TO_WIN || self.points.1 >= POINTS_TO_WIN;
        Ok(out)
    }

    fn render(&self, frame: &mut Frame) {
        let mut c = Canvas::new(frame, self.cell_px);
        for dy in 0..PADDLE_HEIGHT {
            c.cell(1, self.opponent + dy, 180);
            c.cell(self.player_column(), self.player + dy, 255);
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
        1
    }

    fn score(&self) -> f64 {
        self.score
    }

    fn rules(&self) -> &str {
        "You are the bright paddle on the right. Move up and down to return the \
         ball; first to five points wins."
    }

    /// Predicts where the ball meets the player's paddle and lines up an edge
    /// of the paddle with it, which returns the ball at the steepest angle.
    fn expert_action(&self) -> usize {
        let lowest = self.grid - PADDLE_HEIGHT;
        let target = match self.impact_row() {
            Some(y) if y < self.grid / 2 => y - (PADDLE_HEIGHT - 1),
            Some(y) => y,
            None => lowest / 2,
        }
        .clamp(0, lowest);
        match target.cmp(&self.player) {
            std::cmp::Ordering::Less => 2,
            std::cmp::Ordering::Greater => 3,
            std::cmp::Ordering::Equal => 0,
        }
    }
}

impl MiniPong {
    fn impact_row(&self) -> Option<i32> {
        let (mut x, mut y) = self.ball;
        let (dx, mut dy) = self.velocity;
        if dx <= 0 {
            return None;
        }
        while x + dx < self.player_column() {
            x += dx;
            (y, dy) = self.reflect_y(y + dy, dy);
        }
        Some(self.reflect_y(y + dy, dy).0)
    }
}
