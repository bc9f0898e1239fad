//! Deterministic toy pixel games and the Atari-style preprocessing wrapper.
//!
//! Games simulate on a square logical grid and draw each cell as a
//! `cell_px`-sized block of grayscale pixels, so the native frame is
//! `grid * cell_px` pixels on a side (84 by default).

mod breakout;
mod catch;
mod pellets;
mod pong;
mod wrapper;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use breakout::MiniBreakout;
pub use catch::MiniCatch;
pub use pellets::MiniPellets;
pub use pong::MiniPong;
pub use wrapper::{area_resize, StepOutcome, WrappedEnv, WrapperConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Noop,
    Fire,
    Up,
    Down,
    Left,
    Right,
    UpFire,
    DownFire,
    LeftFire,
    RightFire,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::Noop => "NOOP",
            Action::Fire => "FIRE",
            Action::Up => "UP",
            Action::Down => "DOWN",
            Action::Left => "LEFT",
            Action::Right => "RIGHT",
            Action::UpFire => "UPFIRE",
            Action::DownFire => "DOWNFIRE",
            Action::LeftFire => "LEFTFIRE",
            Action::RightFire => "RIGHTFIRE",
        }
    }

    pub fn direction(self) -> Option<Direction> {
        match self {
            Action::Up | Action::UpFire => Some(Direction::Up),
            Action::Down | Action::DownFire => Some(Direction::Down),
            Action::Left | Action::LeftFire => Some(Direction::Left),
            Action::Right | Action::RightFire => Some(Direction::Right),
            Action::Noop | Action::Fire => None,
        }
    }

    pub fn fires(self) -> bool {
        matches!(
            self,
            Action::Fire | Action::UpFire | Action::DownFire | Action::LeftFire | Action::RightFire
        )
    }

    /// The action composed of an optional direction and a fire flag.
    pub fn compose(direction: Option<Direction>, fire: bool) -> Action {
        match (direction, fire) {
            (None, false) => Action::Noop,
            (None, true) => Action::Fire,
            (Some(Direction::Up), false) => Action::Up,
            (Some(Direction::Down), false) => Action::Down,
            (Some(Direction::Left), false) => Action::Left,
            (Some(Direction::Right), false) => Action::Right,
            (Some(Direction::Up), true) => Action::UpFire,
            (Some(Direction::Down), true) => Action::DownFire,
            (Some(Direction::Left), true) => Action::LeftFire,
            (Some(Direction::Right), true) => Action::RightFire,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grayscale image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Self {
        Frame {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::input(format!(
                "{} pixels for a {width}x{height} frame",
                pixels.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    /// Elementwise maximum with another frame of the same size.
    pub fn max_with(&self, other: &Frame) -> Frame {
        debug_assert_eq!(self.pixels.len(), other.pixels.len());
        Frame {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(&a, &b)| a.max(b))
                .collect(),
        }
    }
}

/// Outcome of one raw (unskipped) game frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawStep {
    pub reward: f64,
    pub life_lost: bool,
    pub game_over: bool,
}

/// A game advanced one raw frame at a time. `step` must be a pure function
/// of the state, the action and the game's own seeded random stream.
pub trait RawGame: Send {
    fn name(&self) -> &str;
    fn actions(&self) -> &[Action];
    /// Hard reset to the initial state of a new game.
    fn reset(&mut self, seed: u64);
    /// Advances one raw frame. `action` indexes [`actions`](Self::actions).
    fn step(&mut self, action: usize) -> Result<RawStep>;
    fn render(&self, frame: &mut Frame);
    fn frame_size(&self) -> (usize, usize);
    fn lives(&self) -> u32;
    fn score(&self) -> f64;
    /// True when the game stays static until FIRE is pressed.
    fn needs_fire(&self) -> bool {
        false
    }
    fn rules(&self) -> &str {
        ""
    }
    /// Action chosen by a scripted player with full state access.
    fn expert_action(&self) -> usize {
        0
    }

    fn frame(&self) -> Frame {
        let (w, h) = self.frame_size();
        let mut f = Frame::new(w, h);
        self.render(&mut f);
        f
    }

    fn action_index(&self, action: Action) -> Option<usize> {
        self.actions().iter().position(|&a| a == action)
    }
}

pub(crate) fn check_action(actions: &[Action], action: usize) -> Result<Action> {
    actions
        .get(action)
        .copied()
        .ok_or_else(|| Error::input(format!("action {action} outside action set of size {}", actions.len())))
}

/// Single raw frame for the recording service: no skip, pooling or stacking.
/// Life loss counts as terminal.
pub fn demo_step(game: &mut dyn RawGame, action: usize) -> Result<(Frame, f64, bool)> {
    let s = game.step(action)?;
    Ok((game.frame(), s.reward, s.life_lost || s.game_over))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameId {
    MiniPong,
    MiniBreakout,
    MiniCatch,
    MiniPellets,
}

impl GameId {
    pub const ALL: [GameId; 4] = [GameId::MiniPong, GameId::MiniBreakout, GameId::MiniCatch, GameId::MiniPellets];

    pub fn as_str(self) -> &'static str {
        match self {
            GameId::MiniPong => "mini_pong",
            GameId::MiniBreakout => "mini_breakout",
            GameId::MiniCatch => "mini_catch",
            GameId::MiniPellets => "mini_pellets",
        }
    }
}

impl fmt::Display for GameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GameId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GameId::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown game `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameConfig {
    pub id: GameId,
    /// Logical grid side length.
    pub grid: usize,
    /// Pixels per grid cell.
    pub cell_px: usize,
    /// Overrides the game's default life count.
    pub lives: Option<u32>,
    /// Falling objects per game (catch) or waves per game (pellets).
    pub rounds: usize,
    /// Catch / brick / point reward for single-valued games; low, mid and
    /// high item values for pellets.
    pub reward_table: Option<Vec<f64>>,
    /// Penalty applied when a pellets wave is missed entirely.
    pub terminal_penalty: f64,
    /// Moving objects are drawn only on even frames.
    pub flicker: bool,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            id: GameId::MiniCatch,
            grid: 21,
            cell_px: 4,
            lives: None,
            rounds: 10,
            reward_table: None,
            terminal_penalty: 0.0,
            flicker: false,
        }
    }
}

impl GameConfig {
    pub fn new(id: GameId) -> Self {
        GameConfig {
            id,
            ..Default::default()
        }
    }

    /// One pixel per cell: native frames are `grid x grid`.
    pub fn small(id: GameId) -> Self {
        GameConfig {
            id,
            cell_px: 1,
            ..Default::default()
        }
    }

    pub fn native_size(&self) -> usize {
        self.grid * self.cell_px
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 12 {
            return Err(Error::config(format!("grid must be at least 12 cells, got {}", self.grid)));
        }
        if self.cell_px == 0 || self.rounds == 0 {
            return Err(Error::config("cell_px and rounds must be positive"));
        }
        if self.lives == Some(0) {
            return Err(Error::config("lives must be positive"));
        }
        if !(self.terminal_penalty >= 0.0) {
            return Err(Error::config("terminal_penalty must be non-negative"));
        }
        if let Some(t) = &self.reward_table {
            let need = if self.id == GameId::MiniPellets { 3 } else { 1 };
            if t.len() != need || t.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!(
                    "{} needs a reward table of {need} finite values",
                    self.id
                )));
            }
        }
        Ok(())
    }

    fn reward(&self, index: usize, default: f64) -> f64 {
        self.reward_table
            .as_ref()
            .and_then(|t| t.get(index).copied())
            .unwrap_or(default)
    }
}

pub fn make_game(config: &GameConfig) -> Result<Box<dyn RawGame>> {
    config.validate()?;
    Ok(match config.id {
        GameId::MiniCatch => Box::new(MiniCatch::new(config)),
        GameId::MiniPellets => Box::new(MiniPellets::new(config)),
        GameId::MiniBreakout => Box::new(MiniBreakout::new(config)),
        GameId::MiniPong => Box::new(MiniPong::new(config)),
    })
}

/// Cell-addressed drawing onto a native-resolution frame.
pub(crate) struct Canvas<'a> {
    frame: &'a mut Frame,
    cell: usize,
}

impl<'a> Canvas<'a> {
    pub(crate) fn new(frame: &'a mut Frame, cell: usize) -> Self {
        frame.pixels.fill(0);
        Canvas { frame, cell }
    }

    pub(crate) fn cell(&mut self, x: i32, y: i32, value: u8) {
        let grid = (self.frame.width / self.cell) as i32;
        if x < 0 || y < 0 || x >= grid || y >= grid {
            return;
        }
        let (x, y) = (x as usize * self.cell, y as usize * self.cell);
        for row in y..y + self.cell {
            let start = row * self.frame.width + x;
            self.frame.pixels[start..start + self.cell].fill(value);
        }
    }
}
