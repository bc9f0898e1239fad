use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use lfd_core::demo::{meta_stats, DemoMeta, DemoStep, DemoWriter, StatsReport};
use lfd_core::env::{make_game, Frame, GameConfig, GameId, RawGame};

use crate::keys::{bindings_for, HeldKeys, KeyBinding};
use crate::{Result, ServiceError};

pub const DEFAULT_FPS: u32 = 15;
pub use lfd_core::demo::RECORD_EVERY;
pub const TIME_CAP: Duration = Duration::from_secs(20 * 60);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    GameOver,
    TimeCap,
    Disconnect,
    /// The client asked to stop.
    Stopped,
}

impl EndReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::GameOver => "game_over",
            EndReason::TimeCap => "time_cap",
            EndReason::Disconnect => "disconnect",
            EndReason::Stopped => "stopped",
        }
    }
}

impl fmt::Display for EndReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EndReason {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self> {
        [EndReason::GameOver, EndReason::TimeCap, EndReason::Disconnect, EndReason::Stopped]
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| ServiceError::Protocol(format!("unknown end reason `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionConfig {
    pub game: GameConfig,
    pub seed: u64,
    /// Dataset directory; must not already hold a dataset.
    pub dir: PathBuf,
    pub fps: u32,
    pub record_every: u32,
    pub time_cap: Duration,
    pub note: String,
    /// Fixed timestamp for the dataset metadata, for reproducible output.
    pub pinned_clock: Option<u64>,
}

impl SessionConfig {
    pub fn new(game: GameConfig, seed: u64, dir: impl Into<PathBuf>) -> Self {
        SessionConfig {
            game,
            seed,
            dir: dir.into(),
            fps: DEFAULT_FPS,
            record_every: RECORD_EVERY,
            time_cap: TIME_CAP,
            note: "non-expert".into(),
            pinned_clock: None,
        }
    }

    /// Raw frames that fit in the time cap.
    pub fn frame_cap(&self) -> u64 {
        (self.time_cap.as_secs_f64() * self.fps as f64).round() as u64
    }
}

/// What the client needs to render controls and rules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameManifest {
    pub session: String,
    pub game: GameId,
    pub seed: u64,
    pub actions: Vec<String>,
    pub key_bindings: Vec<KeyBinding>,
    pub rules: String,
    pub width: usize,
    pub height: usize,
    pub fps: u32,
    pub record_every: u32,
    pub time_cap_s: f64,
}

/// The state after one tick, for streaming.
#[derive(Clone, Debug, PartialEq)]
pub struct TickReport {
    pub frame: Frame,
    pub action: usize,
    pub reward: f64,
    pub score: f64,
    pub lives: u32,
    pub remaining_s: f64,
    /// A life was lost or the game ended on this frame.
    pub terminal: bool,
    /// Set when this tick closed a recording window.
    pub recorded: Option<DemoStep>,
    pub ended: Option<EndReason>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub reason: EndReason,
    pub raw_frames: u64,
    pub recorded_steps: usize,
    pub raw_reward: f64,
    pub recorded_reward: f64,
    pub elapsed_s: f64,
    pub stats: StatsReport,
    pub dir: PathBuf,
}

/// One human-play recording. Time is counted in ticks, so the session cap
/// holds whether or not ticks are paced in real time.
pub struct Session {
    id: String,
    config: SessionConfig,
    game: Box<dyn RawGame>,
    writer: Option<DemoWriter>,
    keys: HeldKeys,
    raw_frames: u64,
    window_frames: u32,
    window_reward: f64,
    /// Frame on screen and action applied at the window's first tick.
    window_frame: Frame,
    window_action: usize,
    last_frame: Frame,
    raw_reward: f64,
    recorded_reward: f64,
    ended: Option<EndReason>,
}

impl Session {
    pub fn start(id: impl Into<String>, config: SessionConfig) -> Result<(Session, GameManifest)> {
        if config.fps == 0 || config.record_every == 0 {
            return Err(ServiceError::Protocol("fps and record cadence must be positive".into()));
        }
        let mut game = make_game(&config.game)?;
        game.reset(config.seed);
        let (w, h) = game.frame_size();
        let actions: Vec<String> = game.actions().iter().map(|a| a.name().to_string()).collect();
        let mut meta = DemoMeta::new(&config.game, config.seed, w, h, actions.clone());
        meta.note = config.note.clone();
        let mut writer = DemoWriter::create(&config.dir, meta)?;
        if let Some(unix) = config.pinned_clock {
            writer.pin_clock(unix)?;
        }
        let id = id.into();
        let manifest = GameManifest {
            session: id.clone(),
            game: config.game.id,
            seed: config.seed,
            actions,
            key_bindings: bindings_for(game.actions()),
            rules: game.rules().to_string(),
            width: w,
            height: h,
            fps: config.fps,
            record_every: config.record_every,
            time_cap_s: config.time_cap.as_secs_f64(),
        };
        let last_frame = game.frame();
        Ok((
            Session {
                id,
                config,
                game,
                writer: Some(writer),
                keys: HeldKeys::default(),
                raw_frames: 0,
                window_frames: 0,
                window_reward: 0.0,
                window_frame: last_frame.clone(),
                window_action: 0,
                last_frame,
                raw_reward: 0.0,
                recorded_reward: 0.0,
                ended: None,
            },
            manifest,
        ))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.config.dir
    }

    pub fn is_active(&self) -> bool {
        self.ended.is_none()
    }

    pub fn raw_frames(&self) -> u64 {
        self.raw_frames
    }

    pub fn elapsed(&self) -> Duration {
        Duration::from_secs_f64(self.raw_frames as f64 / self.config.fps as f64)
    }

    pub fn remaining_s(&self) -> f64 {
        (self.config.time_cap.as_secs_f64() - self.elapsed().as_secs_f64()).max(0.0)
    }

    pub fn current_frame(&self) -> &Frame {
        &self.last_frame
    }

    pub fn score(&self) -> f64 {
        self.game.score()
    }

    pub fn lives(&self) -> u32 {
        self.game.lives()
    }

    pub fn key(&mut self, code: &str, down: bool) -> bool {
        self.keys.update(code, down)
    }

    /// The action the held chord maps to right now.
    pub fn held_action(&self) -> usize {
        self.keys.resolve(self.game.actions())
    }

    /// Advances one raw frame with the held action. Every `record_every`
    /// frames, or at once on a terminal frame, the window is written out as
    /// the frame and action of its first tick plus the summed reward.
    pub fn tick(&mut self) -> Result<TickReport> {
        if self.ended.is_some() {
            return Err(ServiceError::State("session has ended".into()));
        }
        let action = self.held_action();
        if self.window_frames == 0 {
            self.window_frame = self.last_frame.clone();
            self.window_action = action;
        }
        let raw = self.game.step(action)?;
        let (frame, reward) = (self.game.frame(), raw.reward);
        let terminal = raw.life_lost || raw.game_over;
        self.raw_frames += 1;
        self.window_frames += 1;
        self.window_reward += reward;
        self.raw_reward += reward;
        self.last_frame = frame;
        let recorded = if terminal || self.window_frames >= self.config.record_every {
            Some(self.flush(terminal)?)
        } else {
            None
        };
        let ended = if raw.game_over {
            Some(EndReason::GameOver)
        } else if self.raw_frames >= self.config.frame_cap() {
            Some(EndReason::TimeCap)
        } else {
            None
        };
        self.ended = ended;
        Ok(TickReport {
            frame: self.last_frame.clone(),
            action,
            reward,
            score: self.game.score(),
            lives: self.game.lives(),
            remaining_s: self.remaining_s(),
            terminal,
            recorded,
            ended,
        })
    }

    fn flush(&mut self, terminal: bool) -> Result<DemoStep> {
        let step = DemoStep {
            frame: self.window_frame.clone(),
            action: self.window_action,
            reward: self.window_reward,
            terminal,
        };
        let writer = self
            .writer
            .as_mut()
            .ok_or_else(|| ServiceError::State("recording already closed".into()))?;
        if let Err(e) = writer.append(&step) {
            let _ = writer.mark_recover(&format!("append failed: {e}"));
            return Err(e.into());
        }
        self.recorded_reward += step.reward;
        self.window_frames = 0;
        self.window_reward = 0.0;
        Ok(step)
    }

    /// Flushes any partial window, closes the dataset and reports its
    /// statistics. A session that already ended keeps its own reason.
    pub fn finalize(&mut self, reason: EndReason) -> Result<SessionSummary> {
        let reason = self.ended.unwrap_or(reason);
        self.ended = Some(reason);
        if self.window_frames > 0 {
            if let Err(e) = self.flush(false) {
                self.writer = None;
                return Err(e);
            }
        }
        let mut writer = self
            .writer
            .take()
            .ok_or_else(|| ServiceError::State("recording already closed".into()))?;
        let meta = match writer.finish(reason.as_str()) {
            Ok(m) => m,
            Err(e) => {
                let _ = writer.mark_recover(&format!("finish failed: {e}"));
                return Err(e.into());
            }
        };
        Ok(SessionSummary {
            reason,
            raw_frames: self.raw_frames,
            recorded_steps: meta.steps,
            raw_reward: self.raw_reward,
            recorded_reward: self.recorded_reward,
            elapsed_s: self.elapsed().as_secs_f64(),
            stats: meta_stats(&meta),
            dir: self.config.dir.clone(),
        })
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        if self.writer.is_some() {
            if let Err(e) = self.finalize(EndReason::Disconnect) {
                tracing::warn!(session = %self.id, error = %e, "could not close recording");
            }
        }
    }
}
