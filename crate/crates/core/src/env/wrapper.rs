use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

use super::{Action, Frame, RawGame};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WrapperConfig {
    /// Raw frames per agent step; the action is repeated and rewards summed.
    pub frame_skip: usize,
    /// Observe the elementwise max of the last two raw frames of a step.
    pub max_pool: bool,
    /// Square output side; `None` keeps the native resolution.
    pub resize: Option<usize>,
    pub stack: usize,
    /// Upper bound of the random number of NOOP frames after a hard reset.
    pub noop_max: usize,
    /// Press FIRE after every reset in games that wait for it.
    pub fire_on_reset: bool,
    /// Report life loss as terminal without resetting the game.
    pub episodic_life: bool,
    /// Raw-frame limit per game; reaching it truncates the episode.
    pub max_episode_frames: Option<u64>,
}

impl Default for WrapperConfig {
    fn default() -> Self {
        WrapperConfig {
            frame_skip: 4,
            max_pool: true,
            resize: None,
            stack: 4,
            noop_max: 30,
            fire_on_reset: true,
            episodic_life: true,
            max_episode_frames: Some(10_000),
        }
    }
}

impl WrapperConfig {
    /// Evaluation variant: episodes span whole games.
    pub fn for_evaluation(&self) -> Self {
        WrapperConfig {
            episodic_life: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_skip == 0 || self.stack == 0 || self.resize == Some(0) {
            return Err(Error::config("frame_skip, stack and resize must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// `[stack, H, W]`, values in `[0, 1]`.
    pub observation: Tensor,
    pub reward: f64,
    /// End of a learning episode: game over, truncation, or (with
    /// `episodic_life`) a lost life.
    pub terminal: bool,
    pub life_lost: bool,
    pub game_over: bool,
    pub truncated: bool,
}

/// Frame skip, max pooling, resizing, stacking, NOOP starts, FIRE on reset
/// and episodic life around a [`RawGame`].
pub struct WrappedEnv {
    game: Box<dyn RawGame>,
    config: WrapperConfig,
    rng: ChaCha8Rng,
    side: usize,
    frames: VecDeque<Vec<f32>>,
    last_raw: Frame,
    game_frames: u64,
    hard_reset_due: bool,
    last_noops: usize,
    noop: usize,
    fire: Option<usize>,
}

impl WrappedEnv {
    pub fn new(game: Box<dyn RawGame>, config: WrapperConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (w, h) = game.frame_size();
        if w != h {
            return Err(Error::config(format!("frames must be square, got {w}x{h}")));
        }
        let side = config.resize.unwrap_or(w);
        if side > w {
            return Err(Error::config(format!("cannot upscale {w} to {side}")));
        }
        let noop = game
            .action_index(Action::Noop)
            .ok_or_else(|| Error::config("game has no NOOP action"))?;
        let fire = if config.fire_on_reset && game.needs_fire() {
            Some(
                game.action_index(Action::Fire)
                    .ok_or_else(|| Error::config("game waits for FIRE but has no FIRE action"))?,
            )
        } else {
            None
        };
        let last_raw = game.frame();
        Ok(WrappedEnv {
            game,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            side,
            frames: VecDeque::new(),
            last_raw,
            game_frames: 0,
            hard_reset_due: true,
            last_noops: 0,
            noop,
            fire,
        })
    }

    pub fn game(&self) -> &dyn RawGame {
        self.game.as_ref()
    }

    pub fn config(&self) -> &WrapperConfig {
        &self.config
    }

    pub fn action_count(&self) -> usize {
        self.game.actions().len()
    }

    pub fn observation_shape(&self) -> [usize; 3] {
        [self.config.stack, self.side, self.side]
    }

    /// NOOP frames inserted by the most recent hard reset.
    pub fn last_noop_count(&self) -> usize {
        self.last_noops
    }

    /// The (pooled) native frame behind the newest stacked observation.
    pub fn last_frame(&self) -> &Frame {
        &self.last_raw
    }

    /// Starts the next episode. Hard-resets the game after game over or
    /// truncation; after a lost life only FIRE (where needed) is applied.
    pub fn reset(&mut self) -> Result<Tensor> {
        if self.hard_reset_due {
            self.hard_reset()?;
        } else if let Some(fire) = self.fire {
            let s = self.game.step(fire)?;
            self.game_frames += 1;
            if s.game_over {
                self.hard_reset()?;
            }
        }
        self.hard_reset_due = false;
        self.last_raw = self.game.frame();
        let first = self.process(&self.last_raw);
        self.frames.clear();
        for _ in 0..self.config.stack {
            self.frames.push_back(first.clone());
        }
        Ok(self.observation())
    }

    /// Reseeds the wrapper and hard-resets the game: equal seeds give equal
    /// episodes for equal action sequences.
    pub fn reset_seeded(&mut self, seed: u64) -> Result<Tensor> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.hard_reset_due = true;
        self.reset()
    }

    fn hard_reset(&mut self) -> Result<()> {
        loop {
            let seed = self.rng.random::<u64>();
            self.game.reset(seed);
            self.game_frames = 0;
            let noops = self.rng.random_range(0..=self.config.noop_max);
            let mut ended = false;
            for _ in 0..noops {
                let s = self.game.step(self.noop)?;
                self.game_frames += 1;
                if s.game_over {
                    ended = true;
                    break;
                }
            }
            if ended {
                continue;
            }
            self.last_noops = noops;
            if let Some(fire) = self.fire {
                let s = self.game.step(fire)?;
                self.game_frames += 1;
                if s.game_over {
                    continue;
                }
            }
            return Ok(());
        }
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.frames.is_empty() {
            return Err(Error::state("step called before reset"));
        }
        if self.hard_reset_due {
            return Err(Error::state("episode is over; call reset"));
        }
        let mut reward = 0.0;
        let mut life_lost = false;
        let mut game_over = false;
        let mut previous: Option<Frame> = None;
        let mut latest = None;
        for _ in 0..self.config.frame_skip {
            let s = self.game.step(action)?;
            self.game_frames += 1;
            reward += s.reward;
            life_lost |= s.life_lost;
            game_over |= s.game_over;
            previous = latest.take();
            latest = Some(self.game.frame());
            if life_lost || game_over {
                break;
            }
        }
        let latest = latest.expect("frame_skip is positive");
        self.last_raw = match (&previous, self.config.max_pool) {
            (Some(p), true) => p.max_with(&latest),
            _ => latest,
        };
        let processed = self.process(&self.last_raw);
        self.frames.pop_front();
        self.frames.push_back(processed);
        let truncated = !game_over
            && self
                .config
                .max_episode_frames
                .is_some_and(|limit| self.game_frames >= limit);
        let terminal = game_over || truncated || (life_lost && self.config.episodic_life);
        if game_over || truncated {
            self.hard_reset_due = true;
        }
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            terminal,
            life_lost,
            game_over,
            truncated,
        })
    }

    /// Step that resets automatically at episode ends; the returned
    /// observation is then the first of the next episode.
    pub fn step_auto_reset(&mut self, action: usize) -> Result<StepOutcome> {
        let mut out = self.step(action)?;
        if out.terminal {
            out.observation = self.reset()?;
        }
        Ok(out)
    }

    fn process(&self, frame: &Frame) -> Vec<f32> {
        area_resize(frame, self.side)
    }

    fn observation(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.config.stack * self.side * self.side);
        for f in &self.frames {
            data.extend_from_slice(f);
        }
        Tensor::from_vec(&[self.config.stack, self.side, self.side], data).expect("stack shape")
    }
}

/// Box-filter downscale of a square frame to `side x side`, scaled to
/// `[0, 1]`. Each output pixel averages the source area it covers, with
/// fractional weights at the borders.
pub fn area_resize(frame: &Frame, side: usize) -> Vec<f32> {
    let weights_x = area_weights(frame.width, side);
    let weights_y = area_weights(frame.height, side);
    let mut rows = vec![0.0f32; frame.height * side];
    for y in 0..frame.height {
        let src = &frame.pixels[y * frame.width..(y + 1) * frame.width];
        for (ox, taps) in weights_x.iter().enumerate() {
            rows[y * side + ox] = taps.iter().map(|&(i, w)| w * src[i] as f32).sum();
        }
    }
    let mut out = vec![0.0f32; side * side];
    for (oy, taps) in weights_y.iter().enumerate() {
        for ox in 0..side {
            let v: f32 = taps.iter().map(|&(i, w)| w * rows[i * side + ox]).sum();
            out[oy * side + ox] = (v / 255.0).clamp(0.0, 1.0);
        }
    }
    out
}

/// For each output index, the source indices it overlaps and their
/// normalized overlap weights.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f32)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let start = o as f64 * scale;
            let end = start + scale;
            let mut taps = Vec::new();
            let mut i = start.floor() as usize;
            while (i as f64) < end && i < src {
                let overlap = (end.min(i as f64 + 1.0) - start.max(i as f64)).max(0.0);
                if overlap > 1e-12 {
                    taps.push((i, (overlap / scale) as f32));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_game, GameConfig, GameId};

    fn env(id: GameId, config: WrapperConfig) -> WrappedEnv {
        WrappedEnv::new(make_game(&GameConfig::small(id)).unwrap(), config, 1).unwrap()
    }

    #[test]
    fn resize_preserves_mean_and_identity() {
        let pixels: Vec<u8> = (0..84 * 84).map(|i| (i * 37 % 251) as u8).collect();
        let f = Frame::from_pixels(84, 84, pixels.clone()).unwrap();
        let same = area_resize(&f, 84);
        for (a, &b) in same.iter().zip(&pixels) {
            assert!((a - b as f32 / 255.0).abs() < 1e-6);
        }
        let mean_src: f64 = pixels.iter().map(|&p| p as f64 / 255.0).sum::<f64>() / pixels.len() as f64;
        for side in [21, 42, 50] {
            let small = area_resize(&f, side);
            let mean: f64 = small.iter().map(|&v| v as f64).sum::<f64>() / small.len() as f64;
            assert!((mean - mean_src).abs() < 1e-4, "side {side}");
        }
    }

    #[test]
    fn observation_shape_and_range() {
        let mut e = env(GameId::MiniPong, WrapperConfig::default());
        let obs = e.reset().unwrap();
        assert_eq!(obs.shape(), &[4, 21, 21]);
        for t in 0..200 {
            let out = e.step_auto_reset(t % 6).unwrap();
            assert_eq!(out.observation.shape(), &[4, 21, 21]);
            assert!(out.observation.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn reset_repeats_first_frame() {
        let mut e = env(GameId::MiniCatch, WrapperConfig::default());
        let obs = e.reset().unwrap();
        let plane = 21 * 21;
        for k in 1..4 {
            assert_eq!(&obs.data()[..plane], &obs.data()[k * plane..(k + 1) * plane]);
        }
    }

    #[test]
    fn step_before_reset_is_state_error() {
        let mut e = env(GameId::MiniCatch, WrapperConfig::default());
        assert!(matches!(e.step(0), Err(Error::State(_))));
    }

    #[test]
    fn episodic_life_terminates_on_life_loss_only_when_enabled() {
        for episodic in [true, false] {
            let cfg = WrapperConfig {
                episodic_life: episodic,
                noop_max: 0,
                ..Default::default()
            };
            let mut e = env(GameId::MiniCatch, cfg);
            e.reset().unwrap();
            let mut saw_loss = false;
            for _ in 0..5_000 {
                let out = e.step(0).unwrap();
                if out.life_lost && !out.game_over {
                    saw_loss = true;
                    assert_eq!(out.terminal, episodic);
                    if episodic {
                        // soft reset keeps the game running
                        let lives = e.game().lives();
                        e.reset().unwrap();
                        assert_eq!(e.game().lives(), lives);
                    }
                    break;
                }
                if out.terminal {
                    e.reset().unwrap();
                }
            }
            assert!(saw_loss);
        }
    }

    #[test]
    fn truncation_forces_hard_reset() {
        let cfg = WrapperConfig {
            max_episode_frames: Some(40),
            noop_max: 0,
            ..Default::default()
        };
        // breakout without FIRE never ends on its own
        let mut e = WrappedEnv::new(
            make_game(&GameConfig::small(GameId::MiniBreakout)).unwrap(),
            WrapperConfig {
                fire_on_reset: false,
                ..cfg
            },
            0,
        )
        .unwrap();
        e.reset().unwrap();
        let mut steps = 0;
        loop {
            steps += 1;
            let out = e.step(0).unwrap();
            if out.terminal {
                assert!(out.truncated && !out.game_over);
                break;
            }
        }
        assert_eq!(steps, 10);
        assert!(matches!(e.step(0), Err(Error::State(_))));
        e.reset().unwrap();
        e.step(0).unwrap();
    }

    #[test]
    fn fire_on_reset_launches_breakout() {
        let mut e = env(GameId::MiniBreakout, WrapperConfig::default());
        e.reset().unwrap();
        let g = e.game();
        assert_eq!(g.name(), "mini_breakout");
        // after FIRE the ball leaves the paddle within a few steps
        let before = e.last_frame().clone();
        e.step(0).unwrap();
        e.step(0).unwrap();
        assert_ne!(&before, e.last_frame());
    }

    #[test]
    fn noop_counts_cover_range() {
        let cfg = WrapperConfig {
            noop_max: 5,
            ..Default::default()
        };
        let mut e = env(GameId::MiniPong, cfg);
        let mut seen = [0usize; 6];
        for _ in 0..300 {
            e.hard_reset_due = true;
            e.reset().unwrap();
            seen[e.last_noop_count()] += 1;
        }
        assert!(seen.iter().all(|&c| c > 20), "{seen:?}");
    }
}
