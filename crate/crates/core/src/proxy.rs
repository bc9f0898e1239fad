//! A scripted stand-in for an unskilled human demonstrator, used when no
//! recorded play is at hand.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demo::{DemoMeta, DemoStep, DemoWriter, RECORD_EVERY};
use crate::env::{make_game, GameConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanProxy {
    /// Chance that a decision follows the scripted expert; otherwise a
    /// uniformly random action is held.
    pub skill: f64,
    /// Raw frames a decision is held for, like a key kept pressed.
    pub reaction: u32,
    /// Raw-frame limit per game.
    pub max_frames: u64,
}

impl Default for HumanProxy {
    fn default() -> Self {
        HumanProxy {
            skill: 0.6,
            reaction: 4,
            max_frames: 18_000,
        }
    }
}

impl HumanProxy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.skill) || self.reaction == 0 || self.max_frames == 0 {
            return Err(Error::config("proxy skill must lie in [0, 1]; reaction and max_frames must be positive"));
        }
        Ok(())
    }
}

/// Plays `games` games of `config` and records them the way a live session
/// would: one step per four raw frames holding the frame and action of the
/// window's first tick and the window's summed reward, with a short
/// terminal step on life loss or game end. A game cut off by
/// `max_frames` closes its episode with a terminal step.
pub fn record_proxy(config: &GameConfig, games: usize, proxy: &HumanProxy, seed: u64, dir: impl AsRef<Path>) -> Result<DemoMeta> {
    proxy.validate()?;
    if games == 0 {
        return Err(Error::input("need at least one game"));
    }
    let mut game = make_game(config)?;
    let (w, h) = game.frame_size();
    let actions = game.actions().iter().map(|a| a.name().to_string()).collect();
    let mut meta = DemoMeta::new(config, seed, w, h, actions);
    meta.note = format!("scripted proxy, skill {}", proxy.skill);
    let mut writer = DemoWriter::create(dir, meta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for g in 0..games {
        game.reset(seed.wrapping_add(g as u64));
        let (mut held, mut window, mut reward) = (0usize, 0u32, 0.0);
        let (mut first_frame, mut first_action) = (game.frame(), 0usize);
        for t in 0..proxy.max_frames {
            if t % proxy.reaction as u64 == 0 {
                held = if rng.random_bool(proxy.skill) {
                    game.expert_action()
                } else {
                    rng.random_range(0..game.actions().len())
                };
            }
            if window == 0 {
                first_frame = game.frame();
                first_action = held;
            }
            let raw = game.step(held)?;
            window += 1;
            reward += raw.reward;
            let terminal = raw.life_lost || raw.game_over;
            let cut = t + 1 == proxy.max_frames;
            if terminal || cut || window == RECORD_EVERY {
                writer.append(&DemoStep {
                    frame: first_frame.clone(),
                    action: first_action,
                    reward,
                    terminal: terminal || cut,
                })?;
                window = 0;
                reward = 0.0;
            }
            if raw.game_over {
                break;
            }
        }
    }
    writer.finish("game_over")
}
