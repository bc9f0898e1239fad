//! A scripted stand-in for a human player, driving a [`Session`] directly.

use lfd_core::demo::DemoStep;
use lfd_core::env::Frame;
use serde::{Deserialize, Serialize};

use crate::session::{EndReason, Session, SessionConfig, SessionSummary};
use crate::Result;

/// A key transition applied just before raw frame `frame` is advanced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEvent {
    pub frame: u64,
    pub code: String,
    pub down: bool,
}

impl KeyEvent {
    pub fn new(frame: u64, code: &str, down: bool) -> Self {
        KeyEvent { frame, code: code.into(), down }
    }
}

/// Everything a scripted run observed, for checking the recording.
#[derive(Clone, Debug)]
pub struct Playback {
    pub summary: SessionSummary,
    pub raw_rewards: Vec<f64>,
    pub raw_actions: Vec<usize>,
    pub raw_terminals: Vec<bool>,
    /// The screen before each raw frame, then the final screen.
    pub screens: Vec<Frame>,
    pub recorded: Vec<DemoStep>,
}

/// Plays `script` (sorted by frame) until the session ends on its own or
/// `max_frames` raw frames have passed, in which case it is stopped.
pub fn play_script(id: &str, config: SessionConfig, script: &[KeyEvent], max_frames: u64) -> Result<Playback> {
    let (mut session, _) = Session::start(id, config)?;
    let mut events = script.iter().peekable();
    let mut raw_rewards = Vec::new();
    let mut raw_actions = Vec::new();
    let mut raw_terminals = Vec::new();
    let mut screens = vec![session.current_frame().clone()];
    let mut recorded = Vec::new();
    let mut frame = 0u64;
    while session.is_active() && frame < max_frames {
        while let Some(e) = events.next_if(|e| e.frame <= frame) {
            session.key(&e.code, e.down);
        }
        let report = session.tick()?;
        raw_rewards.push(report.reward);
        raw_actions.push(report.action);
        raw_terminals.push(report.terminal);
        screens.push(report.frame);
        recorded.extend(report.recorded);
        frame += 1;
    }
    let summary = session.finalize(EndReason::Stopped)?;
    Ok(Playback {
        summary,
        raw_rewards,
        raw_actions,
        raw_terminals,
        screens,
        recorded,
    })
}

/// A key pattern that sweeps left and right every `period` frames and
/// taps FIRE at the start of each sweep.
pub fn sweep_script(frames: u64, period: u64) -> Vec<KeyEvent> {
    let period = period.max(2);
    let mut out = Vec::new();
    let mut left = true;
    let mut t = 0;
    while t < frames {
        let (on, off) = if left { ("ArrowLeft", "ArrowRight") } else { ("ArrowRight", "ArrowLeft") };
        out.push(KeyEvent::new(t, off, false));
        out.push(KeyEvent::new(t, on, true));
        out.push(KeyEvent::new(t, "Space", true));
        out.push(KeyEvent::new(t + 1, "Space", false));
        left = !left;
        t += period;
    }
    out
}
