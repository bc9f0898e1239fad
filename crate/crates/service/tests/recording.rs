use std::fs;
use std::path::Path;
use std::time::Duration;

use lfd_core::demo::{DemoDataset, RECOVER_FILE};
use lfd_core::env::{GameConfig, GameId};
use lfd_service::client::{play_script, sweep_script, KeyEvent, Playback};
use lfd_service::{EndReason, Session, SessionConfig};

fn config(game: GameId, seed: u64, dir: &Path) -> SessionConfig {
    let mut c = SessionConfig::new(GameConfig::small(game), seed, dir);
    c.pinned_clock = Some(1_700_000_000);
    c
}

/// Windows rebuilt from the raw per-frame trace: close after four frames or
/// on a terminal frame, keep the action of the first frame; a trailing
/// partial window is closed as non-terminal.
fn expected_windows(p: &Playback) -> Vec<(f64, bool, usize, usize)> {
    let mut out = Vec::new();
    let (mut sum, mut n, mut first, mut start) = (0.0, 0, 0, 0);
    for i in 0..p.raw_rewards.len() {
        if n == 0 {
            first = p.raw_actions[i];
            start = i;
        }
        sum += p.raw_rewards[i];
        n += 1;
        if n == 4 || p.raw_terminals[i] {
            out.push((sum, p.raw_terminals[i], first, start));
            sum = 0.0;
            n = 0;
        }
    }
    if n > 0 {
        out.push((sum, false, first, start));
    }
    out
}

#[test]
fn recording_matches_raw_trace() {
    for game in GameId::ALL {
        let dir = tempfile::tempdir().unwrap();
        let p = play_script("t", config(game, 5, dir.path()), &sweep_script(3000, 9), 3000).unwrap();
        let ds = DemoDataset::load(dir.path()).unwrap();
        let expected = expected_windows(&p);
        assert_eq!(ds.len(), expected.len(), "{game}");
        for (i, (reward, terminal, action, start)) in expected.iter().enumerate() {
            let s = ds.demo_step(i);
            assert_eq!(s.frame, p.screens[*start], "{game} step {i}");
            assert_eq!(s.reward, *reward, "{game} step {i}");
            assert_eq!(s.terminal, *terminal, "{game} step {i}");
            assert_eq!(s.action, *action, "{game} step {i}");
        }
        for (i, step) in p.recorded.iter().enumerate() {
            assert_eq!(&ds.demo_step(i), step, "{game} step {i} differs after reload");
        }
        let raw: f64 = p.raw_rewards.iter().sum();
        let recorded: f64 = (0..ds.len()).map(|i| ds.demo_step(i).reward).sum();
        assert_eq!(raw, recorded, "{game}: reward lost");
        let frames = p.raw_rewards.len();
        let terminals = p.raw_terminals.iter().filter(|&&t| t).count();
        assert!(ds.len() >= frames / 4 && ds.len() <= frames / 4 + terminals + 1, "{game}");
        assert_eq!(p.summary.stats.states, ds.len());
    }
}

#[test]
fn hundred_frames_give_twenty_five_steps() {
    let dir = tempfile::tempdir().unwrap();
    let p = play_script("t", config(GameId::MiniPong, 1, dir.path()), &[], 100).unwrap();
    assert!(p.raw_terminals.iter().all(|t| !t));
    assert_eq!(p.summary.recorded_steps, 25);
    assert_eq!(p.summary.reason, EndReason::Stopped);
}

#[test]
fn scripted_sessions_are_byte_identical() {
    let script = sweep_script(2000, 7);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    play_script("a", config(GameId::MiniBreakout, 9, a.path()), &script, 2000).unwrap();
    play_script("b", config(GameId::MiniBreakout, 9, b.path()), &script, 2000).unwrap();
    for name in ["meta.json", "frames.bin", "steps.ndjson"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn time_cap_ends_session() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(GameId::MiniCatch, 2, dir.path());
    c.game.lives = Some(100_000);
    c.game.rounds = 100_000;
    let cap_frames = c.frame_cap();
    assert_eq!(cap_frames, 20 * 60 * 15);
    let p = play_script("t", c, &[KeyEvent::new(0, "ArrowUp", true)], u64::MAX).unwrap();
    assert_eq!(p.summary.reason, EndReason::TimeCap);
    assert_eq!(p.summary.raw_frames, cap_frames);
    assert!(p.summary.elapsed_s <= 1200.0 + 1.0 / 15.0);
    let ds = DemoDataset::load(dir.path()).unwrap();
    assert_eq!(ds.meta.open_tail.as_deref(), Some("time_cap"));
    assert_eq!(ds.meta.end_reason.as_deref(), Some("time_cap"));
}

#[test]
fn losing_every_life_ends_with_game_over() {
    let dir = tempfile::tempdir().unwrap();
    let p = play_script("t", config(GameId::MiniCatch, 3, dir.path()), &[], 100_000).unwrap();
    assert_eq!(p.summary.reason, EndReason::GameOver);
    let last = p.recorded.last().unwrap();
    assert!(last.terminal);
    let ds = DemoDataset::load(dir.path()).unwrap();
    assert_eq!(ds.meta.open_tail, None);
    assert_eq!(p.summary.stats.states, ds.len());
}

#[test]
fn terminal_mid_window_flushes_short_step() {
    let mut short = 0;
    for seed in 0..8 {
        let dir = tempfile::tempdir().unwrap();
        let p = play_script("t", config(GameId::MiniCatch, seed, dir.path()), &[], 100_000).unwrap();
        let first = p.raw_terminals.iter().position(|&t| t).unwrap();
        let idx = p.recorded.iter().position(|s| s.terminal).unwrap();
        assert_eq!(idx, first / 4, "seed {seed}");
        assert!(p.recorded[..idx].iter().all(|s| !s.terminal));
        if (first + 1) % 4 != 0 {
            short += 1;
            let window: f64 = p.raw_rewards[idx * 4..=first].iter().sum();
            assert_eq!(p.recorded[idx].reward, window);
        }
    }
    assert!(short > 0, "no terminal fell mid-window");
}

#[test]
fn dropping_a_session_finalizes_as_disconnect() {
    let dir = tempfile::tempdir().unwrap();
    {
        let (mut s, _) = Session::start("t", config(GameId::MiniPong, 1, dir.path())).unwrap();
        for _ in 0..10 {
            s.tick().unwrap();
        }
    }
    let ds = DemoDataset::load(dir.path()).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.meta.end_reason.as_deref(), Some("disconnect"));
}

#[test]
fn write_failure_leaves_recover_marker() {
    let dir = tempfile::tempdir().unwrap();
    let (mut s, _) = Session::start("t", config(GameId::MiniPong, 1, dir.path())).unwrap();
    for _ in 0..3 {
        s.tick().unwrap();
    }
    fs::remove_file(dir.path().join("meta.json")).unwrap();
    fs::create_dir(dir.path().join("meta.json")).unwrap();
    assert!(s.finalize(EndReason::Stopped).is_err());
    assert!(dir.path().join(RECOVER_FILE).exists());
    drop(s);
    let log = fs::read_to_string(dir.path().join("steps.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn reused_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    play_script("t", config(GameId::MiniPong, 1, dir.path()), &[], 8).unwrap();
    assert!(Session::start("t", config(GameId::MiniPong, 1, dir.path())).is_err());
}

#[test]
fn cap_scales_with_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(GameId::MiniPong, 1, dir.path());
    c.time_cap = Duration::from_secs(2);
    c.fps = 30;
    assert_eq!(c.frame_cap(), 60);
}
