//! Demonstration datasets: on-disk format, durable appends, loading,
//! proportional minibatch sampling and summary statistics.
//!
//! A dataset directory holds `meta.json`, `frames.bin` (raw `u8` frames
//! back to back, frame `i` at byte offset `i * width * height`) and
//! `steps.ndjson` (one JSON object per step). See `docs/formats.md`.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{area_resize, Frame, GameConfig, GameId};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.json";
pub const FRAMES_FILE: &str = "frames.bin";
pub const STEPS_FILE: &str = "steps.ndjson";
/// Raw frames per recorded step.
pub const RECORD_EVERY: u32 = 4;
/// Present when a session could not be closed cleanly.
pub const RECOVER_FILE: &str = "RECOVER";

#[derive(Clone, Debug, PartialEq)]
pub struct DemoStep {
    pub frame: Frame,
    pub action: usize,
    /// Raw (unclipped) reward summed over the recording window.
    pub reward: f64,
    pub terminal: bool,
}

/// One line of `steps.ndjson`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub index: usize,
    pub action: usize,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub version: u32,
    pub game: GameId,
    pub game_config: GameConfig,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Action names in action-id order.
    pub actions: Vec<String>,
    pub note: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    /// Why the session ended (`game_over`, `time_cap`, `disconnect`, ...).
    pub end_reason: Option<String>,
    /// Set when the last episode was cut off without a terminal step; holds
    /// the reason, e.g. `time_cap`.
    pub open_tail: Option<String>,
    pub steps: usize,
    pub episode_scores: Vec<f64>,
    pub action_counts: Vec<usize>,
}

impl DemoMeta {
    pub fn new(config: &GameConfig, seed: u64, width: usize, height: usize, actions: Vec<String>) -> Self {
        DemoMeta {
            version: FORMAT_VERSION,
            game: config.id,
            game_config: config.clone(),
            seed,
            width,
            height,
            action_counts: vec![0; actions.len()],
            actions,
            note: "non-expert".into(),
            started_unix: unix_now(),
            finished_unix: None,
            end_reason: None,
            open_tail: None,
            steps: 0,
            episode_scores: Vec::new(),
        }
    }

    fn frame_len(&self) -> usize {
        self.width * self.height
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json_atomic(path: &Path, value: &impl Serialize) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = File::create(&tmp)?;
        serde_json::to_writer_pretty(&mut f, value)?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Single-writer recording session. Every append is flushed and synced
/// before it returns.
pub struct DemoWriter {
    dir: PathBuf,
    meta: DemoMeta,
    frames: File,
    steps: File,
    episode: usize,
    index: usize,
    episode_score: f64,
    episode_open: bool,
    closed: bool,
    pinned_clock: Option<u64>,
}

impl DemoWriter {
    pub fn create(dir: impl AsRef<Path>, meta: DemoMeta) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        if dir.join(STEPS_FILE).exists() {
            return Err(Error::input(format!("{} already holds a dataset", dir.display())));
        }
        if meta.actions.is_empty() || meta.frame_len() == 0 {
            return Err(Error::input("dataset needs actions and a non-empty frame size"));
        }
        let open = |name: &str| OpenOptions::new().create_new(true).append(true).open(dir.join(name));
        let frames = open(FRAMES_FILE)?;
        let steps = open(STEPS_FILE)?;
        write_json_atomic(&dir.join(META_FILE), &meta)?;
        Ok(DemoWriter {
            dir,
            meta,
            frames,
            steps,
            episode: 0,
            index: 0,
            episode_score: 0.0,
            episode_open: false,
            closed: false,
            pinned_clock: None,
        })
    }

    /// Stamps both timestamps with `unix` so that replayed sessions produce
    /// identical metadata.
    pub fn pin_clock(&mut self, unix: u64) -> Result<()> {
        self.pinned_clock = Some(unix);
        self.meta.started_unix = unix;
        write_json_atomic(&self.dir.join(META_FILE), &self.meta)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn meta(&self) -> &DemoMeta {
        &self.meta
    }

    pub fn steps(&self) -> usize {
        self.meta.steps
    }

    pub fn append(&mut self, step: &DemoStep) -> Result<()> {
        if self.closed {
            return Err(Error::state("recording session is closed"));
        }
        if step.frame.width != self.meta.width || step.frame.height != self.meta.height {
            return Err(Error::input(format!(
                "frame is {}x{}, dataset expects {}x{}",
                step.frame.width, step.frame.height, self.meta.width, self.meta.height
            )));
        }
        if step.action >= self.meta.actions.len() {
            return Err(Error::input(format!("action {} outside the action set", step.action)));
        }
        if !step.reward.is_finite() {
            return Err(Error::input("non-finite reward"));
        }
        let record = StepRecord {
            episode: self.episode,
            index: self.index,
            action: step.action,
            reward: step.reward,
            terminal: step.terminal,
        };
        let mut line = serde_json::to_vec(&record)?;
        line.push(b'\n');
        self.frames.write_all(&step.frame.pixels)?;
        self.frames.sync_data()?;
        self.steps.write_all(&line)?;
        self.steps.sync_data()?;

        self.meta.steps += 1;
        self.meta.action_counts[step.action] += 1;
        self.episode_score += step.reward;
        self.episode_open = true;
        self.index += 1;
        if step.terminal {
            self.meta.episode_scores.push(self.episode_score);
            self.episode += 1;
            self.index = 0;
            self.episode_score = 0.0;
            self.episode_open = false;
        }
        Ok(())
    }

    /// Closes the session. An episode still open is scored and marked with
    /// `reason` as its tail marker.
    pub fn finish(&mut self, reason: &str) -> Result<DemoMeta> {
        if self.closed {
            return Err(Error::state("recording session is closed"));
        }
        self.closed = true;
        if self.episode_open {
            self.meta.episode_scores.push(self.episode_score);
            self.meta.open_tail = Some(reason.to_string());
            self.episode_open = false;
        }
        self.meta.end_reason = Some(reason.to_string());
        self.meta.finished_unix = Some(self.pinned_clock.unwrap_or_else(unix_now));
        write_json_atomic(&self.dir.join(META_FILE), &self.meta)?;
        Ok(self.meta.clone())
    }

    /// Leaves a marker explaining why the directory may be inconsistent;
    /// [`DemoDataset::recover`] rebuilds the metadata from the step log.
    pub fn mark_recover(&self, why: &str) -> Result<()> {
        fs::write(self.dir.join(RECOVER_FILE), why)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub meta: DemoMeta,
    frames: Vec<u8>,
    steps: Vec<StepRecord>,
    episodes: Vec<Range<usize>>,
}

impl DemoDataset {
    /// In-memory dataset; episodes are split at terminal steps.
    pub fn from_steps(mut meta: DemoMeta, steps: &[DemoStep]) -> Result<Self> {
        let mut frames = Vec::with_capacity(steps.len() * meta.frame_len());
        let mut records = Vec::with_capacity(steps.len());
        let (mut episode, mut index) = (0, 0);
        for s in steps {
            if s.frame.pixels.len() != meta.frame_len() || s.action >= meta.actions.len() {
                return Err(Error::input("step does not fit the dataset geometry or action set"));
            }
            frames.extend_from_slice(&s.frame.pixels);
            records.push(StepRecord {
                episode,
                index,
                action: s.action,
                reward: s.reward,
                terminal: s.terminal,
            });
            index += 1;
            if s.terminal {
                episode += 1;
                index = 0;
            }
        }
        let open_tail = steps.last().is_some_and(|s| !s.terminal);
        if open_tail && meta.open_tail.is_none() {
            meta.open_tail = Some("unterminated".into());
        }
        let mut ds = DemoDataset {
            meta,
            frames,
            steps: records,
            episodes: Vec::new(),
        };
        ds.rebuild_summary()?;
        Ok(ds)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: DemoMeta = serde_json::from_reader(BufReader::new(File::open(dir.join(META_FILE))?))?;
        if meta.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {}", meta.version)));
        }
        let steps = read_steps(&dir.join(STEPS_FILE))?;
        let mut frames = Vec::new();
        File::open(dir.join(FRAMES_FILE))?.read_to_end(&mut frames)?;
        if frames.len() != steps.len() * meta.frame_len() {
            return Err(Error::Format(format!(
                "{} frame bytes for {} steps of {} bytes",
                frames.len(),
                steps.len(),
                meta.frame_len()
            )));
        }
        let recorded = meta.clone();
        let mut ds = DemoDataset {
            meta,
            frames,
            steps,
            episodes: Vec::new(),
        };
        ds.rebuild_summary()?;
        if recorded.finished_unix.is_some()
            && (recorded.steps != ds.meta.steps
                || recorded.action_counts != ds.meta.action_counts
                || recorded.episode_scores != ds.meta.episode_scores)
        {
            return Err(Error::Format("meta.json disagrees with the step log".into()));
        }
        Ok(ds)
    }

    /// Repairs a directory left behind by an interrupted session: drops any
    /// partially written trailing step, rewrites `meta.json` from the step
    /// log and removes the recovery marker.
    pub fn recover(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut meta: DemoMeta = serde_json::from_reader(BufReader::new(File::open(dir.join(META_FILE))?))?;
        let text = fs::read_to_string(dir.join(STEPS_FILE))?;
        let mut steps = Vec::new();
        for line in text.lines() {
            match serde_json::from_str::<StepRecord>(line) {
                Ok(r) => steps.push(r),
                Err(_) => break,
            }
        }
        let mut frames = fs::read(dir.join(FRAMES_FILE))?;
        let whole = frames.len() / meta.frame_len();
        steps.truncate(whole);
        frames.truncate(steps.len() * meta.frame_len());
        fs::write(dir.join(FRAMES_FILE), &frames)?;
        let mut log = Vec::new();
        for r in &steps {
            log.extend(serde_json::to_vec(r)?);
            log.push(b'\n');
        }
        fs::write(dir.join(STEPS_FILE), log)?;
        if steps.last().is_some_and(|s| !s.terminal) {
            meta.open_tail = Some("recovered".into());
        }
        meta.end_reason.get_or_insert_with(|| "recovered".into());
        meta.finished_unix = Some(unix_now());
        let mut ds = DemoDataset {
            meta,
            frames,
            steps,
            episodes: Vec::new(),
        };
        ds.rebuild_summary()?;
        write_json_atomic(&dir.join(META_FILE), &ds.meta)?;
        let marker = dir.join(RECOVER_FILE);
        if marker.exists() {
            fs::remove_file(marker)?;
        }
        Ok(ds)
    }

    /// Writes the dataset to a fresh directory.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let mut meta = self.meta.clone();
        meta.steps = 0;
        meta.action_counts = vec![0; meta.actions.len()];
        meta.episode_scores.clear();
        meta.open_tail = None;
        let mut w = DemoWriter::create(dir, meta)?;
        for i in 0..self.len() {
            w.append(&self.demo_step(i))?;
        }
        let reason = self.meta.open_tail.clone().or_else(|| self.meta.end_reason.clone());
        w.finish(reason.as_deref().unwrap_or("complete"))?;
        Ok(())
    }

    fn rebuild_summary(&mut self) -> Result<()> {
        let k = self.meta.actions.len();
        let mut counts = vec![0; k];
        let mut scores = Vec::new();
        let mut episodes = Vec::new();
        let mut start = 0;
        let mut score = 0.0;
        for (i, r) in self.steps.iter().enumerate() {
            if r.action >= k {
                return Err(Error::Format(format!("step {i}: action {} outside the action set", r.action)));
            }
            if r.episode != episodes.len() || r.index != i - start {
                return Err(Error::Format(format!("step {i}: episode/index out of sequence")));
            }
            counts[r.action] += 1;
            score += r.reward;
            if r.terminal {
                episodes.push(start..i + 1);
                scores.push(score);
                start = i + 1;
                score = 0.0;
            }
        }
        if start < self.steps.len() {
            episodes.push(start..self.steps.len());
            scores.push(score);
        }
        self.meta.steps = self.steps.len();
        self.meta.action_counts = counts;
        self.meta.episode_scores = scores;
        self.episodes = episodes;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn episodes(&self) -> &[Range<usize>] {
        &self.episodes
    }

    pub fn action_count(&self) -> usize {
        self.meta.actions.len()
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        let n = self.meta.frame_len();
        &self.frames[i * n..(i + 1) * n]
    }

    pub fn demo_step(&self, i: usize) -> DemoStep {
        let r = &self.steps[i];
        DemoStep {
            frame: Frame {
                width: self.meta.width,
                height: self.meta.height,
                pixels: self.frame(i).to_vec(),
            },
            action: r.action,
            reward: r.reward,
            terminal: r.terminal,
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.steps.iter().map(|r| r.action).collect()
    }

    /// Step indices of a random `holdout` fraction of whole episodes, and of
    /// the rest. At least one episode stays in training.
    pub fn split_by_episode(&self, holdout: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.episodes.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_held = ((self.episodes.len() as f64 * holdout).round() as usize).min(self.episodes.len().saturating_sub(1));
        let held: Vec<usize> = order[..n_held].to_vec();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (e, range) in self.episodes.iter().enumerate() {
            let target = if held.contains(&e) { &mut test } else { &mut train };
            target.extend(range.clone());
        }
        (train, test)
    }

    /// Preprocesses every frame once for repeated stack assembly.
    pub fn prepare(&self, stack: usize, side: usize) -> Result<PreparedDemos> {
        if self.meta.width != self.meta.height {
            return Err(Error::input("demonstration frames must be square"));
        }
        if stack == 0 || side == 0 || side > self.meta.width {
            return Err(Error::input(format!(
                "cannot build {stack}-stacks at {side}px from {}px frames",
                self.meta.width
            )));
        }
        let mut frames = Vec::with_capacity(self.len() * side * side);
        for i in 0..self.len() {
            let f = Frame {
                width: self.meta.width,
                height: self.meta.height,
                pixels: self.frame(i).to_vec(),
            };
            frames.extend(area_resize(&f, side));
        }
        let mut episode_start = vec![0; self.len()];
        for range in &self.episodes {
            for i in range.clone() {
                episode_start[i] = range.start;
            }
        }
        Ok(PreparedDemos {
            stack,
            side,
            frames,
            episode_start,
            labels: self.labels(),
            actions: self.action_count(),
        })
    }
}

fn read_steps(path: &Path) -> Result<Vec<StepRecord>> {
    let mut steps = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: StepRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        steps.push(r);
    }
    Ok(steps)
}

/// Demonstration frames resized and scaled to `[0, 1]`, ready for stacking.
#[derive(Clone, Debug)]
pub struct PreparedDemos {
    stack: usize,
    side: usize,
    frames: Vec<f32>,
    episode_start: Vec<usize>,
    labels: Vec<usize>,
    actions: usize,
}

impl PreparedDemos {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn action_count(&self) -> usize {
        self.actions
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.stack, self.side, self.side]
    }

    /// Source step of each stack slot, oldest first; slots before the
    /// episode start repeat its first frame.
    pub fn stack_sources(&self, i: usize) -> Vec<usize> {
        let start = self.episode_start[i];
        (0..self.stack)
            .map(|k| {
                let back = self.stack - 1 - k;
                i.saturating_sub(back).max(start)
            })
            .collect()
    }

    pub fn write_state(&self, i: usize, out: &mut [f32]) {
        let plane = self.side * self.side;
        for (k, src) in self.stack_sources(i).into_iter().enumerate() {
            out[k * plane..(k + 1) * plane].copy_from_slice(&self.frames[src * plane..(src + 1) * plane]);
        }
    }

    pub fn state(&self, i: usize) -> Tensor {
        let mut data = vec![0.0; self.stack * self.side * self.side];
        self.write_state(i, &mut data);
        Tensor::from_vec(&[self.stack, self.side, self.side], data).expect("state shape")
    }

    /// `[N, stack, side, side]` batch of the given steps and their labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let per = self.stack * self.side * self.side;
        let mut data = vec![0.0; indices.len() * per];
        for (slot, &i) in indices.iter().enumerate() {
            self.write_state(i, &mut data[slot * per..(slot + 1) * per]);
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let shape = [indices.len(), self.stack, self.side, self.side];
        (Tensor::from_vec(&shape, data).expect("batch shape"), labels)
    }
}

/// Picks an action class with probability proportional to its frequency,
/// then a uniformly random step carrying that label.
#[derive(Clone, Debug)]
pub struct ProportionalSampler {
    by_class: Vec<Vec<usize>>,
    classes: WeightedIndex<usize>,
}

impl ProportionalSampler {
    /// `pool` restricts sampling to a subset of step indices.
    pub fn new(labels: &[usize], actions: usize, pool: &[usize]) -> Result<Self> {
        let mut by_class = vec![Vec::new(); actions];
        for &i in pool {
            let a = *labels
                .get(i)
                .ok_or_else(|| Error::input(format!("step {i} outside the dataset")))?;
            if a >= actions {
                return Err(Error::input(format!("label {a} outside {actions} actions")));
            }
            by_class[a].push(i);
        }
        let weights: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let classes =
            WeightedIndex::new(&weights).map_err(|_| Error::input("cannot sample from an empty dataset"))?;
        Ok(ProportionalSampler { by_class, classes })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let class = &self.by_class[self.classes.sample(rng)];
        class[rng.random_range(0..class.len())]
    }

    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, batch: usize) -> Vec<usize> {
        (0..batch).map(|_| self.sample(rng)).collect()
    }
}

/// One proportional minibatch of stacked states and action labels.
pub fn proportional_minibatch<R: Rng + ?Sized>(
    demos: &PreparedDemos,
    sampler: &ProportionalSampler,
    batch: usize,
    rng: &mut R,
) -> Result<(Tensor, Vec<usize>)> {
    if batch == 0 {
        return Err(Error::input("batch size must be at least 1"));
    }
    Ok(demos.batch(&sampler.sample_batch(rng, batch)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub game: GameId,
    pub worst_score: f64,
    pub best_score: f64,
    pub states: usize,
    pub episodes: usize,
    /// (action name, count) in action-id order.
    pub action_histogram: Vec<(String, usize)>,
}

pub fn dataset_stats(ds: &DemoDataset) -> StatsReport {
    let mut report = meta_stats(&ds.meta);
    report.states = ds.len();
    report.episodes = ds.episodes.len();
    if ds.is_empty() {
        report.action_histogram.clear();
    }
    report
}

/// Statistics from the running totals kept in the metadata alone.
pub fn meta_stats(meta: &DemoMeta) -> StatsReport {
    let scores = &meta.episode_scores;
    let (worst, best) = if scores.is_empty() {
        (0.0, 0.0)
    } else {
        (
            scores.iter().copied().fold(f64::INFINITY, f64::min),
            scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    StatsReport {
        game: meta.game,
        worst_score: worst,
        best_score: best,
        states: meta.steps,
        episodes: scores.len(),
        action_histogram: if meta.steps == 0 {
            Vec::new()
        } else {
            meta.actions.iter().cloned().zip(meta.action_counts.iter().copied()).collect()
        },
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>11} {:>10} {:>11} {:>12}", "game", "worst score", "best score", "# of states", "# of episodes")?;
        writeln!(
            f,
            "{:<14} {:>11} {:>10} {:>11} {:>12}",
            self.game.as_str(),
            self.worst_score,
            self.best_score,
            self.states,
            self.episodes
        )?;
        if !self.action_histogram.is_empty() {
            writeln!(f)?;
            let total = self.states.max(1) as f64;
            for (name, count) in &self.action_histogram {
                writeln!(f, "  {name:<10} {count:>7}  {:>5.1}%", 100.0 * *count as f64 / total)?;
            }
        }
        Ok(())
    }
}
