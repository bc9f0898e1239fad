//! Action-conditioned class-activation maps over the last convolutional
//! layer, with the importance weights rectified before the weighted sum.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::a3c::sample_action;
use crate::env::{Frame, WrappedEnv};
use crate::error::{Error, Result};
use crate::numeric::{argmax, softmax, ComputeGraph, OutputGrad, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTag {
    Random,
    Pretrained,
    FinalRl,
}

impl ModelTag {
    pub const ROWS: [ModelTag; 3] = [ModelTag::Random, ModelTag::Pretrained, ModelTag::FinalRl];

    pub fn name(self) -> &'static str {
        match self {
            ModelTag::Random => "random",
            ModelTag::Pretrained => "pretrained",
            ModelTag::FinalRl => "final_rl",
        }
    }
}

/// Which scalar the gradients are taken of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamTarget {
    /// The pre-softmax logit of the action.
    #[default]
    Logit,
    /// The softmax probability of the action.
    Probability,
}

impl FromStr for CamTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(CamTarget::Logit),
            "probability" | "prob" => Ok(CamTarget::Probability),
            _ => Err(Error::input(format!("unknown cam target `{s}` (logit|probability)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamMode {
    /// `sum_k relu(alpha_k) M^k`.
    #[default]
    RectifiedWeights,
    /// `relu(sum_k alpha_k M^k)`, the unmodified form.
    RectifiedSum,
}

impl FromStr for CamMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectified_weights" | "modified" => Ok(CamMode::RectifiedWeights),
            "rectified_sum" | "original" => Ok(CamMode::RectifiedSum),
            _ => Err(Error::input(format!("unknown cam mode `{s}` (modified|original)"))),
        }
    }
}

/// Importance weights and the feature maps they apply to.
#[derive(Clone, Debug, PartialEq)]
pub struct Importance {
    pub action: usize,
    pub alpha: Vec<f64>,
    /// `[channels, height, width]`, row-major.
    pub maps: Vec<f64>,
    pub dims: [usize; 3],
    pub logits: Vec<f64>,
}

/// Gradient of the chosen action's score with respect to the last conv
/// maps, averaged over each map. Parameters are left untouched.
pub fn importance_weights<T: Scalar>(
    graph: &mut ComputeGraph<T>,
    state: &Tensor<T>,
    action: usize,
    target: CamTarget,
) -> Result<Importance> {
    let k = graph.action_count();
    if action >= k {
        return Err(Error::input(format!("action {action} out of range for {k} actions")));
    }
    let dims = graph
        .feature_dims()
        .ok_or_else(|| Error::config("graph has no convolutional layer"))?;
    let out = graph.forward(state)?;
    if out.logits.shape()[0] != 1 {
        return Err(Error::input("saliency takes a single state"));
    }
    let logits = out.logits.row(0);
    let mut seed = Tensor::zeros(&[1, k]);
    match target {
        CamTarget::Logit => seed.data_mut()[action] = T::one(),
        CamTarget::Probability => {
            let p = softmax(logits);
            for (i, s) in seed.data_mut().iter_mut().enumerate() {
                let delta = if i == action { T::one() } else { T::zero() };
                *s = p[action] * (delta - p[i]);
            }
        }
    }
    let grads = graph.backward(&OutputGrad { logits: seed, value: None })?;
    let fgrad = grads.features.ok_or_else(|| Error::config("graph has no convolutional layer"))?;
    let maps = out.features.ok_or_else(|| Error::config("graph has no convolutional layer"))?;
    let area = dims[1] * dims[2];
    let alpha = fgrad
        .data()
        .chunks_exact(area)
        .map(|c| c.iter().map(|g| g.as_f64()).sum::<f64>() / area as f64)
        .collect();
    Ok(Importance {
        action,
        alpha,
        maps: maps.data().iter().map(|v| v.as_f64()).collect(),
        dims,
        logits: logits.iter().map(|v| v.as_f64()).collect(),
    })
}

/// A heatmap in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl SaliencyMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        SaliencyMap {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear resampling with pixel-centre alignment.
    pub fn upsample(&self, width: usize, height: usize) -> SaliencyMap {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let top = self.at(x0, y0) * (1.0 - tx) + self.at(x1, y0) * tx;
                let bottom = self.at(x0, y1) * (1.0 - tx) + self.at(x1, y1) * tx;
                values.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        SaliencyMap { width, height, values }
    }
}

/// Weighted map sum followed by min-max normalization. Maps that cannot be
/// normalized (constant, empty or non-finite) come out all zero.
pub fn saliency(alpha: &[f64], maps: &[f64], dims: [usize; 3], mode: CamMode) -> Result<SaliencyMap> {
    let [c, h, w] = dims;
    if alpha.len() != c || maps.len() != c * h * w {
        return Err(Error::input(format!(
            "{} weights and {} map values for dims {dims:?}",
            alpha.len(),
            maps.len()
        )));
    }
    let area = h * w;
    let mut sum = vec![0.0; area];
    for (a, m) in alpha.iter().zip(maps.chunks_exact(area)) {
        let a = match mode {
            CamMode::RectifiedWeights => a.max(0.0),
            CamMode::RectifiedSum => *a,
        };
        if a == 0.0 {
            continue;
        }
        for (s, v) in sum.iter_mut().zip(m) {
            *s += a * v;
        }
    }
    if mode == CamMode::RectifiedSum {
        sum.iter_mut().for_each(|v| *v = v.max(0.0));
    }
    let (lo, hi) = sum
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Ok(SaliencyMap::zeros(w, h));
    }
    let span = hi - lo;
    Ok(SaliencyMap {
        width: w,
        height: h,
        values: sum.into_iter().map(|v| (v - lo) / span).collect(),
    })
}

/// Linear blue-to-red ramp.
pub fn heat_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    [(255.0 * v).round() as u8, 0, (255.0 * (1.0 - v)).round() as u8]
}

pub fn frame_image(frame: &Frame) -> RgbImage {
    RgbImage::from_fn(frame.width as u32, frame.height as u32, |x, y| {
        let g = frame.pixels[y as usize * frame.width + x as usize];
        Rgb([g, g, g])
    })
}

/// Blends the upsampled heatmap over a grayscale frame.
pub fn overlay(frame: &Frame, map: &SaliencyMap, opacity: f64) -> RgbImage {
    let up = map.upsample(frame.width, frame.height);
    let o = opacity.clamp(0.0, 1.0);
    RgbImage::from_fn(frame.width as u32, frame.height as u32, |x, y| {
        let i = y as usize * frame.width + x as usize;
        let g = frame.pixels[i] as f64;
        let heat = heat_color(up.values[i]);
        Rgb(heat.map(|c| ((1.0 - o) * g + o * c as f64).round() as u8))
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCamConfig {
    pub target: CamTarget,
    pub mode: CamMode,
    /// Use the final agent's action for every row instead of each model's own.
    pub shared_action: bool,
    pub opacity: f64,
    pub max_steps: u64,
    /// First frame and length of the composite grid.
    pub grid_start: usize,
    pub grid_frames: usize,
}

impl Default for GradCamConfig {
    fn default() -> Self {
        GradCamConfig {
            target: CamTarget::Logit,
            mode: CamMode::RectifiedWeights,
            shared_action: false,
            opacity: 0.5,
            max_steps: 5000,
            grid_start: 0,
            grid_frames: 5,
        }
    }
}

/// States and frames seen by one evaluation episode.
#[derive(Clone, Debug, Default)]
pub struct Capture {
    pub states: Vec<Tensor>,
    pub frames: Vec<Frame>,
    pub actions: Vec<usize>,
    pub score: f64,
    pub game_over: bool,
}

impl Capture {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Plays one episode with `graph`, sampling from its policy, until the game
/// ends or `max_steps` steps have been taken.
pub fn capture_episode<R: Rng + ?Sized>(
    graph: &mut ComputeGraph,
    env: &mut WrappedEnv,
    max_steps: u64,
    rng: &mut R,
) -> Result<Capture> {
    let mut cap = Capture::default();
    let mut obs = env.reset()?;
    for _ in 0..max_steps {
        let out = graph.forward(&obs)?;
        let action = sample_action(out.logits.row(0), rng);
        cap.states.push(obs);
        cap.frames.push(env.last_frame().clone());
        cap.actions.push(action);
        let step = env.step(action)?;
        cap.score += step.reward;
        if step.game_over || step.truncated {
            cap.game_over = step.game_over;
            break;
        }
        obs = if step.terminal { env.reset()? } else { step.observation };
    }
    Ok(cap)
}

/// The three models compared row by row.
pub struct CamModels<'a> {
    pub random: &'a mut ComputeGraph,
    pub pretrained: &'a mut ComputeGraph,
    pub final_rl: &'a mut ComputeGraph,
}

impl CamModels<'_> {
    fn check_geometry(&self) -> Result<()> {
        let reference = (
            self.final_rl.input_shape(),
            self.final_rl.feature_dims(),
            self.final_rl.action_count(),
        );
        for (tag, g) in [(ModelTag::Random, &*self.random), (ModelTag::Pretrained, &*self.pretrained)] {
            let this = (g.input_shape(), g.feature_dims(), g.action_count());
            if this != reference {
                return Err(Error::input(format!(
                    "{} model geometry {this:?} differs from the final model's {reference:?}",
                    tag.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameCams {
    pub index: usize,
    /// Action and map per row, in [`ModelTag::ROWS`] order.
    pub actions: [usize; 3],
    pub maps: [SaliencyMap; 3],
}

/// Saliency for every captured frame under all three models.
pub fn render_sequence(models: &mut CamModels<'_>, capture: &Capture, config: &GradCamConfig) -> Result<Vec<FrameCams>> {
    models.check_geometry()?;
    let mut out = Vec::with_capacity(capture.len());
    for (index, state) in capture.states.iter().enumerate() {
        if state.shape() != models.final_rl.input_shape() {
            return Err(Error::input(format!(
                "state {index} has shape {:?}, expected {:?}",
                state.shape(),
                models.final_rl.input_shape()
            )));
        }
        let shared = argmax(models.final_rl.forward(state)?.logits.row(0));
        let mut actions = [0; 3];
        let mut maps: [SaliencyMap; 3] = std::array::from_fn(|_| SaliencyMap::zeros(0, 0));
        let graphs: [&mut ComputeGraph; 3] = [&mut *models.random, &mut *models.pretrained, &mut *models.final_rl];
        for (row, g) in graphs.into_iter().enumerate() {
            let action = if config.shared_action {
                shared
            } else {
                argmax(g.forward(state)?.logits.row(0))
            };
            let imp = importance_weights(g, state, action, config.target)?;
            maps[row] = saliency(&imp.alpha, &imp.maps, imp.dims, config.mode)?;
            actions[row] = action;
        }
        out.push(FrameCams { index, actions, maps });
    }
    Ok(out)
}

/// One column per frame: the three model rows over the frame, then the
/// frame itself.
pub fn grid_image(cams: &[FrameCams], frames: &[Frame], opacity: f64) -> Result<RgbImage> {
    let first = frames.first().ok_or_else(|| Error::input("grid needs at least one frame"))?;
    let (w, h) = (first.width as u32, first.height as u32);
    let mut img = RgbImage::new(w * cams.len() as u32, h * 4);
    for (col, cam) in cams.iter().enumerate() {
        let frame = frames
            .get(cam.index)
            .ok_or_else(|| Error::input(format!("no frame {}", cam.index)))?;
        if frame.width as u32 != w || frame.height as u32 != h {
            return Err(Error::input("frames differ in size"));
        }
        let tiles = cam
            .maps
            .iter()
            .map(|m| overlay(frame, m, opacity))
            .chain(std::iter::once(frame_image(frame)));
        for (row, tile) in tiles.enumerate() {
            image::imageops::replace(&mut img, &tile, (col as u32 * w) as i64, (row as u32 * h) as i64);
        }
    }
    Ok(img)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamManifest {
    pub rows: Vec<String>,
    pub target: CamTarget,
    pub mode: CamMode,
    pub shared_action: bool,
    pub episode_score: f64,
    pub frames: Vec<CamManifestFrame>,
    pub grid: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CamManifestFrame {
    pub index: usize,
    pub file: String,
    pub executed_action: usize,
    pub random: usize,
    pub pretrained: usize,
    pub final_rl: usize,
}

/// Writes one four-row PNG per frame, the composite grid and a manifest.
pub fn write_outputs(dir: &Path, cams: &[FrameCams], capture: &Capture, config: &GradCamConfig) -> Result<CamManifest> {
    fs::create_dir_all(dir)?;
    let mut frames = Vec::with_capacity(cams.len());
    for cam in cams {
        let file = format!("frame_{:05}.png", cam.index);
        grid_image(std::slice::from_ref(cam), &capture.frames, config.opacity)?.save(dir.join(&file))?;
        frames.push(CamManifestFrame {
            index: cam.index,
            file,
            executed_action: capture.actions.get(cam.index).copied().unwrap_or(0),
            random: cam.actions[0],
            pretrained: cam.actions[1],
            final_rl: cam.actions[2],
        });
    }
    let start = config.grid_start.min(cams.len());
    let end = (start + config.grid_frames).min(cams.len());
    let grid = if end > start {
        grid_image(&cams[start..end], &capture.frames, config.opacity)?.save(dir.join("grid.png"))?;
        Some("grid.png".to_string())
    } else {
        None
    };
    let manifest = CamManifest {
        rows: ModelTag::ROWS
            .iter()
            .map(|t| t.name().to_string())
            .chain(std::iter::once("original".to_string()))
            .collect(),
        target: config.target,
        mode: config.mode,
        shared_action: config.shared_action,
        episode_score: capture.score,
        frames,
        grid,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}
