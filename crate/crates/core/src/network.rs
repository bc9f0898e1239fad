//! The three-conv / two-fc policy-value network, its classifier sibling, and
//! the transfer of pre-trained layers into a fresh agent.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{ComputeGraph, GraphSpec, LayerSpec, ParamSet, Snapshot};

/// Ordered layer names shared by the agent and the classifier.
pub const LAYER_ORDER: [&str; 5] = ["conv1", "conv2", "conv3", "fc1", "fc2"];
pub const VALUE_LAYER: &str = "fc3";
pub const OUTPUT_LAYER: &str = "fc2";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub const fn new(channels: usize, kernel: usize, stride: usize) -> Self {
        ConvGeometry {
            channels,
            kernel,
            stride,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Side length of the square input frames.
    pub resolution: usize,
    /// Number of stacked frames.
    pub stack: usize,
    pub convs: [ConvGeometry; 3],
    pub fc1_width: usize,
    pub actions: usize,
}

impl NetworkConfig {
    /// 84x84 input; 32 8x8/4, 64 4x4/2, 64 3x3/1 convolutions; 512-unit fc1.
    pub fn atari(actions: usize) -> Self {
        NetworkConfig {
            resolution: 84,
            stack: 4,
            convs: [
                ConvGeometry::new(32, 8, 4),
                ConvGeometry::new(64, 4, 2),
                ConvGeometry::new(64, 3, 1),
            ],
            fc1_width: 512,
            actions,
        }
    }

    /// Geometry for small frames: the stride pattern keeps the same
    /// coarse-to-fine shape with smaller kernels and narrower layers.
    pub fn compact(resolution: usize, actions: usize) -> Self {
        NetworkConfig {
            resolution,
            stack: 4,
            convs: [
                ConvGeometry::new(16, 4, 2),
                ConvGeometry::new(32, 3, 2),
                ConvGeometry::new(32, 3, 1),
            ],
            fc1_width: 256,
            actions,
        }
        .fitted()
    }

    /// The narrowest useful variant, sized for single-core desk runs.
    pub fn tiny(resolution: usize, actions: usize) -> Self {
        NetworkConfig {
            resolution,
            stack: 4,
            convs: [
                ConvGeometry::new(8, 4, 2),
                ConvGeometry::new(16, 3, 2),
                ConvGeometry::new(16, 3, 1),
            ],
            fc1_width: 128,
            actions,
        }
        .fitted()
    }

    /// Grows each kernel by less than its stride until the windows tile the
    /// input exactly, so no trailing row or column goes unseen.
    pub fn fitted(mut self) -> Self {
        let mut side = self.resolution;
        for c in &mut self.convs {
            if c.stride == 0 || c.kernel > side {
                break;
            }
            let slack = (side - c.kernel) % c.stride;
            if slack != 0 && c.kernel + c.stride - slack <= side {
                c.kernel += c.stride - slack;
            }
            side = (side - c.kernel) / c.stride + 1;
        }
        self
    }

    /// `atari` at 84 and above, `compact` below.
    pub fn for_resolution(resolution: usize, actions: usize) -> Self {
        if resolution >= 84 {
            NetworkConfig {
                resolution,
                ..Self::atari(actions)
            }
            .fitted()
        } else {
            Self::compact(resolution, actions)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.actions < 2 {
            return Err(Error::config(format!("need at least 2 actions, got {}", self.actions)));
        }
        if self.resolution < 16 {
            return Err(Error::config(format!(
                "resolution must be at least 16, got {}",
                self.resolution
            )));
        }
        if self.stack == 0 || self.fc1_width == 0 {
            return Err(Error::config("stack depth and fc1 width must be positive"));
        }
        let mut side = self.resolution;
        for (i, c) in self.convs.iter().enumerate() {
            if c.kernel > side || c.stride == 0 || c.channels == 0 {
                return Err(Error::config(format!(
                    "conv{} ({}x{} stride {}) collapses a {side}x{side} input",
                    i + 1,
                    c.kernel,
                    c.kernel,
                    c.stride
                )));
            }
            if (side - c.kernel) % c.stride != 0 {
                return Err(Error::config(format!(
                    "conv{} ({}x{} stride {}) leaves trailing pixels of a {side}x{side} input unseen",
                    i + 1,
                    c.kernel,
                    c.kernel,
                    c.stride
                )));
            }
            side = (side - c.kernel) / c.stride + 1;
        }
        Ok(())
    }

    pub fn graph_spec(&self, value_head: bool) -> GraphSpec {
        let [c1, c2, c3] = self.convs;
        GraphSpec {
            input: [self.stack, self.resolution, self.resolution],
            trunk: vec![
                LayerSpec::conv("conv1", c1.channels, c1.kernel, c1.stride),
                LayerSpec::conv("conv2", c2.channels, c2.kernel, c2.stride),
                LayerSpec::conv("conv3", c3.channels, c3.kernel, c3.stride),
                LayerSpec::hidden("fc1", self.fc1_width),
            ],
            policy: LayerSpec::head(OUTPUT_LAYER, self.actions),
            value: value_head.then(|| LayerSpec::head(VALUE_LAYER, 1)),
        }
    }
}

/// How many leading layers of a pre-trained classifier to reuse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSet {
    /// conv1 through fc2.
    All,
    /// conv1 through fc1.
    Fc1,
    Conv3,
    Conv2,
    Conv1,
}

impl LayerSet {
    pub const ABLATION: [LayerSet; 5] = [
        LayerSet::All,
        LayerSet::Fc1,
        LayerSet::Conv3,
        LayerSet::Conv2,
        LayerSet::Conv1,
    ];

    pub fn layers(self) -> &'static [&'static str] {
        let n = match self {
            LayerSet::All => 5,
            LayerSet::Fc1 => 4,
            LayerSet::Conv3 => 3,
            LayerSet::Conv2 => 2,
            LayerSet::Conv1 => 1,
        };
        &LAYER_ORDER[..n]
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerSet::All => "all",
            LayerSet::Fc1 => "fc1",
            LayerSet::Conv3 => "conv3",
            LayerSet::Conv2 => "conv2",
            LayerSet::Conv1 => "conv1",
        }
    }
}

impl fmt::Display for LayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LayerSet::ABLATION
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::input(format!("unknown layer set `{s}` (all|fc1|conv3|conv2|conv1)")))
    }
}

pub fn build_policy_value<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<ComputeGraph> {
    config.validate()?;
    ComputeGraph::new(config.graph_spec(true), rng)
}

pub fn build_classifier<R: Rng + ?Sized>(config: &NetworkConfig, rng: &mut R) -> Result<ComputeGraph> {
    config.validate()?;
    ComputeGraph::new(config.graph_spec(false), rng)
}

/// Divides the output layer's weights and biases by `tracked_max`.
pub fn normalize_output_layer(params: &mut ParamSet, tracked_max: f64) -> Result<()> {
    if !(tracked_max > 0.0) || !tracked_max.is_finite() {
        return Err(Error::input(format!("tracked maximum must be positive, got {tracked_max}")));
    }
    for suffix in ["weight", "bias"] {
        let name = format!("{OUTPUT_LAYER}.{suffix}");
        let t = params
            .get_mut(&name)
            .ok_or_else(|| Error::input(format!("parameter set has no `{name}`")))?;
        t.data_mut()
            .iter_mut()
            .for_each(|x| *x = (*x as f64 / tracked_max) as f32);
    }
    Ok(())
}

/// Largest absolute weight or bias of the output layer.
pub fn output_layer_max_abs(params: &ParamSet) -> f64 {
    ["weight", "bias"]
        .iter()
        .filter_map(|s| params.get(&format!("{OUTPUT_LAYER}.{s}")))
        .map(|t| t.max_abs())
        .fold(0.0, f64::max)
}

/// Copies the layers of `set` from `source` into `target`. When the set
/// includes the output layer and `normalize_by` is given, the copied output
/// layer is divided by it. Layers outside the set keep their current values.
pub fn transfer_layers(
    source: &ParamSet,
    target: &mut ComputeGraph,
    set: LayerSet,
    normalize_by: Option<f64>,
) -> Result<()> {
    let mut staged = target.params().clone();
    for layer in set.layers() {
        for suffix in ["weight", "bias"] {
            let name = format!("{layer}.{suffix}");
            let src = source.get(&name).ok_or_else(|| Error::Transfer {
                layer: layer.to_string(),
                reason: format!("source has no `{name}`"),
            })?;
            let dst = staged.get_mut(&name).ok_or_else(|| Error::Transfer {
                layer: layer.to_string(),
                reason: format!("target has no `{name}`"),
            })?;
            if src.shape() != dst.shape() {
                return Err(Error::Transfer {
                    layer: layer.to_string(),
                    reason: format!("shape {:?} vs {:?}", src.shape(), dst.shape()),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
    }
    if set == LayerSet::All {
        if let Some(m) = normalize_by {
            normalize_output_layer(&mut staged, m)?;
        }
    }
    target.set_params(&staged)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    PolicyValue,
    Classifier,
}

/// Metadata stored in the snapshot header of every saved model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: ModelKind,
    pub network: NetworkConfig,
    #[serde(default)]
    pub game: Option<String>,
    /// Whether the output layer was divided by `tracked_max`.
    #[serde(default)]
    pub fc2_normalized: bool,
    #[serde(default)]
    pub tracked_max: Option<f64>,
    #[serde(default)]
    pub step: Option<u64>,
    #[serde(default)]
    pub note: Option<String>,
}

impl ModelMeta {
    pub fn new(kind: ModelKind, network: NetworkConfig) -> Self {
        ModelMeta {
            kind,
            network,
            game: None,
            fc2_normalized: false,
            tracked_max: None,
            step: None,
            note: None,
        }
    }
}

pub fn to_snapshot(params: &ParamSet, meta: &ModelMeta) -> Snapshot {
    Snapshot::new(serde_json::to_value(meta).expect("meta serializes"), params.clone())
}

pub fn save_model(path: impl AsRef<Path>, params: &ParamSet, meta: &ModelMeta) -> Result<()> {
    to_snapshot(params, meta).save(path)
}

/// Rebuilds a graph from a snapshot written by [`save_model`].
pub fn model_from_snapshot(snapshot: &Snapshot) -> Result<(ComputeGraph, ModelMeta)> {
    let meta: ModelMeta = serde_json::from_value(snapshot.meta.clone())
        .map_err(|e| Error::Format(format!("snapshot metadata: {e}")))?;
    meta.network.validate()?;
    let mut graph = ComputeGraph::zeroed(meta.network.graph_spec(meta.kind == ModelKind::PolicyValue))?;
    graph.set_params(&snapshot.params).map_err(|e| Error::Format(format!("snapshot tensors: {e}")))?;
    Ok((graph, meta))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ComputeGraph, ModelMeta)> {
    model_from_snapshot(&Snapshot::load(path)?)
}
