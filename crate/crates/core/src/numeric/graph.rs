//! Fixed-topology feed-forward graph: a trunk of ReLU conv layers followed by
//! ReLU fully-connected layers, a linear policy head and an optional linear
//! value head. Forward caches what backward needs; backward is hand-written
//! per layer type.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamSet;
use super::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    /// Valid-padding square convolution.
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Linear {
        outputs: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub relu: bool,
}

impl LayerSpec {
    pub fn conv(name: &str, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Conv2d {
                out_channels,
                kernel,
                stride,
            },
            relu: true,
        }
    }

    pub fn hidden(name: &str, outputs: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Linear { outputs },
            relu: true,
        }
    }

    pub fn head(name: &str, outputs: usize) -> Self {
        LayerSpec {
            name: name.to_string(),
            kind: LayerKind::Linear { outputs },
            relu: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSpec {
    /// Channels, height, width of one input sample.
    pub input: [usize; 3],
    pub trunk: Vec<LayerSpec>,
    pub policy: LayerSpec,
    pub value: Option<LayerSpec>,
}

impl GraphSpec {
    pub fn layer_names(&self) -> Vec<&str> {
        self.trunk
            .iter()
            .chain(std::iter::once(&self.policy))
            .chain(self.value.iter())
            .map(|l| l.name.as_str())
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Layer {
    spec: LayerSpec,
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    weight: usize,
    bias: usize,
}

impl Layer {
    fn in_len(&self) -> usize {
        self.in_dims.iter().product()
    }

    fn out_len(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Rows of the im2col matrix (C·k·k) for conv, input width for linear.
    fn fan_in(&self) -> usize {
        match self.spec.kind {
            LayerKind::Conv2d { kernel, .. } => self.in_dims[0] * kernel * kernel,
            LayerKind::Linear { .. } => self.in_len(),
        }
    }
}

#[derive(Clone, Debug)]
struct Cache<T> {
    batch: usize,
    input: Vec<T>,
    /// Post-activation output of every trunk layer.
    acts: Vec<Vec<T>>,
    /// im2col matrices of conv layers, one block per sample.
    cols: Vec<Vec<T>>,
}

/// Result of a forward pass over a batch of `n` samples.
#[derive(Clone, Debug)]
pub struct Output<T = f32> {
    /// `[n, K]` pre-softmax policy logits.
    pub logits: Tensor<T>,
    /// `[n]` state values when the graph has a value head.
    pub value: Option<Tensor<T>>,
    /// `[n, C, h, w]` post-ReLU output of the last conv layer.
    pub features: Option<Tensor<T>>,
}

/// Loss gradient with respect to the graph outputs.
#[derive(Clone, Debug)]
pub struct OutputGrad<T = f32> {
    pub logits: Tensor<T>,
    pub value: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Gradients<T = f32> {
    pub params: ParamSet<T>,
    /// Gradient with respect to the last conv layer's post-ReLU maps.
    pub features: Option<Tensor<T>>,
    /// Gradient with respect to the input, when requested.
    pub input: Option<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct ComputeGraph<T: Scalar = f32> {
    spec: GraphSpec,
    trunk: Vec<Layer>,
    policy: Layer,
    value: Option<Layer>,
    feature_layer: Option<usize>,
    params: ParamSet<T>,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> ComputeGraph<T> {
    /// Builds the graph with every parameter set to zero.
    pub fn zeroed(spec: GraphSpec) -> Result<Self> {
        if spec.input.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("input shape {:?} has a zero dimension", spec.input)));
        }
        let mut params = ParamSet::new();
        let mut trunk = Vec::with_capacity(spec.trunk.len());
        let mut dims = spec.input;
        let mut seen_linear = false;
        let mut feature_layer = None;
        for (i, ls) in spec.trunk.iter().enumerate() {
            if matches!(ls.kind, LayerKind::Conv2d { .. }) {
                if seen_linear {
                    return Err(Error::config(format!(
                        "conv layer `{}` follows a fully-connected layer",
                        ls.name
                    )));
                }
                feature_layer = Some(i);
            } else {
                seen_linear = true;
            }
            let layer = resolve(ls, dims, &mut params)?;
            dims = layer.out_dims;
            trunk.push(layer);
        }
        let flat = [dims.iter().product(), 1, 1];
        for head in std::iter::once(&spec.policy).chain(spec.value.iter()) {
            if !matches!(head.kind, LayerKind::Linear { .. }) || head.relu {
                return Err(Error::config(format!(
                    "head `{}` must be a linear layer without activation",
                    head.name
                )));
            }
        }
        let policy = resolve(&spec.policy, flat, &mut params)?;
        let value = match &spec.value {
            Some(v) => {
                let layer = resolve(v, flat, &mut params)?;
                if layer.out_len() != 1 {
                    return Err(Error::config("value head must have exactly one output"));
                }
                Some(layer)
            }
            None => None,
        };
        let mut names: Vec<&str> = spec.layer_names();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("layer names must be unique"));
        }
        Ok(ComputeGraph {
            spec,
            trunk,
            policy,
            value,
            feature_layer,
            params,
            cache: None,
        })
    }

    /// Builds the graph with weights drawn uniformly from `±1/sqrt(fan_in)`
    /// and zero biases.
    pub fn new<R: Rng + ?Sized>(spec: GraphSpec, rng: &mut R) -> Result<Self> {
        let mut graph = Self::zeroed(spec)?;
        let layers: Vec<Layer> = graph.layers().cloned().collect();
        for layer in layers {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            for x in graph.params.at_mut(layer.weight).data_mut() {
                *x = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(graph)
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.trunk
            .iter()
            .chain(std::iter::once(&self.policy))
            .chain(self.value.iter())
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Mutable parameter access. Invalidates any cached forward pass.
    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        self.cache = None;
        &mut self.params
    }

    pub fn set_params(&mut self, params: &ParamSet<T>) -> Result<()> {
        self.cache = None;
        self.params.copy_from(params)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.spec.input
    }

    pub fn action_count(&self) -> usize {
        self.policy.out_len()
    }

    pub fn has_value_head(&self) -> bool {
        self.value.is_some()
    }

    /// `[channels, h, w]` of the maps exposed as `Output::features`.
    pub fn feature_dims(&self) -> Option<[usize; 3]> {
        self.feature_layer.map(|i| self.trunk[i].out_dims)
    }

    /// Output dims of a named layer.
    pub fn layer_output_dims(&self, name: &str) -> Option<[usize; 3]> {
        self.layers()
            .find(|l| l.spec.name == name)
            .map(|l| l.out_dims)
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Output<T>> {
        let [c, h, w] = self.spec.input;
        let sample = c * h * w;
        let batch = match input.shape() {
            [n, ic, ih, iw] if [*ic, *ih, *iw] == [c, h, w] => *n,
            [ic, ih, iw] if [*ic, *ih, *iw] == [c, h, w] => 1,
            other => {
                return Err(Error::config(format!(
                    "input shape {other:?} does not match graph input {:?}",
                    self.spec.input
                )))
            }
        };
        debug_assert_eq!(input.len(), batch * sample);

        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.trunk.len());
        let mut cols: Vec<Vec<T>> = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            let x: &[T] = acts.last().map(Vec::as_slice).unwrap_or(input.data());
            let (y, col) = layer_forward(layer, &self.params, x, batch);
            acts.push(y);
            cols.push(col);
        }
        let hidden: &[T] = acts.last().map(Vec::as_slice).unwrap_or(input.data());
        let (logits, _) = layer_forward(&self.policy, &self.params, hidden, batch);
        let logits = Tensor::from_vec(&[batch, self.policy.out_len()], logits)?;
        logits.ensure_finite("policy logits")?;
        let value = match &self.value {
            Some(v) => {
                let (vals, _) = layer_forward(v, &self.params, hidden, batch);
                let t = Tensor::from_vec(&[batch], vals)?;
                t.ensure_finite("value output")?;
                Some(t)
            }
            None => None,
        };
        let features = match self.feature_layer {
            Some(i) => {
                let [fc, fh, fw] = self.trunk[i].out_dims;
                Some(Tensor::from_vec(&[batch, fc, fh, fw], acts[i].clone())?)
            }
            None => None,
        };
        self.cache = Some(Cache {
            batch,
            input: input.data().to_vec(),
            acts,
            cols,
        });
        Ok(Output {
            logits,
            value,
            features,
        })
    }

    pub fn backward(&self, seed: &OutputGrad<T>) -> Result<Gradients<T>> {
        self.backward_impl(seed, false)
    }

    /// Like [`backward`](Self::backward) but also returns the input gradient.
    pub fn backward_with_input(&self, seed: &OutputGrad<T>) -> Result<Gradients<T>> {
        self.backward_impl(seed, true)
    }

    fn backward_impl(&self, seed: &OutputGrad<T>, want_input: bool) -> Result<Gradients<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("backward called without a preceding forward"))?;
        let n = cache.batch;
        let k = self.action_count();
        if seed.logits.shape() != [n, k] {
            return Err(Error::config(format!(
                "logit gradient shape {:?} does not match [{n}, {k}]",
                seed.logits.shape()
            )));
        }
        if let Some(v) = &seed.value {
            if self.value.is_none() {
                return Err(Error::config("value gradient given to a graph without a value head"));
            }
            if v.shape() != [n] {
                return Err(Error::config(format!(
                    "value gradient shape {:?} does not match [{n}]",
                    v.shape()
                )));
            }
        }

        let mut grads = self.params.zeros_like();
        let hidden: &[T] = cache.acts.last().map(Vec::as_slice).unwrap_or(&cache.input);
        let mut dy = vec![T::zero(); hidden.len()];
        linear_backward(&self.policy, &self.params, &mut grads, hidden, seed.logits.data(), Some(&mut dy), n);
        if let (Some(layer), Some(dv)) = (&self.value, &seed.value) {
            linear_backward(layer, &self.params, &mut grads, hidden, dv.data(), Some(&mut dy), n);
        }

        let mut features = None;
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            if Some(i) == self.feature_layer {
                let [c, h, w] = layer.out_dims;
                features = Some(Tensor::from_vec(&[n, c, h, w], dy.clone())?);
            }
            if layer.spec.relu {
                for (g, &a) in dy.iter_mut().zip(&cache.acts[i]) {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            let x: &[T] = if i == 0 { &cache.input } else { &cache.acts[i - 1] };
            let need_dx = i > 0 || want_input;
            let mut dx = if need_dx { vec![T::zero(); x.len()] } else { Vec::new() };
            let dx_ref = if need_dx { Some(&mut dx) } else { None };
            match layer.spec.kind {
                LayerKind::Linear { .. } => {
                    linear_backward(layer, &self.params, &mut grads, x, &dy, dx_ref, n)
                }
                LayerKind::Conv2d { .. } => {
                    conv_backward(layer, &self.params, &mut grads, &cache.cols[i], &dy, dx_ref, n)
                }
            }
            dy = dx;
        }

        let input = if want_input {
            let [c, h, w] = self.spec.input;
            Some(Tensor::from_vec(&[n, c, h, w], dy)?)
        } else {
            None
        };
        Ok(Gradients {
            params: grads,
            features,
            input,
        })
    }
}

fn resolve<T: Scalar>(spec: &LayerSpec, in_dims: [usize; 3], params: &mut ParamSet<T>) -> Result<Layer> {
    let (out_dims, wshape) = match spec.kind {
        LayerKind::Conv2d {
            out_channels,
            kernel,
            stride,
        } => {
            let [c, h, w] = in_dims;
            if out_channels == 0 || kernel == 0 || stride == 0 {
                return Err(Error::config(format!("conv layer `{}` has a zero size", spec.name)));
            }
            if h < kernel || w < kernel {
                return Err(Error::config(format!(
                    "conv layer `{}`: kernel {kernel} collapses a {h}x{w} input below 1",
                    spec.name
                )));
            }
            let oh = (h - kernel) / stride + 1;
            let ow = (w - kernel) / stride + 1;
            ([out_channels, oh, ow], vec![out_channels, c, kernel, kernel])
        }
        LayerKind::Linear { outputs } => {
            if outputs == 0 {
                return Err(Error::config(format!("linear layer `{}` has zero outputs", spec.name)));
            }
            let inputs = in_dims.iter().product();
            ([outputs, 1, 1], vec![outputs, inputs])
        }
    };
    let weight = params.len();
    params.push(format!("{}.weight", spec.name), Tensor::zeros(&wshape));
    let bias = params.len();
    params.push(format!("{}.bias", spec.name), Tensor::zeros(&[out_dims[0]]));
    Ok(Layer {
        spec: spec.clone(),
        in_dims: if matches!(spec.kind, LayerKind::Linear { .. }) {
            [in_dims.iter().product(), 1, 1]
        } else {
            in_dims
        },
        out_dims,
        weight,
        bias,
    })
}

#[inline]
fn view<T>(data: &[T], rows: usize, cols: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((rows, cols), data).expect("view shape")
}

#[inline]
fn view_mut<T>(data: &mut [T], rows: usize, cols: usize) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("view shape")
}

/// Returns the post-activation output and, for conv layers, the im2col
/// matrices of the batch.
fn layer_forward<T: Scalar>(layer: &Layer, params: &ParamSet<T>, x: &[T], n: usize) -> (Vec<T>, Vec<T>) {
    let w = params.at(layer.weight).data();
    let b = params.at(layer.bias).data();
    let out_len = layer.out_len();
    let mut y = vec![T::zero(); n * out_len];
    let mut cols_all = Vec::new();
    match layer.spec.kind {
        LayerKind::Linear { outputs } => {
            let inputs = layer.in_len();
            for row in y.chunks_exact_mut(outputs) {
                row.copy_from_slice(b);
            }
            general_mat_mul(
                T::one(),
                &view(x, n, inputs),
                &view(w, outputs, inputs).t(),
                T::one(),
                &mut view_mut(&mut y, n, outputs),
            );
        }
        LayerKind::Conv2d {
            out_channels,
            kernel,
            stride,
        } => {
            let rows = layer.fan_in();
            let [_, oh, ow] = layer.out_dims;
            let positions = oh * ow;
            cols_all = vec![T::zero(); n * rows * positions];
            let in_len = layer.in_len();
            for s in 0..n {
                let cols = &mut cols_all[s * rows * positions..(s + 1) * rows * positions];
                im2col(&x[s * in_len..(s + 1) * in_len], layer.in_dims, kernel, stride, oh, ow, cols);
                let out = &mut y[s * out_len..(s + 1) * out_len];
                for (oc, row) in out.chunks_exact_mut(positions).enumerate() {
                    row.fill(b[oc]);
                }
                general_mat_mul(
                    T::one(),
                    &view(w, out_channels, rows),
                    &view(cols, rows, positions),
                    T::one(),
                    &mut view_mut(out, out_channels, positions),
                );
            }
        }
    }
    if layer.spec.relu {
        y.iter_mut().for_each(|v| {
            if *v < T::zero() {
                *v = T::zero()
            }
        });
    }
    (y, cols_all)
}

fn im2col<T: Scalar>(x: &[T], dims: [usize; 3], k: usize, s: usize, oh: usize, ow: usize, cols: &mut [T]) {
    let [c, h, w] = dims;
    let positions = oh * ow;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let r = (ch * k + ki) * k + kj;
                let dst = &mut cols[r * positions..(r + 1) * positions];
                for oy in 0..oh {
                    let src = &x[ch * h * w + (oy * s + ki) * w..];
                    for ox in 0..ow {
                        dst[oy * ow + ox] = src[ox * s + kj];
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], dims: [usize; 3], k: usize, s: usize, oh: usize, ow: usize, dx: &mut [T]) {
    let [c, h, w] = dims;
    let positions = oh * ow;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let r = (ch * k + ki) * k + kj;
                let src = &cols[r * positions..(r + 1) * positions];
                for oy in 0..oh {
                    let base = ch * h * w + (oy * s + ki) * w + kj;
                    for ox in 0..ow {
                        dx[base + ox * s] = dx[base + ox * s] + src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

/// `dz` is the gradient with respect to the pre-activation output.
fn linear_backward<T: Scalar>(
    layer: &Layer,
    params: &ParamSet<T>,
    grads: &mut ParamSet<T>,
    x: &[T],
    dz: &[T],
    dx: Option<&mut Vec<T>>,
    n: usize,
) {
    let inputs = layer.in_len();
    let outputs = layer.out_len();
    general_mat_mul(
        T::one(),
        &view(dz, n, outputs).t(),
        &view(x, n, inputs),
        T::one(),
        &mut view_mut(grads.at_mut(layer.weight).data_mut(), outputs, inputs),
    );
    let db = grads.at_mut(layer.bias).data_mut();
    for row in dz.chunks_exact(outputs) {
        db.iter_mut().zip(row).for_each(|(g, &d)| *g = *g + d);
    }
    if let Some(dx) = dx {
        let w = params.at(layer.weight).data();
        general_mat_mul(
            T::one(),
            &view(dz, n, outputs),
            &view(w, outputs, inputs),
            T::one(),
            &mut view_mut(dx, n, inputs),
        );
    }
}

fn conv_backward<T: Scalar>(
    layer: &Layer,
    params: &ParamSet<T>,
    grads: &mut ParamSet<T>,
    cols_all: &[T],
    dz: &[T],
    mut dx: Option<&mut Vec<T>>,
    n: usize,
) {
    let LayerKind::Conv2d {
        out_channels,
        kernel,
        stride,
    } = layer.spec.kind
    else {
        unreachable!("conv_backward on a linear layer")
    };
    let rows = layer.fan_in();
    let [_, oh, ow] = layer.out_dims;
    let positions = oh * ow;
    let out_len = layer.out_len();
    let in_len = layer.in_len();
    let w = params.at(layer.weight).data();
    let mut dcols = if dx.is_some() { vec![T::zero(); rows * positions] } else { Vec::new() };
    for s in 0..n {
        let dz_s = &dz[s * out_len..(s + 1) * out_len];
        let cols = &cols_all[s * rows * positions..(s + 1) * rows * positions];
        general_mat_mul(
            T::one(),
            &view(dz_s, out_channels, positions),
            &view(cols, rows, positions).t(),
            T::one(),
            &mut view_mut(grads.at_mut(layer.weight).data_mut(), out_channels, rows),
        );
        let db = grads.at_mut(layer.bias).data_mut();
        for (oc, row) in dz_s.chunks_exact(positions).enumerate() {
            db[oc] = row.iter().fold(db[oc], |acc, &d| acc + d);
        }
        if let Some(dx) = dx.as_deref_mut() {
            general_mat_mul(
                T::one(),
                &view(w, out_channels, rows).t(),
                &view(dz_s, out_channels, positions),
                T::zero(),
                &mut view_mut(&mut dcols, rows, positions),
            );
            col2im(&dcols, layer.in_dims, kernel, stride, oh, ow, &mut dx[s * in_len..(s + 1) * in_len]);
        }
    }
}
