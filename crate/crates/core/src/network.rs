//! Feedforward models, their on-disk format, and layer-by-layer propagation
//! of perturbation radii.
//!
//! # Manifest format
//!
//! A model is a JSON manifest next to raw tensor files:
//!
//! ```json
//! {
//!   "name": "mnist-net",
//!   "input_shape": [1, 28, 28],
//!   "layers": [
//!     { "kind": "affine_relu_conv", "out_channels": 6, "kernel_size": [5, 5],
//!       "stride": [1, 1], "padding": [0, 0],
//!       "weights_file": "mnist-net/0.weights.bin", "bias_file": "mnist-net/0.bias.bin",
//!       "sha256": "…" },
//!     { "kind": "maxpool2d", "window": [2, 2], "stride": [2, 2] },
//!     { "kind": "affine_relu_dense", "in_features": 256, "out_features": 120, … },
//!     { "kind": "affine_dense", "in_features": 84, "out_features": 10, … }
//!   ]
//! }
//! ```
//!
//! Tensor files hold little-endian `f32` values, row-major: dense weights are
//! `[out, in]`, convolution kernels `[Cout, Cin, kh, kw]`. File paths are
//! relative to the manifest. The optional `sha256` is the hex digest of the
//! weights file bytes followed by the bias file bytes.
//!
//! Dense layers flatten whatever shape arrives, so an explicit `flatten` layer
//! is optional.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{naive_bound, nested_bound, rbar_bound, BoundConfig};
use crate::domains::{Norm, Orthant, PerturbationDomain};
use crate::error::{check_len, invalid, Error, Result};
use crate::linops::{norm2, Conv2dOperator, DenseOperator, LinearMap, LinearOperator, TensorShape};
use crate::sampling::{self, sample_sphere};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    Rbar,
    Nested,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Naive, Method::Rbar, Method::Nested];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Naive => "naive",
            Method::Rbar => "rbar",
            Method::Nested => "nested",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(Method::Naive),
            "rbar" => Ok(Method::Rbar),
            "nested" => Ok(Method::Nested),
            _ => Err(invalid(format!("unknown method {s:?}"))),
        }
    }
}

/// Max pooling over `[C, H, W]` without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaxPool2d {
    pub window: (usize, usize),
    pub stride: (usize, usize),
}

impl MaxPool2d {
    fn out_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.window;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(invalid("max pooling window and stride must be positive"));
        }
        if kh > h || kw > w {
            return Err(invalid(format!(
                "pooling window {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        Ok(((h - kh) / sh + 1, (w - kw) / sw + 1))
    }

    fn forward(&self, shape: &TensorShape, x: &[f64]) -> Vec<f64> {
        let (c, h, w) = shape.chw().expect("validated at construction");
        let (ho, wo) = self.out_hw(h, w).expect("validated at construction");
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    for i in 0..self.window.0 {
                        let row = (oh * self.stride.0 + i) * w;
                        for j in 0..self.window.1 {
                            best = best.max(plane[row + ow * self.stride.1 + j]);
                        }
                    }
                    out.push(best);
                }
            }
        }
        out
    }

    /// Global 2-norm Lipschitz constant: `√c`, with `c` the largest number of
    /// windows sharing one input coordinate.
    pub fn lipschitz(&self, shape: &TensorShape) -> Result<f64> {
        let (_, h, w) = shape.chw()?;
        let (ho, wo) = self.out_hw(h, w)?;
        let cover = |len: usize, outs: usize, k: usize, s: usize| -> usize {
            let mut count = vec![0usize; len];
            for o in 0..outs {
                for c in &mut count[o * s..o * s + k] {
                    *c += 1;
                }
            }
            count.into_iter().max().unwrap_or(0)
        };
        let c = cover(h, ho, self.window.0, self.stride.0) * cover(w, wo, self.window.1, self.stride.1);
        Ok((c as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    AffineReluDense,
    AffineReluConv,
    AffineDense,
    Maxpool2d,
    Flatten,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::AffineReluDense => "affine_relu_dense",
            LayerKind::AffineReluConv => "affine_relu_conv",
            LayerKind::AffineDense => "affine_dense",
            LayerKind::Maxpool2d => "maxpool2d",
            LayerKind::Flatten => "flatten",
        })
    }
}

/// `A x + b` about a nominal input, i.e. with `b = b₀ + A x₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    pub op: LinearOperator,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `A x + b₀`, followed by a ReLU when `relu` is set.
    Affine {
        op: LinearOperator,
        bias: Vec<f64>,
        relu: bool,
    },
    MaxPool2d(MaxPool2d),
    Flatten,
}

impl Layer {
    pub fn dense(op: DenseOperator, bias: Vec<f64>, relu: bool) -> Result<Self> {
        check_len("bias", bias.len(), op.rows())?;
        Ok(Layer::Affine {
            op: op.into(),
            bias,
            relu,
        })
    }

    pub fn conv(op: Conv2dOperator, bias_per_channel: &[f64]) -> Result<Self> {
        let (cout, ho, wo) = op.out_shape().chw()?;
        check_len("convolution bias", bias_per_channel.len(), cout)?;
        let bias = bias_per_channel
            .iter()
            .flat_map(|&b| std::iter::repeat_n(b, ho * wo))
            .collect();
        Ok(Layer::Affine {
            op: op.into(),
            bias,
            relu: true,
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Affine {
                op: LinearOperator::Conv2d(_),
                ..
            } => LayerKind::AffineReluConv,
            Layer::Affine { relu: true, .. } => LayerKind::AffineReluDense,
            Layer::Affine { relu: false, .. } => LayerKind::AffineDense,
            Layer::MaxPool2d(_) => LayerKind::Maxpool2d,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    pub fn ends_in_relu(&self) -> bool {
        matches!(self, Layer::Affine { relu: true, .. })
    }

    pub fn out_shape(&self, input: &TensorShape) -> Result<TensorShape> {
        match self {
            Layer::Affine {
                op: LinearOperator::Conv2d(conv),
                ..
            } => {
                if conv.in_shape() != input {
                    return Err(invalid(format!(
                        "convolution expects input {}, got {}",
                        conv.in_shape(),
                        input
                    )));
                }
                Ok(conv.out_shape().clone())
            }
            Layer::Affine { op, .. } => {
                if op.cols() != input.numel() {
                    return Err(invalid(format!(
                        "dense layer expects {} inputs, got shape {}",
                        op.cols(),
                        input
                    )));
                }
                TensorShape::flat(op.rows())
            }
            Layer::MaxPool2d(pool) => {
                let (c, h, w) = input.chw()?;
                let (ho, wo) = pool.out_hw(h, w)?;
                TensorShape::new(vec![c, ho, wo])
            }
            Layer::Flatten => TensorShape::flat(input.numel()),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Affine {
                op: LinearOperator::Dense(d),
                bias,
                ..
            } => d.data().len() + bias.len(),
            Layer::Affine {
                op: LinearOperator::Conv2d(c),
                ..
            } => c.kernel().len() + c.out_channels(),
            _ => 0,
        }
    }

    /// Short architecture label such as `conv5-6`, `maxpool2` or `FC-120`.
    pub fn label(&self) -> String {
        match self {
            Layer::Affine {
                op: LinearOperator::Conv2d(c),
                ..
            } => {
                let (kh, kw) = c.kernel_size();
                if kh == kw {
                    format!("conv{kh}-{}", c.out_channels())
                } else {
                    format!("conv{kh}x{kw}-{}", c.out_channels())
                }
            }
            Layer::Affine { op, .. } => format!("FC-{}", op.rows()),
            Layer::MaxPool2d(p) => {
                if p.window.0 == p.window.1 {
                    format!("maxpool{}", p.window.0)
                } else {
                    format!("maxpool{}x{}", p.window.0, p.window.1)
                }
            }
            Layer::Flatten => "flatten".into(),
        }
    }

    /// Evaluates the layer. `shape` is the layer's input shape.
    pub fn forward(&self, shape: &TensorShape, x: &[f64]) -> Vec<f64> {
        match self {
            Layer::Affine { op, bias, relu } => {
                let mut y = vec![0.0; op.rows()];
                op.apply_into(x, &mut y);
                for (v, b) in y.iter_mut().zip(bias) {
                    *v += b;
                    if *relu {
                        *v = v.max(0.0);
                    }
                }
                y
            }
            Layer::MaxPool2d(pool) => pool.forward(shape, x),
            Layer::Flatten => x.to_vec(),
        }
    }
}

/// Shifts the layer's origin to `x0`: `b = b₀ + A x₀`.
pub fn recenter(layer: &Layer, x0: &[f64]) -> Result<AffineLayer> {
    match layer {
        Layer::Affine { op, bias, .. } => {
            let shift = op.apply(x0)?;
            Ok(AffineLayer {
                op: op.clone(),
                bias: bias.iter().zip(&shift).map(|(b, s)| b + s).collect(),
            })
        }
        _ => Err(invalid(format!(
            "{} layers have no affine part to re-centre",
            layer.kind()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub name: String,
    pub input_shape: TensorShape,
    pub layers: Vec<Layer>,
}

impl NetworkModel {
    pub fn new(name: impl Into<String>, input_shape: TensorShape, layers: Vec<Layer>) -> Result<Self> {
        let model = Self {
            name: name.into(),
            input_shape,
            layers,
        };
        model.shapes()?;
        Ok(model)
    }

    /// Input shape of every layer followed by the model's output shape.
    pub fn shapes(&self) -> Result<Vec<TensorShape>> {
        if self.layers.is_empty() {
            return Err(invalid("a model needs at least one layer"));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (k, layer) in self.layers.iter().enumerate() {
            let next = layer
                .out_shape(shapes.last().unwrap())
                .map_err(|e| invalid(format!("layer {k}: {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Nominal input of every layer followed by the model output.
    pub fn activations(&self, x0: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len("nominal input", x0.len(), self.input_shape.numel())?;
        let shapes = self.shapes()?;
        let mut acts = vec![x0.to_vec()];
        for (layer, shape) in self.layers.iter().zip(&shapes) {
            let next = layer.forward(shape, acts.last().unwrap());
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(x)?.pop().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMethod {
    Naive,
    Rbar,
    Nested,
    /// `‖A‖` for an affine layer without activation.
    Spectral,
    /// Global constant of a max-pooling layer.
    MaxpoolGlobal,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub index: usize,
    pub epsilon_in: f64,
    pub domain: PerturbationDomain,
    pub l_upper: f64,
    pub method: LayerMethod,
    pub nominal_in: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationTrace {
    pub layers: Vec<LayerRecord>,
    pub product_bound: f64,
}

impl PropagationTrace {
    pub fn epsilons(&self) -> Vec<f64> {
        self.layers.iter().map(|r| r.epsilon_in).collect()
    }
}

/// Perturbation domain of layer `k`'s input.
///
/// Behind a ReLU (possibly followed by pooling or flattening) the perturbed
/// input `x₀ + z` is non-negative, so `zⱼ ≥ 0` wherever the nominal `x₀ⱼ` is
/// zero. Coordinates with a positive nominal value stay unconstrained.
pub fn layer_domain(
    model: &NetworkModel,
    k: usize,
    nominal_in: &[f64],
    epsilon: f64,
) -> Result<PerturbationDomain> {
    let behind_relu = model.layers[..k]
        .iter()
        .rev()
        .find(|l| !matches!(l, Layer::MaxPool2d(_) | Layer::Flatten))
        .is_some_and(Layer::ends_in_relu);
    let orthant = if behind_relu {
        Orthant::from_bits(nominal_in.iter().map(|&v| v == 0.0).collect())
    } else {
        Orthant::Free
    };
    PerturbationDomain::with_orthant(Norm::L2, epsilon, orthant)
}

/// Upper bound on one layer's local Lipschitz constant.
pub fn layer_upper_bound(
    layer: &Layer,
    shape: &TensorShape,
    nominal_in: &[f64],
    dom: &PerturbationDomain,
    method: Method,
    cfg: &BoundConfig,
) -> Result<(f64, LayerMethod)> {
    match layer {
        Layer::Affine { relu: true, .. } => {
            let AffineLayer { op, bias } = recenter(layer, nominal_in)?;
            let value = match method {
                Method::Naive => naive_bound(&op, cfg)?,
                Method::Rbar => rbar_bound(&op, &bias, dom, cfg)?,
                Method::Nested => nested_bound(&op, &bias, dom, cfg)?.0,
            };
            let tag = match method {
                Method::Naive => LayerMethod::Naive,
                Method::Rbar => LayerMethod::Rbar,
                Method::Nested => LayerMethod::Nested,
            };
            Ok((value, tag))
        }
        Layer::Affine { op, .. } => Ok((naive_bound(op, cfg)?, LayerMethod::Spectral)),
        Layer::MaxPool2d(pool) => Ok((pool.lipschitz(shape)?, LayerMethod::MaxpoolGlobal)),
        Layer::Flatten => Ok((1.0, LayerMethod::Identity)),
    }
}

/// Chains per-layer bounds: layer `k + 1` sees radius `εₖ · Lₖ` about the
/// nominal activation of layer `k`.
pub fn propagate(
    model: &NetworkModel,
    x0: &[f64],
    epsilon: f64,
    method: Method,
    cfg: &BoundConfig,
) -> Result<PropagationTrace> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("propagation needs a positive radius, got {epsilon}")));
    }
    cfg.validate()?;
    let shapes = model.shapes()?;
    let acts = model.activations(x0)?;
    let mut eps = epsilon;
    let mut product = 1.0;
    let mut records = Vec::with_capacity(model.layers.len());
    for (k, layer) in model.layers.iter().enumerate() {
        let dom = layer_domain(model, k, &acts[k], eps)?;
        let (l_upper, tag) = layer_upper_bound(layer, &shapes[k], &acts[k], &dom, method, cfg)?;
        records.push(LayerRecord {
            index: k,
            epsilon_in: eps,
            domain: dom,
            l_upper,
            method: tag,
            nominal_in: acts[k].clone(),
        });
        eps *= l_upper;
        product *= l_upper;
    }
    Ok(PropagationTrace {
        layers: records,
        product_bound: product,
    })
}

/// Sampled end-to-end ratio `max ‖f(x₀+δ) − f(x₀)‖ / ‖δ‖` over `δ` on the
/// `ε`-sphere.
pub fn lower_bound_network(
    model: &NetworkModel,
    x0: &[f64],
    epsilon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if !(epsilon > 0.0) || n_samples == 0 {
        return Err(invalid("network lower bound needs ε > 0 and at least one sample"));
    }
    let base = model.forward(x0)?;
    let dom = PerturbationDomain::l2(epsilon)?;
    let mut rng = sampling::rng(seed);
    let n = x0.len();
    let mut best = 0.0f64;
    let mut x = vec![0.0; n];
    for _ in 0..n_samples {
        let delta = sample_sphere(&mut rng, n, &dom);
        for ((xi, a), d) in x.iter_mut().zip(x0).zip(&delta) {
            *xi = a + d;
        }
        let out = model.forward(&x)?;
        let diff: Vec<f64> = out.iter().zip(&base).map(|(a, b)| a - b).collect();
        best = best.max(norm2(&diff) / norm2(&delta));
    }
    Ok(best)
}

/// Single-layer sampled lower bound at layer `k` of a model.
pub fn lower_bound_layer(
    layer: &Layer,
    nominal_in: &[f64],
    dom: &PerturbationDomain,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    match layer {
        Layer::Affine { relu: true, .. } => {
            let AffineLayer { op, bias } = recenter(layer, nominal_in)?;
            crate::bounds::lower_bound_sampled(&op, &bias, dom, n_samples, seed)
        }
        Layer::Affine { op, .. } => {
            if !(dom.epsilon > 0.0) || n_samples == 0 {
                return Err(invalid("sampled lower bound needs ε > 0 and samples"));
            }
            let mut rng = sampling::rng(seed);
            let mut buf = vec![0.0; op.rows()];
            let mut best = 0.0f64;
            for _ in 0..n_samples {
                let x = sample_sphere(&mut rng, op.cols(), dom);
                op.apply_into(&x, &mut buf);
                best = best.max(norm2(&buf) / norm2(&x));
            }
            Ok(best)
        }
        _ => Err(invalid(format!(
            "layer kind {} has no sampled lower bound",
            layer.kind()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Manifest I/O

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorFiles {
    weights_file: String,
    bias_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sha256: Option<String>,
}

fn one_one() -> (usize, usize) {
    (1, 1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerSpec {
    AffineReluDense {
        in_features: usize,
        out_features: usize,
        #[serde(flatten)]
        files: TensorFiles,
    },
    AffineDense {
        in_features: usize,
        out_features: usize,
        #[serde(flatten)]
        files: TensorFiles,
    },
    AffineReluConv {
        out_channels: usize,
        kernel_size: (usize, usize),
        #[serde(default = "one_one")]
        stride: (usize, usize),
        #[serde(default)]
        padding: (usize, usize),
        #[serde(flatten)]
        files: TensorFiles,
    },
    Maxpool2d {
        window: (usize, usize),
        #[serde(default)]
        stride: Option<(usize, usize)>,
    },
    Flatten,
}

fn read_f32_file(path: &Path) -> std::io::Result<(Vec<u8>, Vec<f64>)> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{} is not a whole number of f32 values", path.display()),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((bytes, values))
}

pub fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn checksum(weights: &[u8], bias: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(weights);
    h.update(bias);
    hex::encode(h.finalize())
}

/// Reads a raw little-endian `f32` vector, e.g. a nominal input.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    Ok(read_f32_file(path)?.1)
}

pub fn write_vector(path: &Path, values: &[f64]) -> Result<()> {
    fs::write(path, f32_bytes(values))?;
    Ok(())
}

pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = manifest_path.as_ref();
    let fail = |layer: Option<usize>, reason: String| Error::Load {
        path: path.to_path_buf(),
        layer,
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| fail(None, e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| fail(None, format!("invalid manifest: {e}")))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let input_shape =
        TensorShape::new(manifest.input_shape).map_err(|e| fail(None, e.to_string()))?;

    let mut shape = input_shape.clone();
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (k, spec) in manifest.layers.into_iter().enumerate() {
        let at = |e: Error| fail(Some(k), e.to_string());
        let tensors = |files: &TensorFiles| -> Result<(Vec<f64>, Vec<f64>)> {
            let (wb, w) = read_f32_file(&dir.join(&files.weights_file))
                .map_err(|e| invalid(format!("weights: {e}")))?;
            let (bb, b) = read_f32_file(&dir.join(&files.bias_file))
                .map_err(|e| invalid(format!("bias: {e}")))?;
            if let Some(expected) = &files.sha256 {
                let got = checksum(&wb, &bb);
                if !got.eq_ignore_ascii_case(expected) {
                    return Err(invalid(format!("checksum mismatch: manifest {expected}, files {got}")));
                }
            }
            Ok((w, b))
        };
        let dense_relu = matches!(spec, LayerSpec::AffineReluDense { .. });
        let layer = match spec {
            LayerSpec::AffineReluDense {
                in_features,
                out_features,
                files,
            }
            | LayerSpec::AffineDense {
                in_features,
                out_features,
                files,
            } => {
                if in_features != shape.numel() {
                    return Err(fail(
                        Some(k),
                        format!("in_features {in_features} does not match incoming shape {shape}"),
                    ));
                }
                let (w, b) = tensors(&files).map_err(at)?;
                let op = DenseOperator::new(out_features, in_features, w).map_err(at)?;
                Layer::dense(op, b, dense_relu).map_err(at)?
            }
            LayerSpec::AffineReluConv {
                out_channels,
                kernel_size,
                stride,
                padding,
                files,
            } => {
                let (w, b) = tensors(&files).map_err(at)?;
                let op = Conv2dOperator::new(shape.clone(), out_channels, kernel_size, stride, padding, w)
                    .map_err(at)?;
                Layer::conv(op, &b).map_err(at)?
            }
            LayerSpec::Maxpool2d { window, stride } => Layer::MaxPool2d(MaxPool2d {
                window,
                stride: stride.unwrap_or(window),
            }),
            LayerSpec::Flatten => Layer::Flatten,
        };
        shape = layer.out_shape(&shape).map_err(at)?;
        layers.push(layer);
    }
    NetworkModel::new(manifest.name, input_shape, layers).map_err(|e| fail(None, e.to_string()))
}

/// Writes `model` as a manifest plus tensor files under `<stem>/` next to it.
/// Weights are rounded to `f32`.
pub fn save_model(model: &NetworkModel, manifest_path: impl AsRef<Path>) -> Result<()> {
    let path = manifest_path.as_ref();
    let dir = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| invalid("manifest path needs a file name"))?
        .to_string();
    fs::create_dir_all(dir.join(&stem))?;
    let shapes = model.shapes()?;

    let write_tensors = |k: usize, weights: &[f64], bias: &[f64]| -> Result<TensorFiles> {
        let wrel: PathBuf = [stem.as_str(), &format!("{k}.weights.bin")].iter().collect();
        let brel: PathBuf = [stem.as_str(), &format!("{k}.bias.bin")].iter().collect();
        let wb = f32_bytes(weights);
        let bb = f32_bytes(bias);
        fs::write(dir.join(&wrel), &wb)?;
        fs::write(dir.join(&brel), &bb)?;
        Ok(TensorFiles {
            weights_file: wrel.to_string_lossy().replace('\\', "/"),
            bias_file: brel.to_string_lossy().replace('\\', "/"),
            sha256: Some(checksum(&wb, &bb)),
        })
    };

    let mut specs = Vec::with_capacity(model.layers.len());
    for (k, layer) in model.layers.iter().enumerate() {
        let spec = match layer {
            Layer::Affine {
                op: LinearOperator::Dense(d),
                bias,
                relu,
            } => {
                let files = write_tensors(k, d.data(), bias)?;
                let (in_features, out_features) = (d.cols(), d.rows());
                if *relu {
                    LayerSpec::AffineReluDense {
                        in_features,
                        out_features,
                        files,
                    }
                } else {
                    LayerSpec::AffineDense {
                        in_features,
                        out_features,
                        files,
                    }
                }
            }
            Layer::Affine {
                op: LinearOperator::Conv2d(c),
                bias,
                relu,
            } => {
                if !relu {
                    return Err(invalid("convolution layers without ReLU are not representable"));
                }
                let (_, ho, wo) = shapes[k + 1].chw()?;
                let per_channel: Vec<f64> = bias.iter().step_by(ho * wo).copied().collect();
                LayerSpec::AffineReluConv {
                    out_channels: c.out_channels(),
                    kernel_size: c.kernel_size(),
                    stride: c.stride(),
                    padding: c.padding(),
                    files: write_tensors(k, c.kernel(), &per_channel)?,
                }
            }
            Layer::MaxPool2d(p) => LayerSpec::Maxpool2d {
                window: p.window,
                stride: Some(p.stride),
            },
            Layer::Flatten => LayerSpec::Flatten,
        };
        specs.push(spec);
    }
    let manifest = Manifest {
        name: model.name.clone(),
        input_shape: model.input_shape.dims().to_vec(),
        layers: specs,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| invalid(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}
