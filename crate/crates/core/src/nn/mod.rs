//! A small CNN inference engine with a write-noise hook.
//!
//! Every layer output is one simulated memory write: when a noise spec
//! targets activations, the freshly produced tensor is passed through
//! [`bitnoise::inject_in_place`] in the network's storage type before the
//! next layer reads it. Flatten is a reshape and writes nothing. Weights and
//! biases, when targeted, are noised once per forward call.

pub mod cifar;
pub mod kernels;
pub mod manifest;
pub mod vgg;

use std::collections::BTreeMap;

use half::{bf16, f16};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bitnoise::{self, NoiseSpec, Target};
use crate::error::{Error, Result};
use crate::rng::{role, RngStream};
use crate::tensor::{ElementType, Storage, Tensor};

pub use cifar::{load_cifar10, LabeledDataset};
pub use kernels::{argmax, Conv2dGeometry, Real};
pub use manifest::{load_model, save_model, Manifest};
pub use vgg::VggConfig;

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv2d {
        name: String,
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
    Batchnorm2d {
        name: String,
        channels: usize,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Relu,
    Maxpool2d {
        kernel_size: usize,
        stride: usize,
    },
    Flatten,
    Linear {
        name: String,
        in_features: usize,
        out_features: usize,
        #[serde(default = "default_true")]
        bias: bool,
    },
}

/// Per-sample activation shape: `[C, H, W]` or `[F]`.
pub type SampleShape = Vec<usize>;

impl LayerSpec {
    pub fn name(&self) -> Option<&str> {
        match self {
            LayerSpec::Conv2d { name, .. }
            | LayerSpec::Batchnorm2d { name, .. }
            | LayerSpec::Linear { name, .. } => Some(name),
            _ => None,
        }
    }

    /// Whether the layer materialises a new tensor (and so is a noisy write).
    pub fn writes_output(&self) -> bool {
        !matches!(self, LayerSpec::Flatten)
    }

    /// Parameter tensors as (name, shape, role). Running statistics have no role.
    pub fn parameters(&self) -> Vec<(String, Vec<usize>, Option<Target>)> {
        match self {
            LayerSpec::Conv2d {
                name,
                in_channels,
                out_channels,
                kernel_size,
                bias,
                ..
            } => {
                let mut v = vec![(
                    format!("{name}.weight"),
                    vec![*out_channels, *in_channels, *kernel_size, *kernel_size],
                    Some(Target::Weights),
                )];
                if *bias {
                    v.push((
                        format!("{name}.bias"),
                        vec![*out_channels],
                        Some(Target::Biases),
                    ));
                }
                v
            }
            LayerSpec::Batchnorm2d { name, channels, .. } => vec![
                (
                    format!("{name}.weight"),
                    vec![*channels],
                    Some(Target::Weights),
                ),
                (
                    format!("{name}.bias"),
                    vec![*channels],
                    Some(Target::Biases),
                ),
                (format!("{name}.running_mean"), vec![*channels], None),
                (format!("{name}.running_var"), vec![*channels], None),
            ],
            LayerSpec::Linear {
                name,
                in_features,
                out_features,
                bias,
            } => {
                let mut v = vec![(
                    format!("{name}.weight"),
                    vec![*out_features, *in_features],
                    Some(Target::Weights),
                )];
                if *bias {
                    v.push((
                        format!("{name}.bias"),
                        vec![*out_features],
                        Some(Target::Biases),
                    ));
                }
                v
            }
            _ => vec![],
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<SampleShape> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            LayerSpec::Conv2d {
                name,
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
                ..
            } => {
                let [c, h, w] = input else {
                    return bad(format!("{name}: expected a CHW input, got {input:?}"));
                };
                if c != in_channels {
                    return bad(format!("{name}: expects {in_channels} channels, got {c}"));
                }
                let g = Conv2dGeometry {
                    in_channels: *in_channels,
                    out_channels: *out_channels,
                    kernel: *kernel_size,
                    stride: *stride,
                    padding: *padding,
                };
                match g.output_hw(*h, *w) {
                    Some((oh, ow)) => Ok(vec![*out_channels, oh, ow]),
                    None => bad(format!("{name}: kernel does not fit a {h}x{w} input")),
                }
            }
            LayerSpec::Batchnorm2d { name, channels, .. } => match input {
                [c, _, _] if c == channels => Ok(input.to_vec()),
                _ => bad(format!(
                    "{name}: expects {channels} channels, got {input:?}"
                )),
            },
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Maxpool2d {
                kernel_size,
                stride,
            } => match input {
                [c, h, w] if *stride > 0 && h >= kernel_size && w >= kernel_size => Ok(vec![
                    *c,
                    (h - kernel_size) / stride + 1,
                    (w - kernel_size) / stride + 1,
                ]),
                _ => bad(format!(
                    "maxpool {kernel_size}/{stride} does not fit {input:?}"
                )),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Linear {
                name,
                in_features,
                out_features,
                ..
            } => match input {
                [f] if f == in_features => Ok(vec![*out_features]),
                _ => bad(format!(
                    "{name}: expects {in_features} features, got {input:?}"
                )),
            },
        }
    }
}

/// Per-channel input normalisation applied to `[0, 1]` pixel values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Normalization {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

/// Parameters widened to the compute type.
#[derive(Debug, Clone)]
enum Widened {
    F32(BTreeMap<String, Vec<f32>>),
    F64(BTreeMap<String, Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct Network {
    pub architecture: String,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub normalization: Normalization,
    dtype: ElementType,
    layers: Vec<LayerSpec>,
    params: BTreeMap<String, Tensor>,
    widened: Widened,
}

impl Network {
    /// Validates the layer chain and parameters, casting parameters to `dtype`.
    pub fn new(
        architecture: impl Into<String>,
        input_shape: [usize; 3],
        num_classes: usize,
        dtype: ElementType,
        layers: Vec<LayerSpec>,
        params: BTreeMap<String, Tensor>,
        normalization: Normalization,
    ) -> Result<Network> {
        if !dtype.is_float() {
            return Err(Error::InvalidArgument(format!(
                "float inference needs a float dtype, got {dtype}; use the quant module for integers"
            )));
        }
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least two classes, got {num_classes}"
            )));
        }
        if normalization.mean.len() != input_shape[0] || normalization.std.len() != input_shape[0] {
            return Err(Error::InvalidArgument(
                "normalisation constants must have one entry per input channel".into(),
            ));
        }
        let mut shape = input_shape.to_vec();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
            for (name, pshape, _) in layer.parameters() {
                let t = params.get(&name).ok_or_else(|| {
                    Error::InvalidArgument(format!("missing parameter tensor `{name}`"))
                })?;
                if t.shape() != pshape.as_slice() {
                    return Err(Error::InvalidArgument(format!(
                        "parameter `{name}` has shape {:?}, layer expects {pshape:?}",
                        t.shape()
                    )));
                }
            }
        }
        if shape != [num_classes] {
            return Err(Error::InvalidArgument(format!(
                "network output shape {shape:?} does not match {num_classes} classes"
            )));
        }
        let params: BTreeMap<String, Tensor> = params
            .into_iter()
            .map(|(k, v)| (k, v.cast(dtype)))
            .collect();
        let widened = widen_all(&params, dtype);
        Ok(Network {
            architecture: architecture.into(),
            input_shape,
            num_classes,
            normalization,
            dtype,
            layers,
            params,
            widened,
        })
    }

    pub fn dtype(&self) -> ElementType {
        self.dtype
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Same weights, stored and computed in another float type.
    pub fn with_dtype(&self, dtype: ElementType) -> Result<Network> {
        Network::new(
            self.architecture.clone(),
            self.input_shape,
            self.num_classes,
            dtype,
            self.layers.clone(),
            self.params.clone(),
            self.normalization.clone(),
        )
    }

    /// Per-sample output shapes of every layer.
    pub fn layer_shapes(&self) -> Vec<SampleShape> {
        let mut shape = self.input_shape.to_vec();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(&shape).expect("validated at construction");
                shape.clone()
            })
            .collect()
    }

    /// Number of activation elements written per sample (one inference).
    pub fn activation_elements_per_sample(&self) -> usize {
        self.layers
            .iter()
            .zip(self.layer_shapes())
            .filter(|(l, _)| l.writes_output())
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Number of weight layers (convolutions and linear layers).
    pub fn weight_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. }))
            .count()
    }

    /// Total elements of parameter tensors of the given role.
    pub fn parameter_elements(&self, target: Target) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.parameters())
            .filter(|(_, _, r)| *r == Some(target))
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }

    /// Logits for a `[N, C, H, W]` batch of already-normalised inputs.
    ///
    /// `rng` names the stream for this call; per-layer streams are derived
    /// from it by (role, layer index).
    pub fn forward(
        &self,
        batch: &Tensor,
        spec: Option<&NoiseSpec>,
        rng: &RngStream,
    ) -> Result<Tensor> {
        self.forward_observed(batch, spec, rng, &mut |_, _| {})
    }

    /// Like [`Network::forward`], calling `observe(layer_index, stored_output)`
    /// for every written layer output after noise has been applied.
    pub fn forward_observed(
        &self,
        batch: &Tensor,
        spec: Option<&NoiseSpec>,
        rng: &RngStream,
        observe: &mut dyn FnMut(usize, &Tensor),
    ) -> Result<Tensor> {
        self.check_batch(batch)?;
        if let Some(spec) = spec {
            spec.validate()?;
            spec.mask_for(self.dtype)?;
        }
        match &self.widened {
            Widened::F32(cache) => self.forward_impl::<f32>(batch, spec, rng, cache, observe),
            Widened::F64(cache) => self.forward_impl::<f64>(batch, spec, rng, cache, observe),
        }
    }

    pub(crate) fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != self.input_shape {
            return Err(Error::ShapeMismatch {
                expected: [&[0usize][..], &self.input_shape[..]].concat(),
                actual: shape.to_vec(),
            });
        }
        Ok(())
    }

    fn forward_impl<R: Compute>(
        &self,
        batch: &Tensor,
        spec: Option<&NoiseSpec>,
        rng: &RngStream,
        cache: &BTreeMap<String, Vec<R>>,
        observe: &mut dyn FnMut(usize, &Tensor),
    ) -> Result<Tensor> {
        let n = batch.shape()[0];
        let noisy =
            |t: Target| spec.is_some_and(|s| s.targets.contains(t) && !s.is_silent_for(self.dtype));
        let param_noise = noisy(Target::Weights) || noisy(Target::Biases);
        let act_noise = noisy(Target::Activations);

        // Parameters read this call: the cached copies, or freshly noised ones.
        let mut noised: BTreeMap<String, Vec<R>> = BTreeMap::new();
        if param_noise {
            let spec = spec.expect("checked");
            for (li, layer) in self.layers.iter().enumerate() {
                for (name, _, r) in layer.parameters() {
                    let tag = match r {
                        Some(Target::Weights) if noisy(Target::Weights) => role::WEIGHT,
                        Some(Target::Biases) if noisy(Target::Biases) => role::BIAS,
                        _ => continue,
                    };
                    let mut t = self.params[&name].clone();
                    bitnoise::inject_in_place(&mut t, spec, &rng.derive_path(&[tag, li as u64]))?;
                    noised.insert(name, R::load(t));
                }
            }
        }
        let p = |name: &str| -> &[R] { noised.get(name).unwrap_or_else(|| &cache[name]) };

        let mut shape = self.input_shape.to_vec();
        let mut x: Vec<R> = R::load(batch.cast(self.dtype));
        for (li, layer) in self.layers.iter().enumerate() {
            let out_shape = layer.output_shape(&shape)?;
            x = match layer {
                LayerSpec::Conv2d {
                    name,
                    in_channels,
                    out_channels,
                    kernel_size,
                    stride,
                    padding,
                    bias,
                } => {
                    let g = Conv2dGeometry {
                        in_channels: *in_channels,
                        out_channels: *out_channels,
                        kernel: *kernel_size,
                        stride: *stride,
                        padding: *padding,
                    };
                    let b = bias.then(|| p(&format!("{name}.bias")));
                    kernels::conv2d(
                        &x,
                        (n, shape[1], shape[2]),
                        p(&format!("{name}.weight")),
                        b,
                        g,
                    )
                    .0
                }
                LayerSpec::Batchnorm2d {
                    name,
                    channels,
                    eps,
                } => kernels::batchnorm2d(
                    &x,
                    *channels,
                    shape[1] * shape[2],
                    p(&format!("{name}.weight")),
                    p(&format!("{name}.bias")),
                    p(&format!("{name}.running_mean")),
                    p(&format!("{name}.running_var")),
                    *eps,
                ),
                LayerSpec::Relu => {
                    kernels::relu_in_place(&mut x);
                    x
                }
                LayerSpec::Maxpool2d {
                    kernel_size,
                    stride,
                } => {
                    kernels::maxpool2d(
                        &x,
                        (n * shape[0], shape[1], shape[2]),
                        *kernel_size,
                        *stride,
                    )
                    .0
                }
                LayerSpec::Flatten => x,
                LayerSpec::Linear {
                    name,
                    in_features,
                    out_features,
                    bias,
                } => {
                    let b = bias.then(|| p(&format!("{name}.bias")));
                    kernels::linear(
                        &x,
                        n,
                        p(&format!("{name}.weight")),
                        b,
                        *in_features,
                        *out_features,
                    )
                }
            };
            shape = out_shape;
            if layer.writes_output() {
                let full: Vec<usize> = std::iter::once(n).chain(shape.iter().copied()).collect();
                let mut stored = R::store(x, self.dtype, full)?;
                if act_noise {
                    let spec = spec.expect("checked");
                    let stream = rng.derive_path(&[role::ACTIVATION, li as u64]);
                    bitnoise::inject_in_place(&mut stored, spec, &stream)?;
                }
                observe(li, &stored);
                x = R::load(stored);
            }
        }
        R::store(x, self.dtype, vec![n, self.num_classes])
    }
}

/// Anything that maps an image batch to top-1 class predictions under noise.
pub trait Classifier: Sync {
    fn num_classes(&self) -> usize;

    /// Type of the stored activation words that noise hits.
    fn storage_dtype(&self) -> ElementType;

    fn activation_elements_per_sample(&self) -> usize;

    fn predict(
        &self,
        batch: &Tensor,
        spec: Option<&NoiseSpec>,
        rng: &RngStream,
    ) -> Result<Vec<usize>>;

    /// Top-1 accuracy over `data`, batches evaluated in parallel.
    ///
    /// Batch `b` draws from `rng.derive(b)`, so the result depends on the
    /// seed and `batch_size` but not on scheduling.
    fn evaluate(
        &self,
        data: &LabeledDataset,
        spec: Option<&NoiseSpec>,
        rng: &RngStream,
        batch_size: usize,
    ) -> Result<f64> {
        Ok(self.count_correct(data, spec, rng, batch_size)? as f64 / data.len() as f64)
    }

    fn count_correct(
        &self,
        data: &LabeledDataset,
        spec: Option<&NoiseSpec>,
        rng: &RngStream,
        batch_size: usize,
    ) -> Result<usize> {
        if data.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot evaluate on an empty dataset".into(),
            ));
        }
        if data.num_classes != self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} classes, model has {}",
                data.num_classes,
                self.num_classes()
            )));
        }
        let batch_size = batch_size.max(1);
        let batches = data.len().div_ceil(batch_size);
        (0..batches)
            .into_par_iter()
            .map(|b| {
                let lo = b * batch_size;
                let hi = (lo + batch_size).min(data.len());
                let images = data.batch(lo..hi);
                let preds = self.predict(&images, spec, &rng.derive(b as u64))?;
                Ok(preds
                    .iter()
                    .zip(&data.labels[lo..hi])
                    .filter(|(p, l)| **p == **l as usize)
                    .count())
            })
            .try_reduce(|| 0, |a, b| Ok(a + b))
    }
}

impl Classifier for Network {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn storage_dtype(&self) -> ElementType {
        self.dtype
    }

    fn activation_elements_per_sample(&self) -> usize {
        Network::activation_elements_per_sample(self)
    }

    fn predict(
        &self,
        batch: &Tensor,
        spec: Option<&NoiseSpec>,
        rng: &RngStream,
    ) -> Result<Vec<usize>> {
        let logits = self.forward(batch, spec, rng)?;
        Ok(argmax_rows(&logits, self.num_classes))
    }
}

/// Row-wise argmax of an `[N, K]` logits tensor of any dtype.
pub fn argmax_rows(logits: &Tensor, k: usize) -> Vec<usize> {
    match logits.storage() {
        Storage::Float64(v) => v.chunks_exact(k).map(argmax).collect(),
        _ => logits.to_f32_vec().chunks_exact(k).map(argmax).collect(),
    }
}

fn widen_all(params: &BTreeMap<String, Tensor>, dtype: ElementType) -> Widened {
    if dtype == ElementType::Float64 {
        Widened::F64(
            params
                .iter()
                .map(|(k, t)| (k.clone(), t.to_f64_vec()))
                .collect(),
        )
    } else {
        Widened::F32(
            params
                .iter()
                .map(|(k, t)| (k.clone(), t.to_f32_vec()))
                .collect(),
        )
    }
}

/// Moves activations between storage tensors and compute buffers.
trait Compute: Real {
    fn load(t: Tensor) -> Vec<Self>;
    fn store(v: Vec<Self>, dtype: ElementType, shape: Vec<usize>) -> Result<Tensor>;
}

impl Compute for f32 {
    fn load(t: Tensor) -> Vec<f32> {
        match t.into_storage() {
            Storage::Float32(v) => v,
            Storage::Float16(v) => v.iter().map(|x| x.to_f32()).collect(),
            Storage::Bfloat16(v) => v.iter().map(|x| x.to_f32()).collect(),
            other => Tensor::new(vec![other.len()], other)
                .expect("1-d")
                .to_f32_vec(),
        }
    }

    fn store(v: Vec<f32>, dtype: ElementType, shape: Vec<usize>) -> Result<Tensor> {
        let storage = match dtype {
            ElementType::Float32 => Storage::Float32(v),
            ElementType::Float16 => Storage::Float16(v.iter().map(|&x| f16::from_f32(x)).collect()),
            ElementType::Bfloat16 => {
                Storage::Bfloat16(v.iter().map(|&x| bf16::from_f32(x)).collect())
            }
            other => return Tensor::from_f32s(shape, other, &v),
        };
        Tensor::new(shape, storage)
    }
}

impl Compute for f64 {
    fn load(t: Tensor) -> Vec<f64> {
        match t.into_storage() {
            Storage::Float64(v) => v,
            other => Tensor::new(vec![other.len()], other)
                .expect("1-d")
                .to_f64_vec(),
        }
    }

    fn store(v: Vec<f64>, dtype: ElementType, shape: Vec<usize>) -> Result<Tensor> {
        match dtype {
            ElementType::Float64 => Tensor::new(shape, Storage::Float64(v)),
            other => Tensor::from_f64s(shape, other, &v),
        }
    }
}
