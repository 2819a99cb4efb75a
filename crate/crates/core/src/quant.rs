//! Static post-training affine quantization to 8-bit integers.
//!
//! A real value `r` in the calibrated range `[alpha, beta]` maps to
//! `q = clamp(round(r / S + Z), qmin, qmax)` with
//! `S = (beta - alpha) / (qmax - qmin)` and `Z = round(qmin - alpha / S)`,
//! rounding half to even. Ranges are extended to contain zero so that the
//! zero point is always representable. Every weight, bias and layer output
//! gets its own per-tensor parameters.
//!
//! Inference keeps int8 activations between layers. Convolution and linear
//! layers accumulate `(x - Zx)(w - Zw)` in `i32`, rescale by `Sx * Sw`, add
//! the dequantized bias and requantize to the output parameters. Batchnorm
//! and ReLU dequantize, apply the float transform and requantize. Max-pool
//! and flatten work on the integers and keep their input's parameters.
//! Noise is injected into the int8 words of each written layer output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bitnoise::{self, NoiseSpec, Target};
use crate::error::{Error, Result};
use crate::nn::kernels::{self, Conv2dGeometry};
use crate::nn::{Classifier, LabeledDataset, LayerSpec, Network};
use crate::rng::{role, RngStream};
use crate::tensor::{ElementType, Tensor};

pub const INT8_MIN: i32 = -128;
pub const INT8_MAX: i32 = 127;

/// Half-width added on each side of a calibrated range with `alpha == beta`.
pub const DEGENERATE_WIDEN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub alpha: f64,
    pub beta: f64,
    pub qmin: i32,
    pub qmax: i32,
    /// The observed range was a single point and has been widened.
    #[serde(default)]
    pub degenerate: bool,
}

impl QuantParams {
    pub fn from_range(alpha: f64, beta: f64, qmin: i32, qmax: i32) -> Result<QuantParams> {
        if !alpha.is_finite() || !beta.is_finite() || alpha > beta {
            return Err(Error::InvalidArgument(format!(
                "cannot quantize the range [{alpha}, {beta}]"
            )));
        }
        if qmin >= qmax {
            return Err(Error::InvalidArgument(format!(
                "empty integer range [{qmin}, {qmax}]"
            )));
        }
        let degenerate = alpha == beta;
        let (alpha, beta) = if degenerate {
            (alpha - DEGENERATE_WIDEN, beta + DEGENERATE_WIDEN)
        } else {
            (alpha, beta)
        };
        // A range that excludes zero would push Z outside [qmin, qmax].
        let (alpha, beta) = (alpha.min(0.0), beta.max(0.0));
        let scale = (beta - alpha) / (qmax - qmin) as f64;
        let z = (qmin as f64 - alpha / scale).round_ties_even();
        let zero_point = z.clamp(qmin as f64, qmax as f64) as i32;
        Ok(QuantParams {
            scale,
            zero_point,
            alpha,
            beta,
            qmin,
            qmax,
            degenerate,
        })
    }

    /// Signed 8-bit parameters for `[alpha, beta]`.
    pub fn int8(alpha: f64, beta: f64) -> Result<QuantParams> {
        QuantParams::from_range(alpha, beta, INT8_MIN, INT8_MAX)
    }

    /// Parameters covering the finite values of `values`.
    pub fn observe(values: impl IntoIterator<Item = f64>) -> Result<QuantParams> {
        let (lo, hi) = min_max(values)
            .ok_or_else(|| Error::InvalidArgument("no finite values to calibrate on".into()))?;
        QuantParams::int8(lo, hi)
    }

    /// `clamp(round_half_even(r / S + Z))`; NaN maps to the zero point.
    #[inline]
    pub fn quantize(&self, r: f64) -> i32 {
        let q = (r / self.scale + self.zero_point as f64).round_ties_even();
        if q.is_nan() {
            return self.zero_point;
        }
        q.clamp(self.qmin as f64, self.qmax as f64) as i32
    }

    #[inline]
    pub fn dequantize(&self, v: i32) -> f64 {
        self.scale * (v - self.zero_point) as f64
    }

    fn quantize_i8(&self, r: f64) -> i8 {
        self.quantize(r) as i8
    }
}

fn min_max(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64)> {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

/// Per-tensor parameters for one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Observer used for activation ranges.
    pub observer: String,
    pub calibration_samples: usize,
    /// Network input (normalised image) parameters.
    pub input: QuantParams,
    /// Output parameters per layer index. `None` for layers that keep their
    /// input's parameters (max-pool, flatten).
    pub activations: Vec<Option<QuantParams>>,
    /// Weight and bias parameters by tensor name.
    pub params: BTreeMap<String, QuantParams>,
}

impl Calibration {
    /// Names of tensors whose range was degenerate and got widened.
    pub fn degenerate(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .params
            .iter()
            .filter(|(_, q)| q.degenerate)
            .map(|(k, _)| k.clone())
            .collect();
        if self.input.degenerate {
            out.push("input".into());
        }
        for (i, q) in self.activations.iter().enumerate() {
            if q.is_some_and(|q| q.degenerate) {
                out.push(format!("layer{i}.output"));
            }
        }
        out
    }
}

fn keeps_params(layer: &LayerSpec) -> bool {
    matches!(layer, LayerSpec::Maxpool2d { .. } | LayerSpec::Flatten)
}

/// Min/max calibration over one noiseless float32 pass of `calib`.
pub fn calibrate(net: &Network, calib: &LabeledDataset, batch_size: usize) -> Result<Calibration> {
    if calib.is_empty() {
        return Err(Error::InvalidArgument("calibration set is empty".into()));
    }
    let reference = net.with_dtype(ElementType::Float32)?;
    let layers = reference.layers();
    let mut ranges: Vec<Option<(f64, f64)>> = vec![None; layers.len()];
    let mut input_range: Option<(f64, f64)> = None;
    let merge = |acc: Option<(f64, f64)>, new: Option<(f64, f64)>| match (acc, new) {
        (Some((a, b)), Some((c, d))) => Some((a.min(c), b.max(d))),
        (a, b) => a.or(b),
    };
    let rng = RngStream::new(0);
    let batch_size = batch_size.max(1);
    for lo in (0..calib.len()).step_by(batch_size) {
        let hi = (lo + batch_size).min(calib.len());
        let images = calib.batch(lo..hi);
        input_range = merge(
            input_range,
            min_max(
                images
                    .as_f32()
                    .expect("f32 images")
                    .iter()
                    .map(|&v| v as f64),
            ),
        );
        reference.forward_observed(&images, None, &rng, &mut |li, t| {
            let r = min_max(t.as_f32().expect("f32 forward").iter().map(|&v| v as f64));
            ranges[li] = merge(ranges[li], r);
        })?;
    }
    let to_params = |r: Option<(f64, f64)>| -> Result<QuantParams> {
        let (lo, hi) =
            r.ok_or_else(|| Error::InvalidArgument("no finite activations observed".into()))?;
        QuantParams::int8(lo, hi)
    };
    let input = to_params(input_range)?;
    let activations = layers
        .iter()
        .zip(ranges)
        .map(|(l, r)| {
            if keeps_params(l) {
                Ok(None)
            } else {
                to_params(r).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut params = BTreeMap::new();
    for layer in layers {
        for (name, _, role) in layer.parameters() {
            if role.is_some() {
                let t = reference.param(&name).expect("validated");
                params.insert(name, QuantParams::observe(t.to_f64_vec())?);
            }
        }
    }
    Ok(Calibration {
        observer: "minmax".into(),
        calibration_samples: calib.len(),
        input,
        activations,
        params,
    })
}

/// An int8 network: quantized weights and biases plus activation parameters.
#[derive(Debug, Clone)]
pub struct QuantizedNetwork {
    net: Network,
    calibration: Calibration,
    /// Output parameters in effect after each layer (resolved through pools).
    out_params: Vec<QuantParams>,
    qparams: BTreeMap<String, Tensor>,
    /// Batchnorm running statistics, kept in float.
    stats: BTreeMap<String, Vec<f64>>,
}

impl QuantizedNetwork {
    pub fn new(net: &Network, calibration: Calibration) -> Result<QuantizedNetwork> {
        let layers = net.layers();
        if calibration.activations.len() != layers.len() {
            return Err(Error::InvalidArgument(format!(
                "calibration covers {} layers, network has {}",
                calibration.activations.len(),
                layers.len()
            )));
        }
        let mut out_params = Vec::with_capacity(layers.len());
        let mut current = calibration.input;
        for (li, (layer, q)) in layers.iter().zip(&calibration.activations).enumerate() {
            current = match (keeps_params(layer), q) {
                (true, _) => current,
                (false, Some(q)) => *q,
                (false, None) => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {li} has no output quantization parameters"
                    )))
                }
            };
            out_params.push(current);
        }
        let mut qparams = BTreeMap::new();
        let mut stats = BTreeMap::new();
        for layer in layers {
            for (name, shape, role) in layer.parameters() {
                let t = net.param(&name).expect("validated");
                if role.is_none() {
                    stats.insert(name, t.to_f64_vec());
                    continue;
                }
                let q = calibration.params.get(&name).ok_or_else(|| {
                    Error::InvalidArgument(format!("no quantization parameters for `{name}`"))
                })?;
                let v: Vec<i8> = t.to_f64_vec().iter().map(|&r| q.quantize_i8(r)).collect();
                qparams.insert(name, Tensor::from_vec(shape, v)?);
            }
        }
        Ok(QuantizedNetwork {
            net: net.clone(),
            calibration,
            out_params,
            qparams,
            stats,
        })
    }

    /// Calibrates on `calib` and quantizes `net`.
    pub fn quantize(
        net: &Network,
        calib: &LabeledDataset,
        batch_size: usize,
    ) -> Result<QuantizedNetwork> {
        let cal = calibrate(net, calib, batch_size)?;
        QuantizedNetwork::new(net, cal)
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// The int8 tensor for a weight or bias.
    pub fn quantized_param(&self, name: &str) -> Option<&Tensor> {
        self.qparams.get(name)
    }

    /// Parameters of the int8 logits.
    pub fn output_params(&self) -> QuantParams {
        *self.out_params.last().expect("non-empty network")
    }

    /// Int8 logits `[N, K]` for a batch of normalised float images.
    pub fn forward(
        &self,
        batch: &Tensor,
        spec: Option<&NoiseSpec>,
        rng: &RngStream,
    ) -> Result<Tensor> {
        self.net.check_batch(batch)?;
        if let Some(spec) = spec {
            spec.validate()?;
            spec.mask_for(ElementType::Int8)?;
        }
        let n = batch.shape()[0];
        let noisy = |t: Target| {
            spec.is_some_and(|s| s.targets.contains(t) && !s.is_silent_for(ElementType::Int8))
        };

        let mut params: BTreeMap<&str, Vec<i8>> = BTreeMap::new();
        for (li, layer) in self.net.layers().iter().enumerate() {
            for (name, _, r) in layer.parameters() {
                let Some(r) = r else { continue };
                let (key, t) = self.qparams.get_key_value(&name).expect("quantized");
                let tag = match r {
                    Target::Weights if noisy(Target::Weights) => Some(role::WEIGHT),
                    Target::Biases if noisy(Target::Biases) => Some(role::BIAS),
                    _ => None,
                };
                let t = match tag {
                    Some(tag) => bitnoise::inject(
                        t,
                        spec.expect("checked"),
                        &rng.derive_path(&[tag, li as u64]),
                    )?,
                    None => t.clone(),
                };
                params.insert(key.as_str(), t.as_i8().expect("int8").to_vec());
            }
        }

        let qin = self.calibration.input;
        let mut x: Vec<i8> = batch
            .to_f64_vec()
            .iter()
            .map(|&r| qin.quantize_i8(r))
            .collect();
        let mut xq = qin;
        let mut shape = self.net.input_shape.to_vec();
        for (li, layer) in self.net.layers().iter().enumerate() {
            let out_shape = layer.output_shape(&shape)?;
            let oq = self.out_params[li];
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
                    let wname = format!("{name}.weight");
                    let wq = self.calibration.params[&wname];
                    let xc = centered(&x, xq);
                    let wc = centered(&params[wname.as_str()], wq);
                    let (acc, _, _) = kernels::conv2d(&xc, (n, shape[1], shape[2]), &wc, None, g);
                    let plane = out_shape[1] * out_shape[2];
                    let b = bias.then(|| self.dequantized_bias(name, &params));
                    requantize_acc(
                        &acc,
                        xq.scale * wq.scale,
                        b.as_deref(),
                        plane,
                        *out_channels,
                        oq,
                    )
                }
                LayerSpec::Linear {
                    name,
                    in_features,
                    out_features,
                    bias,
                } => {
                    let wname = format!("{name}.weight");
                    let wq = self.calibration.params[&wname];
                    let xc = centered(&x, xq);
                    let wc = centered(&params[wname.as_str()], wq);
                    let acc = kernels::linear(&xc, n, &wc, None, *in_features, *out_features);
                    let b = bias.then(|| self.dequantized_bias(name, &params));
                    requantize_acc(
                        &acc,
                        xq.scale * wq.scale,
                        b.as_deref(),
                        1,
                        *out_features,
                        oq,
                    )
                }
                LayerSpec::Batchnorm2d {
                    name,
                    channels,
                    eps,
                } => {
                    let gq = self.calibration.params[&format!("{name}.weight")];
                    let bq = self.calibration.params[&format!("{name}.bias")];
                    let gamma = &params[format!("{name}.weight").as_str()];
                    let beta = &params[format!("{name}.bias").as_str()];
                    let mean = &self.stats[&format!("{name}.running_mean")];
                    let var = &self.stats[&format!("{name}.running_var")];
                    let affine: Vec<(f64, f64)> = (0..*channels)
                        .map(|c| {
                            let s = gq.dequantize(gamma[c] as i32) / (var[c] + eps).sqrt();
                            (s, bq.dequantize(beta[c] as i32) - mean[c] * s)
                        })
                        .collect();
                    let hw = shape[1] * shape[2];
                    x.chunks_exact(hw)
                        .enumerate()
                        .flat_map(|(i, plane)| {
                            let (s, t) = affine[i % channels];
                            plane
                                .iter()
                                .map(move |&v| oq.quantize_i8(xq.dequantize(v as i32) * s + t))
                        })
                        .collect()
                }
                LayerSpec::Relu => x
                    .iter()
                    .map(|&v| oq.quantize_i8(xq.dequantize(v as i32).max(0.0)))
                    .collect(),
                LayerSpec::Maxpool2d {
                    kernel_size,
                    stride,
                } => {
                    kernels::maxpool2d_ord(
                        &x,
                        (n * shape[0], shape[1], shape[2]),
                        *kernel_size,
                        *stride,
                    )
                    .0
                }
                LayerSpec::Flatten => x,
            };
            xq = oq;
            shape = out_shape;
            if layer.writes_output() && noisy(Target::Activations) {
                let full: Vec<usize> = std::iter::once(n).chain(shape.iter().copied()).collect();
                let mut t = Tensor::from_vec(full, x)?;
                let stream = rng.derive_path(&[role::ACTIVATION, li as u64]);
                bitnoise::inject_in_place(&mut t, spec.expect("checked"), &stream)?;
                x = t.as_i8().expect("int8").to_vec();
            }
        }
        Tensor::from_vec(vec![n, self.net.num_classes], x)
    }

    fn dequantized_bias(&self, layer: &str, params: &BTreeMap<&str, Vec<i8>>) -> Vec<f64> {
        let name = format!("{layer}.bias");
        let q = self.calibration.params[&name];
        params[name.as_str()]
            .iter()
            .map(|&v| q.dequantize(v as i32))
            .collect()
    }
}

fn centered(v: &[i8], q: QuantParams) -> Vec<i32> {
    v.iter().map(|&x| x as i32 - q.zero_point).collect()
}

/// `quantize(scale * acc + bias[c])` where `c` is the channel of each element.
fn requantize_acc(
    acc: &[i32],
    scale: f64,
    bias: Option<&[f64]>,
    plane: usize,
    channels: usize,
    out: QuantParams,
) -> Vec<i8> {
    acc.chunks_exact(plane)
        .enumerate()
        .flat_map(|(i, chunk)| {
            let b = bias.map_or(0.0, |b| b[i % channels]);
            chunk
                .iter()
                .map(move |&a| out.quantize_i8(scale * a as f64 + b))
        })
        .collect()
}

impl Classifier for QuantizedNetwork {
    fn num_classes(&self) -> usize {
        self.net.num_classes
    }

    fn storage_dtype(&self) -> ElementType {
        ElementType::Int8
    }

    fn activation_elements_per_sample(&self) -> usize {
        self.net.activation_elements_per_sample()
    }

    fn predict(
        &self,
        batch: &Tensor,
        spec: Option<&NoiseSpec>,
        rng: &RngStream,
    ) -> Result<Vec<usize>> {
        let logits = self.forward(batch, spec, rng)?;
        let k = self.net.num_classes;
        Ok(logits
            .as_i8()
            .expect("int8 logits")
            .chunks_exact(k)
            .map(kernels::argmax_ord)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_range_scale() {
        let q = QuantParams::int8(-1.0, 1.0).unwrap();
        assert_eq!(q.scale, 2.0 / 255.0);
        assert_eq!(q.zero_point, 0);
        assert!(!q.degenerate);
    }

    #[test]
    fn unsigned_range() {
        let q = QuantParams::from_range(0.0, 2.55, 0, 255).unwrap();
        assert!((q.scale - 0.01).abs() < 1e-15);
        assert_eq!(q.zero_point, 0);
    }

    #[test]
    fn quantize_examples() {
        let q = QuantParams {
            scale: 0.01,
            zero_point: 0,
            alpha: -1.28,
            beta: 1.27,
            qmin: -128,
            qmax: 127,
            degenerate: false,
        };
        assert_eq!(q.quantize(1.27), 127);
        assert_eq!(q.quantize(10.0), 127);
        assert_eq!(q.quantize(-10.0), -128);
        assert_eq!(q.quantize(f64::NAN), 0);
        // half to even: 0.005 / 0.01 rounds from 0.5
        assert_eq!(q.quantize(0.025), 2);
    }

    #[test]
    fn degenerate_range_widened() {
        let q = QuantParams::int8(0.3, 0.3).unwrap();
        assert!(q.degenerate);
        assert!(q.alpha <= 0.0 && q.beta > 0.3);
        assert!((q.dequantize(q.quantize(0.3)) - 0.3).abs() <= q.scale / 2.0 + 1e-15);
        assert!(q.zero_point >= q.qmin && q.zero_point <= q.qmax);
    }

    #[test]
    fn range_extended_to_zero() {
        let q = QuantParams::int8(0.3, 0.5).unwrap();
        assert_eq!(q.alpha, 0.0);
        assert_eq!(q.zero_point, -128);
        assert_eq!(q.quantize(0.5), 127);
        let q = QuantParams::int8(-4.0, -2.0).unwrap();
        assert_eq!(q.beta, 0.0);
        assert_eq!(q.zero_point, 127);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(QuantParams::int8(1.0, 0.0).is_err());
        assert!(QuantParams::int8(f64::NAN, 0.0).is_err());
        assert!(QuantParams::from_range(0.0, 1.0, 5, 5).is_err());
    }

    #[test]
    fn single_lsb_flip_is_one_quantum() {
        let q = QuantParams::int8(-3.0, 5.0).unwrap();
        let v: i32 = 0b0111_1111;
        let flipped = v & !1;
        assert!(((q.dequantize(v) - q.dequantize(flipped)) - q.scale).abs() < 1e-12);
    }
}
