//! VGG configurations A, B, D and E (11, 13, 16 and 19 weight layers) with
//! batch normalisation.
//!
//! Every 3x3 convolution (padding 1) is followed by batchnorm and ReLU; each
//! stage ends in a 2x2 max-pool. After five stages a 32x32 input is 1x1, so
//! the classifier sees `512` features and applies three linear layers
//! (`512 -> 512 -> 512 -> K`), keeping the conv + linear count at 11/13/16/19.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, Normalization};
use crate::rng::{standard_normal, RngStream};
use crate::tensor::{ElementType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VggConfig {
    A,
    B,
    D,
    E,
}

#[derive(Debug, Clone, Copy)]
enum Item {
    Conv(usize),
    Pool,
}

use Item::{Conv as C, Pool as M};

const CFG_A: &[Item] = &[
    C(64),
    M,
    C(128),
    M,
    C(256),
    C(256),
    M,
    C(512),
    C(512),
    M,
    C(512),
    C(512),
    M,
];
const CFG_B: &[Item] = &[
    C(64),
    C(64),
    M,
    C(128),
    C(128),
    M,
    C(256),
    C(256),
    M,
    C(512),
    C(512),
    M,
    C(512),
    C(512),
    M,
];
const CFG_D: &[Item] = &[
    C(64),
    C(64),
    M,
    C(128),
    C(128),
    M,
    C(256),
    C(256),
    C(256),
    M,
    C(512),
    C(512),
    C(512),
    M,
    C(512),
    C(512),
    C(512),
    M,
];
const CFG_E: &[Item] = &[
    C(64),
    C(64),
    M,
    C(128),
    C(128),
    M,
    C(256),
    C(256),
    C(256),
    C(256),
    M,
    C(512),
    C(512),
    C(512),
    C(512),
    M,
    C(512),
    C(512),
    C(512),
    C(512),
    M,
];

pub const ALL: [VggConfig; 4] = [VggConfig::A, VggConfig::B, VggConfig::D, VggConfig::E];

impl VggConfig {
    fn items(self) -> &'static [Item] {
        match self {
            VggConfig::A => CFG_A,
            VggConfig::B => CFG_B,
            VggConfig::D => CFG_D,
            VggConfig::E => CFG_E,
        }
    }

    /// Number of conv + linear layers.
    pub fn depth(self) -> usize {
        self.items()
            .iter()
            .filter(|i| matches!(i, Item::Conv(_)))
            .count()
            + 3
    }

    pub fn architecture_name(self) -> String {
        format!("vgg{}", self.depth())
    }
}

impl fmt::Display for VggConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.architecture_name())
    }
}

impl FromStr for VggConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<VggConfig> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "vgg11" | "vgg-a" => Ok(VggConfig::A),
            "b" | "vgg13" | "vgg-b" => Ok(VggConfig::B),
            "d" | "vgg16" | "vgg-d" => Ok(VggConfig::D),
            "e" | "vgg19" | "vgg-e" => Ok(VggConfig::E),
            _ => Err(Error::Config(format!("unknown VGG configuration `{s}`"))),
        }
    }
}

/// Layer list for `cfg` at the standard widths.
pub fn layers(cfg: VggConfig, input_shape: [usize; 3], num_classes: usize) -> Vec<LayerSpec> {
    layers_scaled(cfg, input_shape, num_classes, 1)
}

/// Layer list with every channel count divided by `width_divisor`.
pub fn layers_scaled(
    cfg: VggConfig,
    input_shape: [usize; 3],
    num_classes: usize,
    width_divisor: usize,
) -> Vec<LayerSpec> {
    let div = width_divisor.max(1);
    let [mut c, mut h, mut w] = input_shape;
    let mut out = Vec::new();
    let mut conv_idx = 0;
    for item in cfg.items() {
        match *item {
            Item::Conv(width) => {
                conv_idx += 1;
                let oc = (width / div).max(1);
                out.push(LayerSpec::Conv2d {
                    name: format!("conv{conv_idx}"),
                    in_channels: c,
                    out_channels: oc,
                    kernel_size: 3,
                    stride: 1,
                    padding: 1,
                    bias: true,
                });
                out.push(LayerSpec::Batchnorm2d {
                    name: format!("bn{conv_idx}"),
                    channels: oc,
                    eps: 1e-5,
                });
                out.push(LayerSpec::Relu);
                c = oc;
            }
            Item::Pool => {
                out.push(LayerSpec::Maxpool2d {
                    kernel_size: 2,
                    stride: 2,
                });
                h /= 2;
                w /= 2;
            }
        }
    }
    let hidden = (512 / div).max(1);
    out.push(LayerSpec::Flatten);
    let mut features = c * h * w;
    for (i, width) in [hidden, hidden, num_classes].into_iter().enumerate() {
        out.push(LayerSpec::Linear {
            name: format!("fc{}", i + 1),
            in_features: features,
            out_features: width,
            bias: true,
        });
        if i < 2 {
            out.push(LayerSpec::Relu);
        }
        features = width;
    }
    out
}

/// A network with He-normal weights, zero biases and identity batchnorm,
/// suitable for exercising the engine when no trained weights exist.
pub fn random_network(
    architecture: impl Into<String>,
    layers: Vec<LayerSpec>,
    input_shape: [usize; 3],
    num_classes: usize,
    dtype: ElementType,
    seed: u64,
) -> Result<Network> {
    let root = RngStream::new(seed);
    let mut params = BTreeMap::new();
    for (li, layer) in layers.iter().enumerate() {
        for (name, shape, _) in layer.parameters() {
            let n: usize = shape.iter().product();
            let is_bn_scale =
                name.ends_with(".weight") && matches!(layer, LayerSpec::Batchnorm2d { .. });
            let values: Vec<f64> = if name.ends_with(".running_var") || is_bn_scale {
                vec![1.0; n]
            } else if name.ends_with(".weight") {
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                let mut rng = root.derive(li as u64).generator();
                (0..n).map(|_| std * standard_normal(&mut rng)).collect()
            } else {
                vec![0.0; n]
            };
            params.insert(
                name,
                Tensor::from_f64s(shape, ElementType::Float32, &values)?,
            );
        }
    }
    Network::new(
        architecture,
        input_shape,
        num_classes,
        dtype,
        layers,
        params,
        Normalization::identity(input_shape[0]),
    )
}
