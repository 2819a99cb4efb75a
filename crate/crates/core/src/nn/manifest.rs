//! Model manifests: a JSON description plus one little-endian raw blob.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "architecture": "desk-cnn",
//!   "input_shape": [3, 32, 32],
//!   "num_classes": 10,
//!   "dtype": "float32",
//!   "normalization": {"mean": [..], "std": [..]},
//!   "blob": "desk_cnn.bin",
//!   "layers": [{"kind": "conv2d", "name": "conv1", ...}, ...],
//!   "tensors": [{"name": "conv1.weight", "shape": [8, 3, 3, 3],
//!                "dtype": "float32", "offset": 0}, ...],
//!   "quant": { ... }
//! }
//! ```
//!
//! `layers` may be omitted for the built-in `vgg11`/`vgg13`/`vgg16`/`vgg19`
//! architectures. Tensor offsets are in bytes from the start of the blob.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{vgg, LayerSpec, Network, Normalization};
use crate::quant::Calibration;
use crate::tensor::{BitWords, ElementType, Tensor};

pub const FORMAT_VERSION: u32 = 1;

fn format_version() -> u32 {
    FORMAT_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: ElementType,
    pub offset: u64,
}

impl TensorEntry {
    pub fn byte_len(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64 * (self.dtype.bit_width() / 8) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "format_version")]
    pub format_version: u32,
    pub architecture: String,
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub dtype: ElementType,
    pub normalization: Normalization,
    pub blob: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerSpec>>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<Calibration>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::load(path, format!("invalid manifest: {e}")))
    }

    pub fn resolved_layers(&self) -> Result<Vec<LayerSpec>> {
        match &self.layers {
            Some(layers) => Ok(layers.clone()),
            None => {
                let cfg: vgg::VggConfig = self.architecture.parse()?;
                Ok(vgg::layers(cfg, self.input_shape, self.num_classes))
            }
        }
    }

    fn blob_path(&self, manifest_path: &Path) -> PathBuf {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&self.blob)
    }
}

fn decode(entry: &TensorEntry, blob: &[u8], blob_path: &Path) -> Result<Tensor> {
    let len = entry.byte_len();
    let end = entry.offset.saturating_add(len);
    if end > blob.len() as u64 {
        return Err(Error::load(
            blob_path,
            format!(
                "tensor `{}` needs bytes {}..{} but the blob has {} bytes (truncated)",
                entry.name,
                entry.offset,
                end,
                blob.len()
            ),
        ));
    }
    let bytes = &blob[entry.offset as usize..end as usize];
    let width = entry.dtype.bit_width();
    let step = (width / 8) as usize;
    let words = BitWords::from_u64s(
        width,
        bytes.chunks_exact(step).map(|c| {
            let mut buf = [0u8; 8];
            buf[..step].copy_from_slice(c);
            u64::from_le_bytes(buf)
        }),
    );
    Tensor::from_bits(entry.shape.clone(), entry.dtype, &words)
}

fn encode(t: &Tensor, out: &mut Vec<u8>) {
    let step = (t.dtype().bit_width() / 8) as usize;
    for w in t.bit_view().iter() {
        out.extend_from_slice(&w.to_le_bytes()[..step]);
    }
}

pub fn load_manifest_and_network(path: &Path) -> Result<(Manifest, Network)> {
    let manifest = Manifest::read(path)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::load(
            path,
            format!(
                "unsupported manifest format version {}",
                manifest.format_version
            ),
        ));
    }
    let blob_path = manifest.blob_path(path);
    let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut params = BTreeMap::new();
    for entry in &manifest.tensors {
        params.insert(entry.name.clone(), decode(entry, &blob, &blob_path)?);
    }
    let layers = manifest
        .resolved_layers()
        .map_err(|e| Error::load(path, e.to_string()))?;
    let net = Network::new(
        manifest.architecture.clone(),
        manifest.input_shape,
        manifest.num_classes,
        manifest.dtype,
        layers,
        params,
        manifest.normalization.clone(),
    )
    .map_err(|e| Error::load(path, e.to_string()))?;
    Ok((manifest, net))
}

/// Loads and validates a network from its manifest.
pub fn load_model(path: &Path) -> Result<Network> {
    load_manifest_and_network(path).map(|(_, net)| net)
}

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`; returns the manifest path.
pub fn save_model(
    net: &Network,
    quant: Option<&Calibration>,
    dir: &Path,
    stem: &str,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob_name = format!("{stem}.bin");
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in net.params() {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: t.dtype(),
            offset: blob.len() as u64,
        });
        encode(t, &mut blob);
    }
    let builtin = net
        .architecture
        .parse::<vgg::VggConfig>()
        .ok()
        .is_some_and(|cfg| vgg::layers(cfg, net.input_shape, net.num_classes) == net.layers());
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        architecture: net.architecture.clone(),
        input_shape: net.input_shape,
        num_classes: net.num_classes,
        dtype: net.dtype(),
        normalization: net.normalization.clone(),
        blob: blob_name.clone(),
        layers: (!builtin).then(|| net.layers().to_vec()),
        tensors,
        quant: quant.cloned(),
    };
    let blob_path = dir.join(&blob_name);
    std::fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
