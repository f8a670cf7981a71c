//! On-disk formats: model manifests with binary blobs, and raw datasets.
//!
//! A model is a directory holding `manifest.json` plus one little-endian
//! binary blob per conv/fc layer for weights (`i8`) and thresholds
//! (`i32`), each covered by a SHA-256 checksum in the manifest. A
//! dataset is a directory with `images.bin` (`QFD1` header: u32 count,
//! h, w, ch, then raw `i8` pixels, channel-major per image) and
//! `labels.bin` (`QFL1` header: u32 count, then `u16` labels).
//! All multi-byte integers are little-endian. Field-level layout is
//! documented in FORMATS.md at the repository root.

pub mod synthetic;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::layer::{ConvParams, Layer};
use crate::model::network::{to_hex, QuantizedNetwork};
use crate::model::quant::{InputEncoding, QuantSpec};
use crate::model::tensor::{Shape, Tensor};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";
pub const IMAGES_NAME: &str = "images.bin";
pub const LABELS_NAME: &str = "labels.bin";
const IMAGES_MAGIC: &[u8; 4] = b"QFD1";
const LABELS_MAGIC: &[u8; 4] = b"QFL1";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    format_version: u32,
    name: String,
    quant: QuantManifest,
    input: InputManifest,
    layers: Vec<LayerManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QuantManifest {
    weight_bits: u8,
    act_bits: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct InputManifest {
    height: usize,
    width: usize,
    channels: usize,
    /// Bit width of the affine raw-byte -> level input quantization.
    bits: u8,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobRef {
    file: String,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerManifest {
    Conv {
        kernel: usize,
        stride: usize,
        pad: usize,
        in_ch: usize,
        out_ch: usize,
        weights: BlobRef,
        #[serde(skip_serializing_if = "Option::is_none")]
        thresholds: Option<BlobRef>,
    },
    Fc {
        in_n: usize,
        out_n: usize,
        weights: BlobRef,
        #[serde(skip_serializing_if = "Option::is_none")]
        thresholds: Option<BlobRef>,
    },
    Maxpool,
}

fn load_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn write_blob(dir: &Path, file: &str, bytes: &[u8]) -> Result<BlobRef> {
    fs::write(dir.join(file), bytes)?;
    Ok(BlobRef {
        file: file.to_string(),
        sha256: to_hex(&Sha256::digest(bytes)),
    })
}

fn read_blob(dir: &Path, blob: &BlobRef) -> Result<Vec<u8>> {
    let path = dir.join(&blob.file);
    let bytes = fs::read(&path).map_err(|e| load_err(&path, e.to_string()))?;
    let digest = to_hex(&Sha256::digest(&bytes));
    if digest != blob.sha256 {
        return Err(Error::Checksum(format!(
            "{} (expected {}, found {})",
            blob.file, blob.sha256, digest
        )));
    }
    Ok(bytes)
}

fn weights_to_bytes(weights: &[Vec<i8>]) -> Vec<u8> {
    weights
        .iter()
        .flat_map(|row| row.iter().map(|&w| w as u8))
        .collect()
}

fn weights_from_bytes(bytes: &[u8], rows: usize, cols: usize, what: &str) -> Result<Vec<Vec<i8>>> {
    if bytes.len() != rows * cols {
        return Err(Error::model(format!(
            "{what}: blob holds {} weights, expected {}",
            bytes.len(),
            rows * cols
        )));
    }
    Ok(bytes
        .chunks_exact(cols)
        .map(|row| row.iter().map(|&b| b as i8).collect())
        .collect())
}

fn thresholds_to_bytes(thresholds: &[Vec<i32>]) -> Vec<u8> {
    thresholds
        .iter()
        .flat_map(|row| row.iter().flat_map(|t| t.to_le_bytes()))
        .collect()
}

fn thresholds_from_bytes(
    bytes: &[u8],
    rows: usize,
    cols: usize,
    what: &str,
) -> Result<Vec<Vec<i32>>> {
    if bytes.len() != rows * cols * 4 {
        return Err(Error::model(format!(
            "{what}: threshold blob holds {} bytes, expected {}",
            bytes.len(),
            rows * cols * 4
        )));
    }
    Ok(bytes
        .chunks_exact(cols * 4)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
        .collect())
}

/// Write a network as `manifest.json` plus blobs into `dir`.
pub fn save_model(net: &QuantizedNetwork, dir: &Path) -> Result<()> {
    net.validate()?;
    fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let manifest = match layer {
            Layer::Conv {
                params,
                weights,
                thresholds,
            } => LayerManifest::Conv {
                kernel: params.kernel,
                stride: params.stride,
                pad: params.pad,
                in_ch: params.in_ch,
                out_ch: params.out_ch,
                weights: write_blob(
                    dir,
                    &format!("layer{i:02}.weights.bin"),
                    &weights_to_bytes(weights),
                )?,
                thresholds: save_thresholds(dir, i, thresholds)?,
            },
            Layer::Fc {
                in_n,
                out_n,
                weights,
                thresholds,
            } => LayerManifest::Fc {
                in_n: *in_n,
                out_n: *out_n,
                weights: write_blob(
                    dir,
                    &format!("layer{i:02}.weights.bin"),
                    &weights_to_bytes(weights),
                )?,
                thresholds: save_thresholds(dir, i, thresholds)?,
            },
            Layer::Maxpool => LayerManifest::Maxpool,
        };
        layers.push(manifest);
    }
    let manifest = ManifestFile {
        format_version: MANIFEST_VERSION,
        name: net.name.clone(),
        quant: QuantManifest {
            weight_bits: net.quant.weight_bits(),
            act_bits: net.quant.act_bits(),
        },
        input: InputManifest {
            height: net.input_shape.h,
            width: net.input_shape.w,
            channels: net.input_shape.c,
            bits: net.input_encoding.bits(),
        },
        layers,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_NAME), json)?;
    Ok(())
}

fn save_thresholds(dir: &Path, idx: usize, thresholds: &[Vec<i32>]) -> Result<Option<BlobRef>> {
    if thresholds.is_empty() {
        return Ok(None);
    }
    Ok(Some(write_blob(
        dir,
        &format!("layer{idx:02}.thresholds.bin"),
        &thresholds_to_bytes(thresholds),
    )?))
}

/// Load and fully validate a model directory; no invalid network object
/// can exist past this call.
pub fn load_model(dir: &Path) -> Result<QuantizedNetwork> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let json =
        fs::read_to_string(&manifest_path).map_err(|e| load_err(&manifest_path, e.to_string()))?;
    let manifest: ManifestFile =
        serde_json::from_str(&json).map_err(|e| load_err(&manifest_path, e.to_string()))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(load_err(
            &manifest_path,
            format!("unsupported format_version {}", manifest.format_version),
        ));
    }
    let quant = QuantSpec::new(manifest.quant.weight_bits, manifest.quant.act_bits)?;
    let n_thresh = quant.thresholds_per_channel();
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, lm) in manifest.layers.iter().enumerate() {
        let layer = match lm {
            LayerManifest::Conv {
                kernel,
                stride,
                pad,
                in_ch,
                out_ch,
                weights,
                thresholds,
            } => {
                let params = ConvParams {
                    kernel: *kernel,
                    stride: *stride,
                    pad: *pad,
                    in_ch: *in_ch,
                    out_ch: *out_ch,
                };
                Layer::Conv {
                    params,
                    weights: weights_from_bytes(
                        &read_blob(dir, weights)?,
                        params.out_ch,
                        params.fan_in(),
                        &format!("layer {i} (conv)"),
                    )?,
                    thresholds: load_thresholds(dir, thresholds, *out_ch, n_thresh, i)?,
                }
            }
            LayerManifest::Fc {
                in_n,
                out_n,
                weights,
                thresholds,
            } => Layer::Fc {
                in_n: *in_n,
                out_n: *out_n,
                weights: weights_from_bytes(
                    &read_blob(dir, weights)?,
                    *out_n,
                    *in_n,
                    &format!("layer {i} (fc)"),
                )?,
                thresholds: load_thresholds(dir, thresholds, *out_n, n_thresh, i)?,
            },
            LayerManifest::Maxpool => Layer::Maxpool,
        };
        layers.push(layer);
    }
    let net = QuantizedNetwork {
        name: manifest.name,
        quant,
        input_shape: Shape::new(
            manifest.input.height,
            manifest.input.width,
            manifest.input.channels,
        ),
        input_encoding: InputEncoding::new(manifest.input.bits)?,
        layers,
    };
    net.validate()?;
    Ok(net)
}

fn load_thresholds(
    dir: &Path,
    blob: &Option<BlobRef>,
    out_ch: usize,
    n_thresh: usize,
    idx: usize,
) -> Result<Vec<Vec<i32>>> {
    match blob {
        None => Ok(vec![]),
        Some(b) => thresholds_from_bytes(
            &read_blob(dir, b)?,
            out_ch,
            n_thresh,
            &format!("layer {idx}"),
        ),
    }
}

/// Unquantized dataset exactly as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// One `h*w*c` byte vector per image, channel-major.
    pub images: Vec<Vec<i8>>,
    pub labels: Vec<u16>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut images = Vec::with_capacity(20 + self.len() * self.image_len());
        images.extend_from_slice(IMAGES_MAGIC);
        for v in [
            self.len() as u32,
            self.height as u32,
            self.width as u32,
            self.channels as u32,
        ] {
            images.extend_from_slice(&v.to_le_bytes());
        }
        for img in &self.images {
            images.extend(img.iter().map(|&b| b as u8));
        }
        let mut f = fs::File::create(dir.join(IMAGES_NAME))?;
        f.write_all(&images)?;

        let mut labels = Vec::with_capacity(8 + self.labels.len() * 2);
        labels.extend_from_slice(LABELS_MAGIC);
        labels.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        for l in &self.labels {
            labels.extend_from_slice(&l.to_le_bytes());
        }
        let mut f = fs::File::create(dir.join(LABELS_NAME))?;
        f.write_all(&labels)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let images_path = dir.join(IMAGES_NAME);
        let mut r = fs::File::open(&images_path).map_err(|e| load_err(&images_path, e.to_string()))?;
        let mut header = [0u8; 20];
        r.read_exact(&mut header)
            .map_err(|_| load_err(&images_path, "truncated header"))?;
        if &header[..4] != IMAGES_MAGIC {
            return Err(load_err(&images_path, "bad magic (expected QFD1)"));
        }
        let word = |i: usize| {
            u32::from_le_bytes([header[4 * i], header[4 * i + 1], header[4 * i + 2], header[4 * i + 3]])
        };
        let (count, height, width, channels) =
            (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
        let image_len = height * width * channels;
        if image_len == 0 {
            return Err(load_err(&images_path, "zero image shape"));
        }
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        if data.len() != count * image_len {
            return Err(load_err(
                &images_path,
                format!(
                    "payload is {} bytes, header declares {} images of {} bytes",
                    data.len(),
                    count,
                    image_len
                ),
            ));
        }
        let images: Vec<Vec<i8>> = data
            .chunks_exact(image_len)
            .map(|c| c.iter().map(|&b| b as i8).collect())
            .collect();

        let labels_path = dir.join(LABELS_NAME);
        let mut r = fs::File::open(&labels_path).map_err(|e| load_err(&labels_path, e.to_string()))?;
        let mut header = [0u8; 8];
        r.read_exact(&mut header)
            .map_err(|_| load_err(&labels_path, "truncated header"))?;
        if &header[..4] != LABELS_MAGIC {
            return Err(load_err(&labels_path, "bad magic (expected QFL1)"));
        }
        let label_count = u32::from_le_bytes([header[4], header[5], header[6], header[7]]) as usize;
        if label_count != count {
            return Err(load_err(
                &labels_path,
                format!("{label_count} labels for {count} images"),
            ));
        }
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        if data.len() != label_count * 2 {
            return Err(load_err(
                &labels_path,
                format!("payload is {} bytes, expected {}", data.len(), label_count * 2),
            ));
        }
        let labels = data
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]))
            .collect();
        Ok(RawDataset {
            height,
            width,
            channels,
            images,
            labels,
        })
    }

    /// Map raw bytes onto input levels with the model's declared affine
    /// quantization rule.
    pub fn quantize(&self, encoding: InputEncoding) -> Result<LabeledDataset> {
        let shape = Shape::new(self.height, self.width, self.channels);
        let images = self
            .images
            .iter()
            .map(|img| {
                Tensor::new(shape, img.iter().map(|&b| encoding.quantize(b)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        LabeledDataset::new(images, self.labels.clone())
    }
}

/// Load a dataset directory and quantize it for a network's input
/// encoding.
pub fn load_dataset(dir: &Path, encoding: InputEncoding) -> Result<LabeledDataset> {
    RawDataset::load(dir)?.quantize(encoding)
}
