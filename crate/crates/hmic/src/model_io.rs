//! Model file container.
//!
//! Layout: magic bytes `HMIC1\n`, a 4-byte little-endian header length, a
//! UTF-8 JSON header (version, level, layer specs with shapes, class names,
//! train config, blob order), then the weight blobs as little-endian 32-bit
//! reals, row-major, in header order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use hmic_core::arch::{Level, ModelBundle, BUNDLE_VERSION};
use hmic_core::net::{LayerSpec, Network};
use hmic_core::ops::activation::Activation;
use hmic_core::train::TrainConfig;

use crate::error::{PipelineError, Result};

pub const MAGIC: &[u8; 6] = b"HMIC1\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerHeader {
    Conv {
        out_channels: usize,
        kernel: usize,
        padding: usize,
        stride: usize,
        activation: String,
    },
    Maxpool {
        window: usize,
    },
    Dense {
        out: usize,
        activation: String,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    UpsampleNearest {
        factor: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainConfigHeader {
    alpha: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    batch_size: usize,
    epochs: usize,
    dropout_conv: f64,
    dropout_dense: f64,
    seed: u64,
    level: String,
    early_stop: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobHeader {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    level: String,
    input_shape: [usize; 3],
    layers: Vec<LayerHeader>,
    class_names: Vec<String>,
    train_config: TrainConfigHeader,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    bottleneck_split: Option<usize>,
    blobs: Vec<BlobHeader>,
}

fn activation_name(a: Activation) -> String {
    a.name().to_string()
}

fn activation_from(name: &str, path: &Path) -> Result<Activation> {
    match name {
        "identity" => Ok(Activation::Identity),
        "relu" => Ok(Activation::Relu),
        "sigmoid" => Ok(Activation::Sigmoid),
        other => Err(PipelineError::format(
            path,
            format!("unknown activation {other:?}"),
        )),
    }
}

fn layer_header(spec: &LayerSpec) -> LayerHeader {
    match *spec {
        LayerSpec::Conv {
            out_channels,
            kernel,
            padding,
            stride,
            activation,
        } => LayerHeader::Conv {
            out_channels,
            kernel,
            padding,
            stride,
            activation: activation_name(activation),
        },
        LayerSpec::MaxPool { window } => LayerHeader::Maxpool { window },
        LayerSpec::Dense { out, activation } => LayerHeader::Dense {
            out,
            activation: activation_name(activation),
        },
        LayerSpec::Dropout { rate } => LayerHeader::Dropout { rate },
        LayerSpec::Flatten => LayerHeader::Flatten,
        LayerSpec::UpsampleNearest { factor } => LayerHeader::UpsampleNearest { factor },
    }
}

fn layer_spec(header: &LayerHeader, path: &Path) -> Result<LayerSpec> {
    Ok(match header {
        LayerHeader::Conv {
            out_channels,
            kernel,
            padding,
            stride,
            activation,
        } => LayerSpec::Conv {
            out_channels: *out_channels,
            kernel: *kernel,
            padding: *padding,
            stride: *stride,
            activation: activation_from(activation, path)?,
        },
        LayerHeader::Maxpool { window } => LayerSpec::MaxPool { window: *window },
        LayerHeader::Dense { out, activation } => LayerSpec::Dense {
            out: *out,
            activation: activation_from(activation, path)?,
        },
        LayerHeader::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
        LayerHeader::Flatten => LayerSpec::Flatten,
        LayerHeader::UpsampleNearest { factor } => LayerSpec::UpsampleNearest { factor: *factor },
    })
}

pub fn save_model(bundle: &ModelBundle<f32>, path: &Path) -> Result<()> {
    let net = &bundle.net;
    let cfg = &bundle.train_config;
    let header = ModelHeader {
        version: bundle.version,
        level: bundle.level.as_str().to_string(),
        input_shape: {
            let (h, w, c) = net.input_shape();
            [h, w, c]
        },
        layers: net.specs().iter().map(layer_header).collect(),
        class_names: bundle.class_names.clone(),
        train_config: TrainConfigHeader {
            alpha: cfg.alpha,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            dropout_conv: cfg.dropout_conv,
            dropout_dense: cfg.dropout_dense,
            seed: cfg.seed,
            level: cfg.level.as_str().to_string(),
            early_stop: cfg.early_stop,
        },
        bottleneck_split: bundle.bottleneck_split,
        blobs: net
            .blobs()
            .iter()
            .map(|b| BlobHeader {
                name: b.name.clone(),
                shape: b.shape.clone(),
                len: b.len,
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| PipelineError::format(path, format!("header serialization: {e}")))?;

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let mut file = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    file.write_all(MAGIC)
        .and_then(|_| file.write_all(&(header_bytes.len() as u32).to_le_bytes()))
        .and_then(|_| file.write_all(&header_bytes))
        .map_err(|e| PipelineError::io(path, e))?;

    // blobs are registered in offset order, so the flat parameter buffer is
    // already the concatenation in header order
    let mut bytes = Vec::with_capacity(net.param_count() * 4);
    for &v in net.params() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes).map_err(|e| PipelineError::io(path, e))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelBundle<f32>> {
    let mut file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    let mut contents = Vec::new();
    file.read_to_end(&mut contents)
        .map_err(|e| PipelineError::io(path, e))?;

    if contents.len() < MAGIC.len() + 4 || &contents[..MAGIC.len()] != MAGIC {
        return Err(PipelineError::format(path, "bad magic bytes"));
    }
    let header_len = u32::from_le_bytes(
        contents[MAGIC.len()..MAGIC.len() + 4]
            .try_into()
            .expect("4 bytes"),
    ) as usize;
    let header_start = MAGIC.len() + 4;
    let blob_start = header_start + header_len;
    if contents.len() < blob_start {
        return Err(PipelineError::format(path, "truncated header"));
    }
    let header: ModelHeader = serde_json::from_slice(&contents[header_start..blob_start])
        .map_err(|e| PipelineError::format(path, format!("header parse: {e}")))?;
    if header.version != BUNDLE_VERSION {
        return Err(PipelineError::format(
            path,
            format!("unsupported format version {}", header.version),
        ));
    }

    let level = Level::from_str(&header.level)
        .map_err(|e| PipelineError::format(path, e.to_string()))?;
    let specs: Vec<LayerSpec> = header
        .layers
        .iter()
        .map(|l| layer_spec(l, path))
        .collect::<Result<_>>()?;
    let (h, w, c) = (
        header.input_shape[0],
        header.input_shape[1],
        header.input_shape[2],
    );
    let mut net = Network::<f32>::new((h, w, c), specs)
        .map_err(|e| PipelineError::format(path, e.to_string()))?;

    // the declared blob table must match the reconstructed network exactly
    if net.blobs().len() != header.blobs.len() {
        return Err(PipelineError::format(path, "blob table mismatch"));
    }
    for (actual, declared) in net.blobs().iter().zip(&header.blobs) {
        if actual.name != declared.name
            || actual.shape != declared.shape
            || actual.len != declared.len
        {
            return Err(PipelineError::format(
                path,
                format!("blob {} does not match the layer stack", declared.name),
            ));
        }
    }

    let expected_bytes = net.param_count() * 4;
    let blob_bytes = &contents[blob_start..];
    if blob_bytes.len() < expected_bytes {
        return Err(PipelineError::format(
            path,
            format!(
                "truncated weights: {} bytes present, {expected_bytes} expected",
                blob_bytes.len()
            ),
        ));
    }
    if blob_bytes.len() > expected_bytes {
        return Err(PipelineError::format(
            path,
            format!(
                "trailing bytes after weights: {} present, {expected_bytes} expected",
                blob_bytes.len()
            ),
        ));
    }
    for (i, chunk) in blob_bytes.chunks_exact(4).enumerate() {
        net.params_mut()[i] = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
    }

    let train_config = TrainConfig {
        alpha: header.train_config.alpha,
        beta1: header.train_config.beta1,
        beta2: header.train_config.beta2,
        epsilon: header.train_config.epsilon,
        batch_size: header.train_config.batch_size,
        epochs: header.train_config.epochs,
        dropout_conv: header.train_config.dropout_conv,
        dropout_dense: header.train_config.dropout_dense,
        seed: header.train_config.seed,
        level: Level::from_str(&header.train_config.level)
            .map_err(|e| PipelineError::format(path, e.to_string()))?,
        early_stop: header.train_config.early_stop,
    };

    Ok(ModelBundle {
        level,
        net,
        class_names: header.class_names,
        train_config,
        bottleneck_split: header.bottleneck_split,
        version: header.version,
    })
}
