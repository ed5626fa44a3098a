//! Model bundles and the fixed network architectures.
//!
//! The classifier trunk is three conv+pool stages (32, 32, 64 filters of
//! 3x3, 'same' padding) whose pool chain takes a 1000x1000 input down
//! 1000 -> 200 -> 40 -> 5, then a 128-node dense layer and a softmax head of
//! 3 (parent) or 4 (child) nodes. A compact 128x128 variant keeps the same
//! stage structure with pools 4/4/4 for training-speed work; its final grid
//! is 2x2 so heatmaps stay non-degenerate.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

#[allow(unused_imports)]
use num_traits::Float as _;

use crate::error::{Error, Result};
use crate::net::{LayerSpec, Network};
use crate::ops::activation::Activation;
use crate::real::Real;
use crate::rng;
use crate::train::TrainConfig;

pub const BUNDLE_VERSION: u32 = 1;

/// Which stage of the hierarchy a model serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Parent,
    Child,
    Autoencoder,
    FlatBaseline,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Parent => "parent",
            Level::Child => "child",
            Level::Autoencoder => "autoencoder",
            Level::FlatBaseline => "flat_baseline",
        }
    }

    pub fn from_str(s: &str) -> Result<Self> {
        match s {
            "parent" => Ok(Level::Parent),
            "child" => Ok(Level::Child),
            "autoencoder" => Ok(Level::Autoencoder),
            "flat_baseline" => Ok(Level::FlatBaseline),
            other => Err(Error::Argument(format!("unknown model level {other:?}"))),
        }
    }
}

/// Input resolution and pool windows of the three-stage trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrunkShape {
    pub input: usize,
    pub pools: [usize; 3],
}

impl TrunkShape {
    /// Full-resolution geometry: 1000 -> 200 -> 40 -> 5.
    pub const FULL: TrunkShape = TrunkShape {
        input: 1000,
        pools: [5, 5, 8],
    };

    /// Compact training geometry: 128 -> 32 -> 8 -> 2.
    pub const COMPACT_128: TrunkShape = TrunkShape {
        input: 128,
        pools: [4, 4, 4],
    };

    pub fn for_input(input: usize) -> Result<TrunkShape> {
        match input {
            1000 => Ok(TrunkShape::FULL),
            128 => Ok(TrunkShape::COMPACT_128),
            other => Err(Error::Argument(format!(
                "no trunk geometry defined for input size {other}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut side = self.input;
        for (i, &p) in self.pools.iter().enumerate() {
            if p == 0 || side % p != 0 {
                return Err(Error::Argument(format!(
                    "stage {i}: side {side} not divisible by pool {p}"
                )));
            }
            side /= p;
        }
        if side == 0 {
            return Err(Error::Argument("trunk collapses to zero".into()));
        }
        Ok(())
    }

    /// Side length of the feature grid entering the dense layers.
    pub fn final_side(&self) -> usize {
        self.input / (self.pools[0] * self.pools[1] * self.pools[2])
    }
}

/// A complete, serializable model: layer stack, weights, class names, and
/// the hyperparameters it was (or will be) trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<F> {
    pub level: Level,
    pub net: Network<F>,
    pub class_names: Vec<String>,
    pub train_config: TrainConfig,
    /// For autoencoders: number of leading layers forming the encoder.
    pub bottleneck_split: Option<usize>,
    pub version: u32,
}

impl<F: Real> ModelBundle<F> {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }
}

pub fn parent_class_names() -> Vec<String> {
    vec!["Normal".into(), "EE".into(), "Celiac".into()]
}

pub fn child_class_names() -> Vec<String> {
    vec!["I".into(), "IIIa".into(), "IIIb".into(), "IIIc".into()]
}

/// Class order of the 6-way flat comparison: parent classes with Celiac
/// expanded into severities.
pub fn flat_class_names() -> Vec<String> {
    vec![
        "Normal".into(),
        "EE".into(),
        "I".into(),
        "IIIa".into(),
        "IIIb".into(),
        "IIIc".into(),
    ]
}

fn trunk_specs(shape: TrunkShape, n_classes: usize, cfg: &TrainConfig) -> Vec<LayerSpec> {
    let conv = |out| LayerSpec::Conv {
        out_channels: out,
        kernel: 3,
        padding: 1,
        stride: 1,
        activation: Activation::Relu,
    };
    vec![
        conv(32),
        LayerSpec::MaxPool {
            window: shape.pools[0],
        },
        LayerSpec::Dropout {
            rate: cfg.dropout_conv,
        },
        conv(32),
        LayerSpec::MaxPool {
            window: shape.pools[1],
        },
        LayerSpec::Dropout {
            rate: cfg.dropout_conv,
        },
        conv(64),
        LayerSpec::MaxPool {
            window: shape.pools[2],
        },
        LayerSpec::Dropout {
            rate: cfg.dropout_conv,
        },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            out: 128,
            activation: Activation::Relu,
        },
        LayerSpec::Dropout {
            rate: cfg.dropout_dense,
        },
        LayerSpec::Dense {
            out: n_classes,
            activation: Activation::Identity,
        },
    ]
}

/// One conv+pool stage and a dense head; the weak flat comparator.
fn flat_cnn_specs(shape: TrunkShape, n_classes: usize, cfg: &TrainConfig) -> Result<Vec<LayerSpec>> {
    if shape.input % 8 != 0 {
        return Err(Error::Argument(format!(
            "flat CNN needs an input divisible by 8, got {}",
            shape.input
        )));
    }
    Ok(vec![
        LayerSpec::Conv {
            out_channels: 32,
            kernel: 3,
            padding: 1,
            stride: 1,
            activation: Activation::Relu,
        },
        LayerSpec::MaxPool {
            window: shape.input / 8,
        },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            out: 128,
            activation: Activation::Relu,
        },
        LayerSpec::Dropout {
            rate: cfg.dropout_dense,
        },
        LayerSpec::Dense {
            out: n_classes,
            activation: Activation::Identity,
        },
    ])
}

/// Flatten -> 512 -> 128 -> head; the multilayer-perceptron comparator.
fn flat_mlp_specs(n_classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Flatten,
        LayerSpec::Dense {
            out: 512,
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            out: 128,
            activation: Activation::Relu,
        },
        LayerSpec::Dense {
            out: n_classes,
            activation: Activation::Identity,
        },
    ]
}

/// Conv autoencoder over 3-channel inputs divisible by 16:
/// conv(8)+pool4 -> conv(4)+pool4 bottleneck, mirrored decoder with
/// nearest-neighbor upsampling and a sigmoid output. The 128x128 default
/// bottleneck is 8x8x4 = 256 values.
fn autoencoder_specs() -> (Vec<LayerSpec>, usize) {
    let conv = |out, activation| LayerSpec::Conv {
        out_channels: out,
        kernel: 3,
        padding: 1,
        stride: 1,
        activation,
    };
    let specs = vec![
        conv(8, Activation::Relu),
        LayerSpec::MaxPool { window: 4 },
        conv(4, Activation::Relu),
        LayerSpec::MaxPool { window: 4 },
        // decoder starts here
        LayerSpec::UpsampleNearest { factor: 4 },
        conv(8, Activation::Relu),
        LayerSpec::UpsampleNearest { factor: 4 },
        conv(3, Activation::Sigmoid),
    ];
    (specs, 4)
}

pub const AUTOENCODER_INPUT: usize = 128;

/// Builds an untrained bundle for the requested level. `FlatBaseline`
/// yields the documented 6-way flat CNN comparator; see
/// [`build_flat_mlp`] for the perceptron baseline.
pub fn build_architecture<F: Real>(
    level: Level,
    shape: TrunkShape,
    cfg: &TrainConfig,
) -> Result<ModelBundle<F>> {
    shape.validate()?;
    let (specs, class_names, split) = match level {
        Level::Parent => (trunk_specs(shape, 3, cfg), parent_class_names(), None),
        Level::Child => (trunk_specs(shape, 4, cfg), child_class_names(), None),
        Level::FlatBaseline => (
            flat_cnn_specs(shape, 6, cfg)?,
            flat_class_names(),
            None,
        ),
        Level::Autoencoder => {
            if shape.input % 16 != 0 {
                return Err(Error::Argument(format!(
                    "autoencoder needs an input divisible by 16, got {}",
                    shape.input
                )));
            }
            let (specs, split) = autoencoder_specs();
            (specs, Vec::new(), Some(split))
        }
    };
    let input_shape = (shape.input, shape.input, 3);
    let mut net = Network::new(input_shape, specs)?;
    initialize_weights(&mut net, cfg.seed);
    Ok(ModelBundle {
        level,
        net,
        class_names,
        train_config: cfg.clone(),
        bottleneck_split: split,
        version: BUNDLE_VERSION,
    })
}

/// The multilayer-perceptron flat comparator (level tag `flat_baseline`).
pub fn build_flat_mlp<F: Real>(
    shape: TrunkShape,
    n_classes: usize,
    cfg: &TrainConfig,
) -> Result<ModelBundle<F>> {
    let names = if n_classes == 6 {
        flat_class_names()
    } else {
        (0..n_classes).map(|i| format!("class{i}")).collect()
    };
    let mut net = Network::new((shape.input, shape.input, 3), flat_mlp_specs(n_classes))?;
    initialize_weights(&mut net, cfg.seed);
    Ok(ModelBundle {
        level: Level::FlatBaseline,
        net,
        class_names: names,
        train_config: cfg.clone(),
        bottleneck_split: None,
        version: BUNDLE_VERSION,
    })
}

/// Kaiming-uniform fan-in bounds for ReLU layers, Xavier for sigmoid
/// layers. The classification head (identity activation, softmax applied
/// downstream) starts at a tenth of its Xavier bound with zero bias, so an
/// untrained model emits near-uniform class probabilities.
pub fn initialize_weights<F: Real>(net: &mut Network<F>, seed: u64) {
    let specs = net.specs().to_vec();
    let blobs = net.blobs().to_vec();
    for blob in &blobs {
        let li = blob.layer;
        let mut stream = rng::substream(seed, &[0x1A17, li as u64, blob.offset as u64]);
        let is_bias = blob.shape.len() == 1;
        let bound = match specs[li] {
            LayerSpec::Conv { activation, .. } => {
                let (oc, ic, k) = (blob.shape[0], net.shape_at(li).2, kernel_of(&specs[li]));
                let fan_in = (ic * k * k) as f64;
                let fan_out = (oc * k * k) as f64;
                activation_bound(activation, fan_in, fan_out)
            }
            LayerSpec::Dense { activation, .. } => {
                let fan_in = net.shape_at(li).2 as f64;
                let fan_out = blob.shape[0] as f64;
                activation_bound(activation, fan_in, fan_out)
            }
            _ => 0.0,
        };
        let values: Vec<F> = if is_bias {
            vec![F::zero(); blob.len]
        } else {
            (0..blob.len)
                .map(|_| F::of(stream.gen_range(-bound..=bound)))
                .collect()
        };
        net.blob_slice_mut(blob_index(&blobs, blob)).copy_from_slice(&values);
    }
}

fn kernel_of(spec: &LayerSpec) -> usize {
    match spec {
        LayerSpec::Conv { kernel, .. } => *kernel,
        _ => 0,
    }
}

fn activation_bound(activation: Activation, fan_in: f64, fan_out: f64) -> f64 {
    match activation {
        Activation::Relu => (6.0 / fan_in).sqrt(),
        Activation::Sigmoid => (6.0 / (fan_in + fan_out)).sqrt(),
        Activation::Identity => 0.1 * (6.0 / (fan_in + fan_out)).sqrt(),
    }
}

fn blob_index(blobs: &[crate::net::ParamBlob], blob: &crate::net::ParamBlob) -> usize {
    blobs
        .iter()
        .position(|b| b.name == blob.name)
        .expect("blob belongs to this network")
}

/// Index of the flatten layer, whose input is the last conv feature grid.
pub fn flatten_layer_index<F: Real>(net: &Network<F>) -> Result<usize> {
    net.specs()
        .iter()
        .position(|s| matches!(s, LayerSpec::Flatten))
        .ok_or_else(|| Error::Configuration("network has no flatten layer".to_string()))
}
