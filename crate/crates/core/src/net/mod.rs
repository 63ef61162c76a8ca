//! Multi-channel 3D U-Net with hand-written backward passes.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
pub mod ops;
mod scalar;
mod tensor;
mod unet;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, gradient_check_conv, GradCheckReport};
pub use loss::{dice_loss, DICE_EPS};
pub use scalar::Real;
pub use tensor::Tensor5;
pub use unet::{unet_forward, Tape, UNet};

use rand::SeedableRng;
use rand::distr::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};

/// U-Net topology.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub in_channels: usize,
    /// Channel width of each encoder level, finest first.
    pub levels: Vec<usize>,
    pub bottleneck_channels: usize,
    pub kernel: usize,
    pub out_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            levels: vec![16, 32, 64],
            bottleneck_channels: 128,
            kernel: 3,
            out_channels: 1,
        }
    }
}

impl NetConfig {
    /// Two-level net used for gradient checks on 8³ inputs.
    pub fn tiny() -> Self {
        Self {
            levels: vec![2, 4],
            bottleneck_channels: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return arg_err("net needs at least one level");
        }
        if self.in_channels == 0 || self.bottleneck_channels == 0 || self.levels.contains(&0) {
            return arg_err(format!("all channel widths must be >= 1: {self:?}"));
        }
        if self.kernel != 3 {
            return arg_err(format!("only 3x3x3 kernels are supported, got {}", self.kernel));
        }
        if self.out_channels != 1 {
            return arg_err(format!("only a single output channel is supported, got {}", self.out_channels));
        }
        Ok(())
    }

    /// Checks that a cubic input of this edge survives every pooling step.
    pub fn check_edge(&self, spatial: [usize; 3]) -> Result<()> {
        let div = 1usize << self.levels.len();
        if spatial.iter().any(|&d| d == 0 || d % div != 0) {
            return shape_err(format!(
                "input dims {spatial:?} must be divisible by {div} for {} levels",
                self.levels.len()
            ));
        }
        Ok(())
    }

    /// Name and shape of every parameter array, in storage order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let k = self.kernel;
        let mut out = Vec::new();
        let mut conv = |name: String, oc: usize, ic: usize| {
            out.push((format!("{name}.weight"), vec![oc, ic, k, k, k]));
            out.push((format!("{name}.bias"), vec![oc]));
        };
        let mut prev = self.in_channels;
        for (i, &w) in self.levels.iter().enumerate() {
            conv(format!("enc{i}.conv1"), w, prev);
            conv(format!("enc{i}.conv2"), w, w);
            prev = w;
        }
        let b = self.bottleneck_channels;
        conv("bottleneck.conv1".into(), b, prev);
        conv("bottleneck.conv2".into(), b, b);
        prev = b;
        for (i, &w) in self.levels.iter().enumerate().rev() {
            out.push((format!("dec{i}.up.weight"), vec![prev, w, 2, 2, 2]));
            out.push((format!("dec{i}.up.bias"), vec![w]));
            out.push((format!("dec{i}.conv1.weight"), vec![w, 2 * w, k, k, k]));
            out.push((format!("dec{i}.conv1.bias"), vec![w]));
            out.push((format!("dec{i}.conv2.weight"), vec![w, w, k, k, k]));
            out.push((format!("dec{i}.conv2.bias"), vec![w]));
            prev = w;
        }
        out.push(("head.weight".into(), vec![self.out_channels, prev, 1, 1, 1]));
        out.push(("head.bias".into(), vec![self.out_channels]));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.param_specs().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// One named parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// All parameters of a net, in the order given by [`NetConfig::param_specs`].
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub entries: Vec<Param<T>>,
}

impl<T: Real> Params<T> {
    pub fn zeros(config: &NetConfig) -> Self {
        Self {
            entries: config
                .param_specs()
                .into_iter()
                .map(|(name, shape)| {
                    let n = shape.iter().product();
                    Param {
                        name,
                        shape,
                        data: vec![T::zero(); n],
                    }
                })
                .collect(),
        }
    }

    /// He-style uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    ///
    /// The fan-in of a convolution is `in_c * k³`; an up-convolution output
    /// voxel sees one tap from each input channel, so its fan-in is `in_c`.
    pub fn init(config: &NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(config);
        for p in &mut params.entries {
            if !p.name.ends_with(".weight") {
                continue;
            }
            let fan_in = if p.name.contains(".up.") {
                p.shape[0]
            } else {
                p.shape[1..].iter().product()
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for v in &mut p.data {
                *v = T::of(dist.sample(&mut rng));
            }
        }
        params
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.iter().find(|p| p.name == name)
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }

    /// Fails with a message naming the first entry that disagrees with `config`.
    pub fn check_against(&self, config: &NetConfig) -> std::result::Result<(), String> {
        let specs = config.param_specs();
        for (i, (name, shape)) in specs.iter().enumerate() {
            match self.entries.get(i) {
                None => return Err(format!("missing layer {name}")),
                Some(p) if &p.name != name => {
                    return Err(format!("expected layer {name}, found {}", p.name));
                }
                Some(p) if &p.shape != shape || p.data.len() != shape.iter().product::<usize>() => {
                    return Err(format!("layer {name} has shape {:?}, config needs {shape:?}", p.shape));
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.entries.get(specs.len()) {
            return Err(format!("unexpected layer {}", extra.name));
        }
        Ok(())
    }
}
