//! The 3D fully convolutional network.
//!
//! Layer sequence (shapes for the 60-class network on a 64×64×30 clip):
//!
//! | layer                      | output           |
//! |----------------------------|------------------|
//! | Conv3D 1 + BN + LeakyReLU  | 64×64×30×32      |
//! | Conv3D 2 + BN + LeakyReLU  | 64×64×30×32      |
//! | MaxPooling (3,3,3), ceil   | 22×22×10×32      |
//! | Dropout 0.25               |                  |
//! | Conv3D 3 + BN + LeakyReLU  | 20×20×8×64       |
//! | Conv3D 4 + BN + LeakyReLU  | 18×18×6×64       |
//! | Dropout 0.25               |                  |
//! | Conv3D 5, kernel (1,1,6)   | 18×18×1×128      |
//! | Reshape                    | 18×18×128        |
//! | Conv2D 1 (3,3)/2 + BN + LReLU | 8×8×128       |
//! | Conv2D 2 (1,1)             | 8×8×60           |
//! | Average Pooling 2D         | 60               |
//! | Softmax                    | 60               |

pub mod checkpoint;

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{
    self, conv_backward, conv_forward, cross_entropy, dropout, dropout_backward, global_avgpool2d,
    global_avgpool2d_backward, leaky_relu, leaky_relu_backward, softmax, BatchNorm, BatchNormCache,
    ConvParams, ConvSpec, DropoutMask, MaxPool3d, Mode, Padding, PoolArgmax,
};
use crate::rng::{stream, Stream};
use crate::tensor::{Scalar, Tensor};

pub use checkpoint::{load, save, Checkpoint, TrainingMeta};

const AXIS_NAMES: [&str; 5] = ["batch", "height", "width", "time", "channel"];

/// Hyperparameters that fix the layer sequence and every tensor shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    /// Clip extents `(height, width, frames)`; the input has one channel.
    pub input: [usize; 3],
    pub n_classes: usize,
    pub block1_filters: usize,
    pub block1_kernel: [usize; 3],
    /// Max-pool window; the stride equals the window.
    pub pool: [usize; 3],
    pub block2_filters: usize,
    pub block2_kernels: [[usize; 3]; 2],
    pub collapse_filters: usize,
    /// Kernel of the convolution that removes the time axis.
    pub collapse_kernel: [usize; 3],
    pub spatial_filters: usize,
    pub spatial_kernel: [usize; 2],
    pub spatial_stride: [usize; 2],
    pub dropout_rate: f64,
    pub leaky_alpha: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl Architecture {
    /// The published network.
    pub fn full(n_classes: usize) -> Self {
        Architecture {
            input: [64, 64, 30],
            n_classes,
            block1_filters: 32,
            block1_kernel: [3, 3, 3],
            pool: [3, 3, 3],
            block2_filters: 64,
            block2_kernels: [[3, 3, 3], [3, 3, 3]],
            collapse_filters: 128,
            collapse_kernel: [1, 1, 6],
            spatial_filters: 128,
            spatial_kernel: [3, 3],
            spatial_stride: [2, 2],
            dropout_rate: layers::dropout::DEFAULT_RATE,
            leaky_alpha: layers::LEAKY_ALPHA,
            bn_momentum: layers::batchnorm::DEFAULT_MOMENTUM,
            bn_epsilon: layers::batchnorm::DEFAULT_EPSILON,
        }
    }

    /// Same layer sequence on an 8×8×6 clip with a handful of filters, small
    /// enough for whole-network finite differences.
    pub fn tiny(n_classes: usize) -> Self {
        Architecture {
            input: [8, 8, 6],
            block1_filters: 2,
            block2_filters: 3,
            block2_kernels: [[2, 2, 1], [1, 1, 1]],
            collapse_filters: 4,
            collapse_kernel: [1, 1, 2],
            spatial_filters: 4,
            spatial_kernel: [1, 1],
            spatial_stride: [1, 1],
            ..Architecture::full(n_classes)
        }
    }

    /// Same layer sequence on a 32×32×12 clip; fast enough for end-to-end
    /// command tests.
    pub fn compact(n_classes: usize) -> Self {
        Architecture {
            input: [32, 32, 12],
            block1_filters: 4,
            block2_filters: 8,
            block2_kernels: [[3, 3, 3], [3, 3, 1]],
            collapse_filters: 16,
            collapse_kernel: [1, 1, 2],
            spatial_filters: 16,
            ..Architecture::full(n_classes)
        }
    }

    pub fn preset(name: &str, n_classes: usize) -> Result<Self> {
        match name {
            "full" | "3dfcnn" => Ok(Self::full(n_classes)),
            "compact" => Ok(Self::compact(n_classes)),
            "tiny" => Ok(Self::tiny(n_classes)),
            other => Err(Error::invalid(format!(
                "unknown architecture preset {other:?} (expected full, compact or tiny)"
            ))),
        }
    }

    pub fn frames(&self) -> usize {
        self.input[2]
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 5] {
        [batch, self.input[0], self.input[1], self.input[2], 1]
    }

    /// Flat `key=value` description, used by checkpoint headers.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        fn list(v: &[usize]) -> String {
            v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
        }
        vec![
            ("input".into(), list(&self.input)),
            ("n_classes".into(), self.n_classes.to_string()),
            ("block1_filters".into(), self.block1_filters.to_string()),
            ("block1_kernel".into(), list(&self.block1_kernel)),
            ("pool".into(), list(&self.pool)),
            ("block2_filters".into(), self.block2_filters.to_string()),
            ("block2_kernel_a".into(), list(&self.block2_kernels[0])),
            ("block2_kernel_b".into(), list(&self.block2_kernels[1])),
            ("collapse_filters".into(), self.collapse_filters.to_string()),
            ("collapse_kernel".into(), list(&self.collapse_kernel)),
            ("spatial_filters".into(), self.spatial_filters.to_string()),
            ("spatial_kernel".into(), list(&self.spatial_kernel)),
            ("spatial_stride".into(), list(&self.spatial_stride)),
            ("dropout_rate".into(), self.dropout_rate.to_string()),
            ("leaky_alpha".into(), self.leaky_alpha.to_string()),
            ("bn_momentum".into(), self.bn_momentum.to_string()),
            ("bn_epsilon".into(), self.bn_epsilon.to_string()),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        fn list<const N: usize>(key: &str, v: &str) -> Result<[usize; N]> {
            let parts: Vec<usize> = v
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))?;
            parts
                .try_into()
                .map_err(|_| Error::invalid(format!("{key}: expected {N} values in {v:?}")))
        }
        fn num<F: std::str::FromStr>(key: &str, v: &str) -> Result<F> {
            v.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}")))
        }
        let mut arch = Architecture::full(2);
        let mut seen = 0;
        for (key, value) in pairs {
            match key {
                "input" => arch.input = list(key, value)?,
                "n_classes" => arch.n_classes = num(key, value)?,
                "block1_filters" => arch.block1_filters = num(key, value)?,
                "block1_kernel" => arch.block1_kernel = list(key, value)?,
                "pool" => arch.pool = list(key, value)?,
                "block2_filters" => arch.block2_filters = num(key, value)?,
                "block2_kernel_a" => arch.block2_kernels[0] = list(key, value)?,
                "block2_kernel_b" => arch.block2_kernels[1] = list(key, value)?,
                "collapse_filters" => arch.collapse_filters = num(key, value)?,
                "collapse_kernel" => arch.collapse_kernel = list(key, value)?,
                "spatial_filters" => arch.spatial_filters = num(key, value)?,
                "spatial_kernel" => arch.spatial_kernel = list(key, value)?,
                "spatial_stride" => arch.spatial_stride = list(key, value)?,
                "dropout_rate" => arch.dropout_rate = num(key, value)?,
                "leaky_alpha" => arch.leaky_alpha = num(key, value)?,
                "bn_momentum" => arch.bn_momentum = num(key, value)?,
                "bn_epsilon" => arch.bn_epsilon = num(key, value)?,
                _ => continue,
            }
            seen += 1;
        }
        if seen < 17 {
            return Err(Error::invalid(format!(
                "architecture description has {seen} of 17 fields"
            )));
        }
        Ok(arch)
    }
}

pub enum Layer<T> {
    Conv {
        name: String,
        spec: ConvSpec,
        params: ConvParams<T>,
    },
    BatchNorm {
        name: String,
        bn: BatchNorm<T>,
    },
    LeakyRelu {
        alpha: f64,
    },
    MaxPool(MaxPool3d),
    Dropout {
        rate: f64,
    },
    /// `[B, H, W, 1, C]` to `[B, H, W, C]`.
    SqueezeTime,
    GlobalAvgPool,
    Softmax,
}

impl<T> Layer<T> {
    /// Row label in the style of the architecture table.
    pub fn label(&self) -> String {
        match self {
            Layer::Conv { name, .. } => {
                let (kind, idx) = name.split_once('_').unwrap_or((name, ""));
                let kind = if kind == "conv3d" { "Conv3D" } else { "Conv2D" };
                format!("{kind} {idx}")
            }
            Layer::BatchNorm { .. } => "Batch Normalization".into(),
            Layer::LeakyRelu { .. } => "Activation (LeakyReLU)".into(),
            Layer::MaxPool(_) => "MaxPooling".into(),
            Layer::Dropout { .. } => "Dropout".into(),
            Layer::SqueezeTime => "Reshape".into(),
            Layer::GlobalAvgPool => "Average Pooling 2D".into(),
            Layer::Softmax => "Activation (softmax)".into(),
        }
    }
}

/// Per-layer state kept between the train-mode forward and backward calls.
enum LayerAux<T> {
    None,
    BatchNorm(BatchNormCache<T>),
    Pool(PoolArgmax),
    Dropout(Option<DropoutMask>),
}

pub struct ForwardCache<T> {
    generation: u64,
    /// `activations[i]` is the input of layer `i`; the last entry is the output.
    activations: Vec<Tensor<T>>,
    aux: Vec<LayerAux<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn probabilities(&self) -> &Tensor<T> {
        self.activations.last().expect("cache holds the input at least")
    }
}

/// One gradient tensor per trainable parameter, in forward order.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Name and output shape of one layer, from a traced forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerTrace {
    pub label: String,
    pub shape: Vec<usize>,
}

pub struct Model<T = f32> {
    arch: Architecture,
    layers: Vec<Layer<T>>,
    /// Layers before this index are frozen.
    trainable_from: usize,
    /// Bumped whenever parameters may have changed; caches from older
    /// generations are rejected by `backward`.
    generation: u64,
}

impl<T: Scalar> fmt::Debug for Model<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("arch", &self.arch)
            .field("layers", &self.layers.iter().map(Layer::label).collect::<Vec<_>>())
            .field("trainable_from", &self.trainable_from)
            .finish()
    }
}

fn glorot_init<T: Scalar, R: Rng + ?Sized>(spec: &ConvSpec, rng: &mut R) -> Result<ConvParams<T>> {
    let receptive: usize = spec.kernel.iter().product();
    let fan_in = (receptive * spec.in_channels) as f64;
    let fan_out = (receptive * spec.out_channels) as f64;
    let bound = (6.0 / (fan_in + fan_out)).sqrt();
    let n: usize = spec.weight_shape().iter().product();
    let weights = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    Ok(ConvParams {
        weight: Tensor::from_vec(&spec.weight_shape(), weights)?,
        bias: Tensor::zeros(&[spec.out_channels])?,
    })
}

impl<T: Scalar> Model<T> {
    /// Builds the network with freshly initialized parameters drawn from the
    /// `init` stream of `seed`.
    pub fn build(arch: Architecture, seed: u64) -> Result<Self> {
        if arch.n_classes < 2 {
            return Err(Error::invalid(format!(
                "a classifier needs at least 2 classes, got {}",
                arch.n_classes
            )));
        }
        layers::dropout::check_rate(arch.dropout_rate)?;
        let mut rng = stream(seed, Stream::Init);
        let mut layers = Vec::new();
        let mut n3 = 0;
        let mut n2 = 0;

        let mut push_conv = |layers: &mut Vec<Layer<T>>, spec: ConvSpec, rng: &mut _| -> Result<String> {
            let name = if spec.spatial_rank == 3 {
                n3 += 1;
                format!("conv3d_{n3}")
            } else {
                n2 += 1;
                format!("conv2d_{n2}")
            };
            let params = glorot_init(&spec, rng)?;
            layers.push(Layer::Conv {
                name: name.clone(),
                spec,
                params,
            });
            Ok(name)
        };
        let bn_act = |layers: &mut Vec<Layer<T>>, name: String, channels: usize| -> Result<()> {
            let mut bn = BatchNorm::new(channels)?;
            bn.momentum = arch.bn_momentum;
            bn.epsilon = arch.bn_epsilon;
            layers.push(Layer::BatchNorm {
                name: format!("{name}.bn"),
                bn,
            });
            layers.push(Layer::LeakyRelu {
                alpha: arch.leaky_alpha,
            });
            Ok(())
        };

        let f1 = arch.block1_filters;
        let f2 = arch.block2_filters;
        let name = push_conv(
            &mut layers,
            ConvSpec::conv3d(arch.block1_kernel, [1; 3], Padding::Same, 1, f1),
            &mut rng,
        )?;
        bn_act(&mut layers, name, f1)?;
        let name = push_conv(
            &mut layers,
            ConvSpec::conv3d(arch.block1_kernel, [1; 3], Padding::Same, f1, f1),
            &mut rng,
        )?;
        bn_act(&mut layers, name, f1)?;
        layers.push(Layer::MaxPool(MaxPool3d::new(arch.pool, arch.pool)?));
        layers.push(Layer::Dropout {
            rate: arch.dropout_rate,
        });
        let name = push_conv(
            &mut layers,
            ConvSpec::conv3d(arch.block2_kernels[0], [1; 3], Padding::Valid, f1, f2),
            &mut rng,
        )?;
        bn_act(&mut layers, name, f2)?;
        let name = push_conv(
            &mut layers,
            ConvSpec::conv3d(arch.block2_kernels[1], [1; 3], Padding::Valid, f2, f2),
            &mut rng,
        )?;
        bn_act(&mut layers, name, f2)?;
        layers.push(Layer::Dropout {
            rate: arch.dropout_rate,
        });
        push_conv(
            &mut layers,
            ConvSpec::conv3d(arch.collapse_kernel, [1; 3], Padding::Valid, f2, arch.collapse_filters),
            &mut rng,
        )?;
        layers.push(Layer::SqueezeTime);
        let name = push_conv(
            &mut layers,
            ConvSpec::conv2d(
                arch.spatial_kernel,
                arch.spatial_stride,
                Padding::Valid,
                arch.collapse_filters,
                arch.spatial_filters,
            ),
            &mut rng,
        )?;
        bn_act(&mut layers, name, arch.spatial_filters)?;
        push_conv(
            &mut layers,
            ConvSpec::conv2d([1, 1], [1, 1], Padding::Valid, arch.spatial_filters, arch.n_classes),
            &mut rng,
        )?;
        layers.push(Layer::GlobalAvgPool);
        layers.push(Layer::Softmax);

        let model = Model {
            arch,
            layers,
            trainable_from: 0,
            generation: 0,
        };
        model.output_shapes(1)?;
        Ok(model)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Static shape propagation, without touching any data.
    pub fn output_shapes(&self, batch: usize) -> Result<Vec<LayerTrace>> {
        let mut shape = self.arch.input_shape(batch).to_vec();
        let mut out = vec![LayerTrace {
            label: "Input".into(),
            shape: shape.clone(),
        }];
        for layer in &self.layers {
            shape = match layer {
                Layer::Conv { spec, .. } => spec.output_shape(&shape)?,
                Layer::MaxPool(pool) => pool.output_shape(&shape)?,
                Layer::SqueezeTime => {
                    if shape.len() != 5 || shape[3] != 1 {
                        return Err(Error::shape(format!(
                            "time axis must collapse to 1 before the reshape, got {shape:?}"
                        )));
                    }
                    vec![shape[0], shape[1], shape[2], shape[4]]
                }
                Layer::GlobalAvgPool => vec![shape[0], shape[3]],
                _ => shape,
            };
            out.push(LayerTrace {
                label: layer.label(),
                shape: shape.clone(),
            });
        }
        Ok(out)
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        let s = batch.shape();
        if s.len() != 5 {
            return Err(Error::shape(format!(
                "input must be [batch, height, width, time, channel], got rank {} {s:?}",
                s.len()
            )));
        }
        let expected = self.arch.input_shape(s[0]);
        for axis in 1..5 {
            if s[axis] != expected[axis] {
                return Err(Error::shape(format!(
                    "input axis {axis} ({}) has extent {}, expected {}",
                    AXIS_NAMES[axis], s[axis], expected[axis]
                )));
            }
        }
        Ok(())
    }

    /// Infer-mode forward pass: class probabilities `[B, n_classes]`.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.infer_inner(batch, None)
    }

    /// Infer-mode forward pass that also records each layer's output shape.
    pub fn infer_traced(&self, batch: &Tensor<T>) -> Result<(Tensor<T>, Vec<LayerTrace>)> {
        let mut trace = vec![LayerTrace {
            label: "Input".into(),
            shape: batch.shape().to_vec(),
        }];
        let out = self.infer_inner(batch, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn infer_inner(&self, batch: &Tensor<T>, mut trace: Option<&mut Vec<LayerTrace>>) -> Result<Tensor<T>> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv { spec, params, .. } => conv_forward(&x, spec, params)?,
                Layer::BatchNorm { bn, .. } => bn.infer(&x)?,
                Layer::LeakyRelu { alpha } => leaky_relu(&x, *alpha)?,
                Layer::MaxPool(pool) => pool.forward(&x)?.0,
                Layer::Dropout { .. } => x,
                Layer::SqueezeTime => squeeze_time(x)?,
                Layer::GlobalAvgPool => global_avgpool2d(&x)?,
                Layer::Softmax => softmax(&x)?,
            };
            if let Some(t) = trace.as_deref_mut() {
                t.push(LayerTrace {
                    label: layer.label(),
                    shape: x.shape().to_vec(),
                });
            }
        }
        Ok(x)
    }

    /// Train-mode forward pass. Batch norm uses batch statistics (except in
    /// frozen layers) and dropout draws its masks from `rng`.
    pub fn forward_train<R: Rng + ?Sized>(&mut self, batch: &Tensor<T>, rng: &mut R) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        activations.push(batch.clone());
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let frozen = i < self.trainable_from;
            let x = activations.last().expect("input pushed above");
            let (out, a) = match layer {
                Layer::Conv { spec, params, .. } => (conv_forward(x, spec, params)?, LayerAux::None),
                Layer::BatchNorm { bn, .. } => {
                    let mode = if frozen { Mode::Infer } else { Mode::Train };
                    let (y, cache) = bn.forward(x, mode)?;
                    (y, LayerAux::BatchNorm(cache))
                }
                Layer::LeakyRelu { alpha } => (leaky_relu(x, *alpha)?, LayerAux::None),
                Layer::MaxPool(pool) => {
                    let (y, argmax) = pool.forward(x)?;
                    (y, LayerAux::Pool(argmax))
                }
                Layer::Dropout { rate } => {
                    let (y, mask) = dropout(x, *rate, Mode::Train, rng)?;
                    (y, LayerAux::Dropout(mask))
                }
                Layer::SqueezeTime => (squeeze_time(x.clone())?, LayerAux::None),
                Layer::GlobalAvgPool => (global_avgpool2d(x)?, LayerAux::None),
                Layer::Softmax => (softmax(x)?, LayerAux::None),
            };
            activations.push(out);
            aux.push(a);
        }
        let probs = activations.last().expect("non-empty").clone();
        Ok((
            probs,
            ForwardCache {
                generation: self.generation,
                activations,
                aux,
            },
        ))
    }

    /// Forward in either mode; a cache is returned only in train mode.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        batch: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Tensor<T>, Option<ForwardCache<T>>)> {
        match mode {
            Mode::Train => {
                let (p, cache) = self.forward_train(batch, rng)?;
                Ok((p, Some(cache)))
            }
            Mode::Infer => Ok((self.infer(batch)?, None)),
        }
    }

    /// Backpropagates `grad_logits`, the loss gradient with respect to the
    /// pre-softmax logits (what [`cross_entropy`] returns), down to the first
    /// trainable layer.
    pub fn backward(&self, cache: Option<&ForwardCache<T>>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        let cache = cache.ok_or_else(|| Error::MissingCache("model".into()))?;
        if cache.generation != self.generation || cache.aux.len() != self.layers.len() {
            return Err(Error::MissingCache(
                "model (cache is stale: parameters changed since the forward pass)".into(),
            ));
        }
        let batch = cache.activations[0].shape()[0];
        if grad_logits.shape() != [batch, self.arch.n_classes] {
            return Err(Error::shape(format!(
                "logit gradient {:?} does not match [{batch}, {}]",
                grad_logits.shape(),
                self.arch.n_classes
            )));
        }
        let mut entries = Vec::new();
        let mut g = grad_logits.clone();
        for i in (self.trainable_from..self.layers.len()).rev() {
            let x = &cache.activations[i];
            let need_input = i > self.trainable_from;
            g = match (&self.layers[i], &cache.aux[i]) {
                (Layer::Softmax, _) => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::invalid("softmax must be the last layer"));
                    }
                    g
                }
                (Layer::GlobalAvgPool, _) => global_avgpool2d_backward(&g, x.shape())?,
                (Layer::Conv { name, spec, params }, _) => {
                    let grads = conv_backward(&g, x, spec, params, need_input)?;
                    entries.push((format!("{name}.bias"), grads.bias));
                    entries.push((format!("{name}.weight"), grads.weight));
                    match grads.input {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                (Layer::BatchNorm { name, bn }, LayerAux::BatchNorm(bc)) => {
                    let grads = bn.backward(&g, x, Some(bc))?;
                    entries.push((format!("{name}.beta"), grads.beta));
                    entries.push((format!("{name}.gamma"), grads.gamma));
                    grads.input
                }
                (Layer::LeakyRelu { alpha }, _) => leaky_relu_backward(&g, &cache.activations[i + 1], *alpha)?,
                (Layer::MaxPool(pool), LayerAux::Pool(argmax)) => pool.backward(&g, Some(argmax))?,
                (Layer::Dropout { .. }, LayerAux::Dropout(mask)) => dropout_backward(&g, mask.as_ref())?,
                (Layer::SqueezeTime, _) => g.reshape(x.shape())?,
                (layer, _) => {
                    return Err(Error::MissingCache(format!("{} (cache does not match layer)", layer.label())));
                }
            };
        }
        entries.reverse();
        Ok(Gradients { entries })
    }

    /// Mean cross-entropy of a train-mode pass plus its parameter gradients.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &mut self,
        batch: &Tensor<T>,
        labels: &[usize],
        rng: &mut R,
    ) -> Result<(f64, Tensor<T>, Gradients<T>)> {
        let (probs, cache) = self.forward_train(batch, rng)?;
        let (loss, grad_logits) = cross_entropy(&probs, labels)?;
        let grads = self.backward(Some(&cache), &grad_logits)?;
        Ok((loss, probs, grads))
    }

    fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Number of parameterized (convolution) layers; each owns the batch
    /// norm that follows it.
    pub fn parameterized_layer_count(&self) -> usize {
        self.conv_indices().len()
    }

    /// Freezes everything except the last `trainable_tail` parameterized
    /// layers. Frozen batch norms switch to their running statistics.
    pub fn freeze_for_finetune(&mut self, trainable_tail: usize) -> Result<()> {
        let convs = self.conv_indices();
        if trainable_tail == 0 || trainable_tail > convs.len() {
            return Err(Error::invalid(format!(
                "trainable tail {trainable_tail} outside 1..={}",
                convs.len()
            )));
        }
        self.trainable_from = convs[convs.len() - trainable_tail];
        self.generation += 1;
        Ok(())
    }

    pub fn unfreeze(&mut self) {
        self.trainable_from = 0;
        self.generation += 1;
    }

    /// Names of the parameterized layers that currently receive updates.
    pub fn trainable_layers(&self) -> Vec<&str> {
        self.layers[self.trainable_from..]
            .iter()
            .filter_map(|l| match l {
                Layer::Conv { name, .. } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Learnable tensors, in forward order.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { name, params, .. } => {
                    out.push((format!("{name}.weight"), &params.weight));
                    out.push((format!("{name}.bias"), &params.bias));
                }
                Layer::BatchNorm { name, bn } => {
                    out.push((format!("{name}.gamma"), &bn.gamma));
                    out.push((format!("{name}.beta"), &bn.beta));
                }
                _ => {}
            }
        }
        out
    }

    /// Learnable tensors plus batch-norm running statistics.
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { name, params, .. } => {
                    out.push((format!("{name}.weight"), &params.weight));
                    out.push((format!("{name}.bias"), &params.bias));
                }
                Layer::BatchNorm { name, bn } => {
                    out.push((format!("{name}.gamma"), &bn.gamma));
                    out.push((format!("{name}.beta"), &bn.beta));
                    out.push((format!("{name}.running_mean"), &bn.running_mean));
                    out.push((format!("{name}.running_var"), &bn.running_var));
                }
                _ => {}
            }
        }
        out
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.generation += 1;
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { name, params, .. } => {
                    out.push((format!("{name}.weight"), &mut params.weight));
                    out.push((format!("{name}.bias"), &mut params.bias));
                }
                Layer::BatchNorm { name, bn } => {
                    out.push((format!("{name}.gamma"), &mut bn.gamma));
                    out.push((format!("{name}.beta"), &mut bn.beta));
                    out.push((format!("{name}.running_mean"), &mut bn.running_mean));
                    out.push((format!("{name}.running_var"), &mut bn.running_var));
                }
                _ => {}
            }
        }
        out
    }

    /// Learnable tensors of the unfrozen layers, for the optimizer.
    pub fn trainable_parameters_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.generation += 1;
        let from = self.trainable_from;
        let mut out = Vec::new();
        for layer in &mut self.layers[from..] {
            match layer {
                Layer::Conv { name, params, .. } => {
                    out.push((format!("{name}.weight"), &mut params.weight));
                    out.push((format!("{name}.bias"), &mut params.bias));
                }
                Layer::BatchNorm { name, bn } => {
                    out.push((format!("{name}.gamma"), &mut bn.gamma));
                    out.push((format!("{name}.beta"), &mut bn.beta));
                }
                _ => {}
            }
        }
        out
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.buffers_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Swaps the classifier for a freshly initialized one with `n_classes`
    /// outputs, leaving every other parameter untouched.
    pub fn replace_head(&mut self, n_classes: usize, seed: u64) -> Result<()> {
        if n_classes < 2 {
            return Err(Error::invalid("a classifier needs at least 2 classes"));
        }
        let idx = *self.conv_indices().last().expect("network has convolutions");
        let mut rng = stream(seed, Stream::Init);
        if let Layer::Conv { spec, params, .. } = &mut self.layers[idx] {
            spec.out_channels = n_classes;
            *params = glorot_init(spec, &mut rng)?;
        }
        self.arch.n_classes = n_classes;
        self.generation += 1;
        Ok(())
    }
}

fn squeeze_time<T: Scalar>(x: Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() != 5 || s[3] != 1 {
        return Err(Error::shape(format!("cannot drop a time axis of extent >1 from {s:?}")));
    }
    x.reshape(&[s[0], s[1], s[2], s[4]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn static_shapes_follow_the_table() {
        let model = Model::<f32>::build(Architecture::full(60), 0).unwrap();
        let shapes: Vec<Vec<usize>> = model.output_shapes(1).unwrap().into_iter().map(|t| t.shape).collect();
        assert_eq!(shapes[0], vec![1, 64, 64, 30, 1]);
        assert!(shapes.contains(&vec![1, 22, 22, 10, 32]));
        assert!(shapes.contains(&vec![1, 18, 18, 1, 128]));
        assert!(shapes.contains(&vec![1, 18, 18, 128]));
        assert!(shapes.contains(&vec![1, 8, 8, 128]));
        assert_eq!(shapes.last().unwrap(), &vec![1, 60]);
    }

    #[test]
    fn rejects_single_class_and_bad_input() {
        assert!(Model::<f32>::build(Architecture::full(1), 0).is_err());
        let model = Model::<f32>::build(Architecture::tiny(3), 0).unwrap();
        let bad = Tensor::zeros(&[1, 8, 7, 6, 1]).unwrap();
        let err = model.infer(&bad).unwrap_err().to_string();
        assert!(err.contains("axis 2 (width)"), "{err}");
    }

    #[test]
    fn inconsistent_collapse_kernel_fails_to_build() {
        let mut arch = Architecture::tiny(2);
        arch.collapse_kernel = [1, 1, 1];
        assert!(Model::<f32>::build(arch, 0).is_err());
    }

    #[test]
    fn architecture_pairs_round_trip() {
        let arch = Architecture::compact(7);
        let pairs = arch.to_pairs();
        let back = Architecture::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, arch);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let mut model = Model::<f64>::build(Architecture::tiny(2), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::full(&[2, 8, 8, 6, 1], 0.5).unwrap();
        let (_, cache) = model.forward_train(&x, &mut rng).unwrap();
        let grads = model.backward(Some(&cache), &Tensor::zeros(&[2, 2]).unwrap()).unwrap();
        assert_eq!(grads.len(), model.parameters().len());
        assert!(grads.iter().all(|(_, g)| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn stale_or_missing_cache_is_rejected() {
        let mut model = Model::<f64>::build(Architecture::tiny(2), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::full(&[2, 8, 8, 6, 1], 0.5).unwrap();
        let g = Tensor::zeros(&[2, 2]).unwrap();
        assert!(matches!(model.backward(None, &g), Err(Error::MissingCache(_))));
        let (_, cache) = model.forward_train(&x, &mut rng).unwrap();
        model.trainable_parameters_mut();
        assert!(matches!(model.backward(Some(&cache), &g), Err(Error::MissingCache(_))));
    }

    #[test]
    fn frozen_layers_have_no_gradients() {
        let mut model = Model::<f64>::build(Architecture::tiny(2), 1).unwrap();
        model.freeze_for_finetune(3).unwrap();
        assert_eq!(model.trainable_layers(), vec!["conv3d_5", "conv2d_1", "conv2d_2"]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::full(&[2, 8, 8, 6, 1], 0.5).unwrap();
        let (probs, cache) = model.forward_train(&x, &mut rng).unwrap();
        let (_, gl) = cross_entropy(&probs, &[0, 1]).unwrap();
        let grads = model.backward(Some(&cache), &gl).unwrap();
        let names: Vec<&str> = grads.iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            vec![
                "conv3d_5.weight",
                "conv3d_5.bias",
                "conv2d_1.weight",
                "conv2d_1.bias",
                "conv2d_1.bn.gamma",
                "conv2d_1.bn.beta",
                "conv2d_2.weight",
                "conv2d_2.bias",
            ]
        );
        assert!(model.freeze_for_finetune(0).is_err());
        assert!(model.freeze_for_finetune(8).is_err());
        model.freeze_for_finetune(7).unwrap();
        assert_eq!(model.trainable_layers().len(), 7);
    }

    #[test]
    fn head_swap_keeps_the_body() {
        let mut model = Model::<f32>::build(Architecture::tiny(6), 3).unwrap();
        let before: Vec<(String, Tensor<f32>)> =
            model.buffers().into_iter().map(|(n, t)| (n, t.clone())).collect();
        model.replace_head(4, 9).unwrap();
        assert_eq!(model.n_classes(), 4);
        for (name, t) in model.buffers() {
            if name.starts_with("conv2d_2") {
                assert_eq!(t.shape().last(), Some(&4), "{name}");
            } else {
                let old = &before.iter().find(|(n, _)| *n == name).unwrap().1;
                assert_eq!(t, old, "{name}");
            }
        }
        let out = model.infer(&Tensor::zeros(&[1, 8, 8, 6, 1]).unwrap()).unwrap();
        assert_eq!(out.shape(), &[1, 4]);
    }
}
