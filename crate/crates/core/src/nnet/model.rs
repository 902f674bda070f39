//! OcularNet: a compact depthwise-separable backbone shared by an age-group
//! classification head and an exact-age regression head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{LayerSpec, Mode};
use super::network::{SeqCache, Sequential};
use super::stem::adapt_stem;
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Initial regression bias: the midpoint of the 4..16 age range.
pub const AGE_PRIOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    Fp16,
}

impl Precision {
    pub fn bytes_per_param(self) -> usize {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp16 => 2,
        }
    }
}

/// Channel widths of the depthwise-separable stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub stem: usize,
    pub stages: Vec<usize>,
    pub neck: usize,
}

impl Default for Widths {
    fn default() -> Self {
        Self {
            stem: 16,
            stages: vec![24, 48, 96, 192],
            neck: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    /// `[channels, height, width]` of one input item.
    pub input_shape: Vec<usize>,
    pub backbone: Vec<LayerSpec>,
    pub neck: Vec<LayerSpec>,
    pub cls_head: Vec<LayerSpec>,
    pub reg_head: Vec<LayerSpec>,
}

impl Topology {
    /// Default OcularNet for a `[channels, height, width]` input.
    pub fn ocular(channels: usize, height: usize, width: usize) -> Self {
        Self::ocular_with(channels, height, width, &Widths::default())
    }

    pub fn ocular_with(channels: usize, height: usize, width: usize, widths: &Widths) -> Self {
        let mut backbone = vec![
            LayerSpec::Conv2d {
                in_channels: channels,
                out_channels: widths.stem,
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            LayerSpec::BatchNorm { channels: widths.stem },
            LayerSpec::HardSwish,
        ];
        let mut c = widths.stem;
        for (i, &out) in widths.stages.iter().enumerate() {
            let act = if i == 0 { LayerSpec::Relu } else { LayerSpec::HardSwish };
            backbone.extend([
                LayerSpec::DepthwiseConv2d {
                    channels: c,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                },
                LayerSpec::BatchNorm { channels: c },
                act.clone(),
                LayerSpec::Conv2d {
                    in_channels: c,
                    out_channels: out,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                },
                LayerSpec::BatchNorm { channels: out },
                act,
            ]);
            c = out;
        }
        backbone.push(LayerSpec::GlobalAvgPool);
        Self {
            input_shape: vec![channels, height, width],
            backbone,
            neck: vec![
                LayerSpec::Dense {
                    inputs: c,
                    outputs: widths.neck,
                },
                LayerSpec::HardSwish,
            ],
            cls_head: vec![LayerSpec::Dense {
                inputs: widths.neck,
                outputs: 2,
            }],
            reg_head: vec![LayerSpec::Dense {
                inputs: widths.neck,
                outputs: 1,
            }],
        }
    }

    /// Checks that every stage chains and the heads produce 2 logits and 1 age.
    pub fn validate(&self) -> Result<(), NnError> {
        let chain = |specs: &[LayerSpec], input: Vec<usize>| {
            specs.iter().try_fold(input, |s, l| {
                l.validate()?;
                l.output_shape(&s)
            })
        };
        let feat = chain(&self.backbone, self.input_shape.clone())?;
        let hidden = chain(&self.neck, feat)?;
        if chain(&self.cls_head, hidden.clone())? != [2] {
            return Err(NnError::InvalidSpec("classification head must emit 2 logits".into()));
        }
        if chain(&self.reg_head, hidden)? != [1] {
            return Err(NnError::InvalidSpec("regression head must emit 1 value".into()));
        }
        Ok(())
    }

    /// Index in the backbone of the activation fed to global pooling, i.e. the
    /// last convolutional feature map.
    pub fn feature_map_index(&self) -> Option<usize> {
        let gap = self
            .backbone
            .iter()
            .position(|l| *l == LayerSpec::GlobalAvgPool)?;
        self.backbone[..gap]
            .iter()
            .any(|l| matches!(l, LayerSpec::Conv2d { .. } | LayerSpec::DepthwiseConv2d { .. }))
            .then_some(gap)
    }
}

/// Head outputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs<T> {
    /// `[N, 2]`, class 0 = Young, class 1 = Old.
    pub logits: Tensor<T>,
    /// `[N, 1]` age estimates in years.
    pub ages: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ModelCache<T> {
    pub backbone: SeqCache<T>,
    neck: SeqCache<T>,
    cls: SeqCache<T>,
    reg: SeqCache<T>,
    version: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcularNet<T = f32> {
    pub topology: Topology,
    pub backbone: Sequential<T>,
    pub neck: Sequential<T>,
    pub cls_head: Sequential<T>,
    pub reg_head: Sequential<T>,
    pub precision: Precision,
    version: u64,
}

impl<T: Scalar> OcularNet<T> {
    /// Seeded initialization. When the stem is a convolution over 1 or 2
    /// channels, its weights are produced by adapting a 3-channel kernel.
    pub fn init(topology: Topology, seed: u64) -> Result<Self, NnError> {
        topology.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut backbone = Sequential::init(&topology.backbone, &mut rng)?;
        let neck = Sequential::init(&topology.neck, &mut rng)?;
        let cls_head = Sequential::init(&topology.cls_head, &mut rng)?;
        let mut reg_head = Sequential::init(&topology.reg_head, &mut rng)?;

        if let Some(LayerSpec::Conv2d {
            in_channels: in_ch @ (1 | 2),
            out_channels,
            kernel,
            ..
        }) = topology.backbone.first().cloned()
        {
            let normal = Normal::new(0.0, (2.0 / (3 * kernel * kernel) as f64).sqrt())
                .map_err(|e| NnError::InvalidSpec(e.to_string()))?;
            let rgb = Tensor::<T>::from_fn(&[out_channels, 3, kernel, kernel], |_| {
                T::lit(normal.sample(&mut rng))
            });
            backbone.layers[0].params[0] = adapt_stem(&rgb, in_ch)?;
        }
        if let Some(last) = reg_head.layers.last_mut() {
            if let LayerSpec::Dense { .. } = last.spec {
                last.params[1].data_mut().iter_mut().for_each(|b| *b = T::lit(AGE_PRIOR));
            }
        }
        Ok(Self {
            topology,
            backbone,
            neck,
            cls_head,
            reg_head,
            precision: Precision::Fp32,
            version: 0,
        })
    }

    /// Assembles a network from already-built parts (used by checkpoint loading).
    pub fn from_parts(
        topology: Topology,
        parts: [Sequential<T>; 4],
        precision: Precision,
    ) -> Result<Self, NnError> {
        topology.validate()?;
        let [backbone, neck, cls_head, reg_head] = parts;
        let net = Self {
            topology,
            backbone,
            neck,
            cls_head,
            reg_head,
            precision,
            version: 0,
        };
        if net.backbone.specs() != net.topology.backbone
            || net.neck.specs() != net.topology.neck
            || net.cls_head.specs() != net.topology.cls_head
            || net.reg_head.specs() != net.topology.reg_head
        {
            return Err(NnError::InvalidSpec("layers disagree with topology".into()));
        }
        Ok(net)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        if x.shape().len() != self.topology.input_shape.len() + 1
            || x.shape()[1..] != self.topology.input_shape[..]
        {
            return Err(NnError::ShapeMismatch(format!(
                "network expects [N, {:?}], got {:?}",
                self.topology.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: Tensor<T>, mode: Mode) -> Result<(HeadOutputs<T>, ModelCache<T>), NnError> {
        self.check_input(&x)?;
        let backbone = self.backbone.forward(x, mode)?;
        let neck = self.neck.forward(backbone.output().clone(), mode)?;
        let cls = self.cls_head.forward(neck.output().clone(), mode)?;
        let reg = self.reg_head.forward(neck.output().clone(), mode)?;
        let out = HeadOutputs {
            logits: cls.output().clone(),
            ages: reg.output().clone(),
        };
        Ok((
            out,
            ModelCache {
                backbone,
                neck,
                cls,
                reg,
                version: self.version,
            },
        ))
    }

    /// Evaluation-mode forward without retaining activations.
    pub fn infer(&self, x: Tensor<T>) -> Result<HeadOutputs<T>, NnError> {
        self.check_input(&x)?;
        let feat = self.backbone.infer(x)?;
        let hidden = self.neck.infer(feat)?;
        Ok(HeadOutputs {
            logits: self.cls_head.infer(hidden.clone())?,
            ages: self.reg_head.infer(hidden)?,
        })
    }

    /// Gradients of every parameter (in [`Self::params`] order) given the
    /// loss gradients at both heads.
    pub fn backward(
        &self,
        cache: &ModelCache<T>,
        d_logits: Tensor<T>,
        d_ages: Tensor<T>,
    ) -> Result<Vec<Tensor<T>>, NnError> {
        self.backward_inner(cache, d_logits, d_ages, None)
    }

    /// Like [`Self::backward`] but also returns the gradient at every backbone
    /// activation and at the input.
    pub fn backward_full(
        &self,
        cache: &ModelCache<T>,
        d_logits: Tensor<T>,
        d_ages: Tensor<T>,
    ) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>), NnError> {
        let mut acts = Vec::new();
        let g = self.backward_inner(cache, d_logits, d_ages, Some(&mut acts))?;
        Ok((g, acts))
    }

    fn backward_inner(
        &self,
        cache: &ModelCache<T>,
        d_logits: Tensor<T>,
        d_ages: Tensor<T>,
        acts: Option<&mut Vec<Tensor<T>>>,
    ) -> Result<Vec<Tensor<T>>, NnError> {
        if cache.version != self.version {
            return Err(NnError::StaleCache);
        }
        let (g_cls, p_cls) = self.cls_head.backward(&cache.cls, d_logits, None)?;
        let (g_reg, p_reg) = self.reg_head.backward(&cache.reg, d_ages, None)?;
        let mut g_hidden = g_cls;
        g_hidden.add_assign(&g_reg);
        let (g_feat, p_neck) = self.neck.backward(&cache.neck, g_hidden, None)?;
        let (_, p_back) = self.backbone.backward(&cache.backbone, g_feat, acts)?;
        let mut grads = p_back;
        grads.extend(p_neck);
        grads.extend(p_cls);
        grads.extend(p_reg);
        Ok(grads)
    }

    /// Updates BatchNorm running statistics from a training-mode cache.
    pub fn commit_running_stats(&mut self, cache: &ModelCache<T>) {
        self.backbone.commit_running_stats(&cache.backbone);
        self.neck.commit_running_stats(&cache.neck);
        self.cls_head.commit_running_stats(&cache.cls);
        self.reg_head.commit_running_stats(&cache.reg);
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.backbone
            .params()
            .chain(self.neck.params())
            .chain(self.cls_head.params())
            .chain(self.reg_head.params())
            .collect()
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.version += 1;
        self.backbone
            .params_mut()
            .chain(self.neck.params_mut())
            .chain(self.cls_head.params_mut())
            .chain(self.reg_head.params_mut())
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.backbone
            .buffers_mut()
            .chain(self.neck.buffers_mut())
            .chain(self.cls_head.buffers_mut())
            .chain(self.reg_head.buffers_mut())
            .collect()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = self.backbone.named_params("backbone");
        v.extend(self.neck.named_params("neck"));
        v.extend(self.cls_head.named_params("cls_head"));
        v.extend(self.reg_head.named_params("reg_head"));
        v
    }

    pub fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = self.backbone.named_buffers("backbone");
        v.extend(self.neck.named_buffers("neck"));
        v.extend(self.cls_head.named_buffers("cls_head"));
        v.extend(self.reg_head.named_buffers("reg_head"));
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Bytes needed to store the parameters at the network's precision.
    pub fn param_bytes(&self) -> usize {
        self.param_count() * self.precision.bytes_per_param()
    }

    pub fn cast<U: Scalar>(&self) -> OcularNet<U> {
        OcularNet {
            topology: self.topology.clone(),
            backbone: self.backbone.cast(),
            neck: self.neck.cast(),
            cls_head: self.cls_head.cast(),
            reg_head: self.reg_head.cast(),
            precision: self.precision,
            version: 0,
        }
    }
}
