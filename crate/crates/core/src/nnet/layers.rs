//! Layer kinds with exact forward and backward passes.
//!
//! Activations are batched: `[N, C, H, W]` for spatial layers and `[N, F]`
//! for dense ones. Work is split per batch item; gradient contributions to
//! shared parameters are gathered per item and summed in item order, so the
//! result does not depend on the thread count.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::{sum_partials, Scalar, Tensor};
use super::NnError;
use crate::par;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    DepthwiseConv2d {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    HardSwish,
    BatchNorm {
        channels: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    (padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

impl LayerSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        let ok = match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0,
            LayerSpec::DepthwiseConv2d {
                channels,
                kernel,
                stride,
                ..
            } => channels > 0 && kernel > 0 && stride > 0,
            LayerSpec::Dense { inputs, outputs } => inputs > 0 && outputs > 0,
            LayerSpec::BatchNorm { channels } => channels > 0,
            LayerSpec::MaxPool { kernel, stride } => kernel > 0 && stride > 0,
            LayerSpec::Relu | LayerSpec::HardSwish | LayerSpec::GlobalAvgPool => true,
        };
        if ok {
            Ok(())
        } else {
            Err(NnError::InvalidSpec(format!("{self:?}")))
        }
    }

    /// Shape of one output item given the shape of one input item.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let bad = || NnError::ShapeMismatch(format!("{self:?} cannot accept input {input:?}"));
        match (*self, input) {
            (
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                },
                &[c, h, w],
            ) if c == in_channels => Ok(vec![
                out_channels,
                conv_out(h, kernel, stride, padding).ok_or_else(bad)?,
                conv_out(w, kernel, stride, padding).ok_or_else(bad)?,
            ]),
            (
                LayerSpec::DepthwiseConv2d {
                    channels,
                    kernel,
                    stride,
                    padding,
                },
                &[c, h, w],
            ) if c == channels => Ok(vec![
                channels,
                conv_out(h, kernel, stride, padding).ok_or_else(bad)?,
                conv_out(w, kernel, stride, padding).ok_or_else(bad)?,
            ]),
            (LayerSpec::Dense { inputs, outputs }, &[f]) if f == inputs => Ok(vec![outputs]),
            (LayerSpec::Relu | LayerSpec::HardSwish, s) => Ok(s.to_vec()),
            (LayerSpec::BatchNorm { channels }, s) if s.first() == Some(&channels) => {
                Ok(s.to_vec())
            }
            (LayerSpec::MaxPool { kernel, stride }, &[c, h, w]) => Ok(vec![
                c,
                conv_out(h, kernel, stride, 0).ok_or_else(bad)?,
                conv_out(w, kernel, stride, 0).ok_or_else(bad)?,
            ]),
            (LayerSpec::GlobalAvgPool, &[c, _, _]) => Ok(vec![c]),
            _ => Err(bad()),
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            LayerSpec::Conv2d { .. } | LayerSpec::DepthwiseConv2d { .. } | LayerSpec::Dense { .. } => {
                &["weight", "bias"]
            }
            LayerSpec::BatchNorm { .. } => &["gamma", "beta"],
            _ => &[],
        }
    }

    pub fn buffer_names(&self) -> &'static [&'static str] {
        match self {
            LayerSpec::BatchNorm { .. } => &["running_mean", "running_var"],
            _ => &[],
        }
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
            LayerSpec::DepthwiseConv2d {
                channels, kernel, ..
            } => vec![vec![channels, 1, kernel, kernel], vec![channels]],
            LayerSpec::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            LayerSpec::BatchNorm { channels } => vec![vec![channels], vec![channels]],
            _ => vec![],
        }
    }
}

/// Per-layer values retained by a forward pass for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Aux<T> {
    None,
    BatchNorm {
        mean: Vec<T>,
        inv_std: Vec<T>,
        /// Unbiased batch variance, used only to update running statistics.
        unbiased_var: Vec<T>,
    },
    ArgMax(Vec<u32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub spec: LayerSpec,
    pub params: Vec<Tensor<T>>,
    pub buffers: Vec<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    /// Fresh layer with He-normal weights, zero biases and unit BatchNorm.
    pub fn init(spec: LayerSpec, rng: &mut impl Rng) -> Result<Self, NnError> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        let fan_in = match spec {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::DepthwiseConv2d { kernel, .. } => kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 1,
        };
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        match spec {
            LayerSpec::Conv2d { .. } | LayerSpec::DepthwiseConv2d { .. } | LayerSpec::Dense { .. } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .map_err(|e| NnError::InvalidSpec(e.to_string()))?;
                params.push(Tensor::from_fn(&shapes[0], |_| T::lit(normal.sample(rng))));
                params.push(Tensor::zeros(&shapes[1]));
            }
            LayerSpec::BatchNorm { channels } => {
                params.push(Tensor::filled(&[channels], T::one()));
                params.push(Tensor::zeros(&[channels]));
                buffers.push(Tensor::zeros(&[channels]));
                buffers.push(Tensor::filled(&[channels], T::one()));
            }
            _ => {}
        }
        Ok(Self {
            spec,
            params,
            buffers,
        })
    }

    /// Layer with caller-provided parameters and buffers (shapes are checked).
    pub fn with_params(
        spec: LayerSpec,
        params: Vec<Tensor<T>>,
        buffers: Vec<Tensor<T>>,
    ) -> Result<Self, NnError> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if params.len() != shapes.len()
            || params.iter().zip(&shapes).any(|(p, s)| p.shape() != s.as_slice())
        {
            return Err(NnError::ShapeMismatch(format!(
                "parameters for {spec:?} have wrong shapes"
            )));
        }
        if buffers.len() != spec.buffer_names().len() {
            return Err(NnError::ShapeMismatch(format!(
                "buffers for {spec:?} have wrong count"
            )));
        }
        Ok(Self {
            spec,
            params,
            buffers,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Aux<T>), NnError> {
        let item_shape = &x.shape()[1..];
        let out_item = self.spec.output_shape(item_shape)?;
        let n = x.batch();
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(&out_item);
        match self.spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let geo = ConvGeo::new(x, &out_item, kernel, stride, padding);
                let mut out = Tensor::zeros(&out_shape);
                let (w, b) = (self.params[0].data(), self.params[1].data());
                let (np, rows) = (geo.out_plane(), in_channels * kernel * kernel);
                par::for_each_chunk_mut(out.data_mut(), np * out_channels, |i, o| {
                    let buf;
                    let cols = if geo.is_pointwise() {
                        x.item(i)
                    } else {
                        buf = geo.im2col_item(x.item(i), in_channels);
                        &buf[..]
                    };
                    for co in 0..out_channels {
                        let plane = &mut o[co * np..(co + 1) * np];
                        plane.iter_mut().for_each(|v| *v = b[co]);
                        for r in 0..rows {
                            axpy(plane, w[co * rows + r], &cols[r * np..(r + 1) * np]);
                        }
                    }
                });
                Ok((out, Aux::None))
            }
            LayerSpec::DepthwiseConv2d {
                channels,
                kernel,
                stride,
                padding,
            } => {
                let geo = ConvGeo::new(x, &out_item, kernel, stride, padding);
                let mut out = Tensor::zeros(&out_shape);
                let (w, b) = (self.params[0].data(), self.params[1].data());
                let (np, kk) = (geo.out_plane(), kernel * kernel);
                par::for_each_chunk_mut(out.data_mut(), np * channels, |i, o| {
                    let xi = x.item(i);
                    let mut cols = vec![T::zero(); kk * np];
                    for c in 0..channels {
                        geo.im2col(geo.in_slice(xi, c), &mut cols);
                        let plane = &mut o[c * np..(c + 1) * np];
                        plane.iter_mut().for_each(|v| *v = b[c]);
                        for r in 0..kk {
                            axpy(plane, w[c * kk + r], &cols[r * np..(r + 1) * np]);
                        }
                    }
                });
                Ok((out, Aux::None))
            }
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = (self.params[0].data(), self.params[1].data());
                let mut out = Tensor::zeros(&out_shape);
                par::for_each_chunk_mut(out.data_mut(), outputs, |i, o| {
                    let xi = x.item(i);
                    for (k, ov) in o.iter_mut().enumerate() {
                        let row = &w[k * inputs..(k + 1) * inputs];
                        *ov = b[k] + dot(row, xi);
                    }
                });
                Ok((out, Aux::None))
            }
            LayerSpec::Relu => Ok((x.map(|v| v.max(T::zero())), Aux::None)),
            LayerSpec::HardSwish => Ok((x.map(hard_swish), Aux::None)),
            LayerSpec::BatchNorm { channels } => self.batchnorm_forward(x, channels, mode),
            LayerSpec::MaxPool { kernel, stride } => {
                let (_, c, h, w) = x.dims4()?;
                let (oh, ow) = (out_item[1], out_item[2]);
                let plane = oh * ow;
                let mut out = Tensor::zeros(&out_shape);
                let mut idx = vec![0u32; n * c * plane];
                par::for_each_chunk_mut(out.data_mut(), c * plane, |i, o| {
                    let xi = x.item(i);
                    for ch in 0..c {
                        let src = &xi[ch * h * w..(ch + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let (_, best) = pool_window(src, w, oy * stride, ox * stride, kernel);
                                o[ch * plane + oy * ow + ox] = best;
                            }
                        }
                    }
                });
                // Argmax indices recomputed sequentially; cheap relative to convs.
                for i in 0..n {
                    let xi = x.item(i);
                    for ch in 0..c {
                        let src = &xi[ch * h * w..(ch + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let (at, _) = pool_window(src, w, oy * stride, ox * stride, kernel);
                                idx[(i * c + ch) * plane + oy * ow + ox] = at as u32;
                            }
                        }
                    }
                }
                Ok((out, Aux::ArgMax(idx)))
            }
            LayerSpec::GlobalAvgPool => {
                let (_, c, h, w) = x.dims4()?;
                let area = T::lit((h * w) as f64);
                let mut out = Tensor::zeros(&out_shape);
                par::for_each_chunk_mut(out.data_mut(), c, |i, o| {
                    let xi = x.item(i);
                    for (ch, ov) in o.iter_mut().enumerate() {
                        let s: T = xi[ch * h * w..(ch + 1) * h * w].iter().copied().sum();
                        *ov = s / area;
                    }
                });
                Ok((out, Aux::None))
            }
        }
    }

    /// Returns the input gradient and, for parametric layers, one gradient
    /// tensor per parameter.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        aux: &Aux<T>,
        grad_out: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        let n = x.batch();
        match self.spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let out_item = &grad_out.shape()[1..];
                let geo = ConvGeo::new(x, out_item, kernel, stride, padding);
                let w = self.params[0].data();
                let (np, rows) = (geo.out_plane(), in_channels * kernel * kernel);
                let per_item = par::map_indices(n, |i| {
                    let (xi, gi) = (x.item(i), grad_out.item(i));
                    let buf;
                    let cols = if geo.is_pointwise() {
                        xi
                    } else {
                        buf = geo.im2col_item(xi, in_channels);
                        &buf[..]
                    };
                    let mut gw = vec![T::zero(); rows * out_channels + out_channels];
                    let mut dcols = vec![T::zero(); rows * np];
                    for co in 0..out_channels {
                        let go = &gi[co * np..(co + 1) * np];
                        gw[rows * out_channels + co] = go.iter().copied().sum();
                        for r in 0..rows {
                            gw[co * rows + r] = dot(go, &cols[r * np..(r + 1) * np]);
                            axpy(&mut dcols[r * np..(r + 1) * np], w[co * rows + r], go);
                        }
                    }
                    let gxi = if geo.is_pointwise() {
                        dcols
                    } else {
                        geo.col2im_item(&dcols, in_channels)
                    };
                    (gxi, gw)
                });
                let mut gx_data = Vec::with_capacity(x.len());
                let mut partials = Vec::with_capacity(n);
                for (gxi, gw) in per_item {
                    gx_data.extend_from_slice(&gxi);
                    partials.push(gw);
                }
                let gx = Tensor::new(x.shape().to_vec(), gx_data)?;
                Ok((gx, self.split_grads(sum_partials(self.param_len(), &partials))))
            }
            LayerSpec::DepthwiseConv2d {
                channels,
                kernel,
                stride,
                padding,
            } => {
                let out_item = &grad_out.shape()[1..];
                let geo = ConvGeo::new(x, out_item, kernel, stride, padding);
                let w = self.params[0].data();
                let (np, kk) = (geo.out_plane(), kernel * kernel);
                let per_item = par::map_indices(n, |i| {
                    let (xi, gi) = (x.item(i), grad_out.item(i));
                    let mut gw = vec![T::zero(); channels * kk + channels];
                    let mut gxi = vec![T::zero(); x.item_len()];
                    let mut cols = vec![T::zero(); kk * np];
                    for c in 0..channels {
                        let go = &gi[c * np..(c + 1) * np];
                        gw[channels * kk + c] = go.iter().copied().sum();
                        geo.im2col(geo.in_slice(xi, c), &mut cols);
                        for r in 0..kk {
                            gw[c * kk + r] = dot(go, &cols[r * np..(r + 1) * np]);
                        }
                        for r in 0..kk {
                            let wv = w[c * kk + r];
                            cols[r * np..(r + 1) * np]
                                .iter_mut()
                                .zip(go)
                                .for_each(|(d, &g)| *d = wv * g);
                        }
                        let plane = geo.in_plane();
                        geo.col2im(&cols, &mut gxi[c * plane..(c + 1) * plane]);
                    }
                    (gxi, gw)
                });
                let mut gx_data = Vec::with_capacity(x.len());
                let mut partials = Vec::with_capacity(n);
                for (gxi, gw) in per_item {
                    gx_data.extend_from_slice(&gxi);
                    partials.push(gw);
                }
                let gx = Tensor::new(x.shape().to_vec(), gx_data)?;
                Ok((gx, self.split_grads(sum_partials(self.param_len(), &partials))))
            }
            LayerSpec::Dense { inputs, outputs } => {
                let w = self.params[0].data();
                let mut gx = Tensor::zeros(x.shape());
                par::for_each_chunk_mut(gx.data_mut(), inputs, |i, gxi| {
                    let gi = grad_out.item(i);
                    for (k, &g) in gi.iter().enumerate() {
                        let row = &w[k * inputs..(k + 1) * inputs];
                        for (a, &wv) in gxi.iter_mut().zip(row) {
                            *a = *a + g * wv;
                        }
                    }
                });
                let mut gw = vec![T::zero(); outputs * inputs];
                let mut gb = vec![T::zero(); outputs];
                for i in 0..n {
                    let (xi, gi) = (x.item(i), grad_out.item(i));
                    for (k, &g) in gi.iter().enumerate() {
                        gb[k] = gb[k] + g;
                        for (a, &xv) in gw[k * inputs..(k + 1) * inputs].iter_mut().zip(xi) {
                            *a = *a + g * xv;
                        }
                    }
                }
                Ok((
                    gx,
                    vec![
                        Tensor::new(vec![outputs, inputs], gw)?,
                        Tensor::new(vec![outputs], gb)?,
                    ],
                ))
            }
            LayerSpec::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                Ok((Tensor::new(x.shape().to_vec(), data)?, vec![]))
            }
            LayerSpec::HardSwish => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&v, &g)| g * hard_swish_grad(v))
                    .collect();
                Ok((Tensor::new(x.shape().to_vec(), data)?, vec![]))
            }
            LayerSpec::BatchNorm { channels } => self.batchnorm_backward(x, aux, grad_out, channels, mode),
            LayerSpec::MaxPool { .. } => {
                let Aux::ArgMax(idx) = aux else {
                    return Err(NnError::StaleCache);
                };
                let (_, c, h, w) = x.dims4()?;
                let plane = grad_out.item_len() / c;
                let mut gx = Tensor::zeros(x.shape());
                par::for_each_chunk_mut(gx.data_mut(), c * h * w, |i, gxi| {
                    let gi = grad_out.item(i);
                    for ch in 0..c {
                        for p in 0..plane {
                            let at = idx[(i * c + ch) * plane + p] as usize;
                            let slot = &mut gxi[ch * h * w + at];
                            *slot = *slot + gi[ch * plane + p];
                        }
                    }
                });
                Ok((gx, vec![]))
            }
            LayerSpec::GlobalAvgPool => {
                let (_, c, h, w) = x.dims4()?;
                let area = T::lit((h * w) as f64);
                let mut gx = Tensor::zeros(x.shape());
                par::for_each_chunk_mut(gx.data_mut(), c * h * w, |i, gxi| {
                    let gi = grad_out.item(i);
                    for ch in 0..c {
                        let g = gi[ch] / area;
                        gxi[ch * h * w..(ch + 1) * h * w].iter_mut().for_each(|v| *v = g);
                    }
                });
                Ok((gx, vec![]))
            }
        }
    }

    fn param_len(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn split_grads(&self, flat: Vec<T>) -> Vec<Tensor<T>> {
        let mut out = Vec::with_capacity(self.params.len());
        let mut off = 0;
        for p in &self.params {
            let len = p.len();
            out.push(Tensor::new(p.shape().to_vec(), flat[off..off + len].to_vec()).expect("sized"));
            off += len;
        }
        out
    }

    /// Folds the batch statistics of a training-mode forward into the running
    /// statistics used at evaluation time.
    pub fn commit_running_stats(&mut self, aux: &Aux<T>) {
        if let (LayerSpec::BatchNorm { .. }, Aux::BatchNorm { mean, unbiased_var, .. }) = (&self.spec, aux) {
            let m = T::lit(BN_MOMENTUM);
            let keep = T::one() - m;
            let (rm, rv) = self.buffers.split_at_mut(1);
            for (r, &b) in rm[0].data_mut().iter_mut().zip(mean) {
                *r = keep * *r + m * b;
            }
            for (r, &b) in rv[0].data_mut().iter_mut().zip(unbiased_var) {
                *r = keep * *r + m * b;
            }
        }
    }

    fn batchnorm_forward(&self, x: &Tensor<T>, channels: usize, mode: Mode) -> Result<(Tensor<T>, Aux<T>), NnError> {
        let n = x.batch();
        let spatial = x.item_len() / channels;
        let eps = T::lit(BN_EPS);
        let (gamma, beta) = (self.params[0].data(), self.params[1].data());
        let (mean, inv_std, unbiased_var) = match mode {
            Mode::Train => {
                let count = n * spatial;
                if count < 2 {
                    return Err(NnError::ShapeMismatch(
                        "batch normalization in training mode needs at least two values per channel".into(),
                    ));
                }
                let m = T::lit(count as f64);
                let sums = par::map_indices(n, |i| {
                    let xi = x.item(i);
                    (0..channels)
                        .map(|c| xi[c * spatial..(c + 1) * spatial].iter().copied().sum::<T>())
                        .collect::<Vec<T>>()
                });
                let mean: Vec<T> = sum_partials(channels, &sums).into_iter().map(|s| s / m).collect();
                let sq = par::map_indices(n, |i| {
                    let xi = x.item(i);
                    (0..channels)
                        .map(|c| {
                            xi[c * spatial..(c + 1) * spatial]
                                .iter()
                                .map(|&v| (v - mean[c]) * (v - mean[c]))
                                .sum::<T>()
                        })
                        .collect::<Vec<T>>()
                });
                let ss = sum_partials(channels, &sq);
                let var: Vec<T> = ss.iter().map(|&s| s / m).collect();
                let unbiased: Vec<T> = ss.iter().map(|&s| s / (m - T::one())).collect();
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean, inv_std, unbiased)
            }
            Mode::Eval => {
                let rm = self.buffers[0].data().to_vec();
                let inv = self.buffers[1]
                    .data()
                    .iter()
                    .map(|&v| T::one() / (v + eps).sqrt())
                    .collect();
                (rm, inv, Vec::new())
            }
        };
        let mut out = Tensor::zeros(x.shape());
        par::for_each_chunk_mut(out.data_mut(), x.item_len(), |i, o| {
            let xi = x.item(i);
            for c in 0..channels {
                let (mu, is, g, b) = (mean[c], inv_std[c], gamma[c], beta[c]);
                for (ov, &v) in o[c * spatial..(c + 1) * spatial]
                    .iter_mut()
                    .zip(&xi[c * spatial..(c + 1) * spatial])
                {
                    *ov = g * ((v - mu) * is) + b;
                }
            }
        });
        Ok((
            out,
            Aux::BatchNorm {
                mean,
                inv_std,
                unbiased_var,
            },
        ))
    }

    fn batchnorm_backward(
        &self,
        x: &Tensor<T>,
        aux: &Aux<T>,
        grad_out: &Tensor<T>,
        channels: usize,
        mode: Mode,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        let Aux::BatchNorm { mean, inv_std, .. } = aux else {
            return Err(NnError::StaleCache);
        };
        let n = x.batch();
        let spatial = x.item_len() / channels;
        let gamma = self.params[0].data();
        // Per-item sums of dy and dy*xhat, reduced in item order.
        let partials = par::map_indices(n, |i| {
            let (xi, gi) = (x.item(i), grad_out.item(i));
            let mut acc = vec![T::zero(); 2 * channels];
            for c in 0..channels {
                let (mu, is) = (mean[c], inv_std[c]);
                let mut sdy = T::zero();
                let mut sdyx = T::zero();
                for (&v, &g) in xi[c * spatial..(c + 1) * spatial]
                    .iter()
                    .zip(&gi[c * spatial..(c + 1) * spatial])
                {
                    sdy = sdy + g;
                    sdyx = sdyx + g * (v - mu) * is;
                }
                acc[c] = sdy;
                acc[channels + c] = sdyx;
            }
            acc
        });
        let sums = sum_partials(2 * channels, &partials);
        let (sum_dy, sum_dy_xhat) = sums.split_at(channels);
        let m = T::lit((n * spatial) as f64);
        let mut gx = Tensor::zeros(x.shape());
        par::for_each_chunk_mut(gx.data_mut(), x.item_len(), |i, gxi| {
            let (xi, gi) = (x.item(i), grad_out.item(i));
            for c in 0..channels {
                let (mu, is, g) = (mean[c], inv_std[c], gamma[c]);
                let range = c * spatial..(c + 1) * spatial;
                match mode {
                    Mode::Train => {
                        let (a, b) = (sum_dy[c] / m, sum_dy_xhat[c] / m);
                        for ((o, &v), &dy) in gxi[range.clone()].iter_mut().zip(&xi[range.clone()]).zip(&gi[range]) {
                            let xhat = (v - mu) * is;
                            *o = g * is * (dy - a - xhat * b);
                        }
                    }
                    Mode::Eval => {
                        for (o, &dy) in gxi[range.clone()].iter_mut().zip(&gi[range]) {
                            *o = g * is * dy;
                        }
                    }
                }
            }
        });
        Ok((
            gx,
            vec![
                Tensor::new(vec![channels], sum_dy_xhat.to_vec())?,
                Tensor::new(vec![channels], sum_dy.to_vec())?,
            ],
        ))
    }
}

/// Dot product with eight interleaved accumulators (fixed order, so results
/// are reproducible while still vectorizing).
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let tail = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .fold(T::zero(), |s, (&x, &y)| s + x * y);
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn hard_swish<T: Scalar>(x: T) -> T {
    let three = T::lit(3.0);
    let six = T::lit(6.0);
    x * (x + three).max(T::zero()).min(six) / six
}

fn hard_swish_grad<T: Scalar>(x: T) -> T {
    let three = T::lit(3.0);
    if x <= -three {
        T::zero()
    } else if x >= three {
        T::one()
    } else {
        (x + x + three) / T::lit(6.0)
    }
}

fn pool_window<T: Scalar>(src: &[T], w: usize, y0: usize, x0: usize, k: usize) -> (usize, T) {
    let mut best_at = y0 * w + x0;
    let mut best = src[best_at];
    for dy in 0..k {
        for dx in 0..k {
            let at = (y0 + dy) * w + x0 + dx;
            if src[at] > best {
                best = src[at];
                best_at = at;
            }
        }
    }
    (best_at, best)
}

/// Geometry shared by the dense and depthwise convolution kernels.
struct ConvGeo {
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    k: usize,
    s: usize,
    p: usize,
}

impl ConvGeo {
    fn new<T: Scalar>(x: &Tensor<T>, out_item: &[usize], k: usize, s: usize, p: usize) -> Self {
        let sh = x.shape();
        Self {
            h: sh[2],
            w: sh[3],
            oh: out_item[1],
            ow: out_item[2],
            k,
            s,
            p,
        }
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_slice<'a, T>(&self, item: &'a [T], c: usize) -> &'a [T] {
        &item[c * self.in_plane()..(c + 1) * self.in_plane()]
    }

    /// Valid output-column range for kernel column `kx`, and the input column
    /// of its first element.
    fn col_range(&self, kx: usize) -> (usize, usize, usize) {
        let lo = if self.p > kx { (self.p - kx).div_ceil(self.s) } else { 0 };
        let last_in = self.w + self.p - 1;
        if last_in < kx {
            return (0, 0, 0);
        }
        let hi = ((last_in - kx) / self.s + 1).min(self.ow);
        if lo >= hi {
            return (0, 0, 0);
        }
        (lo, hi, lo * self.s + kx - self.p)
    }

    fn row_in(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = oy * self.s + ky;
        (iy >= self.p && iy - self.p < self.h).then(|| iy - self.p)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.s == 1 && self.p == 0
    }

    /// Unfolds one input plane into `k*k` rows of `oh*ow` samples; taps that
    /// fall into the zero padding are written as zero.
    fn im2col<T: Scalar>(&self, plane: &[T], cols: &mut [T]) {
        let np = self.out_plane();
        for ky in 0..self.k {
            for kx in 0..self.k {
                let row = &mut cols[(ky * self.k + kx) * np..][..np];
                let (lo, hi, ix0) = self.col_range(kx);
                for oy in 0..self.oh {
                    let orow = &mut row[oy * self.ow..(oy + 1) * self.ow];
                    let Some(iy) = self.row_in(oy, ky) else {
                        orow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    };
                    let irow = &plane[iy * self.w..(iy + 1) * self.w];
                    orow[..lo].iter_mut().for_each(|v| *v = T::zero());
                    orow[hi..].iter_mut().for_each(|v| *v = T::zero());
                    if self.s == 1 {
                        orow[lo..hi].copy_from_slice(&irow[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (o, &v) in orow[lo..hi].iter_mut().zip(irow[ix0..].iter().step_by(self.s)) {
                            *o = v;
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: accumulates rows back onto a plane.
    fn col2im<T: Scalar>(&self, cols: &[T], plane: &mut [T]) {
        let np = self.out_plane();
        for ky in 0..self.k {
            for kx in 0..self.k {
                let row = &cols[(ky * self.k + kx) * np..][..np];
                let (lo, hi, ix0) = self.col_range(kx);
                for oy in 0..self.oh {
                    let Some(iy) = self.row_in(oy, ky) else { continue };
                    let orow = &row[oy * self.ow..(oy + 1) * self.ow];
                    let irow = &mut plane[iy * self.w..(iy + 1) * self.w];
                    if self.s == 1 {
                        axpy(&mut irow[ix0..ix0 + (hi - lo)], T::one(), &orow[lo..hi]);
                    } else {
                        for (d, &v) in irow[ix0..].iter_mut().step_by(self.s).zip(&orow[lo..hi]) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }

    fn im2col_item<T: Scalar>(&self, item: &[T], channels: usize) -> Vec<T> {
        let rows = self.k * self.k * self.out_plane();
        let mut cols = vec![T::zero(); channels * rows];
        for c in 0..channels {
            self.im2col(self.in_slice(item, c), &mut cols[c * rows..(c + 1) * rows]);
        }
        cols
    }

    fn col2im_item<T: Scalar>(&self, cols: &[T], channels: usize) -> Vec<T> {
        let rows = self.k * self.k * self.out_plane();
        let plane = self.in_plane();
        let mut out = vec![T::zero(); channels * plane];
        for c in 0..channels {
            self.col2im(&cols[c * rows..(c + 1) * rows], &mut out[c * plane..(c + 1) * plane]);
        }
        out
    }
}

fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}
