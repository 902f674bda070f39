use rand::Rng;

use super::layers::{Aux, Layer, LayerSpec, Mode};
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Activations retained by [`Sequential::forward`].
#[derive(Clone, Debug)]
pub struct SeqCache<T> {
    /// `acts[i]` is the input to layer `i`; the last entry is the output.
    pub acts: Vec<Tensor<T>>,
    pub aux: Vec<Aux<T>>,
    pub mode: Mode,
}

impl<T> SeqCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("cache holds the input at least")
    }
}

/// A chain of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn init(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self, NnError> {
        let layers = specs
            .iter()
            .map(|s| Layer::init(s.clone(), rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Checks that `input` (one item, without batch axis) chains through every
    /// layer and returns the output item shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |s, l| l.spec.output_shape(&s))
    }

    pub fn forward(&self, x: Tensor<T>, mode: Mode) -> Result<SeqCache<T>, NnError> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        acts.push(x);
        for layer in &self.layers {
            let (y, a) = layer.forward(acts.last().expect("non-empty"), mode)?;
            acts.push(y);
            aux.push(a);
        }
        Ok(SeqCache { acts, aux, mode })
    }

    /// Output-only forward that drops intermediate activations as it goes.
    pub fn infer(&self, x: Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.layers
            .iter()
            .try_fold(x, |acc, l| l.forward(&acc, Mode::Eval).map(|(y, _)| y))
    }

    /// Backpropagates `grad_out` through the chain. Parameter gradients are
    /// returned layer by layer in parameter order. When `act_grads` is given it
    /// receives the gradient with respect to every cached activation, indexed
    /// like `cache.acts`.
    pub fn backward(
        &self,
        cache: &SeqCache<T>,
        grad_out: Tensor<T>,
        mut act_grads: Option<&mut Vec<Tensor<T>>>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>), NnError> {
        if cache.aux.len() != self.layers.len() {
            return Err(NnError::StaleCache);
        }
        if grad_out.shape() != cache.output().shape() {
            return Err(NnError::ShapeMismatch(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.shape(),
                cache.output().shape()
            )));
        }
        let mut per_layer: Vec<Vec<Tensor<T>>> = vec![Vec::new(); self.layers.len()];
        if let Some(ag) = act_grads.as_deref_mut() {
            ag.clear();
            ag.resize(self.layers.len() + 1, Tensor::default());
            ag[self.layers.len()] = grad_out.clone();
        }
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (gx, pg) = layer.backward(&cache.acts[i], &cache.aux[i], &g, cache.mode)?;
            per_layer[i] = pg;
            if let Some(ag) = act_grads.as_deref_mut() {
                ag[i] = gx.clone();
            }
            g = gx;
        }
        Ok((g, per_layer.into_iter().flatten().collect()))
    }

    pub fn commit_running_stats(&mut self, cache: &SeqCache<T>) {
        if cache.mode != Mode::Train {
            return;
        }
        for (layer, aux) in self.layers.iter_mut().zip(&cache.aux) {
            layer.commit_running_stats(aux);
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params.iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn buffers(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers.iter().flat_map(|l| l.buffers.iter())
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.buffers.iter_mut())
    }

    /// `(name, tensor)` pairs for parameters, named `<prefix>.<layer>.<param>`.
    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.spec
                    .param_names()
                    .iter()
                    .zip(&l.params)
                    .map(move |(n, t)| (format!("{prefix}.{i}.{n}"), t))
            })
            .collect()
    }

    pub fn named_buffers(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.spec
                    .buffer_names()
                    .iter()
                    .zip(&l.buffers)
                    .map(move |(n, t)| (format!("{prefix}.{i}.{n}"), t))
            })
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        Sequential {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    params: l.params.iter().map(Tensor::cast).collect(),
                    buffers: l.buffers.iter().map(Tensor::cast).collect(),
                })
                .collect(),
        }
    }
}
