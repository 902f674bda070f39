use super::EvalError;
use crate::dataman::AgeGroup;
use crate::nnet::{Mode, NnError, OcularNet, Tensor};
use crate::preproc::{resize, GrayImage};

/// Grad-CAM over `[K, H, W]` activations and their gradients:
/// `ReLU(sum_k mean(grad_k) * act_k)`, returned as `H * W` values.
pub fn grad_cam(activations: &[f64], gradients: &[f64], channels: usize, height: usize, width: usize) -> Vec<f64> {
    let hw = height * width;
    let mut map = vec![0.0; hw];
    for k in 0..channels {
        let g = &gradients[k * hw..(k + 1) * hw];
        let w = g.iter().sum::<f64>() / hw as f64;
        for (m, a) in map.iter_mut().zip(&activations[k * hw..(k + 1) * hw]) {
            *m += w * a;
        }
    }
    map.iter_mut().for_each(|v| *v = v.max(0.0));
    map
}

/// Class-activation heatmap for `target` from the last convolutional
/// feature maps, upsampled to the input size and min-max normalized.
pub fn saliency_map(net: &OcularNet<f32>, input: &Tensor, target: AgeGroup) -> Result<GrayImage, EvalError> {
    let fmap = net.topology.feature_map_index().ok_or(EvalError::NoConvLayer)?;
    let x64: Tensor<f64> = input.cast();
    let x64 = if x64.shape().len() == 3 {
        let s = x64.shape().to_vec();
        x64.reshape(&[1, s[0], s[1], s[2]])?
    } else {
        x64
    };
    if x64.batch() != 1 {
        return Err(NnError::ShapeMismatch("saliency takes a single image".into()).into());
    }
    let (in_h, in_w) = (x64.shape()[2], x64.shape()[3]);
    let net64: OcularNet<f64> = net.cast();
    let (out, cache) = net64.forward(x64, Mode::Eval)?;
    let mut d_logits = Tensor::zeros(out.logits.shape());
    d_logits.data_mut()[target.index()] = 1.0;
    let (_, act_grads) = net64.backward_full(&cache, d_logits, Tensor::zeros(out.ages.shape()))?;
    let acts = &cache.backbone.acts[fmap];
    let (_, k, h, w) = acts.dims4()?;
    let cam = grad_cam(acts.data(), act_grads[fmap].data(), k, h, w);

    let peak = cam.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Ok(GrayImage::filled(in_w, in_h, 0.0));
    }
    let small = GrayImage::from_fn(w, h, |x, y| (cam[y * w + x] / peak) as f32);
    let up = resize(&small, in_w, in_h);
    let (lo, hi) = up
        .pixels()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(if hi > lo {
        up.map(|v| (v - lo) / (hi - lo))
    } else {
        GrayImage::filled(in_w, in_h, 0.0)
    })
}
