use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Converts a `[out, 3, k, k]` RGB stem kernel into a `[out, target, k, k]`
/// kernel. Channel 0 is the mean of the three colour channels; for a
/// two-channel target the mask channel starts at zero.
pub fn adapt_stem<T: Scalar>(rgb: &Tensor<T>, target_channels: usize) -> Result<Tensor<T>, NnError> {
    let &[out, three, kh, kw] = rgb.shape() else {
        return Err(NnError::ShapeMismatch(format!(
            "stem kernel must be 4-d, got {:?}",
            rgb.shape()
        )));
    };
    if three != 3 {
        return Err(NnError::ShapeMismatch(format!(
            "stem kernel must have 3 input channels, got {three}"
        )));
    }
    if !(1..=2).contains(&target_channels) {
        return Err(NnError::ShapeMismatch(format!(
            "stem can be adapted to 1 or 2 channels, not {target_channels}"
        )));
    }
    let kk = kh * kw;
    let third = T::lit(3.0);
    let mut data = vec![T::zero(); out * target_channels * kk];
    for o in 0..out {
        let src = &rgb.data()[o * 3 * kk..(o + 1) * 3 * kk];
        let dst = &mut data[o * target_channels * kk..][..kk];
        for (j, d) in dst.iter_mut().enumerate() {
            *d = (src[j] + src[kk + j] + src[2 * kk + j]) / third;
        }
    }
    Tensor::new(vec![out, target_channels, kh, kw], data)
}
