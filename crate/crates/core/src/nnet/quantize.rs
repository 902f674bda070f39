use half::f16;

use super::model::{OcularNet, Precision};

/// Rounds a value to the nearest IEEE-754 binary16 value (ties to even) and
/// widens it back to `f32`.
pub fn round_to_f16(v: f32) -> f32 {
    f16::from_f32(v).to_f32()
}

/// Copy of `net` with every trainable parameter rounded through binary16.
/// BatchNorm running statistics and all arithmetic stay in `f32`; the
/// reported parameter size halves.
pub fn quantize_fp16(net: &OcularNet<f32>) -> OcularNet<f32> {
    let mut q = net.clone();
    for p in q.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = round_to_f16(*v));
    }
    q.precision = Precision::Fp16;
    q
}
