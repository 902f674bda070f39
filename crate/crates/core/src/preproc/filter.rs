use super::image::GrayImage;

/// Normalized 1-D Gaussian kernel truncated at 3 sigma.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable convolution with a symmetric kernel and edge clamping.
pub fn separable(image: &GrayImage, kernel: &[f64]) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * f64::from(image.get(clamp(x as isize + k as isize - r, w), y)))
                .sum();
        }
    }
    GrayImage::from_fn(w, h, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &kv)| kv * tmp[clamp(y as isize + k as isize - r, h) * w + x])
            .sum::<f64>() as f32
    })
}

pub fn gaussian_blur(image: &GrayImage, sigma: f64) -> GrayImage {
    separable(image, &gaussian_kernel(sigma))
}

/// 3x3 mean filter with edge clamping.
pub fn box_blur3(image: &GrayImage) -> GrayImage {
    separable(image, &[1.0 / 3.0; 3])
}
