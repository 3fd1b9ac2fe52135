//! Grad-CAM saliency maps.

use crate::backend::{FeatureMapBundle, ModelBackend};
use crate::error::{Error, Result};
use crate::image::{resize_plane, Filter, Image};

/// Non-negative pixel-importance map aligned with its source image, scaled so
/// the maximum is 1 (or all zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "{} saliency values for a {height}x{width} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("saliency", "values must be finite and non-negative"));
        }
        Ok(SaliencyMap { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Grad-CAM for class `k` at `layer_id`, upsampled to the image size.
pub fn gradcam(
    image: &Image,
    k: usize,
    layer_id: &str,
    backend: &dyn ModelBackend,
) -> Result<SaliencyMap> {
    let bundle = backend.feature_maps_and_gradients(image, k, layer_id)?;
    gradcam_from_bundle(&bundle, image.height(), image.width())
}

/// Channel weights are spatial means of the gradients; the map is
/// `ReLU(Σ_c w_c · A_c)`, bilinearly upsampled to `height x width`, then
/// divided by its maximum when that maximum is positive.
pub fn gradcam_from_bundle(
    bundle: &FeatureMapBundle,
    height: usize,
    width: usize,
) -> Result<SaliencyMap> {
    let plane = bundle.height * bundle.width;
    let mut cam = vec![0.0; plane];
    for ch in 0..bundle.channels {
        let grads = &bundle.grads[ch * plane..(ch + 1) * plane];
        let weight = grads.iter().sum::<f64>() / plane as f64;
        if weight == 0.0 {
            continue;
        }
        let maps = &bundle.maps[ch * plane..(ch + 1) * plane];
        for (acc, m) in cam.iter_mut().zip(maps) {
            *acc += weight * m;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut up = resize_plane(&cam, bundle.height, bundle.width, height, width, Filter::Bilinear);
    // Bilinear weights are non-negative, but keep rounding noise out.
    up.iter_mut().for_each(|v| *v = v.max(0.0));
    let max = up.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        up.iter_mut().for_each(|v| *v /= max);
    } else {
        up.iter_mut().for_each(|v| *v = 0.0);
    }
    SaliencyMap::new(height, width, up)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{AnalyticBackend, AnalyticSpec, ConvKernel};

    fn bundle(shape: [usize; 3], maps: Vec<f64>, grads: Vec<f64>) -> FeatureMapBundle {
        FeatureMapBundle::new(shape, maps, grads).unwrap()
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        let b = bundle([1, 2, 2], vec![2.0, 0.0, 0.0, 0.0], vec![1.0; 4]);
        let s = gradcam_from_bundle(&b, 2, 2).unwrap();
        assert_eq!(s.values(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_gradients_give_zero_map() {
        let b = bundle([2, 3, 3], vec![1.0; 18], vec![0.0; 18]);
        let s = gradcam_from_bundle(&b, 6, 6).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_combination_gives_zero_map() {
        let b = bundle([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], vec![-1.0; 4]);
        assert_eq!(gradcam_from_bundle(&b, 2, 2).unwrap().max(), 0.0);
    }

    #[test]
    fn positive_gradient_scaling_is_invisible() {
        let maps = vec![0.5, 1.0, 0.0, 2.0, 1.5, 0.25, 0.0, 3.0];
        let grads = vec![1.0, 2.0, -1.0, 0.5, -0.5, 0.25, 1.0, 1.0];
        let a = gradcam_from_bundle(&bundle([2, 2, 2], maps.clone(), grads.clone()), 5, 5).unwrap();
        let scaled = grads.iter().map(|g| g * 7.5).collect();
        let b = gradcam_from_bundle(&bundle([2, 2, 2], maps, scaled), 5, 5).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_channel_sum_logit_is_normalized_relu_map() {
        let backend = AnalyticBackend::new(AnalyticSpec {
            input_side: 6,
            kernels: vec![ConvKernel::box_detector(3, 0.2)],
            pool: 1,
            head_weights: vec![vec![1.0; 36], vec![-1.0; 36]],
            head_bias: vec![0.0, 0.0],
        })
        .unwrap();
        let img = Image::from_fn(6, 6, "x", |r, c| [((r * 6 + c) % 5) as f32 / 4.0; 3]);
        let s = gradcam(&img, 0, "conv", &backend).unwrap();
        let maps = backend.feature_maps(&img).unwrap();
        let max = maps.iter().copied().fold(0.0, f64::max);
        for (v, m) in s.values().iter().zip(&maps) {
            assert!((v - m / max).abs() < 1e-12);
        }
        assert_eq!((s.height(), s.width()), (6, 6));
    }
}
