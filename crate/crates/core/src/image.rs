//! RGB image grid with values in `[0, 1]` and the resampling kernels shared
//! by preprocessing, Grad-CAM upsampling and the ACE baseline.

use std::fmt;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Three-channel image stored row-major, channels interleaved.
#[derive(Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    source_id: String,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("source_id", &self.source_id)
            .finish_non_exhaustive()
    }
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {height}x{width}")));
        }
        if pixels.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{CHANNELS} image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("pixel value", format!("{v} is outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            pixels,
            source_id: source_id.into(),
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3], source_id: impl Into<String>) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        let rgb = rgb.map(|v| v.clamp(0.0, 1.0));
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Image {
            height,
            width,
            pixels,
            source_id: source_id.into(),
        }
    }

    /// Builds an image from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        source_id: impl Into<String>,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Self {
        assert!(height > 0 && width > 0, "image must be non-empty");
        let mut pixels = Vec::with_capacity(height * width * CHANNELS);
        for r in 0..height {
            for c in 0..width {
                pixels.extend(f(r, c).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Image {
            height,
            width,
            pixels,
            source_id: source_id.into(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn with_source_id(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Channel mean at one pixel.
    #[inline]
    pub fn intensity(&self, row: usize, col: usize) -> f64 {
        let [r, g, b] = self.get(row, col);
        (r as f64 + g as f64 + b as f64) / 3.0
    }

    /// Channel-mean plane, row-major.
    pub fn intensity_plane(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(CHANNELS)
            .map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / 3.0)
            .collect()
    }

    /// Copies the `height x width` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{} image",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(height * width * CHANNELS);
        for r in top..top + height {
            let start = (r * self.width + left) * CHANNELS;
            pixels.extend_from_slice(&self.pixels[start..start + width * CHANNELS]);
        }
        Ok(Image {
            height,
            width,
            pixels,
            source_id: self.source_id.clone(),
        })
    }

    /// Largest centered square, trimmed further to a multiple of `multiple`.
    pub fn center_crop_square(&self, multiple: usize) -> Result<Image> {
        let multiple = multiple.max(1);
        let side = self.height.min(self.width) / multiple * multiple;
        if side == 0 {
            return Err(Error::Shape(format!(
                "{}x{} image is smaller than {multiple}",
                self.height, self.width
            )));
        }
        if side == self.height && side == self.width {
            return Ok(self.clone());
        }
        self.crop((self.height - side) / 2, (self.width - side) / 2, side, side)
    }

    /// Splits into three row-major planes.
    pub fn planes(&self) -> [Vec<f64>; 3] {
        let mut planes: [Vec<f64>; 3] = Default::default();
        for p in planes.iter_mut() {
            p.reserve(self.height * self.width);
        }
        for px in self.pixels.chunks_exact(CHANNELS) {
            for (plane, &v) in planes.iter_mut().zip(px) {
                plane.push(v as f64);
            }
        }
        planes
    }

    /// Reassembles planes; values are clamped to `[0, 1]`.
    pub fn from_planes(
        height: usize,
        width: usize,
        planes: &[Vec<f64>; 3],
        source_id: impl Into<String>,
    ) -> Self {
        let mut pixels = Vec::with_capacity(height * width * CHANNELS);
        for i in 0..height * width {
            for plane in planes {
                pixels.push((plane[i] as f32).clamp(0.0, 1.0));
            }
        }
        Image {
            height,
            width,
            pixels,
            source_id: source_id.into(),
        }
    }

    pub fn resize(&self, height: usize, width: usize, filter: Filter) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let planes = self
            .planes()
            .map(|p| resize_plane(&p, self.height, self.width, height, width, filter));
        Image::from_planes(height, width, &planes, self.source_id.clone())
    }

    pub fn from_dynamic(img: &image::DynamicImage, source_id: impl Into<String>) -> Result<Self> {
        let rgb = img.to_rgb32f();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Image::new(h as usize, w as usize, pixels, source_id)
    }

    /// 8-bit RGB buffer for encoding.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }
}

/// Interpolation kernel for [`resize_plane`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filter {
    Bilinear,
    /// Keys cubic convolution with `a = -0.5`.
    Bicubic,
}

/// Resamples a row-major plane using pixel-center alignment and clamped edges.
pub fn resize_plane(
    src: &[f64],
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    filter: Filter,
) -> Vec<f64> {
    assert_eq!(src.len(), in_h * in_w);
    if in_h == out_h && in_w == out_w {
        return src.to_vec();
    }
    // Separable: rows first into an out_h x in_w buffer, then columns.
    let row_taps = taps(in_h, out_h, filter);
    let col_taps = taps(in_w, out_w, filter);
    let mut tmp = vec![0.0; out_h * in_w];
    for (r, t) in row_taps.iter().enumerate() {
        for c in 0..in_w {
            tmp[r * in_w + c] = t.iter().map(|&(i, w)| w * src[i * in_w + c]).sum();
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for r in 0..out_h {
        for (c, t) in col_taps.iter().enumerate() {
            out[r * out_w + c] = t.iter().map(|&(i, w)| w * tmp[r * in_w + i]).sum();
        }
    }
    out
}

/// Source indices and weights for each output coordinate along one axis.
fn taps(n_in: usize, n_out: usize, filter: Filter) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    let last = n_in as isize - 1;
    let clamp = |i: isize| i.clamp(0, last) as usize;
    (0..n_out)
        .map(|o| {
            let x = (o as f64 + 0.5) * scale - 0.5;
            match filter {
                Filter::Bilinear => {
                    let x = x.clamp(0.0, last as f64);
                    let x0 = x.floor() as isize;
                    let t = x - x0 as f64;
                    vec![(clamp(x0), 1.0 - t), (clamp(x0 + 1), t)]
                }
                Filter::Bicubic => {
                    let x0 = x.floor() as isize;
                    let t = x - x0 as f64;
                    (-1..=2)
                        .map(|k| (clamp(x0 + k), cubic_weight(k as f64 - t)))
                        .collect()
                }
            }
        })
        .collect()
}

fn cubic_weight(d: f64) -> f64 {
    const A: f64 = -0.5;
    let d = d.abs();
    if d <= 1.0 {
        ((A + 2.0) * d - (A + 3.0)) * d * d + 1.0
    } else if d < 2.0 {
        ((A * d - 5.0 * A) * d + 8.0 * A) * d - 4.0 * A
    } else {
        0.0
    }
}
