//! Saliency-ranked square patches.

use crate::backend::ModelBackend;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::saliency::{gradcam, SaliencyMap};

/// One `side x side` window of a source image.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Image,
    /// Grid position `(row, col)` in the `n_s x n_s` slicing.
    pub origin: (usize, usize),
    /// Pixel coordinates of the top-left corner in the source image.
    pub top_left: (usize, usize),
    pub source_id: String,
    /// Aggregated importance ψ; zero until scored.
    pub score: f64,
}

impl Patch {
    pub fn side(&self) -> usize {
        self.pixels.height()
    }
}

/// Binary mask the size of the source image: ones inside one patch window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchMask {
    height: usize,
    width: usize,
    values: Vec<bool>,
}

impl PatchMask {
    /// `side x side` block of ones at `(top, left)`.
    pub fn block(height: usize, width: usize, top: usize, left: usize, side: usize) -> Result<Self> {
        if top + side > height || left + side > width || side == 0 {
            return Err(Error::Shape(format!(
                "{side}x{side} block at ({top},{left}) outside {height}x{width}"
            )));
        }
        let mut values = vec![false; height * width];
        for r in top..top + side {
            values[r * width + left..r * width + left + side].fill(true);
        }
        Ok(PatchMask { height, width, values })
    }

    pub fn from_values(height: usize, width: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!("{} mask values for {height}x{width}", values.len())));
        }
        Ok(PatchMask { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Cuts `image` into `n_s x n_s` equal squares in row-major order, after
/// center-cropping to the largest square whose side is a multiple of `n_s`.
/// Masks are sized to the uncropped image.
pub fn slice(image: &Image, n_s: usize) -> Result<Vec<(Patch, PatchMask)>> {
    let min_side = image.height().min(image.width());
    if n_s == 0 || n_s > min_side {
        return Err(Error::invalid(
            "n_s",
            format!("{n_s} slices do not fit a {}x{} image", image.height(), image.width()),
        ));
    }
    let cropped_side = min_side / n_s * n_s;
    let side = cropped_side / n_s;
    let off_r = (image.height() - cropped_side) / 2;
    let off_c = (image.width() - cropped_side) / 2;
    let mut out = Vec::with_capacity(n_s * n_s);
    for gr in 0..n_s {
        for gc in 0..n_s {
            let (top, left) = (off_r + gr * side, off_c + gc * side);
            let patch = Patch {
                pixels: image.crop(top, left, side, side)?,
                origin: (gr, gc),
                top_left: (top, left),
                source_id: image.source_id().to_string(),
                score: 0.0,
            };
            let mask = PatchMask::block(image.height(), image.width(), top, left, side)?;
            out.push((patch, mask));
        }
    }
    Ok(out)
}

/// ψ = Σ(S⊙g) / Σ H(S⊙g) with H(x) = 1 iff x > 0; zero when no masked pixel
/// is positive.
pub fn patch_importance(saliency: &SaliencyMap, mask: &PatchMask) -> Result<f64> {
    if saliency.height() != mask.height() || saliency.width() != mask.width() {
        return Err(Error::Shape(format!(
            "saliency {}x{} vs mask {}x{}",
            saliency.height(),
            saliency.width(),
            mask.height(),
            mask.width()
        )));
    }
    let (sum, count) = saliency
        .values()
        .iter()
        .zip(mask.values())
        .filter(|(&s, &m)| m && s > 0.0)
        .fold((0.0, 0usize), |(sum, n), (s, _)| (sum + s, n + 1));
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Number of patches kept out of `n` at `n_p` percent (at least one).
pub fn top_count(n: usize, n_p: f64) -> usize {
    // Multiply before dividing so whole percentages of whole counts stay exact.
    let exact = n_p * n as f64 / 100.0;
    ((exact - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Keeps the top `n_p` percent by ψ. Ties go to the smaller row-major
/// origin; output is sorted by descending ψ, then origin.
pub fn select_top(patches: Vec<Patch>, n_p: f64) -> Result<Vec<Patch>> {
    if !(n_p > 0.0 && n_p <= 100.0) {
        return Err(Error::invalid("n_p", format!("{n_p} is outside (0, 100]")));
    }
    if patches.is_empty() {
        return Err(Error::invalid("patches", "nothing to select from"));
    }
    let keep = top_count(patches.len(), n_p);
    let mut patches = patches;
    patches.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.origin.cmp(&b.origin)));
    patches.truncate(keep);
    Ok(patches)
}

/// Step A over a whole class: Grad-CAM, slicing, scoring and per-image
/// selection, concatenated in input order.
pub fn extract_patches(
    images: &[&Image],
    k: usize,
    backend: &dyn ModelBackend,
    n_s: usize,
    n_p: f64,
    layer_gradcam: &str,
) -> Result<Vec<Patch>> {
    if images.is_empty() {
        return Err(Error::EmptyClass(format!("class {k} has no images")));
    }
    let mut out = Vec::new();
    for image in images {
        let saliency = gradcam(image, k, layer_gradcam, backend)?;
        let scored = slice(image, n_s)?
            .into_iter()
            .map(|(mut patch, mask)| {
                patch.score = patch_importance(&saliency, &mask)?;
                Ok(patch)
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(select_top(scored, n_p)?);
    }
    Ok(out)
}
