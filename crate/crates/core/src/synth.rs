//! Synthetic datasets with planted structure and known ground truth.
//!
//! The `blobs` recipes write two class folders, `0_plain` (uniform noise)
//! and `1_blob` (the same noise plus one bright square at a random
//! position), and a `ground_truth.json` mapping each blob image's source id
//! to the square's location.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::backend::tensor::write_atomic;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const PLAIN_CLASS: &str = "0_plain";
pub const BLOB_CLASS: &str = "1_blob";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobRecipe {
    pub images_per_class: usize,
    pub side: usize,
    pub blob_side: usize,
    /// Background pixels are uniform in `[0, background_max]`.
    pub background_max: f32,
    /// Blob pixels are uniform in `[blob_low, blob_high]`.
    pub blob_low: f32,
    pub blob_high: f32,
}

impl BlobRecipe {
    pub fn standard() -> Self {
        BlobRecipe {
            images_per_class: 100,
            side: 72,
            blob_side: 9,
            background_max: 0.6,
            blob_low: 0.92,
            blob_high: 0.98,
        }
    }
}

pub const RECIPES: &[&str] = &["blobs", "blobs-small"];

pub fn recipe(name: &str) -> Result<BlobRecipe> {
    match name {
        "blobs" => Ok(BlobRecipe::standard()),
        "blobs-small" => Ok(BlobRecipe {
            images_per_class: 20,
            ..BlobRecipe::standard()
        }),
        _ => Err(Error::invalid(
            "recipe",
            format!("unknown recipe `{name}` (known: {})", RECIPES.join(", ")),
        )),
    }
}

/// Location of a planted square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobBox {
    pub top: usize,
    pub left: usize,
    pub side: usize,
}

impl BlobBox {
    /// Pixels shared with the square `(top, left, side)`.
    pub fn overlap(&self, top: usize, left: usize, height: usize, width: usize) -> usize {
        let rows = (self.top + self.side).min(top + height).saturating_sub(self.top.max(top));
        let cols = (self.left + self.side).min(left + width).saturating_sub(self.left.max(left));
        rows * cols
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub blobs: BTreeMap<String, BlobBox>,
}

/// One labelled image and, for blob images, the blob's location.
pub struct SynthImage {
    pub file: String,
    pub class: usize,
    pub image: Image,
    pub blob: Option<BlobBox>,
}

pub fn generate(recipe: &BlobRecipe, seed: u64) -> Result<Vec<SynthImage>> {
    if recipe.blob_side == 0 || recipe.blob_side > recipe.side || recipe.images_per_class == 0 {
        return Err(Error::invalid("recipe", "blob must fit inside a non-empty image set"));
    }
    let mut rng = Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * recipe.images_per_class);
    for (class, class_dir) in [PLAIN_CLASS, BLOB_CLASS].into_iter().enumerate() {
        for i in 0..recipe.images_per_class {
            let file = format!("{class_dir}/img_{i:03}.png");
            let blob = (class == 1).then(|| BlobBox {
                top: rng.random_range(0..=recipe.side - recipe.blob_side),
                left: rng.random_range(0..=recipe.side - recipe.blob_side),
                side: recipe.blob_side,
            });
            let image = Image::from_fn(recipe.side, recipe.side, file.clone(), |r, c| {
                let inside = blob.is_some_and(|b| b.overlap(r, c, 1, 1) == 1);
                let v = if inside {
                    rng.random_range(recipe.blob_low..=recipe.blob_high)
                } else {
                    rng.random_range(0.0..=recipe.background_max)
                };
                [v; 3]
            });
            out.push(SynthImage { file, class, image, blob });
        }
    }
    Ok(out)
}

/// Writes the named recipe under `out` and returns its ground truth.
pub fn write_recipe(name: &str, out: &Path, seed: u64) -> Result<GroundTruth> {
    let recipe = recipe(name)?;
    let mut truth = GroundTruth::default();
    for dir in [PLAIN_CLASS, BLOB_CLASS] {
        let path = out.join(dir);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
    }
    for item in generate(&recipe, seed)? {
        let mut bytes = Vec::new();
        item.image
            .to_rgb8()
            .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
        write_atomic(&out.join(&item.file), &bytes)?;
        if let Some(b) = item.blob {
            truth.blobs.insert(item.file, b);
        }
    }
    let mut text = serde_json::to_string_pretty(&truth)?;
    text.push('\n');
    write_atomic(&out.join(GROUND_TRUTH_FILE), text.as_bytes())?;
    Ok(truth)
}

pub fn read_ground_truth(root: &Path) -> Result<GroundTruth> {
    let path = root.join(GROUND_TRUTH_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_counts_shared_pixels() {
        let b = BlobBox { top: 10, left: 10, side: 9 };
        assert_eq!(b.overlap(0, 0, 9, 9), 0);
        assert_eq!(b.overlap(9, 9, 9, 9), 64);
        assert_eq!(b.overlap(18, 18, 9, 9), 1);
        assert_eq!(b.overlap(10, 10, 9, 9), 81);
    }

    #[test]
    fn blobs_are_bright_and_background_is_dim() {
        let items = generate(&recipe("blobs-small").unwrap(), 3).unwrap();
        assert_eq!(items.len(), 40);
        for it in &items {
            for r in 0..72 {
                for c in 0..72 {
                    let v = it.image.get(r, c)[0];
                    match it.blob {
                        Some(b) if b.overlap(r, c, 1, 1) == 1 => assert!(v >= 0.92),
                        _ => assert!(v <= 0.6),
                    }
                }
            }
        }
        assert!(items[..20].iter().all(|i| i.blob.is_none() && i.class == 0));
        assert!(items[20..].iter().all(|i| i.blob.is_some() && i.class == 1));
    }

    #[test]
    fn unknown_recipe() {
        assert!(recipe("stripes").is_err());
    }
}
