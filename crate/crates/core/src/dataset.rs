//! Class-per-folder dataset ingestion and preprocessing.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{Filter, Image};

const EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    items: Vec<(Image, usize)>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(items: Vec<(Image, usize)>, class_names: Vec<String>) -> Result<Self> {
        if let Some((img, k)) = items.iter().find(|(_, k)| *k >= class_names.len()) {
            return Err(Error::invalid(
                "class index",
                format!("{} labeled {k} but only {} classes", img.source_id(), class_names.len()),
            ));
        }
        Ok(LabeledDataset { items, class_names })
    }

    pub fn items(&self) -> &[(Image, usize)] {
        &self.items
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Images labeled `k`, in dataset order.
    pub fn class_subset(&self, k: usize) -> Result<Vec<&Image>> {
        self.check_class(k)?;
        Ok(self.items.iter().filter(|(_, y)| *y == k).map(|(x, _)| x).collect())
    }

    /// Images not labeled `k`, in dataset order.
    pub fn complement(&self, k: usize) -> Result<Vec<&Image>> {
        self.check_class(k)?;
        Ok(self.items.iter().filter(|(_, y)| *y != k).map(|(x, _)| x).collect())
    }

    fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.class_names.len() {
            return Err(Error::invalid(
                "class index",
                format!("{k} is out of range for {} classes", self.class_names.len()),
            ));
        }
        Ok(())
    }

    /// Applies [`preprocess`] to every image.
    pub fn preprocessed(&self, side: usize) -> Result<LabeledDataset> {
        let items = self
            .items
            .iter()
            .map(|(img, k)| Ok((preprocess(img, side)?, *k)))
            .collect::<Result<_>>()?;
        Ok(LabeledDataset {
            items,
            class_names: self.class_names.clone(),
        })
    }
}

/// Loads `<root>/<class>/<file>.{png,jpg,jpeg}`. Classes are indexed by
/// lexicographic folder name; images are ordered by path. Each image's
/// source id is its path relative to `root`, with `/` separators.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<LabeledDataset> {
    let root = root.as_ref();
    let mut class_dirs = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect::<Vec<_>>();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::EmptyClass(format!("{} has no class folders", root.display())));
    }

    let mut items = Vec::new();
    let mut class_names = Vec::new();
    for (k, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let files: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && has_image_extension(p))
            .collect();
        if files.is_empty() {
            return Err(Error::EmptyClass(dir.display().to_string()));
        }
        for path in files {
            let decoded = image::ImageReader::open(&path)
                .map_err(|e| Error::io(&path, e))?
                .with_guessed_format()
                .map_err(|e| Error::io(&path, e))?
                .decode()
                .map_err(|source| Error::Decode {
                    path: path.clone(),
                    source,
                })?;
            let file = path.file_name().unwrap_or_default().to_string_lossy();
            items.push((Image::from_dynamic(&decoded, format!("{name}/{file}"))?, k));
        }
        class_names.push(name);
    }
    LabeledDataset::new(items, class_names)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    paths.sort();
    Ok(paths)
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Center-crops to the largest square and resamples bilinearly to `side`.
pub fn preprocess(image: &Image, side: usize) -> Result<Image> {
    if side == 0 {
        return Err(Error::invalid("side", "must be at least 1"));
    }
    let square = image.center_crop_square(1)?;
    Ok(square.resize(side, side, Filter::Bilinear))
}
