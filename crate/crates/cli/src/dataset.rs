use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tracing::warn;

use crate::io::has_image_extension;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub id: String,
    pub image: PathBuf,
    pub gt: Option<PathBuf>,
}

/// Entries sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Image files of `dir` keyed by file stem. A stem seen twice keeps the
/// first path in name order and warns.
pub fn files_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_image_extension(p))
        .collect();
    paths.sort();
    let mut out = BTreeMap::new();
    for p in paths {
        let Some(stem) = p.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            warn!(path = %p.display(), "skipping file with a non-UTF-8 name");
            continue;
        };
        if out.contains_key(&stem) {
            warn!(path = %p.display(), "duplicate id, keeping the first file");
            continue;
        }
        out.insert(stem, p);
    }
    Ok(out)
}

/// Pairs images with ground truth by file stem.
pub fn load_dataset(images_dir: &Path, gt_dir: Option<&Path>) -> Result<DatasetManifest> {
    let images = files_by_stem(images_dir)?;
    if images.is_empty() {
        bail!("no images found in {}", images_dir.display());
    }
    let gts = match gt_dir {
        Some(d) => files_by_stem(d)?,
        None => BTreeMap::new(),
    };
    for id in gts.keys().filter(|id| !images.contains_key(*id)) {
        warn!(%id, "ground truth has no matching image, ignored");
    }
    let entries = images
        .into_iter()
        .map(|(id, image)| DatasetEntry {
            gt: gts.get(&id).cloned(),
            id,
            image,
        })
        .collect();
    Ok(DatasetManifest { entries })
}
