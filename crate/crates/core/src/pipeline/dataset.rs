//! Dataset ingestion: `<root>/{train,val|validation,test}/<id>.png` with a
//! `<id>_mask.png` next to each image. Validation images are folded into the
//! training split.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::io::{read_mask, read_rgb};
use crate::imaging::{Augmentation, BinaryMask, RgbImage};

const MASK_SUFFIX: &str = "_mask";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

/// A file that could not be paired.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Sorted by split, then id.
    pub entries: Vec<ManifestEntry>,
    pub rejected: Vec<Rejection>,
    /// Variants produced per pair by augmentation.
    pub augmentation: usize,
}

impl DatasetManifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn augmented_count(&self, split: Split) -> usize {
        self.count(split) * self.augmentation
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Reads every pair into memory; failures name the offending image.
    pub fn load(&self) -> Result<Dataset> {
        let load = |e: &ManifestEntry| -> Result<Record> {
            let wrap = |err| Error::stage("load", e.id.clone(), err);
            let image = read_rgb(&e.image).map_err(wrap)?;
            let mask = read_mask(&e.mask).map_err(wrap)?;
            if (image.width(), image.height()) != (mask.width(), mask.height()) {
                return Err(wrap(Error::Data(format!(
                    "image is {}x{} but mask is {}x{}",
                    image.width(),
                    image.height(),
                    mask.width(),
                    mask.height()
                ))));
            }
            Ok(Record {
                id: e.id.clone(),
                image,
                mask,
            })
        };
        let train = self.split(Split::Train).collect::<Vec<_>>().par_iter().map(|e| load(e)).collect::<Result<_>>()?;
        let test = self.split(Split::Test).collect::<Vec<_>>().par_iter().map(|e| load(e)).collect::<Result<_>>()?;
        Ok(Dataset { train, test })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: String,
    pub image: RgbImage,
    pub mask: BinaryMask,
}

/// In-memory image/mask pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Record>,
    pub test: Vec<Record>,
}

fn split_of(dir: &str) -> Option<Split> {
    match dir {
        "train" | "training" => Some(Split::Train),
        "val" | "validation" => Some(Split::Train),
        "test" | "testing" => Some(Split::Test),
        _ => None,
    }
}

/// Pairs images with masks under `root`. Unpaired files are listed in
/// [`DatasetManifest::rejected`]; an id present in more than one split, or
/// no pairs at all, is an error.
pub fn ingest(root: &Path) -> Result<DatasetManifest> {
    let mut subdirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_dir() && split_of(&name).is_some() {
            subdirs.push((name, entry.path()));
        }
    }
    subdirs.sort();

    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    let mut seen: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (name, dir) in &subdirs {
        let split = split_of(name).expect("filtered above");
        let mut images = BTreeMap::new();
        let mut masks = BTreeMap::new();
        for f in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = f.map_err(|e| Error::io(dir, e))?.path();
            if !path.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
                continue;
            }
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            match stem.strip_suffix(MASK_SUFFIX) {
                Some(id) => masks.insert(id.to_string(), path),
                None => images.insert(stem, path),
            };
        }
        for (id, image) in images {
            match masks.remove(&id) {
                Some(mask) => {
                    seen.entry(id.clone()).or_default().push(name.clone());
                    entries.push(ManifestEntry { id, image, mask, split });
                }
                None => rejected.push(Rejection {
                    path: image,
                    reason: "image has no mask".into(),
                }),
            }
        }
        rejected.extend(masks.into_values().map(|path| Rejection {
            path,
            reason: "mask has no image".into(),
        }));
    }

    let ambiguous: Vec<String> = seen
        .iter()
        .filter(|(_, dirs)| dirs.len() > 1)
        .map(|(id, dirs)| format!("{id} ({})", dirs.join(", ")))
        .collect();
    if !ambiguous.is_empty() {
        return Err(Error::Data(format!(
            "ids appear in more than one split: {}",
            ambiguous.join("; ")
        )));
    }
    if entries.is_empty() {
        return Err(Error::Data(format!("no image/mask pairs found under {}", root.display())));
    }
    for r in &rejected {
        log::warn!("rejected {}: {}", r.path.display(), r.reason);
    }
    entries.sort_by(|a, b| (a.split, &a.id).cmp(&(b.split, &b.id)));
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
        rejected,
        augmentation: Augmentation::ALL.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(path: &Path) {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, b"").unwrap();
    }

    #[test]
    fn pairs_folds_validation_and_reports_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path();
        for id in ["a", "b"] {
            touch(&r.join(format!("train/{id}.png")));
            touch(&r.join(format!("train/{id}_mask.png")));
        }
        touch(&r.join("validation/v.png"));
        touch(&r.join("validation/v_mask.png"));
        touch(&r.join("test/t.png"));
        touch(&r.join("test/t_mask.png"));
        touch(&r.join("test/orphan.png"));
        touch(&r.join("test/lonely_mask.png"));
        touch(&r.join("test/notes.txt"));
        let m = ingest(r).unwrap();
        assert_eq!(m.count(Split::Train), 3);
        assert_eq!(m.count(Split::Test), 1);
        assert_eq!(m.augmented_count(Split::Train), 18);
        assert_eq!(m.rejected.len(), 2);
        let ids: Vec<&str> = m.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "v", "t"]);
    }

    #[test]
    fn empty_and_ambiguous_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest(dir.path()), Err(Error::Data(_))));
        for split in ["train", "test"] {
            touch(&dir.path().join(format!("{split}/x.png")));
            touch(&dir.path().join(format!("{split}/x_mask.png")));
        }
        let err = ingest(dir.path()).unwrap_err().to_string();
        assert!(err.contains("x (test, train)"), "{err}");
    }
}
