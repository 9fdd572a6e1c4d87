//! On-disk datasets: an `index.json` listing NIfTI-1 image/label pairs
//! by paths relative to the index.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::Case;
use crate::volume::{read_nifti1, write_nifti1, NiftiVolume};

pub const DATASET_FORMAT: &str = "reco-kd-dataset/1";
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    pub image: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub format: String,
    pub cases: Vec<DatasetEntry>,
    /// Free-form generator settings, kept for provenance.
    #[serde(default)]
    pub generator: serde_json::Value,
}

/// Accepts either a dataset directory or its index file.
pub fn index_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(INDEX_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Writes `images/<id>.nii`, `labels/<id>.nii` and the index under `dir`.
pub fn write_dataset(dir: &Path, cases: &[Case], generator: serde_json::Value) -> Result<DatasetIndex> {
    for sub in ["images", "labels"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut entries = Vec::with_capacity(cases.len());
    for c in cases {
        let image = format!("images/{}.nii", c.id);
        let label = format!("labels/{}.nii", c.id);
        write_nifti1(&NiftiVolume::Image(c.image.clone()), dir.join(&image))?;
        write_nifti1(&NiftiVolume::Labels(c.labels.clone()), dir.join(&label))?;
        entries.push(DatasetEntry {
            id: c.id.clone(),
            image,
            label,
        });
    }
    let index = DatasetIndex {
        format: DATASET_FORMAT.into(),
        cases: entries,
        generator,
    };
    let p = dir.join(INDEX_FILE);
    fs::write(&p, serde_json::to_string_pretty(&index)? + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(index)
}

pub fn read_index(path: &Path) -> Result<DatasetIndex> {
    let p = index_path(path);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    if index.format != DATASET_FORMAT {
        return Err(Error::InvalidData(format!("{}: unknown dataset format {:?}", p.display(), index.format)));
    }
    Ok(index)
}

/// Files referenced by a dataset, index first.
pub fn dataset_files(path: &Path) -> Result<Vec<PathBuf>> {
    let p = index_path(path);
    let index = read_index(&p)?;
    let root = p.parent().unwrap_or(Path::new("."));
    let mut files = vec![p.clone()];
    for e in &index.cases {
        files.push(root.join(&e.image));
        files.push(root.join(&e.label));
    }
    Ok(files)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Case>> {
    let p = index_path(path);
    let index = read_index(&p)?;
    let root = p.parent().unwrap_or(Path::new("."));
    index
        .cases
        .iter()
        .map(|e| {
            let image = match read_nifti1(root.join(&e.image))? {
                NiftiVolume::Image(v) => v,
                NiftiVolume::Labels(_) => {
                    return Err(Error::InvalidData(format!("{}: expected an image volume", e.image)))
                }
            };
            let labels = match read_nifti1(root.join(&e.label))? {
                NiftiVolume::Labels(l) => l,
                NiftiVolume::Image(_) => {
                    return Err(Error::InvalidData(format!("{}: expected a label volume", e.label)))
                }
            };
            if image.shape() != labels.shape() {
                return Err(Error::InvalidData(format!(
                    "case {}: image {:?} and labels {:?} differ in shape",
                    e.id,
                    image.shape(),
                    labels.shape()
                )));
            }
            Ok(Case {
                id: e.id.clone(),
                image,
                labels,
            })
        })
        .collect()
}
