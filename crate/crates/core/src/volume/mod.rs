//! Image and label volumes, plus the NIfTI-1 subset, synthetic phantoms
//! and voxel statistics built on them.

mod nifti;
mod phantom;
mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use nifti::{decode_nifti1, encode_nifti1, read_nifti1, write_nifti1, Endian, NiftiVolume, LABEL_INTENT};
pub use phantom::{generate_phantom, ClassSpec, PhantomSpec, ShapeKind};
pub use stats::{class_stats, class_stats_many, ClassCount, ClassStats, ForegroundRatio};

/// Spatial extent `(D, H, W)`.
pub type Shape3 = [usize; 3];

pub fn voxel_count(shape: Shape3) -> usize {
    shape.iter().product()
}

/// Multi-modality intensity volume, stored `[M, D, H, W]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    shape: Shape3,
    modalities: usize,
    data: Vec<f64>,
    spacing: [f64; 3],
}

impl ImageVolume {
    pub fn new(shape: Shape3, modalities: usize, data: Vec<f64>, spacing: [f64; 3]) -> Result<Self> {
        if modalities == 0 || shape.contains(&0) {
            return Err(Error::InvalidData(format!(
                "image needs positive extents, got {shape:?} x {modalities}"
            )));
        }
        if data.len() != modalities * voxel_count(shape) {
            return Err(Error::InvalidData(format!(
                "image {shape:?} x {modalities} needs {} values, got {}",
                modalities * voxel_count(shape),
                data.len()
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidData(format!("spacing must be positive, got {spacing:?}")));
        }
        Ok(Self {
            shape,
            modalities,
            data,
            spacing,
        })
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn modalities(&self) -> usize {
        self.modalities
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// As a `[1, M, D, H, W]` constant tensor.
    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.shape;
        Tensor::new(&[1, self.modalities, d, h, w], self.data.clone()).expect("validated at construction")
    }

    /// Sub-volume starting at `origin` with extent `size`.
    pub fn crop(&self, origin: Shape3, size: Shape3) -> Result<Self> {
        check_crop(self.shape, origin, size)?;
        let mut data = Vec::with_capacity(self.modalities * voxel_count(size));
        for m in 0..self.modalities {
            let base = m * voxel_count(self.shape);
            crop_into(&self.data[base..base + voxel_count(self.shape)], self.shape, origin, size, &mut data);
        }
        Self::new(size, self.modalities, data, self.spacing)
    }
}

fn check_crop(shape: Shape3, origin: Shape3, size: Shape3) -> Result<()> {
    for i in 0..3 {
        if size[i] == 0 || origin[i] + size[i] > shape[i] {
            return Err(Error::Geometry(format!(
                "crop {size:?} at {origin:?} exceeds volume {shape:?}"
            )));
        }
    }
    Ok(())
}

fn crop_into<T: Copy>(src: &[T], shape: Shape3, origin: Shape3, size: Shape3, out: &mut Vec<T>) {
    for z in 0..size[0] {
        for y in 0..size[1] {
            let start = ((origin[0] + z) * shape[1] + origin[1] + y) * shape[2] + origin[2];
            out.extend_from_slice(&src[start..start + size[2]]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Exclusive,
    MultiLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelData {
    /// One class id per voxel; 0 is background.
    Exclusive(Vec<u16>),
    /// One binary grid per foreground class `1..=R`; grids may overlap.
    MultiLabel(Vec<Vec<u8>>),
}

/// Class labels over a `(D, H, W)` grid with `R` foreground classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    shape: Shape3,
    num_foreground: usize,
    data: LabelData,
    spacing: [f64; 3],
}

impl LabelVolume {
    pub fn exclusive(shape: Shape3, num_foreground: usize, ids: Vec<u16>) -> Result<Self> {
        if ids.len() != voxel_count(shape) || shape.contains(&0) {
            return Err(Error::InvalidData(format!(
                "label grid {shape:?} needs {} ids, got {}",
                voxel_count(shape),
                ids.len()
            )));
        }
        if let Some((v, &id)) = ids.iter().enumerate().find(|(_, &id)| id as usize > num_foreground) {
            return Err(Error::InvalidData(format!(
                "class id {id} at voxel {v} exceeds R = {num_foreground}"
            )));
        }
        Ok(Self {
            shape,
            num_foreground,
            data: LabelData::Exclusive(ids),
            spacing: [1.0; 3],
        })
    }

    pub fn multi_label(shape: Shape3, grids: Vec<Vec<u8>>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidData(format!("empty label grid {shape:?}")));
        }
        for (r, g) in grids.iter().enumerate() {
            if g.len() != voxel_count(shape) {
                return Err(Error::InvalidData(format!(
                    "grid {} has {} voxels, expected {}",
                    r + 1,
                    g.len(),
                    voxel_count(shape)
                )));
            }
            if g.iter().any(|&v| v > 1) {
                return Err(Error::InvalidData(format!("grid {} is not binary", r + 1)));
            }
        }
        Ok(Self {
            shape,
            num_foreground: grids.len(),
            data: LabelData::MultiLabel(grids),
            spacing: [1.0; 3],
        })
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidData(format!("spacing must be positive, got {spacing:?}")));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> usize {
        voxel_count(self.shape)
    }

    /// `R`, the number of foreground classes.
    pub fn num_foreground(&self) -> usize {
        self.num_foreground
    }

    /// `R + 1`, counting background.
    pub fn num_classes(&self) -> usize {
        self.num_foreground + 1
    }

    pub fn mode(&self) -> LabelMode {
        match self.data {
            LabelData::Exclusive(_) => LabelMode::Exclusive,
            LabelData::MultiLabel(_) => LabelMode::MultiLabel,
        }
    }

    pub fn data(&self) -> &LabelData {
        &self.data
    }

    /// Class ids for exclusive volumes.
    pub fn ids(&self) -> Option<&[u16]> {
        match &self.data {
            LabelData::Exclusive(ids) => Some(ids),
            LabelData::MultiLabel(_) => None,
        }
    }

    /// Binary membership grid for class `r` (0 = background). In
    /// multi-label mode background is the complement of the union of
    /// foreground grids.
    pub fn region(&self, r: usize) -> Vec<u8> {
        match &self.data {
            LabelData::Exclusive(ids) => ids.iter().map(|&id| u8::from(id as usize == r)).collect(),
            LabelData::MultiLabel(grids) if r == 0 => (0..self.voxels())
                .map(|v| u8::from(grids.iter().all(|g| g[v] == 0)))
                .collect(),
            LabelData::MultiLabel(grids) => grids.get(r - 1).cloned().unwrap_or_else(|| vec![0; self.voxels()]),
        }
    }

    pub fn crop(&self, origin: Shape3, size: Shape3) -> Result<Self> {
        check_crop(self.shape, origin, size)?;
        let out = match &self.data {
            LabelData::Exclusive(ids) => {
                let mut v = Vec::with_capacity(voxel_count(size));
                crop_into(ids, self.shape, origin, size, &mut v);
                Self::exclusive(size, self.num_foreground, v)?
            }
            LabelData::MultiLabel(grids) => {
                let grids = grids
                    .iter()
                    .map(|g| {
                        let mut v = Vec::with_capacity(voxel_count(size));
                        crop_into(g, self.shape, origin, size, &mut v);
                        v
                    })
                    .collect();
                Self::multi_label(size, grids)?
            }
        };
        out.with_spacing(self.spacing)
    }
}

/// Resamples labels onto a coarser grid. Exclusive volumes use
/// nearest-neighbour sampling at target cell centres; multi-label grids
/// are OR-pooled over each covered source block so thin structures
/// survive.
pub fn downsample_labels(labels: &LabelVolume, target: Shape3) -> Result<LabelVolume> {
    let src = labels.shape();
    if target == src {
        return Ok(labels.clone());
    }
    for i in 0..3 {
        if target[i] == 0 || target[i] > src[i] {
            return Err(Error::Geometry(format!(
                "cannot downsample labels {src:?} to {target:?}"
            )));
        }
    }
    let index = |v: usize| -> Shape3 {
        let [_, h, w] = target;
        [v / (h * w), (v / w) % h, v % w]
    };
    let out = match labels.data() {
        LabelData::Exclusive(ids) => {
            let mut v = Vec::with_capacity(voxel_count(target));
            for t in 0..voxel_count(target) {
                let p = index(t);
                let s: Vec<usize> = (0..3).map(|i| ((2 * p[i] + 1) * src[i]) / (2 * target[i])).collect();
                v.push(ids[(s[0] * src[1] + s[1]) * src[2] + s[2]]);
            }
            LabelVolume::exclusive(target, labels.num_foreground(), v)?
        }
        LabelData::MultiLabel(grids) => {
            let pooled = grids
                .iter()
                .map(|g| {
                    (0..voxel_count(target))
                        .map(|t| {
                            let p = index(t);
                            let lo: Vec<usize> = (0..3).map(|i| p[i] * src[i] / target[i]).collect();
                            let hi: Vec<usize> = (0..3).map(|i| (p[i] + 1) * src[i] / target[i]).collect();
                            let mut any = 0u8;
                            'outer: for z in lo[0]..hi[0] {
                                for y in lo[1]..hi[1] {
                                    for x in lo[2]..hi[2] {
                                        if g[(z * src[1] + y) * src[2] + x] != 0 {
                                            any = 1;
                                            break 'outer;
                                        }
                                    }
                                }
                            }
                            any
                        })
                        .collect()
                })
                .collect();
            LabelVolume::multi_label(target, pooled)?
        }
    };
    out.with_spacing(labels.spacing())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_identity_and_constant() {
        let l = LabelVolume::exclusive([4, 4, 4], 2, vec![2; 64]).unwrap();
        assert_eq!(downsample_labels(&l, [4, 4, 4]).unwrap(), l);
        let d = downsample_labels(&l, [2, 1, 3]).unwrap();
        assert!(d.ids().unwrap().iter().all(|&v| v == 2));
    }

    #[test]
    fn or_pooling_keeps_single_voxel() {
        let mut g = vec![0u8; 64];
        g[(1 * 4 + 2) * 4 + 3] = 1;
        let l = LabelVolume::multi_label([4, 4, 4], vec![g]).unwrap();
        let d = downsample_labels(&l, [2, 2, 2]).unwrap();
        let LabelData::MultiLabel(grids) = d.data() else { panic!() };
        assert_eq!(grids[0].iter().filter(|&&v| v == 1).count(), 1);
        assert_eq!(grids[0][(0 * 2 + 1) * 2 + 1], 1);
    }

    #[test]
    fn nearest_sampling_never_invents_classes() {
        let ids: Vec<u16> = (0..216).map(|i| [0u16, 3, 5][i % 3]).collect();
        let l = LabelVolume::exclusive([6, 6, 6], 5, ids).unwrap();
        let d = downsample_labels(&l, [3, 2, 4]).unwrap();
        assert!(d.ids().unwrap().iter().all(|v| [0, 3, 5].contains(v)));
    }

    #[test]
    fn upsampling_is_rejected() {
        let l = LabelVolume::exclusive([2, 2, 2], 1, vec![0; 8]).unwrap();
        assert!(downsample_labels(&l, [4, 2, 2]).is_err());
    }

    #[test]
    fn label_validation() {
        assert!(LabelVolume::exclusive([2, 2, 2], 1, vec![2; 8]).is_err());
        assert!(LabelVolume::multi_label([2, 2, 2], vec![vec![2; 8]]).is_err());
    }

    #[test]
    fn multi_label_background_is_complement() {
        let l = LabelVolume::multi_label([1, 1, 3], vec![vec![1, 0, 0], vec![1, 1, 0]]).unwrap();
        assert_eq!(l.region(0), vec![0, 0, 1]);
        assert_eq!(l.region(2), vec![1, 1, 0]);
    }

    #[test]
    fn crop_extracts_block() {
        let ids: Vec<u16> = (0..27).map(|i| (i % 2) as u16).collect();
        let l = LabelVolume::exclusive([3, 3, 3], 1, ids.clone()).unwrap();
        let c = l.crop([1, 1, 1], [2, 2, 2]).unwrap();
        assert_eq!(c.ids().unwrap()[0], ids[13]);
        let img = ImageVolume::new([3, 3, 3], 2, (0..54).map(f64::from).collect(), [1.0; 3]).unwrap();
        let ci = img.crop([0, 0, 1], [3, 3, 2]).unwrap();
        assert_eq!(ci.data()[0], 1.0);
        assert_eq!(ci.data()[18], 28.0);
    }
}
