//! Weighting masks for region distillation.
//!
//! Per encoder stage a [`MaskBundle`] holds:
//!
//! - region masks `M^r` (one binary grid per class, background at `r = 0`),
//! - the scale mask `S` with `S[v] = 1 / N_r` for the smallest class
//!   covering `v` (ties go to the lower class index),
//! - teacher activation masks `V_S = DHW * softmax(A_S / T)` over all
//!   voxels jointly and `V_C = C * softmax(A_C / T)` over channels, where
//!   `A_S` and `A_C` are mean absolute activations over channels and
//!   voxels respectively.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::volume::{voxel_count, ImageVolume, LabelMode, LabelVolume, Shape3};

/// Which class regions enter a region-weighted loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionSelect {
    All,
    Foreground,
    Background,
}

impl RegionSelect {
    pub fn includes(self, r: usize) -> bool {
        match self {
            RegionSelect::All => true,
            RegionSelect::Foreground => r > 0,
            RegionSelect::Background => r == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMaskSet {
    pub shape: Shape3,
    pub mode: LabelMode,
    /// `grids[r][v]` is 1 iff voxel `v` belongs to class `r`.
    pub grids: Vec<Vec<u8>>,
}

impl RegionMaskSet {
    pub fn num_classes(&self) -> usize {
        self.grids.len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.grids.iter().map(|g| g.iter().map(|&b| b as usize).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMask {
    pub shape: Shape3,
    pub values: Vec<f64>,
    /// `N_r` for every class.
    pub counts: Vec<usize>,
    /// Class whose weight each voxel received.
    pub owner: Vec<usize>,
}

impl ScaleMask {
    pub fn to_image(&self) -> Result<ImageVolume> {
        ImageVolume::new(self.shape, 1, self.values.clone(), [1.0; 3])
    }
}

#[derive(Debug, Clone)]
pub struct ActivationMasks {
    /// `[D, H, W]`
    pub a_s: Tensor,
    /// `[C]`
    pub a_c: Tensor,
    /// `[D, H, W]`
    pub v_s: Tensor,
    /// `[C]`
    pub v_c: Tensor,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct MaskBundle {
    pub regions: RegionMaskSet,
    pub scale: ScaleMask,
    pub activations: ActivationMasks,
}

pub fn build_region_masks(labels: &LabelVolume) -> RegionMaskSet {
    RegionMaskSet {
        shape: labels.shape(),
        mode: labels.mode(),
        grids: (0..labels.num_classes()).map(|r| labels.region(r)).collect(),
    }
}

pub fn build_scale_mask(regions: &RegionMaskSet) -> Result<ScaleMask> {
    let counts = regions.counts();
    let n = voxel_count(regions.shape);
    let mut values = Vec::with_capacity(n);
    let mut owner = Vec::with_capacity(n);
    for v in 0..n {
        // smallest N_r wins; strict comparison keeps the lowest index on ties
        let mut best: Option<usize> = None;
        for (r, grid) in regions.grids.iter().enumerate() {
            if grid[v] == 1 && best.is_none_or(|b| counts[r] < counts[b]) {
                best = Some(r);
            }
        }
        let r = best.ok_or(Error::UncoveredVoxel { voxel: v })?;
        values.push(1.0 / counts[r] as f64);
        owner.push(r);
    }
    Ok(ScaleMask {
        shape: regions.shape,
        values,
        counts,
        owner,
    })
}

fn expect_features(op: &'static str, f: &Tensor) -> Result<()> {
    if f.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: f.shape().to_vec(),
            rhs: vec![0, 0, 0, 0],
        });
    }
    Ok(())
}

/// Activation statistics and masks of a `[C, D, H, W]` feature map.
/// Differentiable with respect to `f`.
pub fn build_activation_masks(f: &Tensor, temperature: f64) -> Result<ActivationMasks> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    expect_features("build_activation_masks", f)?;
    let c = f.shape()[0];
    let dhw: usize = f.shape()[1..].iter().product();
    let abs = f.abs();
    let a_s = abs.mean(&[0], false)?;
    let a_c = abs.mean(&[1, 2, 3], false)?;
    let v_s = a_s.softmax_temperature(&[0, 1, 2], temperature)?.scale(dhw as f64);
    let v_c = a_c.softmax_temperature(&[0], temperature)?.scale(c as f64);
    Ok(ActivationMasks {
        a_s,
        a_c,
        v_s,
        v_c,
        temperature,
    })
}

/// All masks for one stage. `labels` must already be at the spatial
/// resolution of `teacher_f`; teacher activations are detached.
pub fn build_stage_masks(labels: &LabelVolume, teacher_f: &Tensor, temperature: f64) -> Result<MaskBundle> {
    expect_features("build_stage_masks", teacher_f)?;
    let spatial = &teacher_f.shape()[1..];
    if labels.shape().as_slice() != spatial {
        return Err(Error::ShapeMismatch {
            op: "build_stage_masks",
            lhs: labels.shape().to_vec(),
            rhs: spatial.to_vec(),
        });
    }
    let regions = build_region_masks(labels);
    let scale = build_scale_mask(&regions)?;
    let activations = build_activation_masks(&teacher_f.detach(), temperature)?;
    Ok(MaskBundle {
        regions,
        scale,
        activations,
    })
}

impl MaskBundle {
    /// Per-voxel weight `sum_{r in select} M^r[v] * S[v]`.
    pub fn region_weight(&self, select: RegionSelect) -> Vec<f64> {
        let mut w = vec![0.0; self.scale.values.len()];
        for (r, grid) in self.regions.grids.iter().enumerate() {
            if !select.includes(r) {
                continue;
            }
            for ((wv, &m), &s) in w.iter_mut().zip(grid).zip(&self.scale.values) {
                *wv += m as f64 * s;
            }
        }
        w
    }

    /// Constant `[C, D, H, W]` weight `V_C[c] * V_S[v] * region_weight[v]`.
    pub fn sard_weight(&self, select: RegionSelect) -> Result<Tensor> {
        let rw = self.region_weight(select);
        let vs = self.activations.v_s.data();
        let vc = self.activations.v_c.data();
        let mut data = Vec::with_capacity(vc.len() * rw.len());
        for &c in vc {
            data.extend(rw.iter().zip(vs).map(|(&w, &s)| c * s * w));
        }
        let [d, h, w] = self.scale.shape;
        Tensor::new(&[vc.len(), d, h, w], data)
    }
}
