//! Seeded synthetic volumes with geometric class regions at controlled
//! volume fractions.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{voxel_count, ImageVolume, LabelVolume, Shape3};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Ellipsoid,
    Shell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub target_fraction: f64,
    pub shape_kind: ShapeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub shape: Shape3,
    pub classes: Vec<ClassSpec>,
    pub noise_sigma: f64,
    pub modalities: usize,
    /// Mean intensity per class (background first) for modality 0.
    /// Defaults to `r / R`. Modality `m` uses the means rotated by `m`.
    #[serde(default)]
    pub class_means: Option<Vec<f64>>,
}

/// Inner radius of a shell relative to its outer radius.
const SHELL_INNER: f64 = 0.6;
const PLACEMENT_ATTEMPTS: usize = 64;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&d| d < 8) {
            return Err(Error::config("phantom.shape", format!("every dim must be >= 8, got {:?}", self.shape)));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if !(c.target_fraction >= 0.0 && c.target_fraction < 1.0) {
                return Err(Error::config(
                    format!("phantom.classes[{i}].target_fraction"),
                    format!("must be in [0, 1), got {}", c.target_fraction),
                ));
            }
        }
        let total: f64 = self.classes.iter().map(|c| c.target_fraction).sum();
        if total >= 1.0 {
            return Err(Error::config("phantom.classes", format!("target fractions sum to {total} >= 1")));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("phantom.noise_sigma", "must be >= 0"));
        }
        if self.modalities == 0 {
            return Err(Error::config("phantom.modalities", "must be >= 1"));
        }
        if let Some(m) = &self.class_means {
            if m.len() != self.classes.len() + 1 {
                return Err(Error::config(
                    "phantom.class_means",
                    format!("expected {} entries, got {}", self.classes.len() + 1, m.len()),
                ));
            }
        }
        Ok(())
    }

    fn mean(&self, class: usize, modality: usize) -> f64 {
        let k = self.classes.len() + 1;
        let r = (class + modality) % k;
        match &self.class_means {
            Some(m) => m[r],
            None if k == 1 => 0.0,
            None => r as f64 / (k - 1) as f64,
        }
    }
}

/// An axis-aligned ellipsoid (optionally hollow) in voxel coordinates.
struct Region {
    center: [f64; 3],
    axes: [f64; 3],
    inner: f64,
}

impl Region {
    fn contains(&self, p: [usize; 3], scale: f64) -> bool {
        let q: f64 = (0..3)
            .map(|i| {
                let d = (p[i] as f64 - self.center[i]) / (self.axes[i] * scale);
                d * d
            })
            .sum();
        q <= 1.0 && q >= self.inner * self.inner
    }

    /// Voxel bounding box of the region at `scale`, clipped to the grid.
    fn bbox(&self, shape: Shape3, scale: f64) -> [(usize, usize); 3] {
        let mut b = [(0, 0); 3];
        for i in 0..3 {
            let ext = self.axes[i] * scale;
            let lo = (self.center[i] - ext).floor().max(0.0) as usize;
            let hi = ((self.center[i] + ext).ceil() as usize + 1).min(shape[i]);
            b[i] = (lo, hi);
        }
        b
    }

    fn voxels(&self, shape: Shape3, scale: f64) -> Vec<usize> {
        let b = self.bbox(shape, scale);
        let mut out = Vec::new();
        for z in b[0].0..b[0].1 {
            for y in b[1].0..b[1].1 {
                for x in b[2].0..b[2].1 {
                    if self.contains([z, y, x], scale) {
                        out.push((z * shape[1] + y) * shape[2] + x);
                    }
                }
            }
        }
        out
    }
}

fn sample_region<R: Rng>(rng: &mut R, kind: ShapeKind, target: usize, shape: Shape3) -> Result<Region> {
    let ratios = match kind {
        ShapeKind::Sphere | ShapeKind::Shell => [1.0; 3],
        ShapeKind::Ellipsoid => {
            let mut r = [0.0f64; 3];
            for v in &mut r {
                *v = rng.random_range(0.6..1.5);
            }
            let g = (r[0] * r[1] * r[2]).cbrt();
            r.map(|v| v / g)
        }
    };
    let (inner, hollow) = match kind {
        ShapeKind::Shell => (SHELL_INNER, 1.0 - SHELL_INNER.powi(3)),
        _ => (0.0, 1.0),
    };
    let radius = (3.0 * target as f64 / (4.0 * std::f64::consts::PI * hollow)).cbrt();
    let axes = ratios.map(|r| r * radius);
    let mut center = [0.0; 3];
    for i in 0..3 {
        let (lo, hi) = (axes[i] - 0.5, shape[i] as f64 - 0.5 - axes[i]);
        if lo > hi {
            return Err(Error::InfeasibleFraction(format!(
                "{kind:?} of {target} voxels (semi-axis {:.2}) does not fit in {shape:?}",
                axes[i]
            )));
        }
        center[i] = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    }
    Ok(Region { center, axes, inner })
}

/// Scale in `[0.5, 1.5]` whose voxel count is closest to `target`.
fn fit_scale(region: &Region, shape: Shape3, target: usize) -> f64 {
    let (mut lo, mut hi) = (0.5, 1.5);
    let mut best = (usize::MAX, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let n = region.voxels(shape, mid).len();
        let err = n.abs_diff(target);
        if err < best.0 {
            best = (err, mid);
        }
        if n < target {
            lo = mid;
        } else if n > target {
            hi = mid;
        } else {
            break;
        }
    }
    best.1
}

/// Generates one image/label pair. Classes are placed in order; each
/// tries up to 64 random positions that avoid existing foreground and
/// otherwise overwrites earlier classes.
pub fn generate_phantom(seed: u64, spec: &PhantomSpec) -> Result<(ImageVolume, LabelVolume)> {
    spec.validate()?;
    let shape = spec.shape;
    let n = voxel_count(shape);
    let mut rng = rng::stream(seed, rng::PHANTOM);
    let mut ids = vec![0u16; n];
    for (ci, class) in spec.classes.iter().enumerate() {
        let target = (class.target_fraction * n as f64).round() as usize;
        if target == 0 {
            continue;
        }
        let mut chosen = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let region = sample_region(&mut rng, class.shape_kind, target, shape)?;
            let scale = fit_scale(&region, shape, target);
            let vox = region.voxels(shape, scale);
            let free = vox.iter().all(|&v| ids[v] == 0);
            chosen = Some(vox);
            if free {
                break;
            }
        }
        let vox = chosen.expect("at least one attempt");
        if vox.is_empty() {
            return Err(Error::InfeasibleFraction(format!(
                "class {} with target fraction {} realized no voxels",
                ci + 1,
                class.target_fraction
            )));
        }
        for v in vox {
            ids[v] = (ci + 1) as u16;
        }
    }

    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).expect("sigma validated");
    let mut data = Vec::with_capacity(n * spec.modalities);
    for m in 0..spec.modalities {
        for &id in &ids {
            let mu = spec.mean(id as usize, m);
            let eps = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            data.push(mu + eps);
        }
    }
    let image = ImageVolume::new(shape, spec.modalities, data, [1.0; 3])?;
    let labels = LabelVolume::exclusive(shape, spec.classes.len(), ids)?;
    Ok((image, labels))
}
