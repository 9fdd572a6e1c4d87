use serde::{Serialize, Serializer};

use super::{LabelData, LabelVolume};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCount {
    pub class_id: usize,
    pub voxels: usize,
    pub fraction: f64,
}

/// Largest-to-smallest foreground class ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForegroundRatio {
    Finite(f64),
    /// Some foreground class is empty while another is not.
    Infinite,
    /// No foreground voxels at all.
    Undefined,
}

impl Serialize for ForegroundRatio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ForegroundRatio::Finite(v) => s.serialize_f64(*v),
            ForegroundRatio::Infinite => s.serialize_str("inf"),
            ForegroundRatio::Undefined => s.serialize_none(),
        }
    }
}

impl std::fmt::Display for ForegroundRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ForegroundRatio::Finite(v) => write!(f, "{v}"),
            ForegroundRatio::Infinite => f.write_str("inf"),
            ForegroundRatio::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub classes: Vec<ClassCount>,
    pub total_voxels: usize,
    pub background_fraction: f64,
    pub foreground_ratio: ForegroundRatio,
}

impl ClassStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id,voxels,fraction\n");
        for c in &self.classes {
            out.push_str(&format!("{},{},{}\n", c.class_id, c.voxels, c.fraction));
        }
        out
    }

    fn from_counts(counts: Vec<usize>, total: usize) -> Self {
        let classes: Vec<ClassCount> = counts
            .iter()
            .enumerate()
            .map(|(class_id, &voxels)| ClassCount {
                class_id,
                voxels,
                fraction: if total == 0 { 0.0 } else { voxels as f64 / total as f64 },
            })
            .collect();
        let fg = &counts[1..];
        let foreground_ratio = match (fg.iter().max(), fg.iter().min()) {
            (Some(&hi), Some(&lo)) if hi > 0 && lo > 0 => ForegroundRatio::Finite(hi as f64 / lo as f64),
            (Some(&hi), Some(_)) if hi > 0 => ForegroundRatio::Infinite,
            _ => ForegroundRatio::Undefined,
        };
        ClassStats {
            background_fraction: classes[0].fraction,
            classes,
            total_voxels: total,
            foreground_ratio,
        }
    }
}

fn counts(labels: &LabelVolume) -> Vec<usize> {
    let mut counts = vec![0usize; labels.num_classes()];
    match labels.data() {
        LabelData::Exclusive(ids) => {
            for &id in ids {
                counts[id as usize] += 1;
            }
        }
        LabelData::MultiLabel(_) => {
            for (r, c) in counts.iter_mut().enumerate() {
                *c = labels.region(r).iter().filter(|&&v| v == 1).count();
            }
        }
    }
    counts
}

/// Exact per-class voxel counts. In multi-label mode background is the
/// complement of the foreground union and fractions may sum above 1.
pub fn class_stats(labels: &LabelVolume) -> ClassStats {
    ClassStats::from_counts(counts(labels), labels.voxels())
}

/// Pooled statistics over several volumes; class lists are padded to the
/// largest class count.
pub fn class_stats_many<'a>(volumes: impl IntoIterator<Item = &'a LabelVolume>) -> ClassStats {
    let mut total = 0;
    let mut acc: Vec<usize> = vec![0];
    for v in volumes {
        let c = counts(v);
        if c.len() > acc.len() {
            acc.resize(c.len(), 0);
        }
        for (a, b) in acc.iter_mut().zip(&c) {
            *a += b;
        }
        total += v.voxels();
    }
    ClassStats::from_counts(acc, total)
}
