//! Distillation and segmentation objectives.
//!
//! Feature maps are `[C, D, H, W]` tensors for a single sample. Teacher
//! features are always detached inside the losses; student features pass
//! through a per-stage [`AdapterParams`] projection when the widths differ.

mod context;
mod distill;
mod params;
mod task;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masks::RegionSelect;

pub use context::{gc_block, loss_ms_ca};
pub use distill::{loss_ac, loss_feat, loss_ms_sard, loss_sard, loss_total, StageFeatures};
pub use params::{AdapterParams, GcBlockParams, GC_BOTTLENECK_RATIO, GC_GN_EPS};
pub use task::{loss_task, one_hot, DICE_EPS};

/// Component switches for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    /// Region distillation restricted to foreground classes.
    pub sard_fg: bool,
    /// Region distillation restricted to background.
    pub sard_bg: bool,
    /// Activation consistency between teacher and student masks.
    pub mask_align: bool,
    /// Global-context alignment.
    pub msca: bool,
}

impl Toggles {
    pub const ALL: Toggles = Toggles {
        sard_fg: true,
        sard_bg: true,
        mask_align: true,
        msca: true,
    };
    pub const NONE: Toggles = Toggles {
        sard_fg: false,
        sard_bg: false,
        mask_align: false,
        msca: false,
    };

    pub fn any(&self) -> bool {
        self.sard_fg || self.sard_bg || self.mask_align || self.msca
    }

    pub fn any_sard(&self) -> bool {
        self.sard_fg || self.sard_bg || self.mask_align
    }

    pub fn region_select(&self) -> Option<RegionSelect> {
        match (self.sard_fg, self.sard_bg) {
            (true, true) => Some(RegionSelect::All),
            (true, false) => Some(RegionSelect::Foreground),
            (false, true) => Some(RegionSelect::Background),
            (false, false) => None,
        }
    }
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub temperature: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Multiplier of the region term inside the multi-scale sum.
    pub sard_weight: f64,
    /// Encoder stages for region distillation; `None` selects every stage.
    pub stages: Option<Vec<usize>>,
    /// Encoder stages for context alignment; `None` follows `stages`.
    pub msca_stages: Option<Vec<usize>>,
    pub toggles: Toggles,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            gamma: 1.0,
            lambda: 1.0,
            sard_weight: 1.0,
            stages: None,
            msca_stages: None,
            toggles: Toggles::ALL,
        }
    }
}

impl DistillConfig {
    pub fn disabled() -> Self {
        Self {
            toggles: Toggles::NONE,
            ..Self::default()
        }
    }

    pub fn validate(&self, num_stages: usize) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("distill.temperature", format!("must be > 0, got {}", self.temperature)));
        }
        for (name, v) in [
            ("distill.gamma", self.gamma),
            ("distill.lambda", self.lambda),
            ("distill.sard_weight", self.sard_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be >= 0, got {v}")));
            }
        }
        for (name, list) in [("distill.stages", &self.stages), ("distill.msca_stages", &self.msca_stages)] {
            if let Some(list) = list {
                if let Some(&bad) = list.iter().find(|&&s| s >= num_stages) {
                    return Err(Error::config(name, format!("stage {bad} out of range 0..{num_stages}")));
                }
                let mut sorted = list.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != list.len() {
                    return Err(Error::config(name, "duplicate stage index"));
                }
            }
        }
        if self.toggles.any_sard() && self.sard_stages(num_stages).is_empty() {
            return Err(Error::EmptyStages("region distillation"));
        }
        if self.toggles.msca && self.context_stages(num_stages).is_empty() {
            return Err(Error::EmptyStages("context alignment"));
        }
        Ok(())
    }

    pub fn sard_stages(&self, num_stages: usize) -> Vec<usize> {
        self.stages.clone().unwrap_or_else(|| (0..num_stages).collect())
    }

    pub fn context_stages(&self, num_stages: usize) -> Vec<usize> {
        self.msca_stages.clone().unwrap_or_else(|| self.sard_stages(num_stages))
    }

    /// Stages that need teacher features or masks under the current toggles.
    pub fn active_stages(&self, num_stages: usize) -> Vec<usize> {
        let mut s = Vec::new();
        if self.toggles.any_sard() {
            s.extend(self.sard_stages(num_stages));
        }
        if self.toggles.msca {
            s.extend(self.context_stages(num_stages));
        }
        s.sort_unstable();
        s.dedup();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = DistillConfig::default();
        assert_eq!((c.temperature, c.gamma, c.lambda), (0.5, 1.0, 1.0));
        assert_eq!(c.context_stages(3), vec![0, 1, 2]);
        c.validate(3).unwrap();
    }

    #[test]
    fn validation() {
        let mut c = DistillConfig {
            stages: Some(vec![]),
            ..Default::default()
        };
        assert!(matches!(c.validate(3), Err(Error::EmptyStages(_))));
        c.toggles = Toggles::NONE;
        c.validate(3).unwrap();
        c.stages = Some(vec![4]);
        assert!(c.validate(3).unwrap_err().to_string().contains("distill.stages"));
        let c = DistillConfig {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(c.validate(3).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<DistillConfig>(r#"{"temp": 1}"#).is_err());
        let c: DistillConfig = serde_json::from_str(r#"{"gamma": 2}"#).unwrap();
        assert_eq!(c.gamma, 2.0);
    }
}
