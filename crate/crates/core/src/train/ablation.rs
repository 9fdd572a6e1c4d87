use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{distill_student, evaluate, train, Case, TrainConfig};
use crate::error::Result;
use crate::losses::DistillConfig;
use crate::model::{Network, NetworkPlan};

/// One named configuration of an ablation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AblationEntry {
    pub name: String,
    pub distill: DistillConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    /// First 16 hex digits of SHA-256 over the compact JSON of the config.
    pub config_hash: String,
    pub mdice: f64,
    pub class_dice: Vec<Option<f64>>,
    pub delta_mdice: f64,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub baseline_mdice: f64,
    pub baseline_class_dice: Vec<Option<f64>>,
    pub rows: Vec<AblationRow>,
}

pub fn config_hash(cfg: &DistillConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(json))[..16].to_string()
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let k = self.baseline_class_dice.len();
        let mut s = String::from("name,config_hash,mdice");
        for r in 1..=k {
            s.push_str(&format!(",dice_{r}"));
        }
        s.push_str(",delta_mdice\n");
        let f = |v: &Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
        for row in &self.rows {
            s.push_str(&format!("{},{},{}", row.name, row.config_hash, row.mdice));
            for d in &row.class_dice {
                s.push_str(&format!(",{}", f(d)));
            }
            s.push_str(&format!(",{}\n", row.delta_mdice));
        }
        s
    }

    /// Wall-clock per row, kept apart from the reproducible report.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("name,config_hash,wall_seconds\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.name, r.config_hash, r.wall_seconds));
        }
        s
    }
}

/// Trains one student per matrix entry with the shared setup and scores
/// each against a plain (no-distillation) student on `eval_cases`.
pub fn run_ablation(
    cases: &[Case],
    eval_cases: &[Case],
    teacher: &Network,
    student_plan: &NetworkPlan,
    matrix: &[AblationEntry],
    cfg: &TrainConfig,
) -> Result<AblationReport> {
    for e in matrix {
        e.distill.validate(student_plan.num_stages())?;
    }
    let base = evaluate(&train(cases, student_plan, cfg, None)?.best, eval_cases)?;
    let base_dice: Vec<Option<f64>> = base.per_class.iter().map(|c| c.dice).collect();
    let mut rows = Vec::with_capacity(matrix.len());
    for e in matrix {
        let t0 = Instant::now();
        let (mdice, class_dice) = if e.distill.toggles.any() {
            let out = distill_student(cases, teacher, student_plan, &e.distill, cfg, None)?;
            let r = evaluate(&out.best, eval_cases)?;
            (r.mdice, r.per_class.iter().map(|c| c.dice).collect())
        } else {
            // identical trajectory to the baseline by construction
            (base.mdice, base_dice.clone())
        };
        rows.push(AblationRow {
            name: e.name.clone(),
            config_hash: config_hash(&e.distill),
            mdice,
            class_dice,
            delta_mdice: mdice - base.mdice,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(AblationReport {
        baseline_mdice: base.mdice,
        baseline_class_dice: base_dice,
        rows,
    })
}
