//! A small ablation matrix over the distillation toggles.

use reco_kd::experiment::phantom_cases;
use reco_kd::losses::{DistillConfig, Toggles};
use reco_kd::model::{derive_student_plan, NetworkPlan};
use reco_kd::train::{run_ablation, train_teacher, AblationEntry, TrainConfig};
use reco_kd::volume::{ClassSpec, PhantomSpec, ShapeKind};
use reco_kd::Result;

fn main() -> Result<()> {
    let spec = PhantomSpec {
        shape: [8, 8, 8],
        classes: vec![
            ClassSpec {
                target_fraction: 0.12,
                shape_kind: ShapeKind::Sphere,
            },
            ClassSpec {
                target_fraction: 0.04,
                shape_kind: ShapeKind::Shell,
            },
        ],
        noise_sigma: 0.1,
        modalities: 1,
        class_means: None,
    };
    let cases = phantom_cases(&spec, "train", 0, 4)?;
    let eval = phantom_cases(&spec, "eval", 500, 2)?;
    let plan = NetworkPlan {
        channels: vec![8, 16],
        strides: vec![1, 2],
        convs_per_stage: 1,
        ..NetworkPlan::toy(1, 3)
    };
    let cfg = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    let teacher = train_teacher(&cases, &plan, &cfg, None)?.best;
    let base = DistillConfig {
        temperature: 2.0,
        gamma: 1e-3,
        lambda: 1e-3,
        sard_weight: 1e-2,
        ..DistillConfig::default()
    };
    let with = |name: &str, toggles: Toggles| AblationEntry {
        name: name.into(),
        distill: DistillConfig {
            toggles,
            ..base.clone()
        },
    };
    let matrix = [
        with("none", Toggles::NONE),
        with(
            "fg-only",
            Toggles {
                sard_fg: true,
                ..Toggles::NONE
            },
        ),
        with(
            "context-only",
            Toggles {
                msca: true,
                ..Toggles::NONE
            },
        ),
        with("all", Toggles::ALL),
    ];
    let report = run_ablation(&cases, &eval, &teacher, &derive_student_plan(&plan, 1, 2), &matrix, &cfg)?;
    print!("{}", report.to_csv());
    Ok(())
}
