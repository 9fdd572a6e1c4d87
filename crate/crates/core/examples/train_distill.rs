//! Trains a teacher, then a plain and a distilled student on the same
//! phantom cases, and evaluates all three on held-out cases.

use reco_kd::experiment::phantom_cases;
use reco_kd::losses::DistillConfig;
use reco_kd::model::{derive_student_plan, NetworkPlan};
use reco_kd::train::{distill_student, evaluate, train, train_teacher, TrainConfig};
use reco_kd::volume::{ClassSpec, PhantomSpec, ShapeKind};
use reco_kd::Result;

fn main() -> Result<()> {
    let spec = PhantomSpec {
        shape: [16, 16, 16],
        classes: vec![
            ClassSpec {
                target_fraction: 0.1,
                shape_kind: ShapeKind::Ellipsoid,
            },
            ClassSpec {
                target_fraction: 0.02,
                shape_kind: ShapeKind::Sphere,
            },
        ],
        noise_sigma: 0.2,
        modalities: 1,
        class_means: None,
    };
    let train_set = phantom_cases(&spec, "train", 0, 6)?;
    let test_set = phantom_cases(&spec, "test", 1000, 4)?;
    let teacher_plan = NetworkPlan {
        channels: vec![8, 16],
        strides: vec![1, 2],
        ..NetworkPlan::toy(1, 3)
    };
    let student_plan = derive_student_plan(&teacher_plan, 1, 2);
    let cfg = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };

    let teacher = train_teacher(&train_set, &teacher_plan, &cfg, None)?.best;
    println!("teacher {:?}: test mDice {:.4}", teacher_plan.widths(), evaluate(&teacher, &test_set)?.mdice);

    let plain = train(&train_set, &student_plan, &cfg, None)?.best;
    println!("student {:?}: test mDice {:.4}", student_plan.widths(), evaluate(&plain, &test_set)?.mdice);

    let kd = DistillConfig {
        temperature: 2.0,
        gamma: 1e-3,
        lambda: 1e-4,
        sard_weight: 1e-3,
        ..DistillConfig::default()
    };
    let out = distill_student(&train_set, &teacher, &student_plan, &kd, &cfg, None)?;
    let last = out.metrics.last().expect("at least one step");
    println!(
        "distilled student: test mDice {:.4} (final step: task {:.4}, region {:.4}, context {:.4})",
        evaluate(&out.best, &test_set)?.mdice,
        last.loss_task,
        last.loss_ms_sard,
        last.loss_ms_ca
    );
    Ok(())
}
