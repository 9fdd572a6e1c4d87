//! End-to-end training guarantees on tiny phantoms.

use reco_kd::experiment::phantom_cases;
use reco_kd::losses::{DistillConfig, Toggles};
use reco_kd::model::{
    build_network, derive_student_plan, forward_with_taps, load_checkpoint, save_checkpoint, NetworkPlan,
};
use reco_kd::train::{
    distill_student, metrics_csv, run_ablation, train, train_teacher, AblationEntry, Case, TrainConfig,
};
use reco_kd::volume::{ClassSpec, PhantomSpec, ShapeKind};
use reco_kd::Error;

fn cases(n: usize) -> Vec<Case> {
    let spec = PhantomSpec {
        shape: [8, 8, 8],
        classes: vec![
            ClassSpec {
                target_fraction: 0.1,
                shape_kind: ShapeKind::Sphere,
            },
            ClassSpec {
                target_fraction: 0.03,
                shape_kind: ShapeKind::Ellipsoid,
            },
        ],
        noise_sigma: 0.1,
        modalities: 1,
        class_means: None,
    };
    phantom_cases(&spec, "t", 0, n).unwrap()
}

fn teacher_plan() -> NetworkPlan {
    NetworkPlan {
        channels: vec![8, 16],
        strides: vec![1, 2],
        convs_per_stage: 1,
        ..NetworkPlan::toy(1, 3)
    }
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn distill() -> DistillConfig {
    DistillConfig {
        temperature: 2.0,
        gamma: 1e-3,
        lambda: 1e-3,
        sard_weight: 1e-2,
        ..DistillConfig::default()
    }
}

#[test]
fn disabled_distillation_matches_plain_training() {
    let data = cases(4);
    let teacher = train_teacher(&data, &teacher_plan(), &cfg(1), None).unwrap().best;
    let student = derive_student_plan(&teacher_plan(), 1, 2);
    let plain = train(&data, &student, &cfg(2), None).unwrap();
    let off = distill_student(&data, &teacher, &student, &DistillConfig::disabled(), &cfg(2), None).unwrap();
    assert_eq!(metrics_csv(&plain.metrics), metrics_csv(&off.metrics));
    assert_eq!(plain.best.param_hash(), off.best.param_hash());
    assert_eq!(plain.last.param_hash(), off.last.param_hash());
}

#[test]
fn distillation_leaves_teacher_untouched_and_exports_a_plain_student() {
    let data = cases(4);
    let teacher = train_teacher(&data, &teacher_plan(), &cfg(1), None).unwrap().best;
    let before = teacher.param_hash();
    let student_plan = derive_student_plan(&teacher_plan(), 1, 2);
    let out = distill_student(&data, &teacher, &student_plan, &distill(), &cfg(2), None).unwrap();
    assert_eq!(teacher.param_hash(), before);
    assert!(out.metrics.iter().all(|r| r.loss_ms_sard > 0.0 && r.loss_ms_ca > 0.0));

    let plain = build_network(&student_plan, 77).unwrap();
    assert_eq!(out.best.shapes(), plain.shapes());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("student.json");
    save_checkpoint(&path, &out.best, None, 0).unwrap();
    let loaded = load_checkpoint(&path).unwrap().network;
    let fresh = plain.with_params(loaded.params().to_vec()).unwrap().frozen();
    let x = data[0].image.to_tensor();
    let (a, _) = forward_with_taps(&out.best, &x).unwrap();
    let (b, _) = forward_with_taps(&fresh, &x).unwrap();
    assert_eq!(a.to_vec(), b.to_vec());
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = cases(3);
    let plan = derive_student_plan(&teacher_plan(), 1, 2);
    let a = train(&data, &plan, &cfg(2), None).unwrap();
    let b = train(&data, &plan, &cfg(2), None).unwrap();
    assert_eq!(a.best.param_hash(), b.best.param_hash());
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    let other = TrainConfig { seed: 6, ..cfg(2) };
    let c = train(&data, &plan, &other, None).unwrap();
    assert_ne!(a.last.param_hash(), c.last.param_hash());
}

#[test]
fn divergence_reports_its_step() {
    let data = cases(2);
    let plan = derive_student_plan(&teacher_plan(), 1, 2);
    let bad = TrainConfig {
        lr0: 1e200,
        max_grad_norm: None,
        val_fraction: 0.0,
        ..cfg(20)
    };
    match train(&data, &plan, &bad, None) {
        Err(Error::Divergence { step, loss }) => {
            assert!(step >= 1, "step {step}");
            assert!(!loss.is_finite());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.metrics.len())),
    }
}

#[test]
fn ablation_rows_follow_their_definitions() {
    let data = cases(4);
    let eval = cases(6)[4..].to_vec();
    let teacher = train_teacher(&data, &teacher_plan(), &cfg(1), None).unwrap().best;
    let student = derive_student_plan(&teacher_plan(), 1, 2);
    let sard = |stages: Option<Vec<usize>>| DistillConfig {
        stages,
        toggles: Toggles {
            sard_fg: true,
            sard_bg: true,
            mask_align: false,
            msca: false,
        },
        ..distill()
    };
    let matrix = vec![
        AblationEntry {
            name: "no-kd".into(),
            distill: DistillConfig::disabled(),
        },
        AblationEntry {
            name: "fg+bg".into(),
            distill: sard(None),
        },
        AblationEntry {
            name: "full-sard".into(),
            distill: sard(Some(vec![0, 1])),
        },
    ];
    let report = run_ablation(&data, &eval, &teacher, &student, &matrix, &cfg(2)).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert_eq!(report.rows[0].delta_mdice, 0.0);
    assert_eq!(report.rows[0].mdice, report.baseline_mdice);
    assert_eq!(report.rows[1].mdice, report.rows[2].mdice);
    assert_eq!(report.rows[1].class_dice, report.rows[2].class_dice);
    assert_ne!(report.rows[1].config_hash, report.rows[2].config_hash);
    let csv = report.to_csv();
    assert!(csv.starts_with("name,config_hash,mdice,dice_1,dice_2,delta_mdice\n"), "{csv}");
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn size_one_matrix_without_toggles_has_zero_delta() {
    let data = cases(3);
    let teacher = train_teacher(&data, &teacher_plan(), &cfg(1), None).unwrap().best;
    let student = derive_student_plan(&teacher_plan(), 1, 2);
    let matrix = [AblationEntry {
        name: "off".into(),
        distill: DistillConfig::disabled(),
    }];
    let r = run_ablation(&data, &data, &teacher, &student, &matrix, &cfg(1)).unwrap();
    assert_eq!(r.rows[0].delta_mdice, 0.0);
}
