//! Paired teacher/student experiment on an imbalanced phantom task: one
//! full-width teacher, then for each seed a plain student and a distilled
//! student trained with identical settings and scored on held-out cases.

use serde::Serialize;

use crate::error::Result;
use crate::losses::DistillConfig;
use crate::model::{derive_student_plan, Network, NetworkPlan};
use crate::train::{distill_student, evaluate, train, train_teacher, Case, TrainConfig};
use crate::volume::{generate_phantom, ClassSpec, PhantomSpec, ShapeKind};

#[derive(Debug, Clone, Serialize)]
pub struct PairedSetup {
    pub phantom: PhantomSpec,
    pub train_cases: usize,
    pub test_cases: usize,
    pub teacher_plan: NetworkPlan,
    pub student_t: u32,
    pub teacher_train: TrainConfig,
    pub student_train: TrainConfig,
    pub distill: DistillConfig,
    pub seeds: Vec<u64>,
    /// Foreground class whose Dice gain is tracked.
    pub rare_class: usize,
}

impl Default for PairedSetup {
    fn default() -> Self {
        let phantom = PhantomSpec {
            shape: [32; 3],
            classes: vec![
                ClassSpec {
                    target_fraction: 0.08,
                    shape_kind: ShapeKind::Ellipsoid,
                },
                ClassSpec {
                    target_fraction: 0.03,
                    shape_kind: ShapeKind::Shell,
                },
                ClassSpec {
                    target_fraction: 0.006,
                    shape_kind: ShapeKind::Sphere,
                },
            ],
            noise_sigma: 0.2,
            modalities: 1,
            class_means: None,
        };
        let teacher_plan = NetworkPlan {
            channels: vec![8, 16, 32],
            ..NetworkPlan::toy(1, 4)
        };
        let teacher_train = TrainConfig {
            epochs: 100,
            ..TrainConfig::default()
        };
        let student_train = TrainConfig {
            epochs: 40,
            momentum: 0.9,
            ..TrainConfig::default()
        };
        // raw terms are 1e4 to 1e6 against a task loss near 3; these
        // weights bring each to O(1) at the start of training
        let distill = DistillConfig {
            temperature: 2.0,
            sard_weight: 1e-5,
            gamma: 2e-5,
            lambda: 3e-7,
            ..DistillConfig::default()
        };
        Self {
            phantom,
            train_cases: 10,
            test_cases: 8,
            teacher_plan,
            student_t: 2,
            teacher_train,
            student_train,
            distill,
            seeds: vec![0, 1, 2],
            rare_class: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairedRun {
    pub seed: u64,
    pub plain_mdice: f64,
    pub distilled_mdice: f64,
    pub plain_rare_dice: f64,
    pub distilled_rare_dice: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairedResult {
    /// Teacher mDice on its own training cases.
    pub teacher_train_mdice: f64,
    pub teacher_test_mdice: f64,
    pub runs: Vec<PairedRun>,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl PairedResult {
    pub fn median_plain(&self) -> f64 {
        median(&self.runs.iter().map(|r| r.plain_mdice).collect::<Vec<_>>())
    }

    pub fn median_distilled(&self) -> f64 {
        median(&self.runs.iter().map(|r| r.distilled_mdice).collect::<Vec<_>>())
    }

    pub fn median_rare_gain(&self) -> f64 {
        median(
            &self
                .runs
                .iter()
                .map(|r| r.distilled_rare_dice - r.plain_rare_dice)
                .collect::<Vec<_>>(),
        )
    }
}

/// Phantom cases with ids `prefix_000..`, seeded `first_seed..`.
pub fn phantom_cases(spec: &PhantomSpec, prefix: &str, first_seed: u64, n: usize) -> Result<Vec<Case>> {
    (0..n)
        .map(|i| {
            let (image, labels) = generate_phantom(first_seed + i as u64, spec)?;
            Ok(Case {
                id: format!("{prefix}_{i:03}"),
                image,
                labels,
            })
        })
        .collect()
}

impl PairedSetup {
    pub fn train_set(&self) -> Result<Vec<Case>> {
        phantom_cases(&self.phantom, "train", 0, self.train_cases)
    }

    pub fn test_set(&self) -> Result<Vec<Case>> {
        phantom_cases(&self.phantom, "test", 10_000, self.test_cases)
    }

    pub fn train_teacher(&self) -> Result<Network> {
        Ok(train_teacher(&self.train_set()?, &self.teacher_plan, &self.teacher_train, None)?.best)
    }
}

/// Runs the experiment; `log` receives one progress line per stage.
pub fn run_paired(setup: &PairedSetup, log: impl FnMut(&str)) -> Result<PairedResult> {
    run_paired_with_teacher(setup, &setup.train_teacher()?, log)
}

/// Same as [`run_paired`] with an already trained teacher.
pub fn run_paired_with_teacher(setup: &PairedSetup, teacher: &Network, mut log: impl FnMut(&str)) -> Result<PairedResult> {
    let train_set = setup.train_set()?;
    let test_set = setup.test_set()?;
    let teacher_train_mdice = evaluate(teacher, &train_set)?.mdice;
    let teacher_test_mdice = evaluate(teacher, &test_set)?.mdice;
    log(&format!(
        "teacher mDice train {teacher_train_mdice:.4} test {teacher_test_mdice:.4}"
    ));
    let student_plan = derive_student_plan(&setup.teacher_plan, setup.student_t, setup.teacher_plan.c_min);
    let rare = |r: &crate::train::EvalReport| r.class_dice(setup.rare_class).unwrap_or(0.0);
    let mut runs = Vec::new();
    for &seed in &setup.seeds {
        let cfg = TrainConfig {
            seed,
            ..setup.student_train.clone()
        };
        let plain = evaluate(&train(&train_set, &student_plan, &cfg, None)?.best, &test_set)?;
        let kd = evaluate(
            &distill_student(&train_set, teacher, &student_plan, &setup.distill, &cfg, None)?.best,
            &test_set,
        )?;
        let run = PairedRun {
            seed,
            plain_mdice: plain.mdice,
            distilled_mdice: kd.mdice,
            plain_rare_dice: rare(&plain),
            distilled_rare_dice: rare(&kd),
        };
        log(&format!(
            "seed {seed}: mDice plain {:.4} kd {:.4}; rare plain {:.4} kd {:.4}",
            run.plain_mdice, run.distilled_mdice, run.plain_rare_dice, run.distilled_rare_dice
        ));
        runs.push(run);
    }
    Ok(PairedResult {
        teacher_train_mdice,
        teacher_test_mdice,
        runs,
    })
}
