//! Library losses and metrics against naive loop references on small
//! random instances.

mod common;

use common::*;

const TRIALS: u64 = 1000;
const TOL: f64 = 1e-10;

fn run(name: &str, trial: fn(u64) -> f64) {
    for seed in 0..TRIALS {
        let e = trial(seed);
        assert!(e <= TOL, "{name}: seed {seed} differs by {e:e}");
    }
}

#[test]
fn sard_and_activation_consistency_match_loops() {
    run("sard", sard_trial);
}

#[test]
fn gc_block_matches_loops() {
    run("gc_block", gc_block_trial);
}

#[test]
fn ms_ca_matches_loops() {
    run("ms_ca", ms_ca_trial);
}

#[test]
fn dice_and_hd95_match_brute_force() {
    run("metrics", metrics_trial);
}

#[test]
fn task_loss_matches_loops() {
    run("task", task_trial);
}

#[test]
fn hd95_shifted_cube_matches_brute_force() {
    let shape = [8, 8, 8];
    let cube = |o: usize| {
        let mut m = vec![false; 512];
        for z in o..o + 4 {
            for y in 2..6 {
                for x in 2..6 {
                    m[(z * 8 + y) * 8 + x] = true;
                }
            }
        }
        m
    };
    let (p, g) = (cube(1), cube(3));
    let lib = reco_kd::train::metrics::hd95(&p, &g, shape).unwrap();
    let brute = hd95_brute(&p, &g, shape).unwrap();
    assert!((lib - brute).abs() < 1e-12, "{lib} vs {brute}");
    assert!((reco_kd::train::metrics::dice(&p, &g).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn perfect_prediction_scores_one_and_zero() {
    let mut r = rng(9);
    let labels = random_labels(&mut r, [6, 6, 6], 3);
    let ids = labels.ids().unwrap();
    for m in reco_kd::train::metrics::segmentation_metrics(ids, ids, [6, 6, 6], 3) {
        assert_eq!(m.dice, Some(1.0));
        assert_eq!(m.hd95, Some(0.0));
    }
}
