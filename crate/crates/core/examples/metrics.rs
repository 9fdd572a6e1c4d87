//! Dice and HD95 for a prediction that misses part of a cube and adds a
//! stray voxel.

use reco_kd::train::metrics::segmentation_metrics;

fn main() {
    let shape = [12, 12, 12];
    let idx = |z: usize, y: usize, x: usize| (z * 12 + y) * 12 + x;
    let mut truth = vec![0u16; 12 * 12 * 12];
    let mut pred = truth.clone();
    for z in 2..8 {
        for y in 2..8 {
            for x in 2..8 {
                truth[idx(z, y, x)] = 1;
                if x < 7 {
                    pred[idx(z, y, x)] = 1;
                }
            }
        }
    }
    pred[idx(11, 11, 11)] = 1;
    truth[idx(10, 2, 2)] = 2;
    pred[idx(10, 2, 2)] = 2;
    for m in segmentation_metrics(&pred, &truth, shape, 3) {
        println!("class {}: dice {:?}, hd95 {:?}", m.class_id, m.dice, m.hd95);
    }
}
