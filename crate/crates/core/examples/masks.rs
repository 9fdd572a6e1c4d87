//! Region, scale and activation masks for one encoder stage.

use reco_kd::masks::{build_stage_masks, RegionSelect};
use reco_kd::volume::LabelVolume;
use reco_kd::{Result, Tensor};

fn main() -> Result<()> {
    // 4x4x4 grid: a big class 1, a single voxel of class 2, background elsewhere
    let ids: Vec<u16> = (0..64).map(|i| if i < 24 { 1 } else if i == 40 { 2 } else { 0 }).collect();
    let labels = LabelVolume::exclusive([4, 4, 4], 2, ids)?;
    let features = Tensor::new(&[3, 4, 4, 4], (0..192).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let bundle = build_stage_masks(&labels, &features, 0.5)?;

    println!("voxels per class {:?}", bundle.scale.counts);
    for r in 0..3 {
        let w: Vec<f64> = (0..64).filter(|&v| bundle.scale.owner[v] == r).map(|v| bundle.scale.values[v]).collect();
        println!("class {r}: scale weight {:.4} per voxel, {:.4} in total", w[0], w.iter().sum::<f64>());
    }
    let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.numel() as f64;
    println!(
        "spatial mask mean {:.6}, channel mask mean {:.6}",
        mean(&bundle.activations.v_s),
        mean(&bundle.activations.v_c)
    );
    let fg: f64 = bundle.sard_weight(RegionSelect::Foreground)?.data().iter().sum();
    let all: f64 = bundle.sard_weight(RegionSelect::All)?.data().iter().sum();
    println!("foreground share of the region weight {:.4}", fg / all);
    Ok(())
}
