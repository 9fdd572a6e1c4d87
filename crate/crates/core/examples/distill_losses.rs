//! Every distillation term on random two-stage features, plus the
//! gradient each one sends into the student.

use rand::Rng;
use reco_kd::losses::{
    loss_ac, loss_feat, loss_ms_ca, loss_ms_sard, loss_sard, AdapterParams, DistillConfig, GcBlockParams,
    StageFeatures,
};
use reco_kd::masks::{build_activation_masks, build_stage_masks, RegionSelect};
use reco_kd::volume::{downsample_labels, LabelVolume};
use reco_kd::{rng, Result, Tensor};

fn main() -> Result<()> {
    let mut r = rng::stream(3, rng::INIT);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect())
    };
    let teacher = [random(&[8, 8, 8, 8])?, random(&[8, 4, 4, 4])?];
    let student = [random(&[4, 8, 8, 8])?.detach_param(), random(&[4, 4, 4, 4])?.detach_param()];
    let ids: Vec<u16> = (0..512).map(|i| [0, 0, 0, 1, 0, 2, 0, 0][i % 8]).collect();
    let labels = LabelVolume::exclusive([8; 3], 2, ids)?;
    let bundles = [
        Some(build_stage_masks(&labels, &teacher[0], 0.5)?),
        Some(build_stage_masks(&downsample_labels(&labels, [4; 3])?, &teacher[1], 0.5)?),
    ];
    let mut prng = rng::stream(3, rng::HEAD_INIT);
    let adapters = [Some(AdapterParams::new(&mut prng, 4, 8)), Some(AdapterParams::new(&mut prng, 4, 8))];
    let gc = [Some(GcBlockParams::random(&mut prng, 8)), Some(GcBlockParams::random(&mut prng, 8))];
    let a0 = adapters[0].as_ref().expect("adapter");
    let b0 = bundles[0].as_ref().expect("bundle");

    let feat = loss_feat(&teacher[0], &student[0], Some(a0))?;
    let sard = loss_sard(&teacher[0], &student[0], Some(a0), b0, RegionSelect::All)?;
    let fg = loss_sard(&teacher[0], &student[0], Some(a0), b0, RegionSelect::Foreground)?;
    let bg = loss_sard(&teacher[0], &student[0], Some(a0), b0, RegionSelect::Background)?;
    let ac = loss_ac(&b0.activations, &build_activation_masks(&a0.apply(&student[0])?, 0.5)?, 1.0)?;
    println!("feature mse      {:.5}", feat.item());
    println!("region (all)     {:.5} = fg {:.5} + bg {:.5}", sard.item(), fg.item(), bg.item());
    println!("activation cons. {:.5}", ac.item());

    let feats: Vec<StageFeatures> = (0..2)
        .map(|l| StageFeatures {
            teacher: teacher[l].clone(),
            student: student[l].clone(),
        })
        .collect();
    let cfg = DistillConfig::default();
    let ms_sard = loss_ms_sard(&feats, &adapters, &bundles, &cfg)?;
    let ms_ca = loss_ms_ca(&feats, &adapters, &gc, &[0, 1], cfg.lambda)?;
    let total = ms_sard.add(&ms_ca)?;
    total.backward()?;
    println!("multi-scale region {:.5}, context {:.5}", ms_sard.item(), ms_ca.item());
    for (l, s) in student.iter().enumerate() {
        let g = s.grad().unwrap_or_default();
        println!("stage {l}: |dL/dF_S| = {:.5}", g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(())
}
