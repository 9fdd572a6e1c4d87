//! Reverse-mode autodiff on a tiny 3D convolution block, checked against
//! central differences.

use reco_kd::gradcheck::{check_gradients, GradCheckOptions};
use reco_kd::{rng, Result, Tensor};

fn main() -> Result<()> {
    let x = Tensor::new(&[1, 2, 4, 4, 4], (0..128).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect())?;
    let w = Tensor::param(&[3, 2, 3, 3, 3], (0..162).map(|i| ((i * 13 % 7) as f64 - 3.0) / 10.0).collect())?;
    let gain = Tensor::param(&[3], vec![1.0, 0.5, 2.0])?;
    let bias = Tensor::param(&[3], vec![0.1, 0.0, -0.1])?;

    let block = |w: &Tensor, gain: &Tensor, bias: &Tensor| -> Result<Tensor> {
        let y = x.conv3d(w, None, [1; 3], [1; 3])?.group_norm(1, gain, bias, 1e-5)?;
        Ok(y.softmax_temperature(&[1], 0.5)?.square().mean_all())
    };

    let loss = block(&w, &gain, &bias)?;
    loss.backward()?;
    println!("loss = {:.6}", loss.item());
    println!("dL/dgain = {:?}", gain.grad().unwrap_or_default());

    let mut r = rng::stream(0, rng::GRADCHECK);
    let report = check_gradients(
        &[("w".into(), w.detach_param()), ("gain".into(), gain.detach_param()), ("bias".into(), bias.detach_param())],
        |p| block(&p[0], &p[1], &p[2]),
        GradCheckOptions::default(),
        &mut r,
    )?;
    println!("{} coordinates checked, max relative error {:.2e}", report.checks.len(), report.max_rel_err());
    Ok(())
}
