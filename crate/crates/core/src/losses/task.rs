use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::volume::LabelVolume;

/// Smoothing term of the soft Dice ratio.
pub const DICE_EPS: f64 = 1e-5;

/// `[K, D, H, W]` one-hot encoding of exclusive labels.
pub fn one_hot(labels: &LabelVolume, k: usize) -> Result<Tensor> {
    let ids = labels
        .ids()
        .ok_or_else(|| Error::InvalidData("segmentation targets must be exclusive labels".into()))?;
    let n = ids.len();
    let mut data = vec![0.0; k * n];
    for (v, &id) in ids.iter().enumerate() {
        data[id as usize * n + v] = 1.0;
    }
    let [d, h, w] = labels.shape();
    Tensor::new(&[k, d, h, w], data)
}

/// Soft Dice over foreground classes plus voxel-mean cross-entropy for
/// `[K, D, H, W]` logits.
pub fn loss_task(logits: &Tensor, labels: &LabelVolume) -> Result<Tensor> {
    if logits.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op: "loss_task",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.num_classes(), 0, 0, 0],
        });
    }
    let k = logits.shape()[0];
    if k != labels.num_classes() {
        return Err(Error::ClassCountMismatch {
            logits: k,
            labels: labels.num_classes(),
        });
    }
    if logits.shape()[1..] != labels.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss_task",
            lhs: logits.shape().to_vec(),
            rhs: labels.shape().to_vec(),
        });
    }
    let g = one_hot(labels, k)?;
    let n = labels.voxels() as f64;

    let log_p = logits.log_softmax(0)?;
    let ce = log_p.mul(&g)?.sum_all().scale(-1.0 / n);
    if k < 2 {
        return Ok(ce);
    }

    let p = logits.softmax_temperature(&[0], 1.0)?;
    let inter = p.mul(&g)?.sum(&[1, 2, 3], false)?;
    let p_sum = p.sum(&[1, 2, 3], false)?;
    let g_sum = g.sum(&[1, 2, 3], false)?;
    let dice = inter
        .scale(2.0)
        .add_scalar(DICE_EPS)
        .div(&p_sum.add(&g_sum)?.add_scalar(DICE_EPS))?;
    let mut fg = vec![1.0 / (k - 1) as f64; k];
    fg[0] = 0.0;
    let mean_dice = dice.mul(&Tensor::new(&[k], fg)?)?.sum_all();
    mean_dice.neg().add_scalar(1.0).add(&ce)
}
