use super::distill::StageFeatures;
use super::params::{adapt, AdapterParams, GcBlockParams, GC_GN_EPS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Global-context block on a `[C, D, H, W]` feature map:
/// `R(F) = F + W_v2 * ReLU(GN(W_v1 * sum_j softmax_j(W_k F) F_j))`.
pub fn gc_block(f: &Tensor, p: &GcBlockParams) -> Result<Tensor> {
    let s = f.shape();
    if s.len() != 4 || s[0] != p.channels() {
        return Err(Error::ChannelMismatch {
            expected: p.channels(),
            actual: s.first().copied().unwrap_or(0),
        });
    }
    let (c, d, h, w) = (s[0], s[1], s[2], s[3]);
    let x = f.reshape(&[1, c, d, h, w])?;
    let logits = x.conv3d(&p.w_k, None, [1; 3], [0; 3])?;
    let attn = logits.softmax_temperature(&[2, 3, 4], 1.0)?;
    let context = x.mul(&attn)?.sum(&[2, 3, 4], true)?;
    let hidden = context
        .conv3d(&p.w_v1, Some(&p.b_v1), [1; 3], [0; 3])?
        .group_norm(1, &p.gn_gain, &p.gn_bias, GC_GN_EPS)?
        .relu();
    let delta = hidden.conv3d(&p.w_v2, Some(&p.b_v2), [1; 3], [0; 3])?;
    x.add(&delta)?.reshape(&[c, d, h, w])
}

/// `lambda * sum_l |R_l(F_T) - R_l(f(F_S))|^2` over `stages`, with one
/// shared block per stage (`gc[l]`) and the teacher path detached.
pub fn loss_ms_ca(
    features: &[StageFeatures],
    adapters: &[Option<AdapterParams>],
    gc: &[Option<GcBlockParams>],
    stages: &[usize],
    lambda: f64,
) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    for &l in stages {
        let f = features
            .get(l)
            .ok_or_else(|| Error::Internal(format!("no features for stage {l}")))?;
        let p = gc
            .get(l)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Internal(format!("no context block for stage {l}")))?;
        if f.teacher.shape()[1..] != f.student.shape()[1..] {
            return Err(Error::ShapeMismatch {
                op: "loss_ms_ca",
                lhs: f.teacher.shape().to_vec(),
                rhs: f.student.shape().to_vec(),
            });
        }
        let fs = adapt(adapters.get(l).and_then(Option::as_ref), &f.student, f.teacher.shape()[0])?;
        let rt = gc_block(&f.teacher.detach(), p)?;
        let rs = gc_block(&fs, p)?;
        total = total.add(&rt.sub(&rs)?.square().sum_all())?;
    }
    Ok(total.scale(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn zero_output_projection_is_identity() {
        let mut r = rng::stream(0, 99);
        let p = GcBlockParams::new(&mut r, 4);
        let f = Tensor::new(&[4, 2, 2, 2], (0..32).map(|v| (v as f64).sin()).collect()).unwrap();
        assert_eq!(gc_block(&f, &p).unwrap().data(), f.data());
    }

    #[test]
    fn agreement_gives_zero() {
        let mut r = rng::stream(1, 99);
        let p = GcBlockParams::random(&mut r, 2);
        let f = Tensor::new(&[2, 1, 2, 2], vec![0.3, -1.0, 2.0, 0.5, 0.1, 0.2, -0.3, 0.9]).unwrap();
        let feats = [StageFeatures {
            teacher: f.clone(),
            student: f,
        }];
        let l = loss_ms_ca(&feats, &[None], &[Some(p)], &[0], 1.0).unwrap();
        assert_eq!(l.item(), 0.0);
    }
}
