use super::params::{adapt, AdapterParams};
use super::DistillConfig;
use crate::error::{Error, Result};
use crate::masks::{build_activation_masks, ActivationMasks, MaskBundle, RegionSelect};
use crate::tensor::Tensor;

/// Teacher and student taps of one encoder stage, each `[C, D, H, W]`.
#[derive(Debug, Clone)]
pub struct StageFeatures {
    pub teacher: Tensor,
    pub student: Tensor,
}

fn check_spatial(op: &'static str, t: &Tensor, s: &Tensor) -> Result<()> {
    if t.rank() != 4 || s.rank() != 4 || t.shape()[1..] != s.shape()[1..] {
        return Err(Error::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: s.shape().to_vec(),
        });
    }
    Ok(())
}

/// Teacher features (detached) and adapted student features.
fn aligned(op: &'static str, teacher: &Tensor, student: &Tensor, adapter: Option<&AdapterParams>) -> Result<(Tensor, Tensor)> {
    check_spatial(op, teacher, student)?;
    let fs = adapt(adapter, student, teacher.shape()[0])?;
    Ok((teacher.detach(), fs))
}

/// Uniform squared error `sum (F_T - f(F_S))^2`.
pub fn loss_feat(teacher: &Tensor, student: &Tensor, adapter: Option<&AdapterParams>) -> Result<Tensor> {
    let (ft, fs) = aligned("loss_feat", teacher, student, adapter)?;
    Ok(ft.sub(&fs)?.square().sum_all())
}

/// `gamma * (|V_S^t - V_S^s|_1 + |V_C^t - V_C^s|_1)`; the teacher side is detached.
pub fn loss_ac(teacher: &ActivationMasks, student: &ActivationMasks, gamma: f64) -> Result<Tensor> {
    let s = teacher.v_s.detach().sub(&student.v_s)?.abs().sum_all();
    let c = teacher.v_c.detach().sub(&student.v_c)?.abs().sum_all();
    Ok(s.add(&c)?.scale(gamma))
}

/// Region-, scale- and activation-weighted squared error over the
/// selected classes.
pub fn loss_sard(
    teacher: &Tensor,
    student: &Tensor,
    adapter: Option<&AdapterParams>,
    bundle: &MaskBundle,
    select: RegionSelect,
) -> Result<Tensor> {
    let (ft, fs) = aligned("loss_sard", teacher, student, adapter)?;
    let w = bundle.sard_weight(select)?;
    if w.shape() != ft.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss_sard masks",
            lhs: w.shape().to_vec(),
            rhs: ft.shape().to_vec(),
        });
    }
    Ok(ft.sub(&fs)?.square().mul(&w)?.sum_all())
}

/// Sum over the configured stages of region distillation plus activation
/// consistency. `features`, `adapters` and `bundles` are indexed by
/// encoder stage; bundles must be present for every selected stage.
pub fn loss_ms_sard(
    features: &[StageFeatures],
    adapters: &[Option<AdapterParams>],
    bundles: &[Option<MaskBundle>],
    config: &DistillConfig,
) -> Result<Tensor> {
    let mut total = Tensor::scalar(0.0);
    if !config.toggles.any_sard() {
        return Ok(total);
    }
    let stages = config.sard_stages(features.len());
    if stages.is_empty() {
        return Err(Error::EmptyStages("loss_ms_sard"));
    }
    for l in stages {
        let f = features
            .get(l)
            .ok_or_else(|| Error::Internal(format!("no features for stage {l}")))?;
        let bundle = bundles
            .get(l)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Internal(format!("no masks for stage {l}")))?;
        let adapter = adapters.get(l).and_then(Option::as_ref);
        if let Some(select) = config.toggles.region_select() {
            total = total.add(&loss_sard(&f.teacher, &f.student, adapter, bundle, select)?.scale(config.sard_weight))?;
        }
        if config.toggles.mask_align {
            let (_, fs) = aligned("loss_ac", &f.teacher, &f.student, adapter)?;
            let student_masks = build_activation_masks(&fs, config.temperature)?;
            total = total.add(&loss_ac(&bundle.activations, &student_masks, config.gamma)?)?;
        }
    }
    Ok(total)
}

pub fn loss_total(task: &Tensor, ms_sard: &Tensor, ms_ca: &Tensor) -> Result<Tensor> {
    for t in [task, ms_sard, ms_ca] {
        if t.numel() != 1 {
            return Err(Error::NonScalarLoss(t.shape().to_vec()));
        }
    }
    task.add(ms_sard)?.add(ms_ca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::build_stage_masks;
    use crate::volume::LabelVolume;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor {
        Tensor::new(shape, v).unwrap()
    }

    #[test]
    fn feat_cases() {
        let a = t(&[1, 1, 1, 1], vec![2.0]);
        let z = t(&[1, 1, 1, 1], vec![0.0]);
        assert_eq!(loss_feat(&a, &z, None).unwrap().item(), 4.0);
        assert_eq!(loss_feat(&a, &a, None).unwrap().item(), 0.0);
        assert!(loss_feat(&a, &t(&[1, 1, 1, 2], vec![0.0; 2]), None).is_err());
        assert!(loss_feat(&t(&[2, 1, 1, 1], vec![0.0; 2]), &a, None).is_err());
    }

    #[test]
    fn ac_hand_built() {
        let mk = |vs: Vec<f64>| ActivationMasks {
            a_s: t(&[1, 1, 2], vec![0.0; 2]),
            a_c: t(&[1], vec![0.0]),
            v_s: t(&[1, 1, 2], vs),
            v_c: t(&[1], vec![1.0]),
            temperature: 0.5,
        };
        let l = loss_ac(&mk(vec![1.5, 0.5]), &mk(vec![1.0, 1.0]), 2.0).unwrap();
        assert_eq!(l.item(), 2.0);
        assert_eq!(loss_ac(&mk(vec![1.5, 0.5]), &mk(vec![1.0, 1.0]), 0.0).unwrap().item(), 0.0);
    }

    #[test]
    fn sard_constant_teacher_single_class() {
        let ft = Tensor::full(&[1, 2, 2, 2], 1.0);
        let fs = t(&[1, 2, 2, 2], (0..8).map(|v| v as f64 * 0.25).collect());
        let labels = LabelVolume::exclusive([2, 2, 2], 0, vec![0; 8]).unwrap();
        let b = build_stage_masks(&labels, &ft, 0.5).unwrap();
        let l = loss_sard(&ft, &fs, None, &b, RegionSelect::All).unwrap().item();
        let expect: f64 = fs.data().iter().map(|v| (1.0 - v).powi(2)).sum::<f64>() / 8.0;
        assert!((l - expect).abs() < 1e-14);
        assert_eq!(loss_sard(&ft, &ft, None, &b, RegionSelect::All).unwrap().item(), 0.0);
    }

    #[test]
    fn total_is_plain_sum() {
        let l = loss_total(&Tensor::scalar(1.0), &Tensor::scalar(2.0), &Tensor::scalar(3.0)).unwrap();
        assert_eq!(l.item(), 6.0);
    }

    #[test]
    fn ms_sard_off_is_zero() {
        let l = loss_ms_sard(&[], &[], &[], &DistillConfig::disabled()).unwrap();
        assert_eq!(l.item(), 0.0);
    }
}
