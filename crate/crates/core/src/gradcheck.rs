//! Central finite-difference gradient checking.
//!
//! The numeric side never records a graph: every perturbed evaluation
//! rebuilds the loss from constant leaves.

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor of the relative error `|a - n| / max(|a|, |n|, floor)`.
/// Keeps coordinates whose true gradient is ~0 from amplifying
/// round-off in the difference quotient.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub coords: usize,
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coords: 200,
            floor: REL_ERR_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checks: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.worst().map_or(0.0, |c| c.rel_err)
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checks.extend(other.checks);
    }
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward() against central differences on up to
/// `opts.coords` coordinates drawn uniformly from all parameters.
/// `loss` must build its graph from the tensors it is handed, in order.
pub fn check_gradients<F, R>(
    params: &[(String, Tensor)],
    loss: F,
    opts: GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
    R: Rng + ?Sized,
{
    let leaves: Vec<Tensor> = params.iter().map(|(_, t)| t.detach_param()).collect();
    let value = loss(&leaves)?;
    if value.numel() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    value.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let sizes: Vec<usize> = params.iter().map(|(_, t)| t.numel()).collect();
    let total: usize = sizes.iter().sum();
    let picks: Vec<usize> = if opts.coords >= total {
        (0..total).collect()
    } else {
        let mut v = sample(rng, total, opts.coords).into_vec();
        v.sort_unstable();
        v
    };

    let constants: Vec<Tensor> = params.iter().map(|(_, t)| t.detach()).collect();
    let mut checks = Vec::with_capacity(picks.len());
    for flat in picks {
        let (mut p, mut idx) = (0, flat);
        while idx >= sizes[p] {
            idx -= sizes[p];
            p += 1;
        }
        let eval = |delta: f64| -> Result<f64> {
            let mut inputs = constants.clone();
            let mut data = inputs[p].to_vec();
            data[idx] += delta;
            inputs[p] = Tensor::new(inputs[p].shape(), data)?;
            Ok(loss(&inputs)?.item())
        };
        let numeric = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
        let a = analytic[p][idx];
        checks.push(CoordCheck {
            param: params[p].0.clone(),
            index: idx,
            analytic: a,
            numeric,
            rel_err: rel_err(a, numeric, opts.floor),
        });
    }
    Ok(GradCheckReport { checks })
}

/// Gradient checks of every loss term on one randomized toy instance:
/// two encoder stages (4 teacher / 2 student channels, `4^3` and `2^3`
/// voxels), three classes, shared context blocks and a logits tensor.
pub fn loss_suite<R: Rng>(rng: &mut R, opts: GradCheckOptions) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use crate::losses::{
        loss_ac, loss_feat, loss_ms_ca, loss_ms_sard, loss_sard, loss_task, AdapterParams, DistillConfig,
        GcBlockParams, StageFeatures,
    };
    use crate::masks::{build_activation_masks, build_stage_masks, RegionSelect};
    use crate::volume::{downsample_labels, LabelVolume};
    use rand::seq::SliceRandom;
    use rand_distr::StandardNormal;

    const CT: usize = 16;
    const CS: usize = 8;
    const K: usize = 3;
    let mut ids: Vec<u16> = (0..64).map(|v| (v % K) as u16).collect();
    ids.shuffle(rng);
    let mut normal = |shape: &[usize]| -> Result<Tensor> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
    };
    let labels = LabelVolume::exclusive([4; 3], K - 1, ids)?;
    let labels_1 = downsample_labels(&labels, [2; 3])?;
    let teacher = [normal(&[CT, 4, 4, 4])?, normal(&[CT, 2, 2, 2])?];
    let bundles = [
        Some(build_stage_masks(&labels, &teacher[0], 0.5)?),
        Some(build_stage_masks(&labels_1, &teacher[1], 0.5)?),
    ];
    let mut base: Vec<(String, Tensor)> = vec![
        ("student.0".into(), normal(&[CS, 4, 4, 4])?),
        ("student.1".into(), normal(&[CS, 2, 2, 2])?),
        ("adapter.0.weight".into(), normal(&[CT, CS, 1, 1, 1])?),
        ("adapter.0.bias".into(), normal(&[CT])?),
        ("adapter.1.weight".into(), normal(&[CT, CS, 1, 1, 1])?),
        ("adapter.1.bias".into(), normal(&[CT])?),
    ];
    let gc_shapes: Vec<Vec<usize>> = {
        let cb = GcBlockParams::bottleneck(CT);
        vec![vec![1, CT, 1, 1, 1], vec![cb, CT, 1, 1, 1], vec![cb], vec![cb], vec![cb], vec![CT, cb, 1, 1, 1], vec![CT]]
    };
    for l in 0..2 {
        for (name, shape) in GcBlockParams::NAMES.iter().zip(&gc_shapes) {
            base.push((format!("gc.{l}.{name}"), normal(shape)?));
        }
        // keep every bottleneck unit active: normalized values are within
        // [-1, 1], so bias > gain puts the relu away from its kink
        let squash = |t: Tensor, mid: f64| Tensor::new(t.shape(), t.data().iter().map(|z| mid + 0.4 * z.tanh()).collect());
        base[6 + 7 * l + 3].1 = squash(normal(&gc_shapes[3])?, 1.0)?;
        base[6 + 7 * l + 4].1 = squash(normal(&gc_shapes[4])?, 2.5)?;
    }
    base.push(("logits".into(), normal(&[K, 4, 4, 4])?));

    // weights keep every term O(1) so no term's round-off swamps another
    // term's gradient inside the total
    let cfg = DistillConfig {
        sard_weight: 1e-3,
        gamma: 1e-3,
        ..DistillConfig::default()
    };
    let stage = |p: &[Tensor]| -> Vec<StageFeatures> {
        (0..2)
            .map(|l| StageFeatures {
                teacher: teacher[l].clone(),
                student: p[l].clone(),
            })
            .collect()
    };
    let adapters = |p: &[Tensor]| -> Vec<Option<AdapterParams>> {
        (0..2).map(|l| Some(AdapterParams::with_tensors(&p[2 + 2 * l..4 + 2 * l]))).collect()
    };
    let gcs = |p: &[Tensor]| -> Vec<Option<GcBlockParams>> {
        (0..2).map(|l| Some(GcBlockParams::with_tensors(&p[6 + 7 * l..13 + 7 * l]))).collect()
    };
    let ms_sard = |p: &[Tensor]| loss_ms_sard(&stage(p), &adapters(p), &bundles, &cfg);
    let ms_ca = |p: &[Tensor]| loss_ms_ca(&stage(p), &adapters(p), &gcs(p), &[0, 1], 1e-4);
    let task = |p: &[Tensor]| loss_task(&p[20], &labels);

    let pick = |idx: &[usize]| -> Vec<(String, Tensor)> { idx.iter().map(|&i| base[i].clone()).collect() };
    let all: Vec<Tensor> = base.iter().map(|(_, t)| t.detach()).collect();
    let mut out = Vec::new();
    // each term is checked only on the parameters it depends on
    let mut run = |name: &'static str, idx: &'static [usize], f: &dyn Fn(&[Tensor]) -> Result<Tensor>| -> Result<()> {
        let widened = |p: &[Tensor]| {
            let mut full = all.clone();
            for (slot, t) in idx.iter().zip(p) {
                full[*slot] = t.clone();
            }
            f(&full)
        };
        let rep = check_gradients(&pick(idx), widened, opts, &mut *rng)?;
        out.push((name, rep));
        Ok(())
    };
    const S0: &[usize] = &[0, 2, 3];
    run("feat", S0, &|p| loss_feat(&teacher[0], &p[0], adapters(p)[0].as_ref()))?;
    run("ac", S0, &|p| {
        let fs = adapters(p)[0].as_ref().expect("adapter").apply(&p[0])?;
        let sm = build_activation_masks(&fs, 0.5)?;
        loss_ac(&bundles[0].as_ref().expect("bundle").activations, &sm, 0.7)
    })?;
    run("sard", S0, &|p| {
        loss_sard(&teacher[0], &p[0], adapters(p)[0].as_ref(), bundles[0].as_ref().expect("bundle"), RegionSelect::All)
    })?;
    const STAGES: &[usize] = &[0, 1, 2, 3, 4, 5];
    run("ms_sard", STAGES, &|p| ms_sard(p))?;
    // gc.{l}.b_v2 (slots 12 and 19) is added to both branches of the
    // shared block and cancels; with every unit active so does
    // gc.{l}.gn_bias (slots 10 and 17), so both have zero gradient
    const CTX: &[usize] = &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 13, 14, 15, 16, 18];
    run("ms_ca", CTX, &|p| ms_ca(p))?;
    run("task", &[20], &|p| task(p))?;
    const ALL: &[usize] = &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 13, 14, 15, 16, 18, 20];
    run("total", ALL, &|p| task(p)?.add(&ms_sard(p)?)?.add(&ms_ca(p)?))?;
    Ok(out)
}
