//! Deterministic training loops, evaluation and ablation runs.
//!
//! Optimisation is SGD with Nesterov momentum and a polynomial learning
//! rate `lr0 * (1 - step / total)^p`. Each sample is forwarded alone and
//! contributes `loss / batch_size` to the accumulated gradients; with
//! per-sample group norm this is identical to a batched pass.

mod ablation;
pub mod metrics;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss_ms_ca, loss_ms_sard, loss_task, AdapterParams, DistillConfig, GcBlockParams, StageFeatures};
use crate::masks::{build_stage_masks, MaskBundle};
use crate::model::{build_network, encoder_taps, forward_with_taps, save_checkpoint, Network, NetworkPlan};
use crate::rng::{self, Prng};
use crate::tensor::Tensor;
use crate::volume::{downsample_labels, ImageVolume, LabelVolume, Shape3};

pub use ablation::{run_ablation, AblationEntry, AblationReport, AblationRow};
pub use metrics::ClassMetrics;

/// One image/label pair.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub image: ImageVolume,
    pub labels: LabelVolume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub poly_exponent: f64,
    /// Global L2 gradient-norm cap; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
    /// Random crop size; `None` trains on whole volumes.
    pub patch_size: Option<Shape3>,
    /// Save a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Share of cases held out for best-checkpoint selection.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 2,
            lr0: 0.01,
            momentum: 0.99,
            nesterov: true,
            weight_decay: 3e-5,
            poly_exponent: 0.9,
            max_grad_norm: Some(12.0),
            seed: 0,
            patch_size: None,
            checkpoint_every: 0,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, plan: &NetworkPlan) -> Result<()> {
        let cfg = |path: &str, msg: String| Err(Error::config(format!("train.{path}"), msg));
        if self.epochs == 0 {
            return cfg("epochs", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return cfg("batch_size", "must be >= 1".into());
        }
        if !(self.lr0 >= 0.0) || !self.lr0.is_finite() {
            return cfg("lr0", format!("must be finite and >= 0, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return cfg("momentum", format!("must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return cfg("weight_decay", "must be >= 0".into());
        }
        if !(self.poly_exponent >= 0.0) {
            return cfg("poly_exponent", "must be >= 0".into());
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return cfg("max_grad_norm", "must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return cfg("val_fraction", format!("must be in [0, 1), got {}", self.val_fraction));
        }
        if let Some(p) = self.patch_size {
            if let Err(e) = plan.check_input(p) {
                return cfg("patch_size", e.to_string());
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        self.lr0 * (1.0 - step as f64 / total as f64).max(0.0).powf(self.poly_exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub lr: f64,
    pub loss_task: f64,
    pub loss_ms_sard: f64,
    pub loss_ms_ca: f64,
    pub loss_total: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("step,lr,loss_task,loss_ms_sard,loss_ms_ca,loss_total\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.lr, r.loss_task, r.loss_ms_sard, r.loss_ms_ca, r.loss_total
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationRow {
    pub epoch: usize,
    pub mdice: f64,
}

/// Deterministic train/validation split of `n` case indices by a seeded
/// shuffle. With fewer than two cases the validation set reuses training.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

pub fn split_cases(n: usize, seed: u64, val_fraction: f64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, rng::SPLIT));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    if n_val == 0 {
        idx.sort_unstable();
        return Split {
            val: idx.clone(),
            train: idx,
        };
    }
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Split { train, val }
}

/// SGD with optional Nesterov momentum, L2 weight decay and global
/// gradient-norm clipping (applied before weight decay).
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub max_grad_norm: Option<f64>,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, nesterov: bool, weight_decay: f64) -> Self {
        Self {
            momentum,
            nesterov,
            weight_decay,
            max_grad_norm: None,
            velocity: Vec::new(),
        }
    }

    pub fn with_clipping(mut self, max_grad_norm: Option<f64>) -> Self {
        self.max_grad_norm = max_grad_norm;
        self
    }

    /// New leaves after one update with the gradients held by `params`.
    pub fn step(&mut self, params: &[Tensor], lr: f64) -> Result<Vec<Tensor>> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        let grads: Vec<Vec<f64>> = params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
            .collect();
        let clip = match self.max_grad_norm {
            Some(m) => {
                let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
                if norm > m {
                    m / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let mu = self.momentum;
        params
            .iter()
            .zip(grads)
            .zip(self.velocity.iter_mut())
            .map(|((p, g), v)| {
                let data = p
                    .data()
                    .iter()
                    .zip(g)
                    .zip(v.iter_mut())
                    .map(|((&x, g), v)| {
                        let g = clip * g + self.weight_decay * x;
                        *v = mu * *v + g;
                        let d = if self.nesterov { g + mu * *v } else { *v };
                        x - lr * d
                    })
                    .collect();
                Tensor::param(p.shape(), data)
            })
            .collect()
    }
}

/// Scalar loss terms of one sample.
struct Terms {
    task: Tensor,
    ms_sard: Tensor,
    ms_ca: Tensor,
}

fn crop_case(case: &Case, patch: Option<Shape3>, rng: &mut Prng) -> Result<Case> {
    let Some(size) = patch else {
        return Ok(case.clone());
    };
    let shape = case.image.shape();
    if size == shape {
        return Ok(case.clone());
    }
    let mut origin = [0; 3];
    for i in 0..3 {
        if size[i] > shape[i] {
            return Err(Error::Geometry(format!("patch {size:?} larger than volume {shape:?}")));
        }
        origin[i] = rng.random_range(0..=shape[i] - size[i]);
    }
    Ok(Case {
        id: case.id.clone(),
        image: case.image.crop(origin, size)?,
        labels: case.labels.crop(origin, size)?,
    })
}

/// Runs the SGD loop over `params`; `loss` builds the per-sample terms
/// from the current parameters and `on_epoch` sees the parameters after
/// every epoch.
fn optimize(
    mut params: Vec<Tensor>,
    cases: &[Case],
    train_idx: &[usize],
    cfg: &TrainConfig,
    mut loss: impl FnMut(&[Tensor], &Case) -> Result<Terms>,
    mut on_epoch: impl FnMut(usize, &[Tensor], &Prng) -> Result<()>,
) -> Result<(Vec<Tensor>, Vec<MetricRow>)> {
    let mut shuffle = rng::stream(cfg.seed, rng::SHUFFLE);
    let mut crop = rng::stream(cfg.seed, rng::CROP);
    let steps_per_epoch = train_idx.len().div_ceil(cfg.batch_size);
    let total = cfg.epochs * steps_per_epoch;
    let mut opt = Sgd::new(cfg.momentum, cfg.nesterov, cfg.weight_decay).with_clipping(cfg.max_grad_norm);
    let mut rows = Vec::with_capacity(total);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order = train_idx.to_vec();
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            let lr = cfg.lr_at(step, total);
            let inv = 1.0 / batch.len() as f64;
            let mut acc = [0.0; 4];
            for &i in batch {
                let case = crop_case(&cases[i], cfg.patch_size, &mut crop)?;
                let t = loss(&params, &case)?;
                let total_loss = t.task.add(&t.ms_sard)?.add(&t.ms_ca)?;
                let value = total_loss.item();
                if !value.is_finite() {
                    return Err(Error::Divergence { step, loss: value });
                }
                total_loss.scale(inv).backward()?;
                for (a, v) in acc.iter_mut().zip([t.task.item(), t.ms_sard.item(), t.ms_ca.item(), value]) {
                    *a += v * inv;
                }
            }
            params = opt.step(&params, lr)?;
            rows.push(MetricRow {
                step,
                lr,
                loss_task: acc[0],
                loss_ms_sard: acc[1],
                loss_ms_ca: acc[2],
                loss_total: acc[3],
            });
            step += 1;
        }
        on_epoch(epoch, &params, &shuffle)?;
    }
    Ok((params, rows))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation network, infer mode.
    pub best: Network,
    /// Network after the last step, infer mode.
    pub last: Network,
    pub best_epoch: usize,
    pub metrics: Vec<MetricRow>,
    pub validation: Vec<ValidationRow>,
    pub split: Split,
}

/// Training-only parameters attached to a student during distillation.
#[derive(Debug, Clone)]
pub struct DistillHead {
    pub adapters: Vec<Option<AdapterParams>>,
    pub gc: Vec<Option<GcBlockParams>>,
}

impl DistillHead {
    /// Adapters where student and teacher widths differ and context blocks
    /// on the alignment stages, drawn from the `HEAD_INIT` stream.
    pub fn new(teacher: &NetworkPlan, student: &NetworkPlan, cfg: &DistillConfig, seed: u64) -> Self {
        Self::build(teacher, student, cfg, seed, GcBlockParams::new)
    }

    /// Like [`DistillHead::new`] but with every context-block weight
    /// random (nonzero output branch), for gradient checks.
    pub fn random(teacher: &NetworkPlan, student: &NetworkPlan, cfg: &DistillConfig, seed: u64) -> Self {
        Self::build(teacher, student, cfg, seed, GcBlockParams::random)
    }

    fn build(
        teacher: &NetworkPlan,
        student: &NetworkPlan,
        cfg: &DistillConfig,
        seed: u64,
        gc_init: fn(&mut Prng, usize) -> GcBlockParams,
    ) -> Self {
        let mut r = rng::stream(seed, rng::HEAD_INIT);
        let l = teacher.num_stages();
        let active = cfg.active_stages(l);
        let adapters = (0..l)
            .map(|s| {
                let (ct, cs) = (teacher.stage_channels(s), student.stage_channels(s));
                (active.contains(&s) && ct != cs).then(|| AdapterParams::new(&mut r, cs, ct))
            })
            .collect();
        let ctx = if cfg.toggles.msca { cfg.context_stages(l) } else { Vec::new() };
        let gc = (0..l)
            .map(|s| ctx.contains(&s).then(|| gc_init(&mut r, teacher.stage_channels(s))))
            .collect();
        Self { adapters, gc }
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        let mut t = Vec::new();
        for a in self.adapters.iter().flatten() {
            t.extend(a.tensors());
        }
        for g in self.gc.iter().flatten() {
            t.extend(g.tensors());
        }
        t
    }

    /// Names matching [`DistillHead::tensors`], e.g. `adapter.0.weight`, `gc.1.w_k`.
    pub fn names(&self) -> Vec<String> {
        let mut n = Vec::new();
        for (l, a) in self.adapters.iter().enumerate() {
            if a.is_some() {
                n.extend(["weight", "bias"].map(|p| format!("adapter.{l}.{p}")));
            }
        }
        for (l, g) in self.gc.iter().enumerate() {
            if g.is_some() {
                n.extend(GcBlockParams::NAMES.map(|p| format!("gc.{l}.{p}")));
            }
        }
        n
    }

    pub fn with_tensors(&self, t: &[Tensor]) -> Self {
        let mut off = 0;
        let adapters = self
            .adapters
            .iter()
            .map(|a| {
                a.as_ref().map(|_| {
                    off += 2;
                    AdapterParams::with_tensors(&t[off - 2..off])
                })
            })
            .collect();
        let gc = self
            .gc
            .iter()
            .map(|g| {
                g.as_ref().map(|_| {
                    off += 7;
                    GcBlockParams::with_tensors(&t[off - 7..off])
                })
            })
            .collect();
        Self { adapters, gc }
    }
}

fn squeeze_batch(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    t.reshape(&s[1..])
}

/// Distillation terms for one sample given student taps.
pub fn distill_terms(
    teacher: &Network,
    student_taps: &[Tensor],
    head: &DistillHead,
    cfg: &DistillConfig,
    x: &Tensor,
    labels: &LabelVolume,
) -> Result<(Tensor, Tensor)> {
    let l = teacher.plan().num_stages();
    let teacher_taps = encoder_taps(teacher, x)?;
    let active = cfg.active_stages(l);
    let mut feats = Vec::with_capacity(l);
    for (t, s) in teacher_taps.iter().zip(student_taps) {
        if t.shape()[2..] != s.shape()[2..] {
            return Err(Error::Internal(format!(
                "teacher tap {:?} and student tap {:?} disagree spatially",
                t.shape(),
                s.shape()
            )));
        }
        feats.push(StageFeatures {
            teacher: squeeze_batch(&t.detach())?,
            student: squeeze_batch(s)?,
        });
    }
    let mut bundles: Vec<Option<MaskBundle>> = vec![None; l];
    if cfg.toggles.any_sard() {
        for &s in &active {
            let f = &feats[s].teacher;
            let shape = [f.shape()[1], f.shape()[2], f.shape()[3]];
            let lab = downsample_labels(labels, shape)?;
            bundles[s] = Some(build_stage_masks(&lab, f, cfg.temperature)?);
        }
    }
    let ms_sard = loss_ms_sard(&feats, &head.adapters, &bundles, cfg)?;
    let ms_ca = if cfg.toggles.msca {
        loss_ms_ca(&feats, &head.adapters, &head.gc, &cfg.context_stages(l), cfg.lambda)?
    } else {
        Tensor::scalar(0.0)
    };
    Ok((ms_sard, ms_ca))
}

fn task_on(net: &Network, case: &Case) -> Result<(Tensor, Vec<Tensor>, Tensor)> {
    let x = case.image.to_tensor();
    let (logits, taps) = forward_with_taps(net, &x)?;
    let task = loss_task(&squeeze_batch(&logits)?, &case.labels)?;
    Ok((task, taps, x))
}

/// Shared loop for plain and distilled training.
fn run(
    cases: &[Case],
    plan: &NetworkPlan,
    teacher: Option<(&Network, &DistillConfig)>,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate(plan)?;
    if cases.is_empty() {
        return Err(Error::InvalidData("no training cases".into()));
    }
    let split = split_cases(cases.len(), cfg.seed, cfg.val_fraction);
    let student = build_network(plan, cfg.seed)?;
    let n_student = student.params().len();
    let teacher = match teacher {
        Some((t, d)) if d.toggles.any() => {
            d.validate(plan.num_stages())?;
            if t.plan().num_stages() != plan.num_stages() || t.plan().strides != plan.strides {
                return Err(Error::Internal("teacher and student plans differ beyond widths".into()));
            }
            Some((t.frozen(), d.clone(), DistillHead::new(t.plan(), plan, d, cfg.seed)))
        }
        _ => None,
    };
    let mut params = student.params().to_vec();
    if let Some((_, _, head)) = &teacher {
        params.extend(head.tensors());
    }

    let mut best: Option<(f64, usize, Network)> = None;
    let mut validation = Vec::new();
    let val_cases: Vec<Case> = split.val.iter().map(|&i| cases[i].clone()).collect();
    let (final_params, metrics) = optimize(
        params,
        cases,
        &split.train,
        cfg,
        |p, case| {
            let net = student.with_params(p[..n_student].to_vec())?;
            let (task, taps, x) = task_on(&net, case)?;
            let (ms_sard, ms_ca) = match &teacher {
                Some((t, d, head)) => {
                    let head = head.with_tensors(&p[n_student..]);
                    distill_terms(t, &taps, &head, d, &x, &case.labels)?
                }
                None => (Tensor::scalar(0.0), Tensor::scalar(0.0)),
            };
            Ok(Terms { task, ms_sard, ms_ca })
        },
        |epoch, p, shuffle| {
            let net = student.with_params(p[..n_student].to_vec())?;
            let mdice = evaluate(&net, &val_cases)?.mdice;
            validation.push(ValidationRow { epoch, mdice });
            if best.as_ref().is_none_or(|(b, _, _)| mdice > *b) {
                best = Some((mdice, epoch, net.frozen()));
            }
            if let Some(dir) = out {
                if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 {
                    let path = dir.join("checkpoints").join(format!("epoch_{:04}.json", epoch + 1));
                    save_checkpoint(&path, &net, Some(shuffle), (epoch + 1) * split.train.len().div_ceil(cfg.batch_size))?;
                }
            }
            Ok(())
        },
    )?;
    let last = student.with_params(final_params[..n_student].to_vec())?.frozen();
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        last,
        best_epoch,
        metrics,
        validation,
        split,
    })
}

/// Supervised training of any plan on the task loss alone.
pub fn train(cases: &[Case], plan: &NetworkPlan, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    run(cases, plan, None, cfg, out)
}

/// Supervised training of a full-width plan.
pub fn train_teacher(cases: &[Case], plan: &NetworkPlan, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    if plan.width_factor != 0 {
        return Err(Error::InvalidPlan(format!(
            "teacher plans need width factor 0, got {}",
            plan.width_factor
        )));
    }
    train(cases, plan, cfg, out)
}

/// Student training on the task loss plus the enabled distillation terms
/// against a frozen teacher. Adapters and context blocks are discarded;
/// the outcome holds student networks only.
pub fn distill_student(
    cases: &[Case],
    teacher: &Network,
    student_plan: &NetworkPlan,
    distill: &DistillConfig,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    run(cases, student_plan, Some((teacher, distill)), cfg, out)
}

/// Argmax class per voxel (first maximum on ties).
pub fn predict(net: &Network, image: &ImageVolume) -> Result<Vec<u16>> {
    let (logits, _) = forward_with_taps(&net.frozen(), &image.to_tensor())?;
    let k = logits.shape()[1];
    let n = image.shape().iter().product::<usize>();
    let y = logits.data();
    Ok((0..n)
        .map(|v| {
            let mut best = 0;
            for c in 1..k {
                if y[c * n + v] > y[best * n + v] {
                    best = c;
                }
            }
            best as u16
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub case_id: String,
    pub classes: Vec<ClassMetrics>,
    pub mean_dice: Option<f64>,
    #[serde(skip)]
    pub inference_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub cases: Vec<CaseReport>,
    /// Per foreground class, means over the cases where the value is defined.
    pub per_class: Vec<ClassMetrics>,
    /// Mean of the defined per-class Dice means (0 when none is defined).
    pub mdice: f64,
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = v.flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalReport {
    pub fn class_dice(&self, class_id: usize) -> Option<f64> {
        self.per_class.iter().find(|c| c.class_id == class_id).and_then(|c| c.dice)
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
        let mut s = String::from("case_id,class_id,dice,hd95\n");
        for c in &self.cases {
            for m in &c.classes {
                s.push_str(&format!("{},{},{},{}\n", c.case_id, m.class_id, f(m.dice), f(m.hd95)));
            }
        }
        for m in &self.per_class {
            s.push_str(&format!("mean,{},{},{}\n", m.class_id, f(m.dice), f(m.hd95)));
        }
        s
    }
}

fn case_report(net: &Network, case: &Case) -> Result<CaseReport> {
    let truth = case
        .labels
        .ids()
        .ok_or_else(|| Error::InvalidData("evaluation needs exclusive labels".into()))?;
    let t0 = Instant::now();
    let pred = predict(net, &case.image)?;
    let inference_seconds = t0.elapsed().as_secs_f64();
    let classes = metrics::segmentation_metrics(&pred, truth, case.labels.shape(), net.plan().num_classes);
    Ok(CaseReport {
        case_id: case.id.clone(),
        mean_dice: mean_defined(classes.iter().map(|c| c.dice)),
        classes,
        inference_seconds,
    })
}

/// Per-class Dice and HD95 (voxel units) of argmax predictions.
pub fn evaluate(net: &Network, cases: &[Case]) -> Result<EvalReport> {
    evaluate_threads(net, cases, 1)
}

/// [`evaluate`] with cases spread over up to `threads` workers; the
/// report does not depend on the thread count.
pub fn evaluate_threads(net: &Network, cases: &[Case], threads: usize) -> Result<EvalReport> {
    let frozen = net.frozen();
    let k = net.plan().num_classes;
    let threads = threads.clamp(1, cases.len().max(1));
    let reports: Vec<CaseReport> = if threads == 1 {
        cases.iter().map(|c| case_report(&frozen, c)).collect::<Result<_>>()?
    } else {
        let chunk = cases.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = cases
                .chunks(chunk)
                .map(|part| {
                    let frozen = &frozen;
                    s.spawn(move || part.iter().map(|c| case_report(frozen, c)).collect::<Result<Vec<_>>>())
                })
                .collect();
            let mut all = Vec::with_capacity(cases.len());
            for h in handles {
                all.extend(h.join().map_err(|_| Error::Internal("evaluation worker panicked".into()))??);
            }
            Ok::<_, Error>(all)
        })?
    };
    let per_class: Vec<ClassMetrics> = (1..k)
        .map(|r| ClassMetrics {
            class_id: r,
            dice: mean_defined(reports.iter().map(|c| c.classes[r - 1].dice)),
            hd95: mean_defined(reports.iter().map(|c| c.classes[r - 1].hd95)),
        })
        .collect();
    let mdice = mean_defined(per_class.iter().map(|c| c.dice)).unwrap_or(0.0);
    Ok(EvalReport {
        cases: reports,
        per_class,
        mdice,
    })
}

impl EvalReport {
    /// Per-case inference wall-clock, kept out of the reproducible report.
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("case_id,inference_seconds\n");
        for c in &self.cases {
            s.push_str(&format!("{},{}\n", c.case_id, c.inference_seconds));
        }
        s
    }
}
