//! Independent naive-loop and brute-force references shared by the
//! integration tests. Nothing here calls the vectorised code paths.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;
use reco_kd::losses::{AdapterParams, GcBlockParams};
use reco_kd::volume::LabelVolume;
use reco_kd::Tensor;

pub fn rng(seed: u64) -> XorShiftRng {
    XorShiftRng::seed_from_u64(seed)
}

pub fn uniform(r: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

pub fn random_labels(r: &mut impl Rng, shape: [usize; 3], classes: usize) -> LabelVolume {
    let n = shape.iter().product();
    let ids = (0..n).map(|_| r.random_range(0..classes) as u16).collect();
    LabelVolume::exclusive(shape, classes - 1, ids).unwrap()
}

/// Dense `[C][V]` copy of a `[C, ...]` tensor.
pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let c = t.shape()[0];
    let v = t.numel() / c;
    (0..c).map(|i| t.data()[i * v..(i + 1) * v].to_vec()).collect()
}

pub fn adapt_loop(f: &[Vec<f64>], a: Option<&AdapterParams>) -> Vec<Vec<f64>> {
    let Some(a) = a else { return f.to_vec() };
    let (co, ci) = (a.weight.shape()[0], a.weight.shape()[1]);
    let (w, b) = (a.weight.data(), a.bias.data());
    let v = f[0].len();
    let mut out = vec![vec![0.0; v]; co];
    for o in 0..co {
        for x in 0..v {
            let mut s = b[o];
            for i in 0..ci {
                s += w[o * ci + i] * f[i][x];
            }
            out[o][x] = s;
        }
    }
    out
}

pub struct LoopMasks {
    pub v_s: Vec<f64>,
    pub v_c: Vec<f64>,
}

pub fn activation_masks_loop(f: &[Vec<f64>], t: f64) -> LoopMasks {
    let c = f.len();
    let v = f[0].len();
    let mut a_s = vec![0.0; v];
    let mut a_c = vec![0.0; c];
    for ch in 0..c {
        for x in 0..v {
            a_s[x] += f[ch][x].abs() / c as f64;
            a_c[ch] += f[ch][x].abs() / v as f64;
        }
    }
    let softmax = |a: &[f64]| {
        let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = a.iter().map(|x| ((x - m) / t).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect::<Vec<_>>()
    };
    LoopMasks {
        v_s: softmax(&a_s).into_iter().map(|x| x * v as f64).collect(),
        v_c: softmax(&a_c).into_iter().map(|x| x * c as f64).collect(),
    }
}

/// Explicit `sum_r sum_c sum_v M^r S^r V_S V_C (F_T - f(F_S))^2` over
/// the classes in `regions`.
pub fn sard_loop(
    ft: &[Vec<f64>],
    fs: &[Vec<f64>],
    adapter: Option<&AdapterParams>,
    ids: &[u16],
    regions: &[usize],
    t: f64,
) -> f64 {
    let fs = adapt_loop(fs, adapter);
    let m = activation_masks_loop(ft, t);
    let mut total = 0.0;
    for &r in regions {
        let n_r = ids.iter().filter(|&&i| i as usize == r).count();
        if n_r == 0 {
            continue;
        }
        for c in 0..ft.len() {
            for v in 0..ids.len() {
                if ids[v] as usize == r {
                    let d = ft[c][v] - fs[c][v];
                    total += (1.0 / n_r as f64) * m.v_s[v] * m.v_c[c] * d * d;
                }
            }
        }
    }
    total
}

pub fn ac_loop(ft: &[Vec<f64>], fs: &[Vec<f64>], adapter: Option<&AdapterParams>, t: f64, gamma: f64) -> f64 {
    let fs = adapt_loop(fs, adapter);
    let (a, b) = (activation_masks_loop(ft, t), activation_masks_loop(&fs, t));
    let s: f64 = a.v_s.iter().zip(&b.v_s).map(|(x, y)| (x - y).abs()).sum();
    let c: f64 = a.v_c.iter().zip(&b.v_c).map(|(x, y)| (x - y).abs()).sum();
    gamma * (s + c)
}

pub fn gc_block_loop(f: &[Vec<f64>], p: &GcBlockParams) -> Vec<Vec<f64>> {
    let c = f.len();
    let v = f[0].len();
    let cb = p.b_v1.numel();
    let wk = p.w_k.data();
    let logits: Vec<f64> = (0..v).map(|x| (0..c).map(|ch| wk[ch] * f[ch][x]).sum()).collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut ctx = vec![0.0; c];
    for ch in 0..c {
        for x in 0..v {
            ctx[ch] += e[x] / z * f[ch][x];
        }
    }
    let (w1, b1) = (p.w_v1.data(), p.b_v1.data());
    let h: Vec<f64> = (0..cb)
        .map(|j| b1[j] + (0..c).map(|ch| w1[j * c + ch] * ctx[ch]).sum::<f64>())
        .collect();
    let mean = h.iter().sum::<f64>() / cb as f64;
    let var = h.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / cb as f64;
    let (g, bb) = (p.gn_gain.data(), p.gn_bias.data());
    let r: Vec<f64> = (0..cb)
        .map(|j| ((h[j] - mean) / (var + 1e-5).sqrt() * g[j] + bb[j]).max(0.0))
        .collect();
    let (w2, b2) = (p.w_v2.data(), p.b_v2.data());
    (0..c)
        .map(|ch| {
            let d = b2[ch] + (0..cb).map(|j| w2[ch * cb + j] * r[j]).sum::<f64>();
            f[ch].iter().map(|x| x + d).collect()
        })
        .collect()
}

pub fn ms_ca_loop(
    stages: &[(Vec<Vec<f64>>, Vec<Vec<f64>>)],
    adapters: &[Option<AdapterParams>],
    gc: &[GcBlockParams],
    lambda: f64,
) -> f64 {
    let mut total = 0.0;
    for (l, (ft, fs)) in stages.iter().enumerate() {
        let rt = gc_block_loop(ft, &gc[l]);
        let rs = gc_block_loop(&adapt_loop(fs, adapters[l].as_ref()), &gc[l]);
        for c in 0..rt.len() {
            for v in 0..rt[c].len() {
                total += (rt[c][v] - rs[c][v]).powi(2);
            }
        }
    }
    lambda * total
}

pub fn task_loop(logits: &[Vec<f64>], ids: &[u16]) -> f64 {
    let k = logits.len();
    let n = ids.len();
    let mut ce = 0.0;
    let mut inter = vec![0.0; k];
    let mut psum = vec![0.0; k];
    let mut gsum = vec![0.0; k];
    for v in 0..n {
        let m = (0..k).map(|c| logits[c][v]).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..k).map(|c| (logits[c][v] - m).exp()).sum();
        for c in 0..k {
            let p = (logits[c][v] - m).exp() / z;
            let g = (ids[v] as usize == c) as u8 as f64;
            inter[c] += p * g;
            psum[c] += p;
            gsum[c] += g;
            if g == 1.0 {
                ce -= p.ln();
            }
        }
    }
    let eps = 1e-5;
    let dice: f64 = (1..k)
        .map(|c| (2.0 * inter[c] + eps) / (psum[c] + gsum[c] + eps))
        .sum::<f64>()
        / (k - 1) as f64;
    1.0 - dice + ce / n as f64
}

pub fn dice_loop(pred: &[bool], truth: &[bool]) -> Option<f64> {
    let mut inter = 0;
    let mut p = 0;
    let mut g = 0;
    for i in 0..pred.len() {
        if pred[i] && truth[i] {
            inter += 1;
        }
        if pred[i] {
            p += 1;
        }
        if truth[i] {
            g += 1;
        }
    }
    if p + g == 0 {
        None
    } else {
        Some(2.0 * inter as f64 / (p + g) as f64)
    }
}

fn boundary_points(mask: &[bool], [d, h, w]: [usize; 3]) -> Vec<[i64; 3]> {
    let inside = |z: i64, y: i64, x: i64| {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < d
            && (y as usize) < h
            && (x as usize) < w
            && mask[(z as usize * h + y as usize) * w + x as usize]
    };
    let mut pts = Vec::new();
    for z in 0..d as i64 {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                if !inside(z, y, x) {
                    continue;
                }
                let nb = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                if nb.iter().any(|(a, b, c)| !inside(z + a, y + b, x + c)) {
                    pts.push([z, y, x]);
                }
            }
        }
    }
    pts
}

/// Exhaustive pairwise boundary distances, pooled both ways, 95th
/// percentile with linear interpolation.
pub fn hd95_brute(pred: &[bool], truth: &[bool], shape: [usize; 3]) -> Option<f64> {
    let (a, b) = (boundary_points(pred, shape), boundary_points(truth, shape));
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let nearest = |p: &[i64; 3], set: &[[i64; 3]]| {
        set.iter()
            .map(|q| (((p[0] - q[0]).pow(2) + (p[1] - q[1]).pow(2) + (p[2] - q[2]).pow(2)) as f64).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let mut d: Vec<f64> = a.iter().map(|p| nearest(p, &b)).chain(b.iter().map(|p| nearest(p, &a))).collect();
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pos = 0.95 * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(d.len() - 1);
    Some(d[lo] + (pos - lo as f64) * (d[hi] - d[lo]))
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Relative discrepancy used by the oracle trials.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn dims(r: &mut impl Rng) -> [usize; 3] {
    [r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4)]
}

/// One random region-distillation instance, compared against
/// [`sard_loop`] for every region selection.
pub fn sard_trial(seed: u64) -> f64 {
    use reco_kd::masks::{build_stage_masks, RegionSelect};
    let mut r = rng(seed);
    let shape = dims(&mut r);
    let k = r.random_range(2..=3);
    let ct = r.random_range(1..=4);
    let cs = r.random_range(1..=4);
    let t = r.random_range(0.25..4.0);
    let labels = random_labels(&mut r, shape, k);
    let ft = uniform(&mut r, &[ct, shape[0], shape[1], shape[2]], -2.0, 2.0);
    let fs = uniform(&mut r, &[cs, shape[0], shape[1], shape[2]], -2.0, 2.0);
    let adapter = (cs != ct || r.random_bool(0.5)).then(|| AdapterParams::new(&mut r, cs, ct));
    let bundle = build_stage_masks(&labels, &ft, t).unwrap();
    let ids = labels.ids().unwrap();
    let mut worst = 0.0f64;
    for (select, regions) in [
        (RegionSelect::All, (0..k).collect::<Vec<_>>()),
        (RegionSelect::Foreground, (1..k).collect()),
        (RegionSelect::Background, vec![0]),
    ] {
        let lib = reco_kd::losses::loss_sard(&ft, &fs, adapter.as_ref(), &bundle, select)
            .unwrap()
            .item();
        let oracle = sard_loop(&rows(&ft), &rows(&fs), adapter.as_ref(), ids, &regions, t);
        worst = worst.max(rel_diff(lib, oracle));
    }
    let gamma = r.random_range(0.1..2.0);
    let student = reco_kd::masks::build_activation_masks(
        &match &adapter {
            Some(a) => a.apply(&fs).unwrap(),
            None => fs.clone(),
        },
        t,
    )
    .unwrap();
    let lib = reco_kd::losses::loss_ac(&bundle.activations, &student, gamma).unwrap().item();
    worst.max(rel_diff(lib, ac_loop(&rows(&ft), &rows(&fs), adapter.as_ref(), t, gamma)))
}

pub fn gc_block_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = dims(&mut r);
    let c = r.random_range(1..=4);
    let f = uniform(&mut r, &[c, shape[0], shape[1], shape[2]], -2.0, 2.0);
    let p = GcBlockParams::random(&mut r, c);
    let lib = rows(&reco_kd::losses::gc_block(&f, &p).unwrap());
    let oracle = gc_block_loop(&rows(&f), &p);
    lib.iter()
        .flatten()
        .zip(oracle.iter().flatten())
        .map(|(&a, &b)| rel_diff(a, b))
        .fold(0.0, f64::max)
}

pub fn ms_ca_trial(seed: u64) -> f64 {
    use reco_kd::losses::StageFeatures;
    let mut r = rng(seed);
    let stages = r.random_range(1..=2);
    let lambda = r.random_range(0.1..2.0);
    let mut feats = Vec::new();
    let mut loops = Vec::new();
    let mut adapters = Vec::new();
    let mut gc = Vec::new();
    for _ in 0..stages {
        let shape = dims(&mut r);
        let ct = r.random_range(1..=4);
        let cs = r.random_range(1..=4);
        let ft = uniform(&mut r, &[ct, shape[0], shape[1], shape[2]], -2.0, 2.0);
        let fs = uniform(&mut r, &[cs, shape[0], shape[1], shape[2]], -2.0, 2.0);
        adapters.push((cs != ct).then(|| AdapterParams::new(&mut r, cs, ct)));
        gc.push(GcBlockParams::random(&mut r, ct));
        loops.push((rows(&ft), rows(&fs)));
        feats.push(StageFeatures { teacher: ft, student: fs });
    }
    let all: Vec<usize> = (0..stages).collect();
    let gc_opt: Vec<Option<GcBlockParams>> = gc.iter().cloned().map(Some).collect();
    let lib = reco_kd::losses::loss_ms_ca(&feats, &adapters, &gc_opt, &all, lambda)
        .unwrap()
        .item();
    rel_diff(lib, ms_ca_loop(&loops, &adapters, &gc, lambda))
}

/// Random prediction and truth grids; returns the worst Dice and HD95
/// discrepancy against [`dice_loop`] and [`hd95_brute`]. A `None` on one
/// side only counts as a total mismatch.
pub fn metrics_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = dims(&mut r);
    let k = r.random_range(2..=3);
    let n = shape.iter().product();
    let pred: Vec<u16> = (0..n).map(|_| r.random_range(0..k) as u16).collect();
    let truth: Vec<u16> = (0..n).map(|_| r.random_range(0..k) as u16).collect();
    let lib = reco_kd::train::metrics::segmentation_metrics(&pred, &truth, shape, k);
    let mut worst = 0.0f64;
    let cmp = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => rel_diff(a, b),
        (None, None) => 0.0,
        _ => f64::INFINITY,
    };
    for m in lib {
        let p: Vec<bool> = pred.iter().map(|&v| v as usize == m.class_id).collect();
        let g: Vec<bool> = truth.iter().map(|&v| v as usize == m.class_id).collect();
        worst = worst.max(cmp(m.dice, dice_loop(&p, &g)));
        worst = worst.max(cmp(m.hd95, hd95_brute(&p, &g, shape)));
    }
    worst
}

pub fn task_trial(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = dims(&mut r);
    let k = r.random_range(2..=3);
    let labels = random_labels(&mut r, shape, k);
    let logits = uniform(&mut r, &[k, shape[0], shape[1], shape[2]], -3.0, 3.0);
    let lib = reco_kd::losses::loss_task(&logits, &labels).unwrap().item();
    rel_diff(lib, task_loop(&rows(&logits), labels.ids().unwrap()))
}
