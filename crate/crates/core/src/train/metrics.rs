//! Overlap and surface-distance metrics on exclusive label grids.

use serde::Serialize;

use crate::volume::Shape3;

/// `2 |P & G| / (|P| + |G|)`; `None` when both sets are empty.
pub fn dice(pred: &[bool], truth: &[bool]) -> Option<f64> {
    let (mut inter, mut p, mut g) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(truth) {
        inter += (a && b) as usize;
        p += a as usize;
        g += b as usize;
    }
    (p + g > 0).then(|| 2.0 * inter as f64 / (p + g) as f64)
}

/// Voxels of `mask` with at least one 6-neighbour outside the mask;
/// positions beyond the grid count as outside.
pub fn boundary(mask: &[bool], shape: Shape3) -> Vec<bool> {
    let [d, h, w] = shape;
    let at = |z: usize, y: usize, x: usize| mask[(z * h + y) * w + x];
    let mut out = vec![false; mask.len()];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !at(z, y, x) {
                    continue;
                }
                let edge = z == 0 || y == 0 || x == 0 || z + 1 == d || y + 1 == h || x + 1 == w;
                out[(z * h + y) * w + x] = edge
                    || !at(z - 1, y, x)
                    || !at(z + 1, y, x)
                    || !at(z, y - 1, x)
                    || !at(z, y + 1, x)
                    || !at(z, y, x - 1)
                    || !at(z, y, x + 1);
            }
        }
    }
    out
}

/// One-dimensional squared distance transform of sampled function `f`
/// (lower envelope of parabolas rooted at the finite samples).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut k: Option<usize> = None;
    for q in 0..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let Some(mut kk) = k else {
            k = Some(0);
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
            continue;
        };
        loop {
            let p = v[kk];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[kk] {
                // z[0] is -inf, so this never pops the first parabola
                kk -= 1;
                continue;
            }
            kk += 1;
            v[kk] = q;
            z[kk] = s;
            z[kk + 1] = f64::INFINITY;
            break;
        }
        k = Some(kk);
    }
    if k.is_none() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
}

/// Exact squared Euclidean distance (in voxels) from every voxel to the
/// nearest `true` voxel of `seeds`; infinite when `seeds` is empty.
pub fn squared_distance_transform(seeds: &[bool], shape: Shape3) -> Vec<f64> {
    let [d, h, w] = shape;
    let mut g: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let n = d.max(h).max(w);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut pass = |g: &mut Vec<f64>, len: usize, stride: usize, starts: Vec<usize>| {
        for s in starts {
            for i in 0..len {
                f[i] = g[s + i * stride];
            }
            edt_1d(&f[..len], &mut out[..len], &mut v[..len], &mut z[..len + 1]);
            for i in 0..len {
                g[s + i * stride] = out[i];
            }
        }
    };
    let starts_x = (0..d * h).map(|r| r * w).collect();
    pass(&mut g, w, 1, starts_x);
    let starts_y = (0..d).flat_map(|z| (0..w).map(move |x| z * h * w + x)).collect();
    pass(&mut g, h, w, starts_y);
    let starts_z = (0..h * w).collect();
    pass(&mut g, d, h * w, starts_z);
    g
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    values[lo] + (pos - lo as f64) * (values[hi] - values[lo])
}

/// 95th percentile of the pooled symmetric boundary-to-boundary
/// distances in voxel units; `None` if either set is empty.
pub fn hd95(pred: &[bool], truth: &[bool], shape: Shape3) -> Option<f64> {
    let bp = boundary(pred, shape);
    let bg = boundary(truth, shape);
    if !bp.contains(&true) || !bg.contains(&true) {
        return None;
    }
    let to_g = squared_distance_transform(&bg, shape);
    let to_p = squared_distance_transform(&bp, shape);
    let mut d: Vec<f64> = bp
        .iter()
        .zip(&to_g)
        .filter(|(&b, _)| b)
        .map(|(_, &s)| s.sqrt())
        .chain(bg.iter().zip(&to_p).filter(|(&b, _)| b).map(|(_, &s)| s.sqrt()))
        .collect();
    Some(percentile(&mut d, 95.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class_id: usize,
    pub dice: Option<f64>,
    pub hd95: Option<f64>,
}

/// Dice and HD95 for every foreground class of exclusive label grids.
pub fn segmentation_metrics(pred: &[u16], truth: &[u16], shape: Shape3, num_classes: usize) -> Vec<ClassMetrics> {
    (1..num_classes)
        .map(|r| {
            let p: Vec<bool> = pred.iter().map(|&v| v as usize == r).collect();
            let g: Vec<bool> = truth.iter().map(|&v| v as usize == r).collect();
            ClassMetrics {
                class_id: r,
                dice: dice(&p, &g),
                hd95: hd95(&p, &g, shape),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_cases() {
        assert_eq!(dice(&[true, false], &[true, false]), Some(1.0));
        assert_eq!(dice(&[true, false], &[false, true]), Some(0.0));
        assert_eq!(dice(&[false, false], &[false, false]), None);
    }

    #[test]
    fn edt_single_seed() {
        let mut s = vec![false; 27];
        s[0] = true;
        let d = squared_distance_transform(&s, [3, 3, 3]);
        assert_eq!(d[26], 12.0);
        assert_eq!(d[1], 1.0);
        assert!(squared_distance_transform(&[false; 8], [2, 2, 2]).iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&mut [0.0, 10.0], 95.0), 9.5);
        assert_eq!(percentile(&mut [3.0], 95.0), 3.0);
    }

    #[test]
    fn identical_sets_have_zero_hd() {
        let mut m = vec![false; 64];
        m[21] = true;
        m[22] = true;
        assert_eq!(hd95(&m, &m, [4, 4, 4]), Some(0.0));
        assert_eq!(hd95(&m, &[false; 64], [4, 4, 4]), None);
    }
}
