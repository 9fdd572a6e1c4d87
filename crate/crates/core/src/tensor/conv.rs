use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};

/// Per-axis (depth, height, width) integer parameter.
pub type Triple = [usize; 3];

/// Upper bound on im2col buffer elements per chunk.
const COL_BUDGET: usize = 1 << 22;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    input: Triple,
    o: usize,
    kernel: Triple,
    stride: Triple,
    pad: Triple,
    out: Triple,
}

impl Geometry {
    fn in_vox(&self) -> usize {
        self.input.iter().product()
    }
    fn out_vox(&self) -> usize {
        self.out.iter().product()
    }
    fn k(&self) -> usize {
        self.c * self.kernel.iter().product::<usize>()
    }
    fn pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
    fn plane(&self) -> usize {
        self.out[1] * self.out[2]
    }
    fn chunk_planes(&self) -> usize {
        (COL_BUDGET / (self.k() * self.plane()).max(1)).clamp(1, self.out[0])
    }
}

/// `c = alpha * a·b + beta * c` over strided row/column views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Output columns `lo..hi` whose stride-1 input column `xo + tap - pad`
/// lies inside `0..iw`.
fn valid_span(tap: usize, pad: usize, ow: usize, iw: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(tap).min(ow);
    let hi = (iw + pad).saturating_sub(tap).min(ow).max(lo);
    (lo, hi)
}

/// Fills `col` ([K, planes*plane]) for output depth planes `z0..z0+planes` of one sample.
fn im2col(g: &Geometry, x: &[f64], z0: usize, planes: usize, col: &mut [f64]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [_, oh, ow] = g.out;
    let cp = planes * g.plane();
    let mut row = 0;
    for ci in 0..g.c {
        let xc = &x[ci * id * ih * iw..(ci + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    let dst = &mut col[row * cp..(row + 1) * cp];
                    for zz in 0..planes {
                        let iz = ((z0 + zz) * sd + a) as isize - pd as isize;
                        for y in 0..oh {
                            let iy = (y * sh + b) as isize - ph as isize;
                            let seg = &mut dst[(zz * oh + y) * ow..(zz * oh + y + 1) * ow];
                            if iz < 0 || iz >= id as isize || iy < 0 || iy >= ih as isize {
                                seg.fill(0.0);
                                continue;
                            }
                            let src = &xc[(iz as usize * ih + iy as usize) * iw..][..iw];
                            if sw == 1 {
                                let (lo, hi) = valid_span(c, pw, ow, iw);
                                seg[..lo].fill(0.0);
                                seg[hi..].fill(0.0);
                                if lo < hi {
                                    seg[lo..hi].copy_from_slice(&src[lo + c - pw..hi + c - pw]);
                                }
                                continue;
                            }
                            for (xo, v) in seg.iter_mut().enumerate() {
                                let ix = (xo * sw + c) as isize - pw as isize;
                                *v = if ix >= 0 && ix < iw as isize { src[ix as usize] } else { 0.0 };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `col` into `dx`.
fn col2im(g: &Geometry, col: &[f64], z0: usize, planes: usize, dx: &mut [f64]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let [_, oh, ow] = g.out;
    let cp = planes * g.plane();
    let mut row = 0;
    for ci in 0..g.c {
        let dxc = &mut dx[ci * id * ih * iw..(ci + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for c in 0..kw {
                    let src = &col[row * cp..(row + 1) * cp];
                    for zz in 0..planes {
                        let iz = ((z0 + zz) * sd + a) as isize - pd as isize;
                        if iz < 0 || iz >= id as isize {
                            continue;
                        }
                        for y in 0..oh {
                            let iy = (y * sh + b) as isize - ph as isize;
                            if iy < 0 || iy >= ih as isize {
                                continue;
                            }
                            let seg = &src[(zz * oh + y) * ow..(zz * oh + y + 1) * ow];
                            let dst = &mut dxc[(iz as usize * ih + iy as usize) * iw..][..iw];
                            if sw == 1 {
                                let (lo, hi) = valid_span(c, pw, ow, iw);
                                if lo < hi {
                                    for (d, &v) in dst[lo + c - pw..hi + c - pw].iter_mut().zip(&seg[lo..hi]) {
                                        *d += v;
                                    }
                                }
                                continue;
                            }
                            for (xo, &v) in seg.iter().enumerate() {
                                let ix = (xo * sw + c) as isize - pw as isize;
                                if ix >= 0 && ix < iw as isize {
                                    dst[ix as usize] += v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn conv_forward(g: &Geometry, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (k, p) = (g.k(), g.out_vox());
    let mut out = vec![0.0; g.n * g.o * p];
    for n in 0..g.n {
        let xn = &x[n * g.c * g.in_vox()..(n + 1) * g.c * g.in_vox()];
        let on = &mut out[n * g.o * p..(n + 1) * g.o * p];
        if g.pointwise() {
            gemm(g.o, k, p, w, (k, 1), xn, (p, 1), 0.0, on, (p, 1));
        } else {
            let chunk = g.chunk_planes();
            let mut col = vec![0.0; k * chunk * g.plane()];
            let mut z0 = 0;
            while z0 < g.out[0] {
                let planes = chunk.min(g.out[0] - z0);
                let cp = planes * g.plane();
                im2col(g, xn, z0, planes, &mut col[..k * cp]);
                let off = z0 * g.plane();
                gemm(g.o, k, cp, w, (k, 1), &col[..k * cp], (cp, 1), 0.0, &mut on[off..], (p, 1));
                z0 += planes;
            }
        }
        if let Some(b) = bias {
            for (o, &bo) in b.iter().enumerate() {
                on[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    out
}

struct ConvGrads {
    dx: Option<Vec<f64>>,
    dw: Option<Vec<f64>>,
    db: Option<Vec<f64>>,
}

fn conv_backward(g: &Geometry, x: &[f64], w: &[f64], gout: &[f64], need: [bool; 3]) -> ConvGrads {
    let (k, p) = (g.k(), g.out_vox());
    let mut dx = need[0].then(|| vec![0.0; x.len()]);
    let mut dw = need[1].then(|| vec![0.0; w.len()]);
    let db = need[2].then(|| {
        let mut db = vec![0.0; g.o];
        for n in 0..g.n {
            for (o, acc) in db.iter_mut().enumerate() {
                *acc += gout[(n * g.o + o) * p..(n * g.o + o + 1) * p].iter().sum::<f64>();
            }
        }
        db
    });
    if dx.is_none() && dw.is_none() {
        return ConvGrads { dx, dw, db };
    }
    let in_len = g.c * g.in_vox();
    for n in 0..g.n {
        let xn = &x[n * in_len..(n + 1) * in_len];
        let gn = &gout[n * g.o * p..(n + 1) * g.o * p];
        if g.pointwise() {
            if let Some(dw) = dw.as_mut() {
                gemm(g.o, p, k, gn, (p, 1), xn, (1, p), 1.0, dw, (k, 1));
            }
            if let Some(dx) = dx.as_mut() {
                gemm(k, g.o, p, w, (1, k), gn, (p, 1), 1.0, &mut dx[n * in_len..(n + 1) * in_len], (p, 1));
            }
            continue;
        }
        let chunk = g.chunk_planes();
        let mut col = vec![0.0; k * chunk * g.plane()];
        let mut z0 = 0;
        while z0 < g.out[0] {
            let planes = chunk.min(g.out[0] - z0);
            let cp = planes * g.plane();
            let off = z0 * g.plane();
            let col = &mut col[..k * cp];
            if let Some(dw) = dw.as_mut() {
                im2col(g, xn, z0, planes, col);
                gemm(g.o, cp, k, &gn[off..], (p, 1), col, (1, cp), 1.0, dw, (k, 1));
            }
            if let Some(dx) = dx.as_mut() {
                gemm(k, g.o, cp, w, (1, k), &gn[off..], (p, 1), 0.0, col, (cp, 1));
                col2im(g, col, z0, planes, &mut dx[n * in_len..(n + 1) * in_len]);
            }
            z0 += planes;
        }
    }
    ConvGrads { dx, dw, db }
}

impl Tensor {
    /// 3D cross-correlation. `self` is `[N, C, D, H, W]`, `weight` is
    /// `[O, C, kd, kh, kw]`, `bias` is `[O]`.
    pub fn conv3d(&self, weight: &Tensor, bias: Option<&Tensor>, stride: Triple, padding: Triple) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 5 || ws.len() != 5 || xs[1] != ws[1] {
            return Err(Error::ShapeMismatch {
                op: "conv3d",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(Error::ShapeMismatch {
                    op: "conv3d bias",
                    lhs: vec![ws[0]],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        if stride.contains(&0) {
            return Err(Error::Geometry(format!("stride {stride:?} has a zero component")));
        }
        let mut out = [0; 3];
        for i in 0..3 {
            let span = xs[2 + i] + 2 * padding[i];
            if span < ws[2 + i] {
                return Err(Error::Geometry(format!(
                    "conv3d axis {i}: input {} with padding {} is smaller than kernel {}",
                    xs[2 + i], padding[i], ws[2 + i]
                )));
            }
            out[i] = (span - ws[2 + i]) / stride[i] + 1;
        }
        let g = Geometry {
            n: xs[0],
            c: xs[1],
            input: [xs[2], xs[3], xs[4]],
            o: ws[0],
            kernel: [ws[2], ws[3], ws[4]],
            stride,
            pad: padding,
            out,
        };
        let x = self.data_arc();
        let w = weight.data_arc();
        let data = conv_forward(&g, &x, &w, bias.map(|b| b.data()));
        let mut parents = vec![self.clone(), weight.clone()];
        let need = [self.requires_grad(), weight.requires_grad(), bias.is_some_and(|b| b.requires_grad())];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        Ok(Tensor::from_op(
            "conv3d",
            vec![g.n, g.o, out[0], out[1], out[2]],
            data,
            parents,
            move |gout| {
                let grads = conv_backward(&g, &x, &w, gout, need);
                let mut v = vec![grads.dx, grads.dw];
                if has_bias {
                    v.push(grads.db);
                }
                v
            },
        ))
    }

    /// Nearest-neighbour upsampling of the three spatial axes of a `[N, C, D, H, W]` tensor.
    pub fn upsample_nearest(&self, factor: Triple) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 5 {
            return Err(Error::Geometry(format!("upsample expects rank 5, got {s:?}")));
        }
        if factor.contains(&0) {
            return Err(Error::Geometry(format!("upsample factor {factor:?} has a zero component")));
        }
        let (nc, [d, h, w]) = (s[0] * s[1], [s[2], s[3], s[4]]);
        let [fd, fh, fw] = factor;
        let (od, oh, ow) = (d * fd, h * fh, w * fw);
        let mut src_of = Vec::with_capacity(nc * od * oh * ow);
        for b in 0..nc {
            for z in 0..od {
                for y in 0..oh {
                    let base = ((b * d + z / fd) * h + y / fh) * w;
                    src_of.extend((0..ow).map(|x| base + x / fw));
                }
            }
        }
        let x = self.data();
        let data: Vec<f64> = src_of.iter().map(|&i| x[i]).collect();
        let n_in = self.numel();
        let src_of = Arc::new(src_of);
        Ok(Tensor::from_op(
            "upsample_nearest",
            vec![s[0], s[1], od, oh, ow],
            data,
            vec![self.clone()],
            move |g| {
                let mut gx = vec![0.0; n_in];
                for (&i, &v) in src_of.iter().zip(g) {
                    gx[i] += v;
                }
                vec![Some(gx)]
            },
        ))
    }

    /// Decoder upsampling: nearest-neighbour upsample by `factor`, then a
    /// stride-1 "same" convolution with an odd-sized kernel.
    pub fn upsample_conv3d(&self, factor: Triple, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let ws = weight.shape();
        if ws.len() != 5 || ws[2..].iter().any(|k| k % 2 == 0) {
            return Err(Error::Geometry(format!("upsample conv needs an odd kernel, got {ws:?}")));
        }
        let pad = [ws[2] / 2, ws[3] / 2, ws[4] / 2];
        self.upsample_nearest(factor)?.conv3d(weight, bias, [1, 1, 1], pad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct six-loop convolution.
    fn naive(x: &Tensor, w: &Tensor, stride: Triple, pad: Triple) -> Vec<f64> {
        let (xs, ws) = (x.shape(), w.shape());
        let out: Vec<usize> = (0..3).map(|i| (xs[2 + i] + 2 * pad[i] - ws[2 + i]) / stride[i] + 1).collect();
        let mut res = Vec::new();
        for n in 0..xs[0] {
            for o in 0..ws[0] {
                for z in 0..out[0] {
                    for y in 0..out[1] {
                        for q in 0..out[2] {
                            let mut acc = 0.0;
                            for c in 0..xs[1] {
                                for a in 0..ws[2] {
                                    for b in 0..ws[3] {
                                        for e in 0..ws[4] {
                                            let iz = (z * stride[0] + a) as isize - pad[0] as isize;
                                            let iy = (y * stride[1] + b) as isize - pad[1] as isize;
                                            let ix = (q * stride[2] + e) as isize - pad[2] as isize;
                                            if iz < 0 || iy < 0 || ix < 0 {
                                                continue;
                                            }
                                            let (iz, iy, ix) = (iz as usize, iy as usize, ix as usize);
                                            if iz >= xs[2] || iy >= xs[3] || ix >= xs[4] {
                                                continue;
                                            }
                                            let xi = (((n * xs[1] + c) * xs[2] + iz) * xs[3] + iy) * xs[4] + ix;
                                            let wi = (((o * ws[1] + c) * ws[2] + a) * ws[3] + b) * ws[4] + e;
                                            acc += x.data()[xi] * w.data()[wi];
                                        }
                                    }
                                }
                            }
                            res.push(acc);
                        }
                    }
                }
            }
        }
        res
    }

    fn seq(shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| ((i * 7919 % 97) as f64 / 97.0 - 0.5) * scale).collect()).unwrap()
    }

    #[test]
    fn identity_pointwise() {
        let x = seq(&[1, 3, 2, 3, 4], 1.0);
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let w = Tensor::new(&[3, 3, 1, 1, 1], w).unwrap();
        let b = Tensor::zeros(&[3]);
        let y = x.conv3d(&w, Some(&b), [1, 1, 1], [0, 0, 0]).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_kernel_counts_27() {
        let x = Tensor::full(&[1, 1, 5, 5, 5], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3, 3], 1.0);
        let y = x.conv3d(&w, None, [1, 1, 1], [0, 0, 0]).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 27.0));
    }

    #[test]
    fn matches_naive_loops() {
        for (stride, pad) in [([1, 1, 1], [1, 1, 1]), ([2, 2, 2], [1, 1, 1]), ([1, 2, 1], [0, 1, 0])] {
            let x = seq(&[2, 2, 5, 4, 6], 1.0);
            let w = seq(&[3, 2, 3, 3, 3], 0.7);
            let y = x.conv3d(&w, None, stride, pad).unwrap();
            let r = naive(&x, &w, stride, pad);
            for (a, b) in y.data().iter().zip(&r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn geometry_error_when_output_empty() {
        let x = Tensor::zeros(&[1, 1, 2, 2, 2]);
        let w = Tensor::zeros(&[1, 1, 3, 3, 3]);
        assert!(matches!(x.conv3d(&w, None, [1, 1, 1], [0, 0, 0]), Err(Error::Geometry(_))));
    }

    #[test]
    fn channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 3, 3, 3]);
        let w = Tensor::zeros(&[1, 3, 1, 1, 1]);
        assert!(x.conv3d(&w, None, [1, 1, 1], [0, 0, 0]).is_err());
    }

    #[test]
    fn upsample_shapes_and_constants() {
        let x = Tensor::full(&[1, 1, 2, 2, 2], 3.0);
        let y = x.upsample_nearest([2, 2, 2]).unwrap();
        assert_eq!(&y.shape()[2..], &[4, 4, 4]);
        assert!(y.data().iter().all(|&v| v == 3.0));
        let w = Tensor::full(&[2, 1, 3, 3, 3], 0.1);
        let z = x.upsample_conv3d([2, 2, 2], &w, None).unwrap();
        assert_eq!(z.shape(), &[1, 2, 4, 4, 4]);
    }

    #[test]
    fn upsample_places_values() {
        let x = Tensor::new(&[1, 1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = x.upsample_nearest([1, 2, 2]).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }
}
