use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    /// Group normalization over a `[N, C, ...]` tensor with per-channel affine.
    /// Statistics use the biased variance of each (sample, group) block.
    pub fn group_norm(&self, groups: usize, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
        let s = self.shape();
        if s.len() < 2 {
            return Err(Error::Geometry(format!("group_norm expects [N, C, ...], got {s:?}")));
        }
        let (n, c) = (s[0], s[1]);
        if groups == 0 || c % groups != 0 {
            return Err(Error::Divisibility {
                what: "group_norm channels",
                value: c,
                divisor: groups,
            });
        }
        for t in [gain, bias] {
            if t.shape() != [c] {
                return Err(Error::ShapeMismatch {
                    op: "group_norm affine",
                    lhs: vec![c],
                    rhs: t.shape().to_vec(),
                });
            }
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidData(format!("group_norm eps must be positive, got {eps}")));
        }
        let spatial: usize = s[2..].iter().product();
        let cpg = c / groups;
        let block = cpg * spatial;
        let x = self.data();
        let (gw, gb) = (gain.data_arc(), bias.data());
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; n * groups];
        for (bi, (xb, hb)) in x.chunks(block).zip(xhat.chunks_mut(block)).enumerate() {
            let mean = xb.iter().sum::<f64>() / block as f64;
            let var = xb.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / block as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[bi] = is;
            hb.iter_mut().zip(xb).for_each(|(h, v)| *h = (v - mean) * is);
        }
        let mut out = xhat.clone();
        for (i, v) in out.iter_mut().enumerate() {
            let ch = (i / spatial) % c;
            *v = *v * gw[ch] + gb[ch];
        }
        let xhat = Arc::new(xhat);
        let need = [self.requires_grad(), gain.requires_grad(), bias.requires_grad()];
        Ok(Tensor::from_op(
            "group_norm",
            s.to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |g| {
                let mut dgain = need[1].then(|| vec![0.0; c]);
                let mut dbias = need[2].then(|| vec![0.0; c]);
                if dgain.is_some() || dbias.is_some() {
                    for (i, (&gi, &h)) in g.iter().zip(xhat.iter()).enumerate() {
                        let ch = (i / spatial) % c;
                        if let Some(d) = dgain.as_mut() {
                            d[ch] += gi * h;
                        }
                        if let Some(d) = dbias.as_mut() {
                            d[ch] += gi;
                        }
                    }
                }
                let dx = need[0].then(|| {
                    let mut dx = vec![0.0; g.len()];
                    for bi in 0..n * groups {
                        let range = bi * block..(bi + 1) * block;
                        let first_ch = (bi % groups) * cpg;
                        let dxhat: Vec<f64> = g[range.clone()]
                            .iter()
                            .enumerate()
                            .map(|(j, &gi)| gi * gw[first_ch + j / spatial])
                            .collect();
                        let hb = &xhat[range.clone()];
                        let m1 = dxhat.iter().sum::<f64>() / block as f64;
                        let m2 = dxhat.iter().zip(hb).map(|(a, b)| a * b).sum::<f64>() / block as f64;
                        for ((d, &dh), &h) in dx[range].iter_mut().zip(&dxhat).zip(hb) {
                            *d = inv_std[bi] * (dh - m1 - h * m2);
                        }
                    }
                    dx
                });
                vec![dx, dgain, dbias]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::full(&[1, 4, 2, 2, 2], 3.0);
        let y = x
            .group_norm(2, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-5)
            .unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_mean_unit_variance_per_group() {
        let data: Vec<f64> = (0..32).map(|i| ((i * 37) % 11) as f64).collect();
        let x = Tensor::new(&[2, 4, 2, 2], data).unwrap();
        let y = x
            .group_norm(2, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-12)
            .unwrap();
        for block in y.data().chunks(8) {
            let m = block.iter().sum::<f64>() / 8.0;
            let v = block.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_group_is_layer_norm() {
        let data: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let x = Tensor::new(&[1, 3, 8], data.clone()).unwrap();
        let y = x
            .group_norm(1, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), 1e-5)
            .unwrap();
        let m = data.iter().sum::<f64>() / 24.0;
        let v = data.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 24.0;
        for (a, b) in y.data().iter().zip(&data) {
            assert!((a - (b - m) / (v + 1e-5).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_channels_rejected() {
        let x = Tensor::zeros(&[1, 3, 2]);
        let r = x.group_norm(2, &Tensor::full(&[3], 1.0), &Tensor::zeros(&[3]), 1e-5);
        assert!(matches!(r, Err(Error::Divisibility { .. })));
    }
}
