use crate::error::{Error, Result};
use crate::model::he_uniform;
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Channel reduction inside the global-context bottleneck.
pub const GC_BOTTLENECK_RATIO: usize = 4;
pub const GC_GN_EPS: f64 = 1e-5;

/// 1x1x1 projection from student width `C'` to teacher width `C`.
#[derive(Debug, Clone)]
pub struct AdapterParams {
    /// `[C, C', 1, 1, 1]`
    pub weight: Tensor,
    /// `[C]`
    pub bias: Tensor,
}

impl AdapterParams {
    pub fn new(rng: &mut Prng, student_channels: usize, teacher_channels: usize) -> Self {
        Self {
            weight: he_uniform(rng, &[teacher_channels, student_channels, 1, 1, 1]),
            bias: Tensor::param(&[teacher_channels], vec![0.0; teacher_channels]).expect("non-empty"),
        }
    }

    /// Identity projection for equal widths.
    pub fn identity(channels: usize) -> Self {
        let mut w = vec![0.0; channels * channels];
        for c in 0..channels {
            w[c * channels + c] = 1.0;
        }
        Self {
            weight: Tensor::param(&[channels, channels, 1, 1, 1], w).expect("non-empty"),
            bias: Tensor::param(&[channels], vec![0.0; channels]).expect("non-empty"),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        vec![self.weight.clone(), self.bias.clone()]
    }

    pub fn with_tensors(t: &[Tensor]) -> Self {
        Self {
            weight: t[0].clone(),
            bias: t[1].clone(),
        }
    }

    /// `f(F)` for a `[C', D, H, W]` feature map.
    pub fn apply(&self, f: &Tensor) -> Result<Tensor> {
        let s = f.shape();
        if s.len() != 4 || s[0] != self.in_channels() {
            return Err(Error::ChannelMismatch {
                expected: self.in_channels(),
                actual: s.first().copied().unwrap_or(0),
            });
        }
        let x = f.reshape(&[1, s[0], s[1], s[2], s[3]])?;
        x.conv3d(&self.weight, Some(&self.bias), [1; 3], [0; 3])?
            .reshape(&[self.out_channels(), s[1], s[2], s[3]])
    }
}

/// Applies the optional adapter; without one the widths must agree.
pub(crate) fn adapt(adapter: Option<&AdapterParams>, student: &Tensor, teacher_channels: usize) -> Result<Tensor> {
    let out = match adapter {
        Some(a) => a.apply(student)?,
        None => student.clone(),
    };
    if out.shape()[0] != teacher_channels {
        return Err(Error::ChannelMismatch {
            expected: teacher_channels,
            actual: out.shape()[0],
        });
    }
    Ok(out)
}

/// Parameters of one global-context block over `C` channels with a
/// `C_b = max(C / 4, 2)` bottleneck.
#[derive(Debug, Clone)]
pub struct GcBlockParams {
    /// `[1, C, 1, 1, 1]`
    pub w_k: Tensor,
    /// `[C_b, C, 1, 1, 1]`
    pub w_v1: Tensor,
    /// `[C_b]`
    pub b_v1: Tensor,
    /// `[C_b]`
    pub gn_gain: Tensor,
    /// `[C_b]`
    pub gn_bias: Tensor,
    /// `[C, C_b, 1, 1, 1]`, zero at init so the block starts as identity.
    pub w_v2: Tensor,
    /// `[C]`
    pub b_v2: Tensor,
}

impl GcBlockParams {
    pub fn bottleneck(channels: usize) -> usize {
        (channels / GC_BOTTLENECK_RATIO).max(2)
    }

    pub fn new(rng: &mut Prng, channels: usize) -> Self {
        let cb = Self::bottleneck(channels);
        let p = |shape: &[usize], v: f64| Tensor::param(shape, vec![v; shape.iter().product()]).expect("non-empty");
        Self {
            w_k: he_uniform(rng, &[1, channels, 1, 1, 1]),
            w_v1: he_uniform(rng, &[cb, channels, 1, 1, 1]),
            b_v1: p(&[cb], 0.0),
            gn_gain: p(&[cb], 1.0),
            gn_bias: p(&[cb], 0.0),
            w_v2: p(&[channels, cb, 1, 1, 1], 0.0),
            b_v2: p(&[channels], 0.0),
        }
    }

    /// Random parameters everywhere, including the output projection.
    pub fn random(rng: &mut Prng, channels: usize) -> Self {
        let mut p = Self::new(rng, channels);
        let cb = Self::bottleneck(channels);
        p.w_v2 = he_uniform(rng, &[channels, cb, 1, 1, 1]);
        p.b_v2 = he_uniform(rng, &[channels]).scale(0.1).detach_param();
        p.gn_bias = he_uniform(rng, &[cb]).scale(0.1).detach_param();
        p.b_v1 = he_uniform(rng, &[cb]).scale(0.1).detach_param();
        p
    }

    pub fn channels(&self) -> usize {
        self.w_k.shape()[1]
    }

    pub const NAMES: [&'static str; 7] = ["w_k", "w_v1", "b_v1", "gn_gain", "gn_bias", "w_v2", "b_v2"];

    pub fn tensors(&self) -> Vec<Tensor> {
        vec![
            self.w_k.clone(),
            self.w_v1.clone(),
            self.b_v1.clone(),
            self.gn_gain.clone(),
            self.gn_bias.clone(),
            self.w_v2.clone(),
            self.b_v2.clone(),
        ]
    }

    pub fn with_tensors(t: &[Tensor]) -> Self {
        Self {
            w_k: t[0].clone(),
            w_v1: t[1].clone(),
            b_v1: t[2].clone(),
            gn_gain: t[3].clone(),
            gn_bias: t[4].clone(),
            w_v2: t[5].clone(),
            b_v2: t[6].clone(),
        }
    }
}
