//! A small 3D encoder-decoder, uniform width scaling and analytic
//! parameter/FLOP accounting.
//!
//! Layout for `L` stages with widths `C_0..C_{L-1}` and `n` convolutions
//! per stage (all convolutions 3x3x3 with padding 1 unless noted, every
//! convolution followed by group norm with one group per channel and ReLU):
//!
//! - encoder stage `l`: an entry convolution `C_{l-1} -> C_l` with the
//!   stage stride (the input modalities feed stage 0), then `n - 1`
//!   convolutions `C_l -> C_l`. With `residual_encoder` each of those is
//!   `relu(x + norm(conv(x)))`.
//! - decoder stage `l = L-1..1`: nearest upsample by the stride of stage
//!   `l` followed by a convolution `C_l -> C_{l-1}`, concatenation with
//!   the stage `l - 1` skip, then `n` convolutions (`2 C_{l-1} -> C_{l-1}`
//!   first).
//! - head: 1x1x1 convolution `C_0 -> K`.
//!
//! Weights are drawn uniformly from `[-b, b]` with `b = sqrt(6 / fan_in)`,
//! biases start at 0, norm gains at 1.

mod checkpoint;
mod network;

use rand::Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;
use crate::volume::Shape3;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, ParamEntry};
pub use network::{build_network, encoder_taps, forward_with_taps, Mode, Network};

pub const DEFAULT_C_MIN: usize = 4;
pub const GN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NetworkPlan {
    /// Full-width channels per encoder stage.
    pub channels: Vec<usize>,
    /// Width exponent `t`; stage widths are `max(c_min, floor(C_i / 2^t))`.
    #[serde(default)]
    pub width_factor: u32,
    #[serde(default = "default_c_min")]
    pub c_min: usize,
    #[serde(default)]
    pub residual_encoder: bool,
    pub input_modalities: usize,
    pub num_classes: usize,
    #[serde(default = "default_convs")]
    pub convs_per_stage: usize,
    /// Isotropic downsampling stride of each stage's entry convolution.
    pub strides: Vec<usize>,
}

fn default_c_min() -> usize {
    DEFAULT_C_MIN
}

fn default_convs() -> usize {
    2
}

impl NetworkPlan {
    /// Three-stage toy plan used across the examples and tests.
    pub fn toy(input_modalities: usize, num_classes: usize) -> Self {
        Self {
            channels: vec![16, 32, 64],
            width_factor: 0,
            c_min: DEFAULT_C_MIN,
            residual_encoder: true,
            input_modalities,
            num_classes,
            convs_per_stage: 2,
            strides: vec![1, 2, 2],
        }
    }

    pub fn num_stages(&self) -> usize {
        self.channels.len()
    }

    /// Effective width of stage `l`.
    pub fn stage_channels(&self, l: usize) -> usize {
        scaled_width(self.channels[l], self.width_factor, self.c_min)
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.num_stages()).map(|l| self.stage_channels(l)).collect()
    }

    /// Product of all strides; input dims must be divisible by it.
    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }

    /// Spatial shape of the stage-`l` feature map for an input of `input`.
    pub fn stage_shape(&self, l: usize, input: Shape3) -> Shape3 {
        let s: usize = self.strides[..=l].iter().product();
        input.map(|d| d / s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidPlan(m));
        if self.channels.is_empty() {
            return bad("at least one stage is required".into());
        }
        if self.strides.len() != self.channels.len() {
            return bad(format!(
                "{} strides for {} stages",
                self.strides.len(),
                self.channels.len()
            ));
        }
        if self.channels.contains(&0) || self.strides.contains(&0) {
            return bad("channels and strides must be positive".into());
        }
        if self.width_factor > 3 {
            return bad(format!("width factor {} outside 0..=3", self.width_factor));
        }
        if self.c_min == 0 || self.input_modalities == 0 || self.convs_per_stage == 0 {
            return bad("c_min, input_modalities and convs_per_stage must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        Ok(())
    }

    pub fn check_input(&self, input: Shape3) -> Result<()> {
        let s = self.total_stride();
        for &d in &input {
            if d % s != 0 {
                return Err(Error::Divisibility {
                    what: "input spatial dim",
                    value: d,
                    divisor: s,
                });
            }
        }
        Ok(())
    }
}

pub fn scaled_width(c: usize, t: u32, c_min: usize) -> usize {
    (c >> t).max(c_min)
}

/// Student plan at width factor `t`; everything except widths is copied.
pub fn derive_student_plan(teacher: &NetworkPlan, t: u32, c_min: usize) -> NetworkPlan {
    NetworkPlan {
        width_factor: t,
        c_min,
        ..teacher.clone()
    }
}

/// Uniform fan-in initialisation for a weight of `shape` (`fan_in` is the
/// product of all but the first dimension).
pub fn he_uniform(rng: &mut Prng, shape: &[usize]) -> Tensor {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::param(shape, data).expect("non-empty shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub params: u64,
    /// Two per multiply-add; norms, activations, additions and upsampling
    /// count one per output element.
    pub flops: u64,
}

struct Counter {
    c: Counts,
}

impl Counter {
    fn conv(&mut self, cin: usize, cout: usize, k: usize, out: Shape3) {
        let vox = (out[0] * out[1] * out[2]) as u64;
        let (cin, cout, k3) = (cin as u64, cout as u64, (k * k * k) as u64);
        self.c.params += cout * cin * k3 + cout;
        self.c.flops += 2 * cout * cin * k3 * vox;
    }

    fn norm_relu(&mut self, ch: usize, out: Shape3) {
        let el = (ch * out[0] * out[1] * out[2]) as u64;
        self.c.params += 2 * ch as u64;
        self.c.flops += 2 * el;
    }

    fn elementwise(&mut self, ch: usize, out: Shape3) {
        self.c.flops += (ch * out[0] * out[1] * out[2]) as u64;
    }
}

/// Analytic parameter and FLOP counts of one forward pass at `input`.
pub fn count_params_flops(plan: &NetworkPlan, input: Shape3) -> Result<Counts> {
    plan.validate()?;
    plan.check_input(input)?;
    let w = plan.widths();
    let n = plan.convs_per_stage;
    let mut k = Counter {
        c: Counts { params: 0, flops: 0 },
    };
    let mut cin = plan.input_modalities;
    for (l, &c) in w.iter().enumerate() {
        let sh = plan.stage_shape(l, input);
        k.conv(cin, c, 3, sh);
        k.norm_relu(c, sh);
        for _ in 1..n {
            k.conv(c, c, 3, sh);
            k.norm_relu(c, sh);
            if plan.residual_encoder {
                k.elementwise(c, sh);
            }
        }
        cin = c;
    }
    for l in (1..w.len()).rev() {
        let sh = plan.stage_shape(l - 1, input);
        k.elementwise(w[l], sh);
        k.conv(w[l], w[l - 1], 3, sh);
        k.norm_relu(w[l - 1], sh);
        k.conv(2 * w[l - 1], w[l - 1], 3, sh);
        k.norm_relu(w[l - 1], sh);
        for _ in 1..n {
            k.conv(w[l - 1], w[l - 1], 3, sh);
            k.norm_relu(w[l - 1], sh);
        }
    }
    k.conv(w[0], plan.num_classes, 1, input);
    Ok(k.c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(channels: Vec<usize>) -> NetworkPlan {
        NetworkPlan {
            strides: (0..channels.len()).map(|i| if i == 0 { 1 } else { 2 }).collect(),
            channels,
            width_factor: 0,
            c_min: 4,
            residual_encoder: false,
            input_modalities: 1,
            num_classes: 3,
            convs_per_stage: 2,
        }
    }

    #[test]
    fn student_widths() {
        let p = plan(vec![8, 16]);
        assert_eq!(derive_student_plan(&p, 0, 4), p);
        assert_eq!(derive_student_plan(&p, 3, 4).widths(), vec![4, 4]);
        assert_eq!(scaled_width(32, 2, 4), 8);
        assert_eq!(scaled_width(16, 3, 4), 4);
    }

    #[test]
    fn pointwise_conv_count() {
        let mut k = Counter {
            c: Counts { params: 0, flops: 0 },
        };
        k.conv(2, 3, 1, [1, 1, 1]);
        assert_eq!(k.c.params, 9);
    }

    #[test]
    fn width_scaling_is_roughly_quadratic() {
        let p = plan(vec![32, 64, 128]);
        let c0 = count_params_flops(&p, [16; 3]).unwrap();
        let c1 = count_params_flops(&derive_student_plan(&p, 1, 4), [16; 3]).unwrap();
        let r = c1.params as f64 / c0.params as f64;
        assert!(r > 0.24 && r < 0.27, "{r}");
    }

    #[test]
    fn indivisible_input_rejected() {
        assert!(count_params_flops(&plan(vec![8, 16]), [5, 8, 8]).is_err());
    }
}
