use std::sync::Arc;

use super::index::{normalize_axes, reduction};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

fn squeeze(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect()
}

impl Tensor {
    pub fn reduce(&self, op: ReduceOp, axes: &[usize], keep_dims: bool) -> Result<Tensor> {
        let axes = normalize_axes(axes, self.rank())?;
        let red = reduction(self.shape(), &axes);
        let x = self.data();
        let out_shape = if keep_dims {
            red.kept_shape.clone()
        } else {
            squeeze(self.shape(), &axes)
        };
        let group_of = Arc::new(red.group_of);
        match op {
            ReduceOp::Sum | ReduceOp::Mean => {
                let mut out = vec![0.0; red.groups];
                for (&g, &v) in group_of.iter().zip(x) {
                    out[g] += v;
                }
                let factor = if op == ReduceOp::Mean { 1.0 / red.group_size as f64 } else { 1.0 };
                if op == ReduceOp::Mean {
                    out.iter_mut().for_each(|v| *v *= factor);
                }
                let name = if op == ReduceOp::Sum { "sum" } else { "mean" };
                Ok(Tensor::from_op(name, out_shape, out, vec![self.clone()], move |g| {
                    vec![Some(group_of.iter().map(|&k| g[k] * factor).collect())]
                }))
            }
            ReduceOp::Max => {
                let mut out = vec![f64::NEG_INFINITY; red.groups];
                let mut arg = vec![usize::MAX; red.groups];
                for (i, (&g, &v)) in group_of.iter().zip(x).enumerate() {
                    // strict comparison keeps the first index on ties
                    if arg[g] == usize::MAX || v > out[g] {
                        out[g] = v;
                        arg[g] = i;
                    }
                }
                let n = x.len();
                Ok(Tensor::from_op("max", out_shape, out, vec![self.clone()], move |g| {
                    let mut gx = vec![0.0; n];
                    for (k, &i) in arg.iter().enumerate() {
                        gx[i] += g[k];
                    }
                    vec![Some(gx)]
                }))
            }
        }
    }

    pub fn sum(&self, axes: &[usize], keep_dims: bool) -> Result<Tensor> {
        self.reduce(ReduceOp::Sum, axes, keep_dims)
    }

    pub fn mean(&self, axes: &[usize], keep_dims: bool) -> Result<Tensor> {
        self.reduce(ReduceOp::Mean, axes, keep_dims)
    }

    pub fn max(&self, axes: &[usize], keep_dims: bool) -> Result<Tensor> {
        self.reduce(ReduceOp::Max, axes, keep_dims)
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum_all", Vec::new(), vec![total], vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Tensor {
        self.sum_all().scale(1.0 / self.numel() as f64)
    }

    /// `softmax(a / temperature)` jointly over `axes`, shifted by the group
    /// maximum so large inputs cannot overflow.
    pub fn softmax_temperature(&self, axes: &[usize], temperature: f64) -> Result<Tensor> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::NonPositiveTemperature(temperature));
        }
        let axes = normalize_axes(axes, self.rank())?;
        let red = reduction(self.shape(), &axes);
        let x = self.data();
        let mut gmax = vec![f64::NEG_INFINITY; red.groups];
        for (&g, &v) in red.group_of.iter().zip(x) {
            gmax[g] = gmax[g].max(v);
        }
        let mut y: Vec<f64> = red
            .group_of
            .iter()
            .zip(x)
            .map(|(&g, &v)| ((v - gmax[g]) / temperature).exp())
            .collect();
        let mut denom = vec![0.0; red.groups];
        for (&g, &e) in red.group_of.iter().zip(&y) {
            denom[g] += e;
        }
        for (&g, e) in red.group_of.iter().zip(y.iter_mut()) {
            *e /= denom[g];
        }
        let saved = Arc::new(y.clone());
        let group_of = red.group_of;
        let groups = red.groups;
        Ok(Tensor::from_op("softmax", self.shape().to_vec(), y, vec![self.clone()], move |g| {
            // dx = y * (g - <g, y>_group) / T
            let mut dot = vec![0.0; groups];
            for ((&k, &gi), &yi) in group_of.iter().zip(g).zip(saved.iter()) {
                dot[k] += gi * yi;
            }
            let gx = group_of
                .iter()
                .zip(g)
                .zip(saved.iter())
                .map(|((&k, &gi), &yi)| yi * (gi - dot[k]) / temperature)
                .collect();
            vec![Some(gx)]
        }))
    }

    /// Numerically stable `log(softmax(a))` along one axis.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let axes = normalize_axes(&[axis], self.rank())?;
        let red = reduction(self.shape(), &axes);
        let x = self.data();
        let mut gmax = vec![f64::NEG_INFINITY; red.groups];
        for (&g, &v) in red.group_of.iter().zip(x) {
            gmax[g] = gmax[g].max(v);
        }
        let mut lse = vec![0.0; red.groups];
        for (&g, &v) in red.group_of.iter().zip(x) {
            lse[g] += (v - gmax[g]).exp();
        }
        for (l, m) in lse.iter_mut().zip(&gmax) {
            *l = l.ln() + m;
        }
        let out: Vec<f64> = red.group_of.iter().zip(x).map(|(&g, &v)| v - lse[g]).collect();
        let saved = Arc::new(out.clone());
        let group_of = red.group_of;
        let groups = red.groups;
        Ok(Tensor::from_op("log_softmax", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let mut gsum = vec![0.0; groups];
            for (&k, &gi) in group_of.iter().zip(g) {
                gsum[k] += gi;
            }
            let gx = group_of
                .iter()
                .zip(g)
                .zip(saved.iter())
                .map(|((&k, &gi), &lp)| gi - lp.exp() * gsum[k])
                .collect();
            vec![Some(gx)]
        }))
    }
}
