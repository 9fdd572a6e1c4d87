use std::sync::Arc;

use super::index::{broadcast_map, broadcast_shape};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Abs,
    Exp,
    Relu,
    Square,
    Neg,
    Ln,
}

const DIV_EPS: f64 = 1e-12;

fn op_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
}

/// Sums `g` (laid out over the broadcast output) back onto a source of `len` elements.
fn unbroadcast(g: &[f64], map: Option<&[usize]>, len: usize) -> Vec<f64> {
    match map {
        None => g.to_vec(),
        Some(map) => {
            let mut out = vec![0.0; len];
            for (&i, &v) in map.iter().zip(g) {
                out[i] += v;
            }
            out
        }
    }
}

impl Tensor {
    pub fn binary(&self, op: BinaryOp, other: &Tensor) -> Result<Tensor> {
        let name = op_name(op);
        let out_shape = broadcast_shape(name, self.shape(), other.shape())?;
        if op == BinaryOp::Div {
            let bad: Vec<usize> = other
                .data()
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() < DIV_EPS)
                .map(|(i, _)| i)
                .collect();
            if !bad.is_empty() {
                return Err(Error::DegenerateInput { op: name, positions: bad });
            }
        }
        let map_a = (self.shape() != out_shape.as_slice()).then(|| broadcast_map(self.shape(), &out_shape));
        let map_b = (other.shape() != out_shape.as_slice()).then(|| broadcast_map(other.shape(), &out_shape));
        let a = self.data_arc();
        let b = other.data_arc();
        let n: usize = out_shape.iter().product();
        let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
        let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |x, y| x + y,
            BinaryOp::Sub => |x, y| x - y,
            BinaryOp::Mul => |x, y| x * y,
            BinaryOp::Div => |x, y| x / y,
        };
        let data: Vec<f64> = if map_a.is_none() && map_b.is_none() {
            a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(a[ia(i)], b[ib(i)])).collect()
        };
        let (need_a, need_b) = (self.requires_grad(), other.requires_grad());
        let (len_a, len_b) = (self.numel(), other.numel());
        Ok(Tensor::from_op(
            name,
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |g| {
                let ia = |i: usize| map_a.as_ref().map_or(i, |m| m[i]);
                let ib = |i: usize| map_b.as_ref().map_or(i, |m| m[i]);
                let local_a: Option<Vec<f64>> = need_a.then(|| match op {
                    BinaryOp::Add | BinaryOp::Sub => g.to_vec(),
                    BinaryOp::Mul => g.iter().enumerate().map(|(i, &v)| v * b[ib(i)]).collect(),
                    BinaryOp::Div => g.iter().enumerate().map(|(i, &v)| v / b[ib(i)]).collect(),
                });
                let local_b: Option<Vec<f64>> = need_b.then(|| match op {
                    BinaryOp::Add => g.to_vec(),
                    BinaryOp::Sub => g.iter().map(|v| -v).collect(),
                    BinaryOp::Mul => g.iter().enumerate().map(|(i, &v)| v * a[ia(i)]).collect(),
                    BinaryOp::Div => g
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let y = b[ib(i)];
                            -v * a[ia(i)] / (y * y)
                        })
                        .collect(),
                });
                vec![
                    local_a.map(|ga| unbroadcast(&ga, map_a.as_deref(), len_a)),
                    local_b.map(|gb| unbroadcast(&gb, map_b.as_deref(), len_b)),
                ]
            },
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Mul, other)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(BinaryOp::Div, other)
    }

    pub fn unary(&self, op: UnaryOp) -> Result<Tensor> {
        if op == UnaryOp::Ln {
            let bad: Vec<usize> = self
                .data()
                .iter()
                .enumerate()
                .filter(|(_, &v)| v <= 0.0)
                .map(|(i, _)| i)
                .collect();
            if !bad.is_empty() {
                return Err(Error::DegenerateInput { op: "ln", positions: bad });
            }
        }
        Ok(self.unary_unchecked(op))
    }

    fn unary_unchecked(&self, op: UnaryOp) -> Tensor {
        let x = self.data_arc();
        let (name, f): (&'static str, fn(f64) -> f64) = match op {
            UnaryOp::Abs => ("abs", f64::abs),
            UnaryOp::Exp => ("exp", f64::exp),
            UnaryOp::Relu => ("relu", |v| if v > 0.0 { v } else { 0.0 }),
            UnaryOp::Square => ("square", |v| v * v),
            UnaryOp::Neg => ("neg", |v| -v),
            UnaryOp::Ln => ("ln", f64::ln),
        };
        let out: Vec<f64> = x.iter().map(|&v| f(v)).collect();
        let y = Arc::new(out.clone());
        Tensor::from_op(name, self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let gx: Vec<f64> = match op {
                UnaryOp::Abs => g
                    .iter()
                    .zip(x.iter())
                    .map(|(&g, &v)| if v > 0.0 { g } else if v < 0.0 { -g } else { 0.0 })
                    .collect(),
                UnaryOp::Exp => g.iter().zip(y.iter()).map(|(&g, &e)| g * e).collect(),
                UnaryOp::Relu => g
                    .iter()
                    .zip(x.iter())
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
                UnaryOp::Square => g.iter().zip(x.iter()).map(|(&g, &v)| 2.0 * g * v).collect(),
                UnaryOp::Neg => g.iter().map(|v| -v).collect(),
                UnaryOp::Ln => g.iter().zip(x.iter()).map(|(&g, &v)| g / v).collect(),
            };
            vec![Some(gx)]
        })
    }

    pub fn abs(&self) -> Tensor {
        self.unary_unchecked(UnaryOp::Abs)
    }

    pub fn exp(&self) -> Tensor {
        self.unary_unchecked(UnaryOp::Exp)
    }

    pub fn relu(&self) -> Tensor {
        self.unary_unchecked(UnaryOp::Relu)
    }

    pub fn square(&self) -> Tensor {
        self.unary_unchecked(UnaryOp::Square)
    }

    pub fn neg(&self) -> Tensor {
        self.unary_unchecked(UnaryOp::Neg)
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.unary(UnaryOp::Ln)
    }

    /// Multiply by a constant.
    pub fn scale(&self, factor: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v * factor).collect();
        Tensor::from_op("scale", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|v| v * factor).collect())]
        })
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|v| v + c).collect();
        Tensor::from_op("add_scalar", self.shape().to_vec(), out, vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn abs_and_add() {
        assert_eq!(t(&[3], &[-1.0, 2.0, 0.0]).abs().data(), &[1.0, 2.0, 0.0]);
        assert_eq!(t(&[2], &[1.0, 2.0]).add(&t(&[2], &[3.0, 4.0])).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn broadcast_channel_vector_over_volume() {
        // [C] against [C, D, H, W] does not align on the trailing axis; [C,1,1,1] does
        let vc = t(&[2, 1, 1, 1], &[1.0, 10.0]);
        let f = t(&[2, 1, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(f.mul(&vc).unwrap().data(), &[1.0, 2.0, 30.0, 40.0]);
        assert!(f.mul(&t(&[2], &[1.0, 1.0])).is_ok());
        assert!(f.mul(&t(&[3], &[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn broadcast_grad_is_summed() {
        let a = Tensor::param(&[2, 3], vec![1.0; 6]).unwrap();
        let b = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        a.mul(&b).unwrap().sum_all().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn division_by_tiny_values_is_reported() {
        let err = t(&[3], &[1.0, 1.0, 1.0]).div(&t(&[3], &[1.0, 0.0, 1e-13])).unwrap_err();
        match err {
            Error::DegenerateInput { positions, .. } => assert_eq!(positions, vec![1, 2]),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let msg = t(&[2], &[1.0, 2.0]).add(&t(&[3], &[1.0; 3])).unwrap_err().to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn square_gradient_at_three() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        x.square().sum_all().backward().unwrap();
        let g = x.grad().unwrap()[0];
        let h = 1e-5;
        let fd = ((3.0f64 + h).powi(2) - (3.0f64 - h).powi(2)) / (2.0 * h);
        assert_eq!(g, 6.0);
        assert!((g - fd).abs() < 1e-8);
    }

    #[test]
    fn ln_rejects_non_positive() {
        assert!(t(&[2], &[1.0, 0.0]).ln().is_err());
    }
}
