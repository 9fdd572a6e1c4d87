//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, cheaply clonable handle. Operations on
//! tensors that require gradients record a backward closure and their
//! parents; [`Tensor::backward`] walks that graph in reverse topological
//! order and accumulates gradients into every leaf created with
//! [`Tensor::param`]. Accumulation is additive across calls, so callers
//! zero gradients themselves with [`Tensor::zero_grad`].

mod conv;
mod elementwise;
mod index;
mod norm;
mod reduce;
mod shape_ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use conv::Triple;
pub use elementwise::{BinaryOp, UnaryOp};
pub use reduce::ReduceOp;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

/// Maps the upstream gradient to one optional gradient per parent.
type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct GradFn {
    op: &'static str,
    parents: Vec<Tensor>,
    apply: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

#[derive(Clone)]
pub struct Tensor(Arc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape);
        if let Some(g) = &self.0.grad_fn {
            s.field("op", &g.op);
        }
        if self.numel() <= 16 {
            s.field("data", &self.0.data);
        }
        s.field("requires_grad", &self.0.requires_grad).finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn from_parts(shape: Vec<usize>, data: Arc<Vec<f64>>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    /// Constant tensor; never receives gradients.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::validate(shape, &data)?;
        Ok(Self::from_parts(shape.to_vec(), Arc::new(data), false, None))
    }

    /// Trainable leaf.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::validate(shape, &data)?;
        Ok(Self::from_parts(shape.to_vec(), Arc::new(data), true, None))
    }

    fn validate(shape: &[usize], data: &[f64]) -> Result<()> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidData(format!("zero-sized dimension in {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::InvalidData(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel_of(shape),
                data.len()
            )));
        }
        Ok(())
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(Vec::new(), Arc::new(vec![value]), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self::from_parts(shape.to_vec(), Arc::new(vec![value; numel_of(shape)]), false, None)
    }

    /// Result of an operation. Records `apply` only if some parent needs gradients.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: impl Into<Arc<Vec<f64>>>,
        parents: Vec<Tensor>,
        apply: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    ) -> Self {
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            parents,
            apply: Box::new(apply),
        });
        Self::from_parts(shape, data.into(), requires_grad, grad_fn)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.0.data)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.as_ref().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    /// Accumulated gradient, if backward has reached this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Same values, no gradient flow. Shares the underlying buffer.
    pub fn detach(&self) -> Tensor {
        Self::from_parts(self.0.shape.clone(), self.data_arc(), false, None)
    }

    /// Same values, new trainable leaf.
    pub fn detach_param(&self) -> Tensor {
        Self::from_parts(self.0.shape.clone(), self.data_arc(), true, None)
    }

    /// Reverse-mode sweep from a single-element loss.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.0.id, vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.0.id) else {
                continue;
            };
            match &node.0.grad_fn {
                None => {
                    let mut slot = node.0.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(gf) => {
                    let parent_grads = (gf.apply)(&g);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len(), "{}", gf.op);
                    for (parent, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "{}", gf.op);
                        match pending.get_mut(&parent.0.id) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(parent.0.id, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over grad-requiring nodes; parents precede children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.0.id) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(gf) = &node.0.grad_fn {
                for p in gf.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
