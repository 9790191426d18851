//! A small reverse-mode automatic differentiation engine over dense tensors.
//!
//! Parameters live in a [`ParamSet`]. A forward pass records operations on a
//! [`Tape`] that borrows the parameter set; [`Tape::backward`] walks the tape
//! in reverse and returns per-parameter [`Gradients`], which can then be
//! summed into each tensor's gradient slot.

mod check;
mod tape;
mod wide;

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

pub use check::{grad_check, grad_check_wide};
pub use tape::{Gradients, Tape, Var};
pub use wide::F64x2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("softmax row {0} has every position masked")]
    AllMaskedRow(usize),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    /// Double-double, used only as a finite-difference reference.
    F64x2 = 2,
}

impl DType {
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::F64x2),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::F64x2 => 16,
        }
    }
}

/// Floating-point element type of the engine.
pub trait Real: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {
    const DTYPE: DType;

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one value from exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Nearest representable value.
    fn from_f64_lossy(x: f64) -> Self;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }

    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }

    fn from_f64_lossy(x: f64) -> Self {
        x
    }
}

impl Real for F64x2 {
    const DTYPE: DType = DType::F64x2;

    fn write_le(self, out: &mut Vec<u8>) {
        self.hi().write_le(out);
        self.lo().write_le(out);
    }

    fn read_le(bytes: &[u8]) -> Self {
        let (hi, lo) = bytes.split_at(8);
        F64x2::from_pair(f64::read_le(hi), f64::read_le(lo))
    }

    fn from_f64_lossy(x: f64) -> Self {
        F64x2::from_f64(x)
    }
}

/// Shape, contiguous row-major values and an optional gradient slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch { op: "tensor", left: shape, right: vec![data.len()] });
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); n], grad: None }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: (0..n).map(&mut f).collect(), grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut Vec<T> {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); n])
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Rows and columns of the 2-D view: `[n]` is one row, `[]` a 1x1 scalar.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            [first, rest @ ..] => (*first, rest.iter().product()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap_or(f64::NAN))).collect(),
            grad: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }

    /// Adds a tensor; a repeated name replaces the earlier tensor.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        if let Some(id) = self.id(&name) {
            self.tensors[id.0] = tensor;
            return id;
        }
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId, TensorError> {
        self.id(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> + '_ {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> + '_ {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    /// Adds `grads` into each tensor's gradient slot.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.iter() {
            let slot = self.tensors[id.0].grad_mut();
            for (s, &x) in slot.iter_mut().zip(g) {
                *s = *s + x;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_checked() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::<f64>::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.dims2(), (1, 3));
    }

    #[test]
    fn params_accumulate() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.insert("w", Tensor::zeros(vec![2]));
        assert_eq!(ps.insert("w", Tensor::zeros(vec![2])), id);
        let mut g = Gradients::new(1);
        g.add(id, &[1.0, 2.0]);
        ps.accumulate(&g);
        ps.accumulate(&g);
        assert_eq!(ps.get(id).grad().unwrap(), [2.0, 4.0]);
        ps.zero_grad();
        assert!(ps.get(id).grad().is_none());
    }
}
