use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar element type for all numeric code in this crate.
///
/// Instantiated as `f64` (the default, required for gradient checks and
/// deterministic reports) or `f32` (faster training runs).
pub trait Scalar: Float + Send + Sync + fmt::Debug + fmt::Display + 'static {}

impl<T: Float + Send + Sync + fmt::Debug + fmt::Display + 'static> Scalar for T {}

/// Converts an `f64` literal into the active scalar type.
#[inline]
pub fn real<F: Scalar>(x: f64) -> F {
    F::from(x).expect("literal not representable in scalar type")
}

/// Converts a scalar back to `f64` for reporting.
#[inline]
pub fn as_f64<F: Scalar>(x: F) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

/// An n-dimensional array with contiguous row-major storage.
///
/// The gradient accumulator is present only on differentiable tensors
/// (parameters registered in a [`ParamStore`](super::ParamStore)).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
    grad: Option<Vec<F>>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero dimension in {shape:?}")));
        }
        if data.len() != expect {
            return Err(Error::shape(
                "tensor",
                format!("{} values for shape {shape:?} (need {expect})", data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![F::zero(); len],
            grad: None,
        }
    }

    pub fn scalar(x: F) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![x],
            grad: None,
        }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("tensor", "ragged rows"));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Allocates the same-shape gradient accumulator, marking the tensor
    /// differentiable.
    pub fn enable_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![F::zero(); self.data.len()]);
        }
    }

    pub fn grad(&self) -> Option<&[F]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [F]> {
        self.grad.as_deref_mut()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[F] {
        let c = self.shape[self.shape.len() - 1];
        &self.data[i * c..(i + 1) * c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let t = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]);
        assert!(matches!(t, Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_zero_dimension() {
        let t = Tensor::<f64>::new(vec![2, 0], vec![]);
        assert!(matches!(t, Err(Error::Shape { .. })));
    }

    #[test]
    fn grad_matches_shape() {
        let mut t = Tensor::<f64>::zeros(vec![3, 4]);
        assert!(t.grad().is_none());
        t.enable_grad();
        assert_eq!(t.grad().unwrap().len(), 12);
    }

    #[test]
    fn row_access() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
    }
}
