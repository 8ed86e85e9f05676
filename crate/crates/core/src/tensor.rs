//! Dense row-major tensors.
//!
//! Axis order is `(channel, temporal, height, width)` wherever a tensor carries
//! video data. There is no broadcasting: every shape mismatch is an error.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type used for all computation. `f32` is the default compute
/// precision, `f64` is used for finite-difference gradient verification.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + LowerExp
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self;
    fn to_f32_lossy(self) -> f32;
}

impl Real for f32 {
    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
    fn to_f32_lossy(self) -> f32 {
        self
    }
}

impl Real for f64 {
    fn from_f64_lossy(v: f64) -> Self {
        v
    }
    fn to_f32_lossy(self) -> f32 {
        self as f32
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::dim("tensor shape must have at least one axis"));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::dim(format!("axis {axis} has zero extent")));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    /// Builds a tensor by evaluating `f` at each flat (row-major) index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::dim(format!(
                "index rank {} does not match tensor rank {}",
                index.len(),
                self.shape.len()
            )));
        }
        let mut off = 0;
        for (axis, (&i, &e)) in index.iter().zip(&self.shape).enumerate() {
            if i >= e {
                return Err(Error::dim(format!(
                    "index {i} out of bounds for axis {axis} of extent {e}"
                )));
            }
            off = off * e + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<T> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Contiguous sub-block along the leading axis.
    pub fn outer_slice(&self, index: usize) -> Result<&[T]> {
        let extent = self.shape[0];
        if index >= extent {
            return Err(Error::dim(format!(
                "leading index {index} out of bounds for extent {extent}"
            )));
        }
        let stride = self.data.len() / extent;
        Ok(&self.data[index * stride..(index + 1) * stride])
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }
}

/// Valid (no padding, stride 1) convolution output extents.
pub fn conv_output_shape(input: &[usize], kernel: &[usize]) -> Result<Vec<usize>> {
    if input.len() != kernel.len() {
        return Err(Error::dim(format!(
            "input rank {} does not match kernel rank {}",
            input.len(),
            kernel.len()
        )));
    }
    input
        .iter()
        .zip(kernel)
        .enumerate()
        .map(|(axis, (&i, &k))| {
            if k == 0 {
                Err(Error::dim(format!("kernel axis {axis} has zero extent")))
            } else if k > i {
                Err(Error::dim(format!(
                    "kernel extent {k} exceeds input extent {i} on axis {axis}"
                )))
            } else {
                Ok(i - k + 1)
            }
        })
        .collect()
}

pub fn tanh_map<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| v.tanh())
}

/// Concatenates the row-major flattenings of `tensors` into one vector.
pub fn concat_flatten<T: Real>(tensors: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if tensors.is_empty() {
        return Err(Error::arg("concat_flatten needs at least one tensor"));
    }
    let total: usize = tensors.iter().map(|t| t.len()).sum();
    let mut data = Vec::with_capacity(total);
    for t in tensors {
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![total], data)
}

/// Maps a flat index of a [`concat_flatten`] result back to
/// `(source tensor, index within source)`.
pub fn concat_source(lengths: &[usize], flat: usize) -> Option<(usize, usize)> {
    let mut start = 0;
    for (i, &len) in lengths.iter().enumerate() {
        if flat < start + len {
            return Some((i, flat - start));
        }
        start += len;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn conv_shape_examples() {
        assert_eq!(conv_output_shape(&[80, 60, 9], &[9, 7, 3]).unwrap(), vec![72, 54, 7]);
        assert_eq!(conv_output_shape(&[5, 5, 5], &[5, 5, 5]).unwrap(), vec![1, 1, 1]);
        assert_eq!(conv_output_shape(&[24, 18, 7], &[7, 7, 3]).unwrap(), vec![18, 12, 5]);
    }

    #[test]
    fn conv_shape_names_bad_axis() {
        let err = conv_output_shape(&[4, 3, 9], &[2, 5, 1]).unwrap_err();
        assert!(err.to_string().contains("axis 1"), "{err}");
    }

    #[test]
    fn tanh_examples() {
        let z = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        assert!(tanh_map(&z).data().iter().all(|&v| v == 0.0));
        let half = tanh_map(&Tensor::scalar(0.5f64));
        assert!((half.data()[0] - 0.462117).abs() < 1e-6);
    }

    #[test]
    fn concat_examples() {
        let a = Tensor::filled(&[2, 2], 1.0f32).unwrap();
        let b = Tensor::filled(&[3], 2.0f32).unwrap();
        let c = concat_flatten(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(concat_source(&[4, 3], 5), Some((1, 1)));
        assert_eq!(concat_source(&[4, 3], 7), None);

        let v = Tensor::filled(&[700], 0.1f32).unwrap();
        assert_eq!(concat_flatten(&[&v, &v, &v, &v]).unwrap().len(), 2800);
        assert_eq!(concat_flatten(&[&a]).unwrap().data(), a.data());
        assert!(matches!(concat_flatten::<f32>(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::zeros(&[3, 0]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0f32; 3]).is_err());
    }

    proptest! {
        #[test]
        fn reshape_round_trip(a in 1usize..5, b in 1usize..5, c in 1usize..5) {
            let t = Tensor::from_fn(&[a, b, c], |i| i as f32 * 0.5).unwrap();
            let back = t.clone().reshape(&[a * b * c]).unwrap().reshape(&[a, b, c]).unwrap();
            prop_assert_eq!(t, back);
        }

        #[test]
        fn concat_associative(la in 1usize..6, lb in 1usize..6, lc in 1usize..6) {
            let a = Tensor::from_fn(&[la], |i| i as f64).unwrap();
            let b = Tensor::from_fn(&[lb], |i| -(i as f64)).unwrap();
            let c = Tensor::from_fn(&[lc], |i| i as f64 * 3.0).unwrap();
            let left = concat_flatten(&[&a, &b, &c]).unwrap();
            let ab = concat_flatten(&[&a, &b]).unwrap();
            let right = concat_flatten(&[&ab, &c]).unwrap();
            prop_assert_eq!(left, right);
        }

        #[test]
        fn conv_shape_monotone(i in 3usize..20, k in 1usize..3, extra in 0usize..2) {
            let small = conv_output_shape(&[i], &[k]).unwrap();
            let big = conv_output_shape(&[i], &[k + extra]).unwrap();
            prop_assert!(big[0] <= small[0]);
        }
    }
}
