//! Dense row-major tensors.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array stored in row-major order.
///
/// The first axis is the batch axis for every tensor that flows through a
/// [`Network`](crate::nn::Network).
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) && !data.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "tensor shape {shape:?} has a zero extent but {} values",
                data.len()
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("tensor construction", &[n], &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::shape("tensor rows", &[width], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), width], data)
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

    /// Extent of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self, i: usize) -> &[T] {
        let w = self.item_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        let w = self.item_len().max(1);
        self.data.chunks(w)
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &shape, &self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        self.map(|v| U::from(v).expect("finite cast"))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Gathers the given batch items into a new tensor.
    pub fn select(&self, indices: &[usize]) -> Tensor<T> {
        let w = self.item_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    /// Stacks equally shaped per-item slices along a new batch axis.
    pub fn stack(item_shape: &[usize], items: &[&[T]]) -> Result<Self> {
        let w: usize = item_shape.iter().product();
        let mut data = Vec::with_capacity(items.len() * w);
        for it in items {
            if it.len() != w {
                return Err(Error::shape("stack", item_shape, &[it.len()]));
            }
            data.extend_from_slice(it);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(item_shape);
        Ok(Tensor { shape, data })
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.item_len(), 3);
        assert_eq!(t.batch(), 2);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax::<f32>(&[]), None);
        assert_eq!(argmax(&[-1.0, -1.0]), Some(0));
    }

    #[test]
    fn select_and_stack_agree() {
        let t = Tensor::<f32>::new(vec![3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let s = t.select(&[2, 0]);
        assert_eq!(s.data(), &[5., 6., 1., 2.]);
        let st = Tensor::stack(&[2], &[t.item(2), t.item(0)]).unwrap();
        assert_eq!(st, s);
    }
}
