use crate::error::{mismatch, AutogradError, Result};
use crate::real::Real;

/// Dense row-major array. Shape convention for images is
/// `[batch, channels, spatial...]` with one, two or three spatial axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(mismatch(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// Build from `f64` values, rounding to the element type.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::lit(v)).collect())
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(AutogradError::NotScalar(self.shape.clone()))
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(mismatch(
                "max_abs_diff",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Select batch item `b`, keeping a leading batch axis of size one.
    pub fn batch_item(&self, b: usize) -> Result<Self> {
        let n = *self.shape.first().ok_or(AutogradError::Empty { op: "batch_item" })?;
        if b >= n {
            return Err(mismatch("batch_item", format!("index {b} of batch {n}")));
        }
        let stride = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Tensor {
            shape,
            data: self.data[b * stride..(b + 1) * stride].to_vec(),
        })
    }

    /// Concatenate along the leading (batch) axis.
    pub fn stack_batch(items: &[Tensor<T>]) -> Result<Self> {
        let first = items.first().ok_or(AutogradError::Empty { op: "stack_batch" })?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if &t.shape[1..] != tail {
                return Err(mismatch(
                    "stack_batch",
                    format!("{:?} vs {:?}", t.shape, first.shape),
                ));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Tensor { shape, data })
    }
}

/// Spatial extents of an image-like shape `[B, C, spatial...]`, padded to
/// three axes with leading ones. Errors unless there are 2 or 3 spatial axes.
pub(crate) fn spatial3(op: &'static str, shape: &[usize]) -> Result<[usize; 3]> {
    match shape.len() {
        4 => Ok([1, shape[2], shape[3]]),
        5 => Ok([shape[2], shape[3], shape[4]]),
        r => Err(AutogradError::UnsupportedRank {
            op,
            rank: r.saturating_sub(2),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(Tensor::<f32>::scalar(2.0).item().unwrap(), 2.0);
    }

    #[test]
    fn batch_split_and_stack() {
        let t = Tensor::<f32>::from_fn(&[2, 1, 2], |i| i as f32);
        let a = t.batch_item(0).unwrap();
        let b = t.batch_item(1).unwrap();
        assert_eq!(b.data(), &[2.0, 3.0]);
        assert_eq!(Tensor::stack_batch(&[a, b]).unwrap(), t);
    }
}
