use crate::{Error, Result};

/// Scalar precision of a tape: `f32` for training, `f64` for verification.
pub trait Scalar:
    num_traits::Float
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Flat numeric buffer with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<S> {
    data: Vec<S>,
    shape: Vec<usize>,
}

impl<S: Scalar> Buffer<S> {
    pub fn new(data: Vec<S>, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "buffer",
                format!("shape {:?} implies {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Buffer { data, shape })
    }

    pub fn scalar(v: S) -> Self {
        Buffer { data: vec![v], shape: vec![] }
    }

    pub fn vector(data: Vec<S>) -> Self {
        let n = data.len();
        Buffer { data, shape: vec![n] }
    }

    pub fn matrix(data: Vec<S>, rows: usize, cols: usize) -> Result<Self> {
        Buffer::new(data, vec![rows, cols])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Buffer { data: vec![S::zero(); n], shape: shape.to_vec() }
    }

    pub fn zeros_like(other: &Buffer<S>) -> Self {
        Buffer { data: vec![S::zero(); other.data.len()], shape: other.shape.clone() }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n: usize = shape.iter().product();
        Buffer { data: vec![v; n], shape: shape.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a scalar buffer.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "item",
                format!("expected scalar, shape {:?}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    /// (rows, cols) of a 2-D buffer; 1-D buffers count as a single row.
    pub fn rows_cols(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(Error::shape(
                "rows_cols",
                format!("expected 1-D or 2-D, shape {:?}", self.shape),
            )),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Buffer<S>) -> Result<()> {
        if self.data.len() != other.data.len() {
            return Err(Error::shape(
                "add_assign",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn to_f64(&self) -> Buffer<f64> {
        Buffer {
            data: self.data.iter().map(|v| v.as_f64()).collect(),
            shape: self.shape.clone(),
        }
    }

    pub fn from_f64_buffer(src: &Buffer<f64>) -> Buffer<S> {
        Buffer {
            data: src.data.iter().map(|&v| S::from_f64(v)).collect(),
            shape: src.shape.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Buffer::new(vec![1.0f64, 2.0], vec![3]).is_err());
        let b = Buffer::new(vec![1.0f64, 2.0, 3.0, 4.0], vec![2, 2]).unwrap();
        assert_eq!(b.rows_cols().unwrap(), (2, 2));
    }

    #[test]
    fn scalar_item() {
        let b = Buffer::scalar(4.0f32);
        assert!(b.is_scalar());
        assert_eq!(b.item().unwrap(), 4.0);
        assert!(Buffer::vector(vec![1.0f32, 2.0]).item().is_err());
    }
}
