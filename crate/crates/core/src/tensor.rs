//! Dense row-major `f64` tensors of rank 1 to 4.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAX_RANK: usize = 4;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Initial contents for [`Tensor::create`].
#[derive(Debug, Clone)]
pub enum Fill {
    Scalar(f64),
    Values(Vec<f64>),
}

impl From<f64> for Fill {
    fn from(v: f64) -> Self {
        Fill::Scalar(v)
    }
}

impl From<Vec<f64>> for Fill {
    fn from(v: Vec<f64>) -> Self {
        Fill::Values(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZipOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, std: f64 },
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn create(shape: &[usize], fill: impl Into<Fill>) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = match fill.into() {
            Fill::Scalar(v) => vec![v; len],
            Fill::Values(values) => {
                if values.len() != len {
                    return Err(Error::LengthMismatch { shape: shape.to_vec(), expected: len, actual: values.len() });
                }
                values
            }
        };
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::create(shape, Fill::Values(data))
    }

    /// Panics on an invalid shape; for internal call sites whose shapes are
    /// already validated.
    pub(crate) fn zeros(shape: &[usize]) -> Self {
        Self::create(shape, 0.0).expect("validated shape")
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn random(shape: &[usize], dist: Dist, rng: &mut Rng) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = match dist {
            Dist::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo > hi {
                    return Err(Error::InvalidArgument(format!(
                        "uniform bounds must satisfy lo <= hi, got [{lo}, {hi}]"
                    )));
                }
                (0..len).map(|_| rng.uniform(lo, hi)).collect()
            }
            Dist::Normal { mean, std } => {
                if !mean.is_finite() || !std.is_finite() || std < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "normal needs finite mean and std >= 0, got ({mean}, {std})"
                    )));
                }
                (0..len).map(|_| rng.normal(mean, std)).collect()
            }
        };
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Shape as `[N, C, H, W]`, or an error naming `what` if the rank is not 4.
    pub fn dims4(&self, what: &'static str) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::layer(what, format!("expected a rank-4 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn dims2(&self, what: &'static str) -> Result<[usize; 2]> {
        match *self.shape.as_slice() {
            [n, f] => Ok([n, f]),
            _ => Err(Error::layer(what, format!("expected a rank-2 tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::LengthMismatch { shape: shape.to_vec(), expected: len, actual: self.data.len() });
        }
        Ok(Self { shape: shape.to_vec(), data: self.data })
    }

    pub fn zip(&self, other: &Tensor, op: ZipOp) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { left: self.shape.clone(), right: other.shape.clone() });
        }
        let f: fn(f64, f64) -> f64 = match op {
            ZipOp::Add => |a, b| a + b,
            ZipOp::Sub => |a, b| a - b,
            ZipOp::Mul => |a, b| a * b,
        };
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Slice of the batch items `start..end` along the leading axis.
    pub fn batch_slice(&self, start: usize, end: usize) -> Result<Tensor> {
        let n = self.shape[0];
        if start >= end || end > n {
            return Err(Error::InvalidArgument(format!(
                "batch range {start}..{end} out of bounds for leading extent {n}"
            )));
        }
        let per = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Tensor::from_parts(shape, self.data[start * per..end * per].to_vec()))
    }

    /// Concatenate along the leading axis. All trailing extents must agree.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let tail = &first.shape[1..];
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::ShapeMismatch { left: first.shape.clone(), right: p.shape.clone() });
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Tensor::from_parts(shape, data))
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}
