//! Dense row-major tensors of `f64`.

use std::fmt;

use thiserror::Error;

/// Shape and value errors raised by tensor operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        dim: String,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected rank {expected}, found shape {found:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("{op}: data length {len} does not match shape {shape:?}")]
    Length {
        op: &'static str,
        len: usize,
        shape: Vec<usize>,
    },
}

impl TensorError {
    pub(crate) fn mismatch(op: &'static str, dim: impl Into<String>, expected: usize, found: usize) -> Self {
        TensorError::ShapeMismatch {
            op,
            dim: dim.into(),
            expected,
            found,
        }
    }
}

/// A dense tensor. `data.len()` always equals the product of `shape`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || n != data.len() {
            return Err(TensorError::Length {
                op: "tensor",
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "tensor extents must be positive");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
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

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: 3,
                found: self.shape.clone(),
            }),
        }
    }

    /// Copy of channels `[start, start + count)` of a `[C, H, W]` tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Tensor, TensorError> {
        let (c, h, w) = self.chw("channel_slice")?;
        if count == 0 || start + count > c {
            return Err(TensorError::Invalid {
                op: "channel_slice",
                msg: format!("channels {start}..{} out of range for {c}", start + count),
            });
        }
        let plane = h * w;
        Ok(Tensor {
            shape: vec![count, h, w],
            data: self.data[start * plane..(start + count) * plane].to_vec(),
        })
    }

    /// Sub-tensor at `index` along the leading axis.
    pub fn index_outer(&self, index: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Per-pixel argmax over channels of a `[C, H, W]` tensor. Ties resolve to the lowest channel.
    pub fn argmax_channels(&self) -> Vec<u16> {
        let (c, h, w) = self.chw("argmax_channels").expect("rank-3 tensor");
        let plane = h * w;
        (0..plane)
            .map(|p| {
                let mut best = 0;
                let mut best_v = self.data[p];
                for ch in 1..c {
                    let v = self.data[ch * plane + p];
                    if v > best_v {
                        best_v = v;
                        best = ch;
                    }
                }
                best as u16
            })
            .collect()
    }

    /// Per-pixel max over channels of a `[C, H, W]` tensor.
    pub fn max_channels(&self) -> Vec<f64> {
        let (c, h, w) = self.chw("max_channels").expect("rank-3 tensor");
        let plane = h * w;
        (0..plane)
            .map(|p| (0..c).map(|ch| self.data[ch * plane + p]).fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}[", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:.6}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "]")
    }
}
