//! Dense row-major tensors of either 32-bit floats or 16-bit class labels.
//!
//! Maps are stored channels-last (`[height, width, channels]`), label maps as
//! `[height, width]`, vectors as `[dim]`, and model batches as `[rows, dim]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    Label,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::Label => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::Label),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    Label(Vec<u16>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

fn checked_volume(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::invalid("tensor must have at least one dimension"));
    }
    let mut n = 1usize;
    for &d in shape {
        if d == 0 {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::invalid(format!("shape {shape:?} overflows")))?;
    }
    Ok(n)
}

impl Tensor {
    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let n = checked_volume(&shape)?;
        if values.len() != n {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: TensorData::F32(values),
        })
    }

    pub fn from_labels(shape: Vec<usize>, labels: Vec<u16>) -> Result<Self> {
        let n = checked_volume(&shape)?;
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} labels, got {}",
                labels.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: TensorData::Label(labels),
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = checked_volume(&shape)?;
        Self::from_f32(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::Label(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::F32,
            TensorData::Label(_) => DType::Label,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::Label(_) => None,
        }
    }

    pub fn as_labels(&self) -> Option<&[u16]> {
        match &self.data {
            TensorData::Label(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    pub fn f32_values(&self) -> Result<&[f32]> {
        self.as_f32()
            .ok_or_else(|| Error::invalid("expected a float tensor, got labels"))
    }

    pub fn label_values(&self) -> Result<&[u16]> {
        self.as_labels()
            .ok_or_else(|| Error::invalid("expected a label tensor, got floats"))
    }

    /// Number of rows when viewed as a `[rows, last-dim]` matrix.
    pub fn rows(&self) -> usize {
        self.len() / self.shape[self.shape.len() - 1]
    }

    pub fn last_dim(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let n = checked_volume(&shape)?;
        if n != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                got: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn max_label(&self) -> Option<u16> {
        self.as_labels().and_then(|v| v.iter().copied().max())
    }

    pub(crate) fn ensure_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }
}
