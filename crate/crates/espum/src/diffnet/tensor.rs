//! Flat row-major double-precision tensors.

use super::DiffnetError;

/// Dense tensor of f64 values. Most of the pipeline uses 2-D tensors shaped
/// `[frames, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Self, DiffnetError> {
        let expect: usize = shape.iter().product();
        if values.len() != expect {
            return Err(DiffnetError::Shape(format!(
                "{} values for shape {shape:?} (expected {expect})",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(DiffnetError::NonFinite(format!("tensor value {bad}")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            values,
        })
    }

    /// 2-D tensor from row slices; all rows must share a length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DiffnetError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DiffnetError::Shape("ragged rows".into()));
        }
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_vec(&[rows.len(), cols], values)
    }

    /// One-hot 2-D encoding of ids: shape `[ids.len(), classes]`.
    pub fn one_hot(ids: &[usize], classes: usize) -> Result<Self, DiffnetError> {
        let mut t = Self::zeros(&[ids.len(), classes]);
        for (r, &id) in ids.iter().enumerate() {
            if id >= classes {
                return Err(DiffnetError::Shape(format!(
                    "id {id} out of range for {classes} classes"
                )));
            }
            t.values[r * classes + id] = 1.0;
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[r * c..(r + 1) * c]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn fill(&mut self, value: f64) {
        self.values.iter_mut().for_each(|v| *v = value);
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), DiffnetError> {
        if !self.same_shape(other) {
            return Err(DiffnetError::Shape(format!(
                "add_assign {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }
}
