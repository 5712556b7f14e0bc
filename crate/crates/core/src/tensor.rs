use crate::error::{Error, Result};

/// Dense row-major f64 tensor, optionally carrying a gradient accumulator.
///
/// This is the sole numeric carrier in the crate: clips, feature maps,
/// adjacency matrices and parameters are all `Tensor`s. Values are always
/// 64-bit floats so that finite-difference gradient checks are meaningful.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension {
                op: "tensor",
                msg: format!("zero extent in shape {shape:?}"),
            });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                msg: format!(
                    "shape {shape:?} implies {numel} elements, got {}",
                    data.len()
                ),
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    /// Marks the tensor as a gradient target and allocates a zeroed
    /// accumulator of the same shape.
    pub fn with_grad(mut self) -> Self {
        self.grad = Some(vec![0.0; self.data.len()]);
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::Dimension {
                op: "accumulate_grad",
                msg: format!(
                    "gradient length {} does not match tensor of {} elements",
                    delta.len(),
                    self.data.len()
                ),
            });
        }
        let g = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        self.requires_grad = true;
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts the `b`-th slice along the first axis (e.g. one clip out of a
    /// `B x C x T x N` batch). The slice is contiguous in row-major order.
    pub fn index_first(&self, b: usize) -> Result<Tensor> {
        if self.shape.len() < 2 || b >= self.shape[0] {
            return Err(Error::Dimension {
                op: "index_first",
                msg: format!("index {b} out of range for shape {:?}", self.shape),
            });
        }
        let inner: usize = self.shape[1..].iter().product();
        let data = self.data[b * inner..(b + 1) * inner].to_vec();
        Tensor::new(self.shape[1..].to_vec(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn grad_accumulates_and_zeroes() {
        let mut t = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
        t.accumulate_grad(&[0.5, 0.25]).unwrap();
        t.accumulate_grad(&[0.5, 0.25]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.0, 0.5]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn index_first_extracts_contiguous_slice() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let row = t.index_first(1).unwrap();
        assert_eq!(row.shape(), &[3]);
        assert_eq!(row.data(), &[3.0, 4.0, 5.0]);
        assert!(t.index_first(2).is_err());
    }
}
