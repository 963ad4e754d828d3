//! Dense 64-bit float tensors and the reverse-mode tape that differentiates
//! through them. Everything is row-major `Vec<f64>`; shapes are 1-D or 2-D.

mod gradcheck;
mod tape;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use tape::{Tape, Var, LOG_FLOOR};

/// Dense n-dimensional array of 64-bit floats, row-major, with an optional
/// same-shape gradient buffer. The unit of all model math.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
            grad: None,
        }
    }

    /// Panics if `values.len()` does not equal the product of `shape`.
    pub fn from_values(shape: &[usize], values: Vec<f64>) -> Self {
        let n: usize = shape.iter().product();
        assert!(
            n == values.len(),
            "tensor shape {:?} implies {} values, got {}",
            shape,
            n,
            values.len()
        );
        Tensor {
            shape: shape.to_vec(),
            values,
            grad: None,
        }
    }

    /// Allocates the gradient buffer, marking this tensor as participating in
    /// differentiation.
    pub fn with_grad(mut self) -> Self {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.values.len()]);
        }
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Number of rows under the 2-D view: 1-D tensors are a single row.
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Number of columns under the 2-D view.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self
                .grad
                .as_ref()
                .map_or(true, |g| g.iter().all(|v| v.is_finite()))
    }
}

/// Scales a set of gradient buffers so that their joint L2 norm does not
/// exceed `max_norm`. Buffers at or under the threshold pass through
/// untouched, which makes the operation idempotent. Returns the pre-clip norm.
pub fn clip_by_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip threshold must be positive, got {max_norm}");
    let sq: f64 = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
