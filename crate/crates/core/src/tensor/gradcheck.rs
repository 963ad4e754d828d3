//! Finite-difference validation of analytic gradients.
//!
//! Central differences with a caller-supplied step compare a fresh forward
//! pass per perturbation against the gradients already accumulated in the
//! parameter tensors. Large tensors are spot-checked on a random coordinate
//! sample to keep runtime bounded.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::ParamHandle;

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error seen across all sampled coordinates.
    pub max_rel_err: f64,
    /// Number of coordinates compared.
    pub checked: usize,
    /// Human-readable description of the worst coordinate.
    pub worst: String,
}

/// Compares analytic gradients (already present in each parameter's grad
/// buffer) against central differences of `loss_fn`.
///
/// `loss_fn` must run a complete forward pass from the parameters' *current*
/// values; it is called twice per sampled coordinate with that coordinate
/// perturbed by ±`h`, and the original value is restored afterwards. Up to
/// `samples_per_tensor` coordinates are drawn per tensor (all of them when
/// the tensor is smaller than that).
///
/// Relative error is |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
pub fn finite_diff_check(
    params: &[ParamHandle],
    mut loss_fn: impl FnMut() -> f64,
    h: f64,
    samples_per_tensor: usize,
    rng: &mut ChaCha8Rng,
) -> GradCheckReport {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: String::new(),
    };
    for handle in params {
        let (name, numel) = {
            let p = handle.borrow();
            (p.name.clone(), p.tensor.numel())
        };
        let indices: Vec<usize> = if numel <= samples_per_tensor {
            (0..numel).collect()
        } else {
            (0..samples_per_tensor)
                .map(|_| rng.gen_range(0..numel))
                .collect()
        };
        for idx in indices {
            let analytic = {
                let p = handle.borrow();
                p.tensor
                    .grad()
                    .unwrap_or_else(|| panic!("parameter {name:?} has no gradient buffer"))[idx]
            };
            let original = handle.borrow().tensor.values()[idx];
            handle.borrow_mut().tensor.values_mut()[idx] = original + h;
            let plus = loss_fn();
            handle.borrow_mut().tensor.values_mut()[idx] = original - h;
            let minus = loss_fn();
            handle.borrow_mut().tensor.values_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst =
                    format!("{name}[{idx}]: analytic {analytic:.6e}, numeric {numeric:.6e}");
            }
        }
    }
    report
}
