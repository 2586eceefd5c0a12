//! Finite-difference verification of reverse-mode gradients.

use super::tensor::Tensor;
use crate::error::Result;

/// Compares analytic gradients against central finite differences.
///
/// `f` maps a parameter set to a scalar loss plus the analytic gradient of
/// that loss with respect to each parameter, in order. Every coordinate of
/// every parameter is perturbed by `±eps`; the returned figure is the worst
/// relative error `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)` over all
/// coordinates.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    let (_, analytic) = f(params)?;
    assert_eq!(
        analytic.len(),
        params.len(),
        "f returned {} gradients for {} parameters",
        analytic.len(),
        params.len()
    );
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for p in 0..params.len() {
        assert_eq!(
            analytic[p].shape(),
            params[p].shape(),
            "gradient {p} shape {:?} does not match parameter shape {:?}",
            analytic[p].shape(),
            params[p].shape()
        );
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let (loss_plus, _) = f(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let (loss_minus, _) = f(&work)?;
            work[p].data_mut()[i] = orig;
            let g_fd = (loss_plus - loss_minus) / (2.0 * eps);
            let g_ad = analytic[p].data()[i];
            let rel = (g_ad - g_fd).abs() / (1e-8f64).max(g_ad.abs() + g_fd.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
