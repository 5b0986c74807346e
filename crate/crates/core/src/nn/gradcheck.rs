//! Central finite-difference validation of analytic gradients.

use rand::seq::index;

use super::layers::Parameterized;
use crate::error::Result;
use crate::rng::{seeded, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Half-width of the central difference.
    pub epsilon: f64,
    /// Parameters checked per tensor; smaller tensors are checked in full.
    pub samples_per_tensor: usize,
    /// Denominator floor so near-zero gradients compare absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            samples_per_tensor: 64,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(tensor, index)` of the worst parameter.
    pub worst: Option<(usize, usize)>,
}

/// Compares analytic and numerical gradients.
///
/// `objective(model, with_grad)` returns the scalar loss; when `with_grad`
/// is true it must also accumulate gradients into the (already zeroed)
/// parameter buffers. The objective must be deterministic.
pub fn gradient_check<M, F>(model: &mut M, mut objective: F, config: GradCheckConfig) -> Result<GradCheckReport>
where
    M: Parameterized<f64>,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    model.zero_grad();
    objective(model, true)?;
    let analytic: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad.to_vec()).collect();

    let mut rng = seeded(config.seed, Stream::Init);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (t, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let picks: Vec<usize> = if n <= config.samples_per_tensor {
            (0..n).collect()
        } else {
            let mut v = index::sample(&mut rng, n, config.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for i in picks {
            let original = model.params()[t].value[i];
            model.params()[t].value[i] = original + config.epsilon;
            let plus = objective(model, false)?;
            model.params()[t].value[i] = original - config.epsilon;
            let minus = objective(model, false)?;
            model.params()[t].value[i] = original;
            let numeric = (plus - minus) / (2.0 * config.epsilon);
            let a = grads[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
            report.checked += 1;
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(rel);
                report.worst = Some((t, i));
            }
        }
    }
    Ok(report)
}
