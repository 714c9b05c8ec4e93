use super::Tensor;
use crate::error::{MegtError, Result};

/// Central-difference gradient of a scalar function, one coordinate at a
/// time: `(f(x + h·e) − f(x − h·e)) / 2h`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.detached();
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(MegtError::Oracle { index: i });
        }
        out.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}

/// Relative error floor: below it, both gradients count as zero and the
/// difference is compared in absolute terms.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(GRAD_REL_FLOOR)
}
