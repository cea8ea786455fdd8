use crate::error::{Error, Result};

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("step must be > 0, got {h}")));
    }
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + h;
        let plus = f(&point);
        point[i] = orig - h;
        let minus = f(&point);
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteLoss(i));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, 0 when both are zero.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
