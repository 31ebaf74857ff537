use super::{AutodiffError, Graph, Tensor, Var};

pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

/// Largest relative discrepancy between the reverse-mode gradient of `f` at
/// `theta` and a central finite difference with step `h`.
///
/// Each coordinate contributes `|analytic - numeric| / max(|analytic| + |numeric|, GRAD_CHECK_FLOOR)`.
/// The floor sits above central-difference roundoff, so coordinates whose true
/// gradient is zero are judged on absolute rather than relative error.
/// Large discrepancies are reported, never raised; only a failing forward pass errors.
pub fn grad_check<F>(f: F, theta: &Tensor, h: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, AutodiffError>,
{
    let eval = |point: &Tensor| -> Result<f64, AutodiffError> {
        let mut g = Graph::new();
        let p = g.param(point.clone());
        let out = f(&mut g, p)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let p = g.param(theta.clone());
    let out = f(&mut g, p)?;
    let grads = g.backward(out)?;
    let analytic = grads.get_or_zeros(p, theta.shape());

    let mut worst: f64 = 0.0;
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + h;
        let up = eval(&probe)?;
        probe.data_mut()[i] = original - h;
        let down = eval(&probe)?;
        probe.data_mut()[i] = original;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRAD_CHECK_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}
