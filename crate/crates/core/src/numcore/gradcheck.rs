use super::tape::{backward, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Compares reverse-mode gradients of `f` at `point` with central differences.
///
/// Returns the maximum over all coordinates of
/// `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn finite_diff_check<F>(f: F, point: &[Tensor], step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = point.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&tape, &vars)?;
        let grads = backward(loss)?;
        vars.iter().map(|v| grads.wrt(*v)).collect()
    };

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        f(&tape, &vars)?.value().item()
    };

    let mut worst = 0.0_f64;
    let mut probe: Vec<Tensor> = point.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        for coord in 0..point[which].numel() {
            let orig = point[which].data()[coord];
            probe[which].data_mut()[coord] = orig + step;
            let up = eval(&probe)?;
            probe[which].data_mut()[coord] = orig - step;
            let down = eval(&probe)?;
            probe[which].data_mut()[coord] = orig;
            let fd = (up - down) / (2.0 * step);
            let ad = grad.data()[coord];
            let rel = (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
