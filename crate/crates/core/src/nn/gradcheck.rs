use crate::error::{Error, Result};

use super::Parameterized;

/// Relative error used by the gradient checker.
#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares analytic gradients with central differences for every parameter.
///
/// `objective` must return the loss and gradients aligned with
/// `model.param_slices()`. Any stochastic part (Gumbel noise, masks) has to be
/// frozen inside the closure. The error of a parameter block is
/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`; the maximum over blocks is returned. Blocks
/// whose analytic and numeric gradients are both exactly zero count as zero.
pub fn gradient_check<M, F>(model: &mut M, mut objective: F, eps: f64) -> Result<f64>
where
    M: Parameterized,
    F: FnMut(&mut M) -> Result<(f64, Vec<Vec<f64>>)>,
{
    let (loss, analytic) = objective(model)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
    if analytic.len() != shapes.len()
        || analytic.iter().zip(&shapes).any(|(g, &n)| g.len() != n)
    {
        return Err(Error::ShapeMismatch { what: "gradient check" });
    }

    let mut worst = 0.0f64;
    for (block, &n) in shapes.iter().enumerate() {
        let mut numeric = vec![0.0; n];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let original = model.param_slices()[block][k];
            model.param_slices_mut()[block][k] = original + eps;
            let (plus, _) = objective(model)?;
            model.param_slices_mut()[block][k] = original - eps;
            let (minus, _) = objective(model)?;
            model.param_slices_mut()[block][k] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            *slot = (plus - minus) / (2.0 * eps);
        }
        worst = worst.max(block_error(&analytic[block], &numeric));
    }
    Ok(worst)
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, zero when both are zero.
pub fn block_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Matrix, RngStream};
    use crate::nn::{loss, Activation, Dense, Sequential};

    fn mse_objective(
        input: Vec<f64>,
        target: Vec<f64>,
    ) -> impl FnMut(&mut Sequential) -> Result<(f64, Vec<Vec<f64>>)> {
        move |net: &mut Sequential| {
            let out = net.forward(&input)?;
            let l = loss::mse_loss(&target, &out)?;
            let g = loss::mse_grad(&target, &out)?;
            let mut grads = net.zero_grads();
            net.backward(&g, &mut grads)?;
            Ok((l, grads))
        }
    }

    #[test]
    fn two_layer_tanh() {
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let mut rng = RngStream::new(seed);
            let mut net = Sequential::init(&[4, 6, 3], &[Activation::Tanh, Activation::Tanh], true, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.next_normal()).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.next_normal() * 0.5).collect();
            worst = worst.max(gradient_check(&mut net, mse_objective(x, y), 1e-5).unwrap());
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn linear_quadratic_is_near_exact() {
        let w = Matrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 0.25]]).unwrap();
        let mut net = Sequential::new(vec![Dense::new(w, Some(vec![0.1, -0.2]), Activation::Identity).unwrap()]);
        let err = gradient_check(&mut net, mse_objective(vec![1.0, -2.0], vec![0.3, 0.7]), 1e-4).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn nan_loss_is_reported() {
        let mut net = Sequential::new(vec![Dense::new(Matrix::identity(1), None, Activation::Identity).unwrap()]);
        let res = gradient_check(
            &mut net,
            |n: &mut Sequential| Ok((f64::NAN, n.zero_grads())),
            1e-5,
        );
        assert!(matches!(res, Err(Error::NonFiniteLoss)));
    }
}
