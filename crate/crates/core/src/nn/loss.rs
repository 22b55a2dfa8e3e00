use crate::error::{Error, Result};

/// Probability floor applied before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Mean squared error over elements.
pub fn mse_loss(target: &[f64], prediction: &[f64]) -> Result<f64> {
    check_len(target, prediction)?;
    if target.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = target
        .iter()
        .zip(prediction)
        .map(|(t, p)| (p - t) * (p - t))
        .sum();
    Ok(sum / target.len() as f64)
}

/// Gradient of [`mse_loss`] with respect to the prediction.
pub fn mse_grad(target: &[f64], prediction: &[f64]) -> Result<Vec<f64>> {
    check_len(target, prediction)?;
    let scale = 2.0 / target.len().max(1) as f64;
    Ok(target
        .iter()
        .zip(prediction)
        .map(|(t, p)| scale * (p - t))
        .collect())
}

fn check_probabilities(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProbability(format!("{p:?}")));
    }
    Ok(())
}

/// `-Σ y log ŷ` for one sample, with `ŷ` clamped at [`PROB_CLAMP`].
pub fn cross_entropy_loss(target: &[f64], predicted: &[f64]) -> Result<f64> {
    check_len(target, predicted)?;
    check_probabilities(predicted)?;
    Ok(-target
        .iter()
        .zip(predicted)
        .map(|(y, p)| if *y == 0.0 { 0.0 } else { y * p.max(PROB_CLAMP).ln() })
        .sum::<f64>())
}

/// Mean cross-entropy over a batch.
pub fn cross_entropy_batch(targets: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<f64> {
    if targets.len() != predicted.len() {
        return Err(Error::LengthMismatch(targets.len(), predicted.len()));
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (y, p) in targets.iter().zip(predicted) {
        total += cross_entropy_loss(y, p)?;
    }
    Ok(total / targets.len() as f64)
}

/// Gradient of the single-sample cross-entropy with respect to `ŷ`.
pub fn cross_entropy_grad(target: &[f64], predicted: &[f64]) -> Result<Vec<f64>> {
    check_len(target, predicted)?;
    Ok(target
        .iter()
        .zip(predicted)
        .map(|(y, p)| -y / p.max(PROB_CLAMP))
        .collect())
}

/// One-hot encoding of a binary label.
pub fn one_hot(label: u8) -> Vec<f64> {
    if label == 1 {
        vec![0.0, 1.0]
    } else {
        vec![1.0, 0.0]
    }
}
