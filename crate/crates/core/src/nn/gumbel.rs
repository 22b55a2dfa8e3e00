//! Per-ROI binary-concrete gate.
//!
//! Each ROI gets an independent two-class Gumbel-softmax relaxation, which
//! reduces to `σ((logit + G₁ − G₀) / τ)` with `G₀, G₁ ~ Gumbel(0, 1)`. In
//! hard-eval mode the noise is ignored and the gate is `1[σ(logit) ≥ 0.5]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RngStream;

use super::activation::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateMode {
    Sample,
    HardEval,
}

#[derive(Debug, Clone)]
pub struct GumbelGate {
    temperature: f64,
    rng: RngStream,
    pub mode: GateMode,
}

/// Gate values plus the noise that produced them (empty in hard-eval mode).
#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput {
    pub values: Vec<f64>,
    pub noise: Vec<f64>,
}

impl GumbelGate {
    pub fn new(temperature: f64, rng: RngStream, mode: GateMode) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::NonPositiveTemperature(temperature));
        }
        Ok(Self {
            temperature,
            rng,
            mode,
        })
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Draws `G₁ − G₀` for each of `n` gates (G₁ first, then G₀, per gate).
    pub fn sample_noise(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let g1 = self.rng.next_gumbel();
                let g0 = self.rng.next_gumbel();
                g1 - g0
            })
            .collect()
    }

    pub fn forward(&mut self, logits: &[f64]) -> Result<GateOutput> {
        match self.mode {
            GateMode::HardEval => Ok(GateOutput {
                values: hard_gate(logits),
                noise: Vec::new(),
            }),
            GateMode::Sample => {
                let noise = self.sample_noise(logits.len());
                let values = binary_concrete(logits, &noise, self.temperature)?;
                Ok(GateOutput { values, noise })
            }
        }
    }
}

/// `σ((logit + noise) / τ)` elementwise.
pub fn binary_concrete(logits: &[f64], noise: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    if logits.len() != noise.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.len(),
            got: noise.len(),
        });
    }
    Ok(logits
        .iter()
        .zip(noise)
        .map(|(l, g)| sigmoid((l + g) / temperature))
        .collect())
}

/// Gradient of [`binary_concrete`] with respect to the logits, given `dL/dgate`.
pub fn binary_concrete_grad(gate: &[f64], grad_out: &[f64], temperature: f64) -> Vec<f64> {
    gate.iter()
        .zip(grad_out)
        .map(|(s, g)| g * s * (1.0 - s) / temperature)
        .collect()
}

/// `1[σ(logit) ≥ 0.5]`; a logit of exactly zero selects the ROI.
pub fn hard_gate(logits: &[f64]) -> Vec<f64> {
    logits
        .iter()
        .map(|&l| if sigmoid(l) >= 0.5 { 1.0 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_temperature() {
        for t in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                GumbelGate::new(t, RngStream::new(0), GateMode::Sample),
                Err(Error::NonPositiveTemperature(_))
            ));
        }
    }

    #[test]
    fn hard_eval_thresholds() {
        let mut g = GumbelGate::new(0.01, RngStream::new(0), GateMode::HardEval).unwrap();
        assert_eq!(g.forward(&[10.0, -10.0]).unwrap().values, vec![1.0, 0.0]);
        assert_eq!(hard_gate(&[0.0, -0.0, -1e-3]), vec![1.0, 1.0, 0.0]);
        // σ underflows to exactly 0.5 here, so the tie rule selects.
        assert_eq!(hard_gate(&[-1e-300]), vec![1.0]);
    }

    #[test]
    fn vanishing_temperature_limit() {
        let logits = [0.3, -0.8, 1.2, -0.05];
        let noise = [0.1, 1.0, -1.5, 0.02];
        let v = binary_concrete(&logits, &noise, 1e-6).unwrap();
        for ((l, g), out) in logits.iter().zip(&noise).zip(&v) {
            let expected = if l + g > 0.0 { 1.0 } else { 0.0 };
            assert!((out - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_outputs_in_unit_interval() {
        let mut g = GumbelGate::new(1.0, RngStream::new(4), GateMode::Sample).unwrap();
        let out = g.forward(&vec![0.0; 200]).unwrap();
        assert!(out.values.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn golden_gate_vector_tau_001() {
        let mut g = GumbelGate::new(0.01, RngStream::new(2024), GateMode::Sample).unwrap();
        let out = g.forward(&[0.0; 6]).unwrap();

        // Recompute from raw uniforms and the closed form.
        let mut raw = RngStream::new(2024);
        for v in &out.values {
            let u1 = ((raw.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
            let u0 = ((raw.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
            let noise = -(-u1.ln()).ln() + (-u0.ln()).ln();
            let expected = 1.0 / (1.0 + (-noise / 0.01).exp());
            assert!((v - expected).abs() < 1e-15);
        }
        assert_eq!(out.values, GOLDEN_2024);
    }

    const GOLDEN_2024: [f64; 6] = [
        1.0,
        1.0,
        1.0,
        2.936129554987257e-59,
        9.944881031922491e-33,
        1.5964002919369712e-64,
    ];

    #[test]
    fn gradient_matches_finite_difference() {
        let logits = [0.02, -0.01, 0.3];
        let noise = [0.01, 0.0, -0.28];
        let tau = 0.05;
        let gate = binary_concrete(&logits, &noise, tau).unwrap();
        let grad = binary_concrete_grad(&gate, &[1.0, 1.0, 1.0], tau);
        let h = 1e-7;
        for i in 0..3 {
            let mut lp = logits;
            let mut lm = logits;
            lp[i] += h;
            lm[i] -= h;
            let fd = (binary_concrete(&lp, &noise, tau).unwrap()[i]
                - binary_concrete(&lm, &noise, tau).unwrap()[i])
                / (2.0 * h);
            assert!((fd - grad[i]).abs() / grad[i].abs() < 1e-6);
        }
    }

    #[test]
    fn hard_eval_ignores_monotone_sign_preserving_transform() {
        let logits = [2.0, -0.5, 0.0, 1e-3, -7.0];
        let transformed: Vec<f64> = logits.iter().map(|l: &f64| l.powi(3) * 5.0).collect();
        assert_eq!(hard_gate(&logits), hard_gate(&transformed));
    }
}
