use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
    Selu,
    Softmax,
}

/// Derivative of an activation: elementwise for most kinds, a full Jacobian for softmax.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationGrad {
    Diagonal(Vec<f64>),
    Full(Matrix),
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl Activation {
    pub const ALL: [Activation; 6] = [
        Activation::Identity,
        Activation::Relu,
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::Selu,
        Activation::Softmax,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
            Activation::Selu => 4,
            Activation::Softmax => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.tag() == tag)
            .ok_or_else(|| Error::UnknownActivation(format!("tag {tag}")))
    }

    pub fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Softmax => softmax(z),
            _ => z.iter().map(|&v| self.scalar(v)).collect(),
        }
    }

    fn scalar(self, v: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Softmax => v,
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
            Activation::Selu => {
                if v > 0.0 {
                    SELU_LAMBDA * v
                } else {
                    SELU_LAMBDA * SELU_ALPHA * v.exp_m1()
                }
            }
        }
    }

    // f'(z) given z and f(z); relu'(0) is taken as 0.
    fn scalar_derivative(self, z: f64, out: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Softmax => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Selu => {
                if z > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * z.exp()
                }
            }
        }
    }

    /// Vector-Jacobian product `Jᵀ · grad_out` at pre-activation `z` with output `out`.
    pub fn backprop(self, z: &[f64], out: &[f64], grad_out: &[f64]) -> Vec<f64> {
        match self {
            Activation::Softmax => {
                let inner: f64 = out.iter().zip(grad_out).map(|(s, g)| s * g).sum();
                out.iter().zip(grad_out).map(|(s, g)| s * (g - inner)).collect()
            }
            _ => z
                .iter()
                .zip(out)
                .zip(grad_out)
                .map(|((&zi, &oi), &g)| g * self.scalar_derivative(zi, oi))
                .collect(),
        }
    }
}

/// Activation value and its derivative at `z`.
pub fn activation_and_grad(kind: Activation, z: &[f64]) -> Result<(Vec<f64>, ActivationGrad)> {
    crate::linalg::ensure_finite(z, "activation input")?;
    let out = kind.apply(z);
    let grad = match kind {
        Activation::Softmax => {
            let n = out.len();
            ActivationGrad::Full(Matrix::from_fn(n, n, |i, j| {
                out[i] * (if i == j { 1.0 } else { 0.0 } - out[j])
            }))
        }
        _ => ActivationGrad::Diagonal(
            z.iter()
                .zip(&out)
                .map(|(&zi, &oi)| kind.scalar_derivative(zi, oi))
                .collect(),
        ),
    };
    Ok((out, grad))
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "linear" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "selu" => Ok(Activation::Selu),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::UnknownActivation(other.to_string())),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Selu => "selu",
            Activation::Softmax => "softmax",
        };
        f.write_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(kind: Activation, z: f64) -> f64 {
        match activation_and_grad(kind, &[z]).unwrap().1 {
            ActivationGrad::Diagonal(d) => d[0],
            ActivationGrad::Full(_) => unreachable!(),
        }
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(diag(Activation::Tanh, 0.0), 1.0);
        assert_eq!(Activation::Sigmoid.apply(&[0.0]), vec![0.5]);
        assert_eq!(diag(Activation::Sigmoid, 0.0), 0.25);
        assert_eq!(Activation::Selu.apply(&[0.0]), vec![0.0]);
        assert_eq!(Activation::Selu.apply(&[1.0]), vec![1.050_700_987_355_480_5]);
        // Negative branch saturates at -λα.
        let neg = Activation::Selu.apply(&[-50.0])[0];
        assert!((neg + SELU_LAMBDA * SELU_ALPHA).abs() < 1e-12);
        let s = Activation::Softmax.apply(&[2.5, 2.5, 2.5]);
        for v in s {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        let points = [-2.3, -0.7, -0.1, 0.2, 0.9, 1.7];
        for kind in [
            Activation::Identity,
            Activation::Relu,
            Activation::Tanh,
            Activation::Sigmoid,
            Activation::Selu,
        ] {
            for &z in &points {
                let fd = (kind.apply(&[z + h])[0] - kind.apply(&[z - h])[0]) / (2.0 * h);
                let an = diag(kind, z);
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-12);
                assert!(rel < 1e-6, "{kind} at {z}: {an} vs {fd}");
            }
        }
        let z = [0.3, -1.2, 0.8, 2.0];
        let (_, jac) = activation_and_grad(Activation::Softmax, &z).unwrap();
        let ActivationGrad::Full(jac) = jac else {
            panic!("softmax has a full jacobian")
        };
        for j in 0..z.len() {
            let mut zp = z;
            let mut zm = z;
            zp[j] += h;
            zm[j] -= h;
            let (sp, sm) = (softmax(&zp), softmax(&zm));
            for i in 0..z.len() {
                let fd = (sp[i] - sm[i]) / (2.0 * h);
                assert!((fd - jac.get(i, j)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn parse_and_tags() {
        for a in Activation::ALL {
            assert_eq!(Activation::from_tag(a.tag()).unwrap(), a);
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
        assert!(matches!(
            "swish".parse::<Activation>(),
            Err(Error::UnknownActivation(_))
        ));
        assert!(activation_and_grad(Activation::Tanh, &[f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(z in proptest::collection::vec(-700.0f64..700.0, 1..40)) {
            let s = softmax(&z);
            let sum: f64 = s.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}
