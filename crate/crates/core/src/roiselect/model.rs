use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pairs, Matrix, RngStream};
use crate::nn::{binary_concrete, binary_concrete_grad, hard_gate, loss, Activation, Parameterized, Sequential};
use crate::sae::SaeModel;

use super::psi::PsiNetwork;
use super::gate_weights_flat;

/// Which parts of the pipeline a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationCase {
    /// FC through the encoder and classifier, no selection network.
    #[serde(rename = "I")]
    I,
    /// Linear SVM on `f_v`.
    #[serde(rename = "II")]
    II,
    /// Linear SVM on `f_c`.
    #[serde(rename = "III")]
    III,
    /// No selection network; `[E(x) ‖ f_v ‖ f_c]` feeds the classifier.
    #[serde(rename = "IV")]
    IV,
    /// Selection network on `f_v` only.
    #[serde(rename = "V")]
    V,
    /// Selection network on `f_c` only.
    #[serde(rename = "VI")]
    VI,
    #[serde(rename = "full")]
    Full,
}

impl AblationCase {
    pub const ALL: [AblationCase; 7] = [Self::I, Self::II, Self::III, Self::IV, Self::V, Self::VI, Self::Full];

    pub fn uses_psi(self) -> bool {
        matches!(self, Self::V | Self::VI | Self::Full)
    }

    pub fn uses_svm(self) -> bool {
        matches!(self, Self::II | Self::III)
    }

    /// Whether the `f_v` and `f_c` channels are kept.
    pub fn channels(self) -> [bool; 2] {
        match self {
            Self::I => [false, false],
            Self::II | Self::V => [true, false],
            Self::III | Self::VI => [false, true],
            Self::IV | Self::Full => [true, true],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::I => "I",
            Self::II => "II",
            Self::III => "III",
            Self::IV => "IV",
            Self::V => "V",
            Self::VI => "VI",
            Self::Full => "full",
        }
    }
}

impl fmt::Display for AblationCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown ablation case `{s}`")))
    }
}

/// How the gate is evaluated on a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum GateDraw<'a> {
    /// Relaxed gate with the given `G₁ − G₀` noise, one value per ROI.
    Noise(&'a [f64]),
    /// Deterministic `1[σ(logit) ≥ 0.5]`.
    Hard,
}

/// One subject's inputs: flattened FC and prepared channel features.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierInput<'a> {
    pub x: &'a [f64],
    pub f: &'a [[f64; 2]],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step3Forward {
    /// `[p(TD), p(ASD)]`.
    pub probs: Vec<f64>,
    /// Gate values when the selection network is used.
    pub gate: Option<Vec<f64>>,
}

/// Selection network and classifier over the bias-free encoder, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct Step3Model {
    case: AblationCase,
    pub psi: Option<PsiNetwork>,
    pub encoder: Sequential,
    pub classifier: Sequential,
    temperature: f64,
}

/// `ŷ = C(E(flatten(x ⊙ f')))` with a bias-free encoder.
pub fn classify(encoder: &Sequential, classifier: &Sequential, x: &Matrix, gate: &Matrix) -> Result<Vec<f64>> {
    if encoder.layers.is_empty() || encoder.layers.iter().any(|l| l.has_bias()) {
        return Err(Error::UntrainedEncoder);
    }
    let gated = x.hadamard(gate)?;
    let h = encoder.infer(&crate::linalg::flatten_upper(&gated)?)?;
    classifier.infer(&h)
}

fn classifier_head(inputs: usize, rng: &mut RngStream) -> Sequential {
    Sequential::init(&[inputs, 10, 2], &[Activation::Relu, Activation::Softmax], true, rng)
}

impl Step3Model {
    /// Fresh selection network and classifier on top of the pretrained encoder with biases removed.
    pub fn new(case: AblationCase, sae: &SaeModel, psi_hidden: [usize; 2], temperature: f64, rng: &mut RngStream) -> Result<Self> {
        Self::from_encoder(case, sae.bias_free_encoder()?, sae.rois(), psi_hidden, temperature, rng)
    }

    pub fn from_encoder(
        case: AblationCase,
        encoder: Sequential,
        rois: usize,
        psi_hidden: [usize; 2],
        temperature: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if case.uses_svm() {
            return Err(Error::Config(format!("case {case} is trained as a linear SVM")));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::NonPositiveTemperature(temperature));
        }
        let code = encoder.layers.last().ok_or(Error::UntrainedEncoder)?.outputs();
        let psi = case.uses_psi().then(|| PsiNetwork::init(rois, psi_hidden, rng));
        let extra = if case == AblationCase::IV { 2 * rois } else { 0 };
        Ok(Self {
            case,
            psi,
            encoder,
            classifier: classifier_head(code + extra, rng),
            temperature,
        })
    }

    pub fn case(&self) -> AblationCase {
        self.case
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn rois(&self) -> usize {
        crate::linalg::roi_count_for(self.encoder.layers[0].inputs()).unwrap_or(0)
    }

    fn encoder_input(x: &[f64], gate: Option<&[f64]>) -> Vec<f64> {
        match gate {
            Some(g) => x.iter().zip(gate_weights_flat(g)).map(|(a, w)| a * w).collect(),
            None => x.to_vec(),
        }
    }

    fn head_input(&self, code: Vec<f64>, f: &[[f64; 2]]) -> Vec<f64> {
        let mut h = code;
        if self.case == AblationCase::IV {
            h.extend(f.iter().map(|c| c[0]));
            h.extend(f.iter().map(|c| c[1]));
        }
        h
    }

    fn check(&self, input: &ClassifierInput<'_>) -> Result<()> {
        let d = self.encoder.layers[0].inputs();
        if input.x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: input.x.len(),
            });
        }
        let r = self.rois();
        if (self.psi.is_some() || self.case == AblationCase::IV) && input.f.len() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                got: input.f.len(),
            });
        }
        Ok(())
    }

    /// Forward pass that caches activations for [`Step3Model::backward`].
    pub fn forward(&mut self, input: ClassifierInput<'_>, draw: GateDraw<'_>) -> Result<Step3Forward> {
        self.check(&input)?;
        let gate = match &mut self.psi {
            Some(psi) => {
                let logits = psi.logits(input.f)?;
                Some(match draw {
                    GateDraw::Noise(noise) => binary_concrete(&logits, noise, self.temperature)?,
                    GateDraw::Hard => hard_gate(&logits),
                })
            }
            None => None,
        };
        let code = self.encoder.forward(&Self::encoder_input(input.x, gate.as_deref()))?;
        let head = self.head_input(code, input.f);
        let probs = self.classifier.forward(&head)?;
        Ok(Step3Forward { probs, gate })
    }

    /// Cache-free evaluation with the hard gate.
    pub fn infer(&self, input: ClassifierInput<'_>) -> Result<Step3Forward> {
        self.check(&input)?;
        let gate = match &self.psi {
            Some(psi) => Some(hard_gate(&psi.infer_logits(input.f)?)),
            None => None,
        };
        let code = self.encoder.infer(&Self::encoder_input(input.x, gate.as_deref()))?;
        let probs = self.classifier.infer(&self.head_input(code, input.f))?;
        Ok(Step3Forward { probs, gate })
    }

    /// Cross-entropy of the last forward pass; gradients are added to `grads`
    /// in [`Parameterized::param_slices`] order. Gate gradients are skipped for hard gates.
    pub fn backward(
        &self,
        input: ClassifierInput<'_>,
        fwd: &Step3Forward,
        label: u8,
        hard: bool,
        grads: &mut [Vec<f64>],
    ) -> Result<f64> {
        let target = loss::one_hot(label);
        let ce = loss::cross_entropy_loss(&target, &fwd.probs)?;
        let g_probs = loss::cross_entropy_grad(&target, &fwd.probs)?;

        let n_psi = self.psi.as_ref().map_or(0, |p| p.param_slices().len());
        let n_enc = self.encoder.param_slices().len();
        let (psi_g, rest) = grads.split_at_mut(n_psi);
        let (enc_g, clf_g) = rest.split_at_mut(n_enc);

        let g_head = self.classifier.backward(&g_probs, clf_g)?;
        let code_len = self.encoder.layers.last().map_or(0, |l| l.outputs());
        let g_in = self.encoder.backward(&g_head[..code_len], enc_g)?;

        if let (Some(psi), Some(gate), false) = (&self.psi, &fwd.gate, hard) {
            let mut g_gate = vec![0.0; gate.len()];
            for ((i, j), (gz, x)) in pairs(gate.len()).zip(g_in.iter().zip(input.x)) {
                let d = 0.5 * gz * x;
                g_gate[i] += d;
                g_gate[j] += d;
            }
            let g_logits = binary_concrete_grad(gate, &g_gate, self.temperature);
            psi.backward(&g_logits, psi_g)?;
        }
        Ok(ce)
    }

    /// Loss and gradients for one sample, forward and backward together.
    pub fn loss_and_grads(&mut self, input: ClassifierInput<'_>, draw: GateDraw<'_>, label: u8) -> Result<(f64, Vec<Vec<f64>>)> {
        let fwd = self.forward(input, draw)?;
        let mut grads = self.zero_grads();
        let ce = self.backward(input, &fwd, label, matches!(draw, GateDraw::Hard), &mut grads)?;
        Ok((ce, grads))
    }
}

impl Parameterized for Step3Model {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut p = self.psi.as_ref().map_or_else(Vec::new, |psi| psi.param_slices());
        p.extend(self.encoder.param_slices());
        p.extend(self.classifier.param_slices());
        p
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.psi.as_mut().map_or_else(Vec::new, |psi| psi.param_slices_mut());
        p.extend(self.encoder.param_slices_mut());
        p.extend(self.classifier.param_slices_mut());
        p
    }
}
