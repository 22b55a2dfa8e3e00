use crate::error::{Error, Result};
use crate::linalg::RngStream;
use crate::nn::{Activation, ChannelMerge, Parameterized, Sequential};

/// Hidden widths `{512, 15·R}` in front of the `R` gate logits.
pub fn psi_hidden_dims(r: usize) -> [usize; 2] {
    [512, 15 * r]
}

/// Channel merge followed by a ReLU stack ending in one logit per ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiNetwork {
    pub merge: ChannelMerge,
    pub dense: Sequential,
}

impl PsiNetwork {
    pub fn init(rois: usize, hidden: [usize; 2], rng: &mut RngStream) -> Self {
        let merge = ChannelMerge::init(rng);
        let dense = Sequential::init(
            &[rois, hidden[0], hidden[1], rois],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            true,
            rng,
        );
        Self { merge, dense }
    }

    pub fn rois(&self) -> usize {
        self.dense.layers[0].inputs()
    }

    fn check(&self, f: &[[f64; 2]]) -> Result<()> {
        if f.len() != self.rois() {
            return Err(Error::DimensionMismatch {
                expected: self.rois(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// Gate logits, caching activations for backward.
    pub fn logits(&mut self, f: &[[f64; 2]]) -> Result<Vec<f64>> {
        self.check(f)?;
        let merged = self.merge.forward(f);
        self.dense.forward(&merged)
    }

    pub fn infer_logits(&self, f: &[[f64; 2]]) -> Result<Vec<f64>> {
        self.check(f)?;
        self.dense.infer(&self.merge.infer(f))
    }

    /// Backward from `dL/dlogits`; `grads` follows [`Parameterized::param_slices`] order.
    pub fn backward(&self, grad_logits: &[f64], grads: &mut [Vec<f64>]) -> Result<()> {
        let (merge_g, dense_g) = grads.split_at_mut(1);
        let g = self.dense.backward(grad_logits, dense_g)?;
        self.merge.backward(&g, merge_g)
    }
}

impl Parameterized for PsiNetwork {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut p = self.merge.param_slices();
        p.extend(self.dense.param_slices());
        p
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.merge.param_slices_mut();
        p.extend(self.dense.param_slices_mut());
        p
    }
}
