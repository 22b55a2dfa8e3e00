//! Independent re-implementations used as oracles by the integration tests.
//! Nothing here calls into the library's forward or relevance code.
#![allow(dead_code)]

use std::path::Path;

use eagrs::cli::{DataSource, RunConfig};
use eagrs::fcdata::SyntheticConfig;
use eagrs::linalg::{Matrix, RngStream};
use eagrs::nn::{Activation, Dense};
use eagrs::sae::SaeModel;

pub fn activate(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Identity => z,
        Activation::Relu => z.max(0.0),
        Activation::Tanh => z.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        Activation::Selu => {
            let (lambda, alpha) = (1.050_700_987_355_480_5, 1.673_263_242_354_377_2);
            if z > 0.0 {
                lambda * z
            } else {
                lambda * alpha * (z.exp() - 1.0)
            }
        }
        Activation::Softmax => unreachable!("no softmax layers in these oracles"),
    }
}

/// Plain-data copy of a dense layer, `w[out][in]`.
#[derive(Debug, Clone)]
pub struct RawLayer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl RawLayer {
    pub fn from_dense(d: &Dense) -> Self {
        let m = d.weights();
        Self {
            w: (0..m.rows()).map(|o| (0..m.cols()).map(|i| m.get(o, i)).collect()).collect(),
            b: d.bias().map_or_else(|| vec![0.0; m.rows()], <[f64]>::to_vec),
            act: d.activation(),
        }
    }

    pub fn to_dense(&self, with_bias: bool) -> Dense {
        let rows: Vec<Vec<f64>> = self.w.clone();
        Dense::new(Matrix::from_rows(&rows).unwrap(), with_bias.then(|| self.b.clone()), self.act).unwrap()
    }
}

/// Intermediate values of one forward pass.
pub struct Trace {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub fn forward_raw(layers: &[RawLayer], x: &[f64]) -> Trace {
    let mut a = x.to_vec();
    let (mut inputs, mut pre) = (Vec::new(), Vec::new());
    for l in layers {
        let z: Vec<f64> = l
            .w
            .iter()
            .zip(&l.b)
            .map(|(row, b)| row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect();
        inputs.push(a);
        a = z.iter().map(|&v| activate(l.act, v)).collect();
        pre.push(z);
    }
    Trace { inputs, pre, output: a }
}

/// ε-LRP from one output unit, returning the input relevances and the total
/// relevance absorbed by biases and stabilisers, layer by layer.
pub fn lrp_raw(layers: &[RawLayer], x: &[f64], unit: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let t = forward_raw(layers, x);
    let mut rel = vec![0.0; t.output.len()];
    rel[unit] = t.output[unit];
    let mut absorbed = Vec::new();
    for (k, l) in layers.iter().enumerate().rev() {
        let a = &t.inputs[k];
        let mut next = vec![0.0; a.len()];
        let mut lost = 0.0;
        for (j, row) in l.w.iter().enumerate() {
            let z = t.pre[k][j];
            let s = if z >= 0.0 { 1.0 } else { -1.0 };
            let denom = z + eps * s;
            if rel[j] == 0.0 || denom == 0.0 {
                lost += rel[j];
                continue;
            }
            for (i, w) in row.iter().enumerate() {
                next[i] += a[i] * w * rel[j] / denom;
            }
            lost += rel[j] * (l.b[j] + eps * s) / denom;
        }
        absorbed.push(lost);
        rel = next;
    }
    absorbed.reverse();
    (rel, absorbed)
}

/// Random dense stack with `depth` layers and widths in `2..=max_width`.
pub fn random_layers(rng: &mut RngStream, depth: usize, max_width: usize, bias: bool) -> Vec<RawLayer> {
    let acts = [Activation::Tanh, Activation::Relu, Activation::Identity, Activation::Selu];
    let mut widths = vec![2 + rng.next_below(max_width - 1)];
    for _ in 0..depth {
        widths.push(2 + rng.next_below(max_width - 1));
    }
    widths
        .windows(2)
        .map(|w| RawLayer {
            w: (0..w[1]).map(|_| (0..w[0]).map(|_| rng.next_normal() / (w[0] as f64).sqrt()).collect()).collect(),
            b: (0..w[1]).map(|_| if bias { 0.1 * rng.next_normal() } else { 0.0 }).collect(),
            act: acts[rng.next_below(acts.len())],
        })
        .collect()
}

pub fn upper_index(r: usize, i: usize, j: usize) -> usize {
    let mut k = 0;
    for a in 0..r {
        for b in a + 1..r {
            if (a, b) == (i.min(j), i.max(j)) {
                return k;
            }
            k += 1;
        }
    }
    unreachable!()
}

pub fn sae_raw_layers(sae: &SaeModel) -> Vec<RawLayer> {
    sae.encoder()
        .iter()
        .chain(sae.generator().iter().rev())
        .map(RawLayer::from_dense)
        .collect()
}

/// Seed map for ROI `r`: mask `r`, run every target `j ≠ r` through ε-LRP and
/// sum the symmetric maps with row and column `r` cleared.
pub fn brute_seed_map(sae: &SaeModel, x: &Matrix, r: usize, eps: f64) -> Vec<Vec<f64>> {
    let n = x.rows();
    let layers = sae_raw_layers(sae);
    let mut input = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            input.push(if a == r || b == r { 0.0 } else { x.get(a, b) });
        }
    }
    let mut acc = vec![vec![0.0; n]; n];
    for j in 0..n {
        if j == r {
            continue;
        }
        let (rel, _) = lrp_raw(&layers, &input, upper_index(n, r, j), eps);
        for a in 0..n {
            for b in 0..n {
                if a == b || a == r || b == r {
                    continue;
                }
                acc[a][b] += rel[upper_index(n, a, b)];
            }
        }
    }
    acc
}

/// Representative vectors of an `R×R×R` tensor stored as `[r][a][b]`, averaging the last axis.
pub fn brute_rep_vectors(s: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut f_v = vec![0.0; n];
    let mut f_c = vec![0.0; n];
    for r in 0..n {
        let mut row = vec![0.0; n];
        for (a, slot) in row.iter_mut().enumerate() {
            let mut sum = 0.0;
            for b in 0..n {
                sum += s[(r * n + a) * n + b];
            }
            *slot = sum / n as f64;
        }
        let mean = row.iter().sum::<f64>() / n as f64;
        for v in row {
            if v >= mean {
                f_v[r] += v;
                f_c[r] += 1.0;
            }
        }
    }
    (f_v, f_c)
}

pub fn random_fc(n: usize, rng: &mut RngStream) -> Matrix {
    let mut m = Matrix::identity(n);
    for a in 0..n {
        for b in a + 1..n {
            let v = rng.next_uniform() * 1.6 - 0.8;
            m.set(a, b, v);
            m.set(b, a, v);
        }
    }
    m
}

pub fn trained_toy_sae(n: usize, hidden: &[usize], seed: u64) -> SaeModel {
    let mut sae = SaeModel::new(n, hidden, &mut RngStream::new(seed)).unwrap();
    sae.mark_trained();
    sae
}

/// A run small enough for end-to-end command tests.
#[allow(clippy::field_reassign_with_default)]
pub fn small_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data = DataSource::Synthetic(SyntheticConfig {
        rois: 6,
        n_per_class: 12,
        timepoints: 60,
        planted_asd: vec![1, 4],
        effect_size: 0.8,
        seed: 3,
        ..SyntheticConfig::default()
    });
    cfg.seed = seed;
    cfg.sae_hidden = Some(vec![12, 5]);
    cfg.step1.epochs = 5;
    cfg.step1.batch_size = 8;
    cfg.step3.epochs = 4;
    cfg.step3.batch_size = 8;
    cfg.step3.lr = 1e-3;
    cfg.step3.psi_hidden = Some([8, 8]);
    cfg.folds = 3;
    cfg.normalize();
    cfg
}

pub fn write_config(cfg: &RunConfig, path: &Path) {
    std::fs::write(path, cfg.to_canonical_json()).unwrap();
}

/// Library LRP on the same raw weights, for comparison against [`lrp_raw`].
pub fn library_lrp(layers: &[RawLayer], x: &[f64], unit: usize, rule: eagrs::lrp::RelevanceRule) -> Vec<f64> {
    let mut dense: Vec<Dense> = layers.iter().map(|l| l.to_dense(true)).collect();
    let mut h = x.to_vec();
    for d in &mut dense {
        h = d.forward(&h).unwrap();
    }
    let refs: Vec<&Dense> = dense.iter().collect();
    eagrs::lrp::lrp_through(&refs, unit, rule).unwrap()
}

/// One SAE level seen as a standalone parameter set.
pub struct LevelView<'a> {
    pub sae: &'a mut SaeModel,
    pub level: usize,
}

impl eagrs::nn::Parameterized for LevelView<'_> {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.sae.level_params(self.level)
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.sae.level_params_mut(self.level)
    }
}
