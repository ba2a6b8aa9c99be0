//! Network builders and forward passes.
//!
//! Three families share one [`Network`] container:
//! - a PP-LCNet style classifier (stem, depth-separable blocks with 5×5
//!   kernels and SE near the tail, GAP, wide 1×1 conv, FC head);
//! - a CRNN-style recognizer on a toy backbone of the same blocks, with a
//!   two-layer CTC head;
//! - a small DB-style detector that emits probability, threshold and binary
//!   maps at input resolution.

mod blocks;
pub mod checkpoint;
mod detector;
mod params;
mod recognizer;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use blocks::{make_divisible, validate_classifier, BlockKind, BlockSpec, SE_REDUCTION, WIDE_CONV_CHANNELS};
pub use detector::{DetectorConfig, DetectorPreset, MapVars, ProbMapTriple, DB_STEEPNESS};
pub use params::{Bound, ParamStore};
pub use recognizer::{BundleVars, DistillBundle, RecOutput, RecognizerConfig};

use crate::error::{Error, Result};
use crate::tensor::ops::{self, Activation};
use crate::tensor::{Element, Graph, Var};
use blocks::{LCNET_STAGES, LCNET_STEM_CHANNELS};
use params::he_normal;

#[derive(Clone, Debug, PartialEq)]
pub enum Arch {
    Classifier { in_channels: usize, num_classes: usize },
    Recognizer(RecognizerConfig),
    Detector(DetectorConfig),
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Classifier { in_channels, num_classes } => {
                write!(f, "classifier(in={in_channels}, classes={num_classes})")
            }
            Arch::Recognizer(c) => write!(f, "recognizer({}x{}, classes={}, scale={})", c.height, c.width, c.num_classes, c.scale),
            Arch::Detector(c) => write!(f, "detector({})", c.preset),
        }
    }
}

/// Block list plus a named parameter store.
#[derive(Clone, Debug)]
pub struct Network<F: Element = f32> {
    arch: Arch,
    blocks: Vec<BlockSpec>,
    pub params: ParamStore<F>,
}

impl<F: Element> Network<F> {
    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<G: Element>(&self) -> Network<G> {
        Network {
            arch: self.arch.clone(),
            blocks: self.blocks.clone(),
            params: self.params.cast(),
        }
    }

    /// Runs the stem and depth-separable blocks on an NCHW input.
    pub fn forward_backbone(&self, g: &mut Graph<F>, p: &Bound<'_, F>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, b) in self.blocks.iter().enumerate() {
            h = match b.kind {
                BlockKind::StemConv => conv_act(g, p, h, &format!("blocks.{i}.conv"), b.stride, b.kernel_size / 2, 1, Some(b.activation))?,
                BlockKind::DepthSepConv => depth_sep(g, p, h, i, b)?,
                _ => break,
            };
        }
        Ok(h)
    }

    /// Classifier logits `[N, classes]`.
    pub fn forward_classifier(&self, g: &mut Graph<F>, p: &Bound<'_, F>, x: Var) -> Result<Var> {
        if !matches!(self.arch, Arch::Classifier { .. }) {
            return Err(Error::invalid(format!("forward_classifier on {}", self.arch)));
        }
        let mut h = self.forward_backbone(g, p, x)?;
        for (i, b) in self.blocks.iter().enumerate() {
            match b.kind {
                BlockKind::Gap => h = ops::global_avg_pool(g, h)?,
                BlockKind::Conv1x1Wide => {
                    h = conv_act(g, p, h, &format!("blocks.{i}.conv"), (1, 1), 0, 1, Some(b.activation))?;
                }
                BlockKind::Head => {
                    let n = g.shape(h)[0];
                    let c = g.shape(h)[1];
                    let flat = ops::reshape(g, h, &[n, c])?;
                    h = ops::linear(
                        g,
                        flat,
                        p.var(&format!("blocks.{i}.fc.weight")),
                        Some(p.var(&format!("blocks.{i}.fc.bias"))),
                    )?;
                }
                _ => {}
            }
        }
        Ok(h)
    }
}

/// conv (+bias) (+activation), `same`-style padding given explicitly.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_act<F: Element>(
    g: &mut Graph<F>,
    p: &Bound<'_, F>,
    x: Var,
    prefix: &str,
    stride: (usize, usize),
    pad: usize,
    groups: usize,
    act: Option<Activation>,
) -> Result<Var> {
    let y = ops::conv2d(g, x, p.var(&format!("{prefix}.weight")), stride, (pad, pad), groups)?;
    let y = ops::add_bias(g, y, p.var(&format!("{prefix}.bias")), 1)?;
    Ok(match act {
        Some(a) => ops::activation(g, y, a),
        None => y,
    })
}

fn squeeze_excite<F: Element>(g: &mut Graph<F>, p: &Bound<'_, F>, x: Var, prefix: &str) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (n, c) = (shape[0], shape[1]);
    let pooled = ops::global_avg_pool(g, x)?;
    let flat = ops::reshape(g, pooled, &[n, c])?;
    let h = ops::linear(g, flat, p.var(&format!("{prefix}.fc1.weight")), Some(p.var(&format!("{prefix}.fc1.bias"))))?;
    let h = ops::activation(g, h, Activation::Relu);
    let h = ops::linear(g, h, p.var(&format!("{prefix}.fc2.weight")), Some(p.var(&format!("{prefix}.fc2.bias"))))?;
    let gate = ops::activation(g, h, Activation::HardSigmoid);
    let gate = ops::reshape(g, gate, &[n, c, 1, 1])?;
    ops::mul_channel(g, x, gate)
}

/// Squeeze-and-excitation on an NCHW tensor using the parameters under
/// `prefix` (`fc1`: C→C/r, `fc2`: C/r→C). Output keeps the input shape.
pub fn se_block<F: Element>(g: &mut Graph<F>, p: &Bound<'_, F>, x: Var, prefix: &str) -> Result<Var> {
    squeeze_excite(g, p, x, prefix)
}

fn depth_sep<F: Element>(g: &mut Graph<F>, p: &Bound<'_, F>, x: Var, i: usize, b: &BlockSpec) -> Result<Var> {
    let c_in = g.shape(x)[1];
    let pad = b.kernel_size / 2;
    let mut h = conv_act(g, p, x, &format!("blocks.{i}.dw"), b.stride, pad, c_in, Some(b.activation))?;
    if b.use_se {
        h = squeeze_excite(g, p, h, &format!("blocks.{i}.se"))?;
    }
    conv_act(g, p, h, &format!("blocks.{i}.pw"), (1, 1), 0, 1, Some(b.activation))
}

/// Creates parameters for `blocks` in order; returns the channel count after
/// the last conv-type block.
pub(crate) fn init_block_params<F: Element>(
    store: &mut ParamStore<F>,
    rng: &mut ChaCha8Rng,
    blocks: &[BlockSpec],
    in_channels: usize,
) -> Result<usize> {
    let mut c = in_channels;
    for (i, b) in blocks.iter().enumerate() {
        b.validate()?;
        match b.kind {
            BlockKind::StemConv => {
                let k = b.kernel_size;
                add_conv(store, rng, &format!("blocks.{i}.conv"), b.channels_out, c, k)?;
                c = b.channels_out;
            }
            BlockKind::DepthSepConv => {
                let k = b.kernel_size;
                add_conv(store, rng, &format!("blocks.{i}.dw"), c, 1, k)?;
                if b.use_se {
                    add_se(store, rng, &format!("blocks.{i}.se"), c)?;
                }
                add_conv(store, rng, &format!("blocks.{i}.pw"), b.channels_out, c, 1)?;
                c = b.channels_out;
            }
            BlockKind::Gap => {}
            BlockKind::Conv1x1Wide => {
                add_conv(store, rng, &format!("blocks.{i}.conv"), b.channels_out, c, 1)?;
                c = b.channels_out;
            }
            BlockKind::Head => {
                add_linear(store, rng, &format!("blocks.{i}.fc"), c, b.channels_out)?;
                c = b.channels_out;
            }
        }
    }
    Ok(c)
}

pub(crate) fn add_conv<F: Element>(
    store: &mut ParamStore<F>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    c_out: usize,
    c_in_per_group: usize,
    k: usize,
) -> Result<()> {
    let fan_in = c_in_per_group * k * k;
    store.insert(format!("{prefix}.weight"), he_normal(rng, vec![c_out, c_in_per_group, k, k], fan_in))?;
    store.insert(format!("{prefix}.bias"), crate::tensor::Tensor::zeros(vec![c_out]))
}

pub(crate) fn add_linear<F: Element>(
    store: &mut ParamStore<F>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    d_in: usize,
    d_out: usize,
) -> Result<()> {
    store.insert(format!("{prefix}.weight"), he_normal(rng, vec![d_in, d_out], d_in))?;
    store.insert(format!("{prefix}.bias"), crate::tensor::Tensor::zeros(vec![d_out]))
}

pub(crate) fn add_se<F: Element>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, prefix: &str, c: usize) -> Result<()> {
    if c % SE_REDUCTION != 0 {
        return Err(Error::invalid(format!("SE needs channels divisible by {SE_REDUCTION}, got {c}")));
    }
    let r = c / SE_REDUCTION;
    add_linear(store, rng, &format!("{prefix}.fc1"), c, r)?;
    add_linear(store, rng, &format!("{prefix}.fc2"), r, c)
}

/// Full-size PP-LCNet classifier layout at the given width scale.
pub fn pplcnet_blocks(scale: f64, num_classes: usize) -> Result<Vec<BlockSpec>> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::invalid(format!("scale must be positive, got {scale}")));
    }
    let mut blocks = vec![BlockSpec::stem(3, (2, 2), make_divisible(LCNET_STEM_CHANNELS as f64 * scale, 8))];
    for &(k, c, s, se) in &LCNET_STAGES {
        blocks.push(BlockSpec::depth_sep(k, (s, s), make_divisible(c as f64 * scale, 8), se));
    }
    blocks.push(BlockSpec::gap());
    blocks.push(BlockSpec::wide_conv());
    blocks.push(BlockSpec::head(num_classes));
    Ok(blocks)
}

/// Builds a PP-LCNet classifier with deterministic initialisation.
pub fn build_pplcnet<F: Element>(scale: f64, in_channels: usize, num_classes: usize, seed: u64) -> Result<Network<F>> {
    let blocks = pplcnet_blocks(scale, num_classes)?;
    validate_classifier(&blocks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    init_block_params(&mut params, &mut rng, &blocks, in_channels)?;
    Ok(Network {
        arch: Arch::Classifier { in_channels, num_classes },
        blocks,
        params,
    })
}

pub use detector::build_db_detector;
pub use recognizer::{build_crnn_recognizer, forward_pair};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tensor};

    #[test]
    fn pplcnet_rejects_bad_scale() {
        assert!(build_pplcnet::<f32>(0.0, 3, 10, 0).is_err());
        assert!(build_pplcnet::<f32>(-1.0, 3, 10, 0).is_err());
    }

    #[test]
    fn pplcnet_tail_layout() {
        let net = build_pplcnet::<f32>(1.0, 3, 10, 0).unwrap();
        let ds: Vec<&BlockSpec> = net.blocks().iter().filter(|b| b.kind == BlockKind::DepthSepConv).collect();
        let first_se = ds.iter().position(|b| b.use_se).unwrap();
        assert!(ds[first_se..].iter().all(|b| b.use_se));
        let first_5 = ds.iter().position(|b| b.kernel_size == 5).unwrap();
        assert!(ds[first_5..].iter().all(|b| b.kernel_size == 5));
        assert!(first_5 <= first_se);
        assert_eq!(net.params.get("blocks.15.conv.weight").unwrap().shape(), &[1280, 512, 1, 1]);
    }

    #[test]
    fn small_classifier_forward_shape() {
        let net = build_pplcnet::<f32>(0.25, 3, 7, 1).unwrap();
        let mut g = Graph::new();
        let p = net.params.bind(&mut g);
        let x = g.constant(Tensor::zeros(vec![2, 3, 32, 32]));
        let y = net.forward_classifier(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(y), &[2, 7]);
    }

    fn se_store(c: usize, fc2_bias: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let r = c / SE_REDUCTION;
        s.insert("se.fc1.weight", Tensor::zeros(vec![c, r])).unwrap();
        s.insert("se.fc1.bias", Tensor::zeros(vec![r])).unwrap();
        s.insert("se.fc2.weight", Tensor::zeros(vec![r, c])).unwrap();
        s.insert("se.fc2.bias", Tensor::full(vec![c], fc2_bias)).unwrap();
        s
    }

    #[test]
    fn se_saturation() {
        let x = Tensor::from_fn(vec![1, 4, 3, 3], |i| i as f64 - 10.0);
        for (bias, scale) in [(3.0, 1.0), (5.0, 1.0), (-3.0, 0.0), (-7.0, 0.0)] {
            let store = se_store(4, bias);
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let xv = g.constant(x.clone());
            let y = se_block(&mut g, &p, xv, "se").unwrap();
            assert_eq!(g.shape(y), x.shape());
            for (a, b) in g.value(y).data().iter().zip(x.data()) {
                assert_eq!(*a, b * scale);
            }
        }
    }

    #[test]
    fn se_rejects_indivisible_channels() {
        let mut s = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(add_se(&mut s, &mut rng, "se", 6).is_err());
    }

    #[test]
    fn se_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        add_se(&mut store, &mut rng, "se", 8).unwrap();
        let x = Tensor::from_fn(vec![2, 8, 3, 3], |i| ((i * 37) % 17) as f64 / 8.0 - 1.0);
        let err = grad_check(
            |g, xv| {
                let p = store.bind_frozen(g);
                let y = se_block(g, &p, xv, "se").unwrap();
                let sq = ops::mul(g, y, y).unwrap();
                ops::sum(g, sq)
            },
            &x,
            1e-5,
        );
        assert!(err < 1e-4, "{err}");
    }
}
