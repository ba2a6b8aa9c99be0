use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{add_linear, init_block_params, make_divisible, Arch, BlockSpec, Network, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::ops::{self, Activation};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Recognizer geometry. The backbone halves the height twice and the width
/// `horizontal_downsample` times over, so `T = width / horizontal_downsample`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecognizerConfig {
    pub height: usize,
    pub width: usize,
    /// Class count including the blank at index 0.
    pub num_classes: usize,
    pub scale: f64,
    pub head_hidden: usize,
    /// One of 1, 2, 4, 8.
    pub horizontal_downsample: usize,
}

impl RecognizerConfig {
    pub fn new(height: usize, width: usize, num_classes: usize) -> Self {
        RecognizerConfig {
            height,
            width,
            num_classes,
            scale: 0.5,
            head_hidden: 64,
            horizontal_downsample: 1,
        }
    }

    pub fn timesteps(&self) -> usize {
        self.width / self.horizontal_downsample
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "recognizer needs at least 2 classes (blank + 1 symbol), got {}",
                self.num_classes
            )));
        }
        if !matches!(self.horizontal_downsample, 1 | 2 | 4 | 8) {
            return Err(Error::invalid("horizontal_downsample must be 1, 2, 4 or 8"));
        }
        if self.width % self.horizontal_downsample != 0 || self.height < 4 {
            return Err(Error::invalid(format!(
                "input {}x{} incompatible with horizontal downsample {}",
                self.height, self.width, self.horizontal_downsample
            )));
        }
        if !(self.scale > 0.0) || self.head_hidden == 0 {
            return Err(Error::invalid("scale and head width must be positive"));
        }
        Ok(())
    }

    /// Stem plus four depth-separable blocks; the last two use 5×5 kernels
    /// with SE.
    pub fn backbone_blocks(&self) -> Vec<BlockSpec> {
        let ch = |base: f64| make_divisible(base * self.scale, 8);
        let halvings = self.horizontal_downsample.trailing_zeros() as usize;
        // horizontal stride-2 positions, filled in this order
        let order = [0usize, 2, 1];
        let hs = |block: usize| if order[..halvings].contains(&block) { 2 } else { 1 };
        vec![
            BlockSpec::stem(3, (1, 1), ch(16.0)),
            BlockSpec::depth_sep(3, (2, hs(0)), ch(32.0), false),
            BlockSpec::depth_sep(3, (1, hs(1)), ch(32.0), false),
            BlockSpec::depth_sep(5, (2, hs(2)), ch(64.0), true),
            BlockSpec::depth_sep(5, (1, 1), ch(64.0), true),
        ]
    }

    /// Width of the per-timestep backbone features.
    pub fn feature_dim(&self) -> usize {
        self.backbone_blocks().last().map(|b| b.channels_out).unwrap_or(0)
    }
}

pub fn build_crnn_recognizer<F: Element>(config: &RecognizerConfig, seed: u64) -> Result<Network<F>> {
    config.validate()?;
    let blocks = config.backbone_blocks();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let d = init_block_params(&mut params, &mut rng, &blocks, 1)?;
    add_linear(&mut params, &mut rng, "head.fc1", d, config.head_hidden)?;
    add_linear(&mut params, &mut rng, "head.fc2", config.head_hidden, config.num_classes)?;
    Ok(Network {
        arch: Arch::Recognizer(config.clone()),
        blocks,
        params,
    })
}

/// Sequence features (`[N, T, D]`, the backbone output used for feature
/// distillation) and head logits (`[N, T, C]`).
#[derive(Clone, Copy, Debug)]
pub struct RecOutput {
    pub features: Var,
    pub logits: Var,
}

impl<F: Element> Network<F> {
    pub fn recognizer_config(&self) -> Option<&RecognizerConfig> {
        match &self.arch {
            Arch::Recognizer(c) => Some(c),
            _ => None,
        }
    }

    /// `x: [N, 1, H, W]`.
    pub fn forward_recognizer(&self, g: &mut Graph<F>, p: &super::Bound<'_, F>, x: Var) -> Result<RecOutput> {
        let cfg = self
            .recognizer_config()
            .ok_or_else(|| Error::invalid(format!("forward_recognizer on {}", self.arch)))?;
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.height || shape[3] != cfg.width {
            return Err(Error::shape("recognizer input", &shape, &[0, 1, cfg.height, cfg.width]));
        }
        let h = self.forward_backbone(g, p, x)?;
        // collapse height, then [N, C, T] -> [N, T, C]
        let pooled = ops::mean_axis(g, h, 2)?;
        let features = ops::permute(g, pooled, &[0, 2, 1])?;
        let hid = ops::linear(g, features, p.var("head.fc1.weight"), Some(p.var("head.fc1.bias")))?;
        let hid = ops::activation(g, hid, Activation::Relu);
        let logits = ops::linear(g, hid, p.var("head.fc2.weight"), Some(p.var("head.fc2.bias")))?;
        Ok(RecOutput { features, logits })
    }
}

/// Graph handles for a student/teacher pair run on the same batch.
#[derive(Clone, Copy, Debug)]
pub struct BundleVars {
    pub s_hout: Var,
    pub t_hout: Var,
    pub s_bout: Var,
    pub t_bout: Var,
}

impl BundleVars {
    pub fn snapshot<F: Element>(&self, g: &Graph<F>) -> DistillBundle<F> {
        DistillBundle {
            s_hout: g.value(self.s_hout).clone(),
            t_hout: g.value(self.t_hout).clone(),
            s_bout: g.value(self.s_bout).clone(),
            t_bout: g.value(self.t_bout).clone(),
        }
    }
}

/// Head logits and backbone features of two identically shaped networks.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillBundle<F: Element = f32> {
    pub s_hout: Tensor<F>,
    pub t_hout: Tensor<F>,
    pub s_bout: Tensor<F>,
    pub t_bout: Tensor<F>,
}

/// Runs both recognizers on `x`. Both must come from the same config; each
/// keeps its own parameters.
pub fn forward_pair<F: Element>(
    g: &mut Graph<F>,
    student: (&Network<F>, &super::Bound<'_, F>),
    teacher: (&Network<F>, &super::Bound<'_, F>),
    x: Var,
) -> Result<BundleVars> {
    if student.0.arch() != teacher.0.arch() {
        return Err(Error::invalid(format!(
            "forward_pair needs identical configs: {} vs {}",
            student.0.arch(),
            teacher.0.arch()
        )));
    }
    let s = student.0.forward_recognizer(g, student.1, x)?;
    let t = teacher.0.forward_recognizer(g, teacher.1, x)?;
    debug_assert_eq!(g.shape(s.features), g.shape(t.features));
    Ok(BundleVars {
        s_hout: s.logits,
        t_hout: t.logits,
        s_bout: s.features,
        t_bout: t.features,
    })
}
