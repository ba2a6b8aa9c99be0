use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{add_conv, conv_act, Arch, Bound, Network, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::ops::{self, Activation};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Steepness of the differentiable binarization `1 / (1 + e^{-k (P - T)})`.
pub const DB_STEEPNESS: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DetectorPreset {
    Teacher,
    Student,
}

impl DetectorPreset {
    /// (full-resolution width, half-resolution width, convs at half resolution)
    fn layout(self) -> (usize, usize, usize) {
        match self {
            DetectorPreset::Teacher => (8, 16, 6),
            DetectorPreset::Student => (8, 8, 2),
        }
    }
}

impl fmt::Display for DetectorPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorPreset::Teacher => "teacher",
            DetectorPreset::Student => "student",
        })
    }
}

impl FromStr for DetectorPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(DetectorPreset::Teacher),
            "student" => Ok(DetectorPreset::Student),
            other => Err(Error::invalid(format!("unknown detector preset `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub preset: DetectorPreset,
}

impl DetectorConfig {
    pub fn new(preset: DetectorPreset) -> Self {
        DetectorConfig { preset }
    }
}

/// Plain conv backbone: full-resolution stem, one stride-2 conv, a stack of
/// half-resolution convs, then a nearest-upsampled lateral merge and a 3×3
/// head producing probability and threshold logits.
pub fn build_db_detector<F: Element>(config: &DetectorConfig, seed: u64) -> Result<Network<F>> {
    let (c0, c1, depth) = config.preset.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    add_conv(&mut params, &mut rng, "stem", c0, 1, 3)?;
    add_conv(&mut params, &mut rng, "down", c1, c0, 3)?;
    for i in 0..depth {
        add_conv(&mut params, &mut rng, &format!("body.{i}"), c1, c1, 3)?;
    }
    add_conv(&mut params, &mut rng, "lateral", c0, c1, 1)?;
    add_conv(&mut params, &mut rng, "head", 2, c0, 3)?;
    Ok(Network {
        arch: Arch::Detector(config.clone()),
        blocks: Vec::new(),
        params,
    })
}

/// Graph handles for the three detector maps, each `[N, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct MapVars {
    pub prob: Var,
    /// Pre-sigmoid probability logits, same shape as `prob`.
    pub prob_logits: Var,
    pub thresh: Var,
    pub binary: Var,
}

impl MapVars {
    pub fn snapshot<F: Element>(&self, g: &Graph<F>) -> ProbMapTriple<F> {
        ProbMapTriple {
            prob: g.value(self.prob).clone(),
            thresh: g.value(self.thresh).clone(),
            binary: g.value(self.binary).clone(),
        }
    }
}

/// Probability, threshold and approximate binary maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMapTriple<F: Element = f32> {
    pub prob: Tensor<F>,
    pub thresh: Tensor<F>,
    pub binary: Tensor<F>,
}

/// `1 / (1 + e^{-k (prob − thresh)})` recorded on the graph.
pub fn binarize<F: Element>(g: &mut Graph<F>, prob: Var, thresh: Var) -> Result<Var> {
    let d = ops::sub(g, prob, thresh)?;
    let d = ops::scale(g, d, DB_STEEPNESS);
    Ok(ops::activation(g, d, Activation::Sigmoid))
}

impl<F: Element> Network<F> {
    pub fn detector_config(&self) -> Option<&DetectorConfig> {
        match &self.arch {
            Arch::Detector(c) => Some(c),
            _ => None,
        }
    }

    /// `x: [N, 1, H, W]` with even H and W.
    pub fn forward_detector(&self, g: &mut Graph<F>, p: &Bound<'_, F>, x: Var) -> Result<MapVars> {
        let cfg = self
            .detector_config()
            .ok_or_else(|| Error::invalid(format!("forward_detector on {}", self.arch)))?;
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != 1 || shape[2] % 2 != 0 || shape[3] % 2 != 0 {
            return Err(Error::invalid(format!("detector expects [N, 1, even H, even W], got {shape:?}")));
        }
        let (n, h, w) = (shape[0], shape[2], shape[3]);
        let (_, _, depth) = cfg.preset.layout();
        let relu = Some(Activation::Relu);
        let full = conv_act(g, p, x, "stem", (1, 1), 1, 1, relu)?;
        let mut half = conv_act(g, p, full, "down", (2, 2), 1, 1, relu)?;
        for i in 0..depth {
            half = conv_act(g, p, half, &format!("body.{i}"), (1, 1), 1, 1, relu)?;
        }
        let up = ops::upsample_nearest(g, half, 2)?;
        let lat = conv_act(g, p, up, "lateral", (1, 1), 0, 1, None)?;
        let merged = ops::add(g, full, lat)?;
        let merged = ops::activation(g, merged, Activation::Relu);
        let logits = conv_act(g, p, merged, "head", (1, 1), 1, 1, None)?;
        let prob = ops::narrow(g, logits, 1, 0, 1)?;
        let prob_logits = ops::reshape(g, prob, &[n, h, w])?;
        let prob = ops::activation(g, prob_logits, Activation::Sigmoid);
        let thresh = ops::narrow(g, logits, 1, 1, 1)?;
        let thresh = ops::reshape(g, thresh, &[n, h, w])?;
        let thresh = ops::activation(g, thresh, Activation::Sigmoid);
        let binary = binarize(g, prob, thresh)?;
        Ok(MapVars {
            prob,
            prob_logits,
            thresh,
            binary,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_is_bigger() {
        let t = build_db_detector::<f32>(&DetectorConfig::new(DetectorPreset::Teacher), 0).unwrap();
        let s = build_db_detector::<f32>(&DetectorConfig::new(DetectorPreset::Student), 0).unwrap();
        assert!(t.param_count() > s.param_count());
    }

    #[test]
    fn unknown_preset() {
        assert!("resnet".parse::<DetectorPreset>().is_err());
    }

    #[test]
    fn maps_in_unit_range_at_input_resolution() {
        let net = build_db_detector::<f32>(&DetectorConfig::new(DetectorPreset::Student), 3).unwrap();
        let mut g = Graph::new();
        let p = net.params.bind(&mut g);
        let x = g.constant(Tensor::from_fn(vec![2, 1, 12, 16], |i| (i % 5) as f32 / 4.0));
        let maps = net.forward_detector(&mut g, &p, x).unwrap().snapshot(&g);
        for m in [&maps.prob, &maps.thresh, &maps.binary] {
            assert_eq!(m.shape(), &[2, 12, 16]);
            assert!(m.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn binary_midpoint() {
        let mut g = Graph::<f64>::new();
        let p = g.constant(Tensor::full(vec![3], 0.4));
        let t = g.constant(Tensor::full(vec![3], 0.4));
        let b = binarize(&mut g, p, t).unwrap();
        assert!(g.value(b).data().iter().all(|&v| v == 0.5));
    }
}
