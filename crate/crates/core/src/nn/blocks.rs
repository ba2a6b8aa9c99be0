use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Activation;

/// Channel width of the wide 1×1 convolution that follows global pooling.
pub const WIDE_CONV_CHANNELS: usize = 1280;

/// Squeeze-and-excitation channel reduction.
pub const SE_REDUCTION: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    StemConv,
    DepthSepConv,
    Gap,
    Conv1x1Wide,
    Head,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlockKind::StemConv => "stem_conv",
            BlockKind::DepthSepConv => "depth_sep_conv",
            BlockKind::Gap => "gap",
            BlockKind::Conv1x1Wide => "conv1x1_1280",
            BlockKind::Head => "head",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub kernel_size: usize,
    /// (vertical, horizontal)
    pub stride: (usize, usize),
    pub channels_out: usize,
    pub use_se: bool,
    pub activation: Activation,
}

impl BlockSpec {
    pub fn stem(kernel_size: usize, stride: (usize, usize), channels_out: usize) -> Self {
        BlockSpec {
            kind: BlockKind::StemConv,
            kernel_size,
            stride,
            channels_out,
            use_se: false,
            activation: Activation::HardSwish,
        }
    }

    pub fn depth_sep(kernel_size: usize, stride: (usize, usize), channels_out: usize, use_se: bool) -> Self {
        BlockSpec {
            kind: BlockKind::DepthSepConv,
            kernel_size,
            stride,
            channels_out,
            use_se,
            activation: Activation::HardSwish,
        }
    }

    pub fn gap() -> Self {
        BlockSpec {
            kind: BlockKind::Gap,
            kernel_size: 1,
            stride: (1, 1),
            channels_out: 0,
            use_se: false,
            activation: Activation::Relu,
        }
    }

    pub fn wide_conv() -> Self {
        BlockSpec {
            kind: BlockKind::Conv1x1Wide,
            kernel_size: 1,
            stride: (1, 1),
            channels_out: WIDE_CONV_CHANNELS,
            use_se: false,
            activation: Activation::HardSwish,
        }
    }

    pub fn head(channels_out: usize) -> Self {
        BlockSpec {
            kind: BlockKind::Head,
            kernel_size: 1,
            stride: (1, 1),
            channels_out,
            use_se: false,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let conv = matches!(self.kind, BlockKind::StemConv | BlockKind::DepthSepConv);
        if conv && !matches!(self.kernel_size, 3 | 5) {
            return Err(Error::invalid(format!(
                "{} block needs a 3x3 or 5x5 kernel, got {}",
                self.kind, self.kernel_size
            )));
        }
        if self.use_se && self.kind != BlockKind::DepthSepConv {
            return Err(Error::invalid(format!("SE is only allowed on depth_sep_conv, not {}", self.kind)));
        }
        if self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::invalid("zero stride"));
        }
        Ok(())
    }
}

/// Checks a classifier block list: one stem first, exactly one GAP, and the
/// wide 1×1 conv right after it.
pub fn validate_classifier(blocks: &[BlockSpec]) -> Result<()> {
    for b in blocks {
        b.validate()?;
    }
    if blocks.first().map(|b| b.kind) != Some(BlockKind::StemConv) {
        return Err(Error::invalid("classifier must start with a stem conv"));
    }
    let gaps: Vec<usize> = blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.kind == BlockKind::Gap)
        .map(|(i, _)| i)
        .collect();
    if gaps.len() != 1 {
        return Err(Error::invalid(format!("classifier needs exactly one gap block, found {}", gaps.len())));
    }
    let wide = blocks.iter().position(|b| b.kind == BlockKind::Conv1x1Wide);
    if wide != Some(gaps[0] + 1) {
        return Err(Error::invalid("conv1x1_1280 must directly follow the gap block"));
    }
    Ok(())
}

/// Rounds `v` to the nearest multiple of `divisor`, never dropping below 90%
/// of `v` and never below `divisor`.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut out = ((v + d / 2.0) / d).floor() as usize * divisor;
    out = out.max(divisor);
    if (out as f64) < 0.9 * v {
        out += divisor;
    }
    out
}

/// Depth-separable stages of the full-size classifier backbone:
/// (kernel, channels_out at scale 1, stride, use_se).
pub(crate) const LCNET_STAGES: [(usize, usize, usize, bool); 13] = [
    (3, 32, 1, false),
    (3, 64, 2, false),
    (3, 64, 1, false),
    (3, 128, 2, false),
    (3, 128, 1, false),
    (3, 256, 2, false),
    (5, 256, 1, false),
    (5, 256, 1, false),
    (5, 256, 1, false),
    (5, 256, 1, false),
    (5, 256, 1, false),
    (5, 512, 2, true),
    (5, 512, 1, true),
];

pub(crate) const LCNET_STEM_CHANNELS: usize = 16;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisible_rounding() {
        assert_eq!(make_divisible(16.0, 8), 16);
        assert_eq!(make_divisible(8.0, 8), 8);
        assert_eq!(make_divisible(12.0, 8), 16);
        assert_eq!(make_divisible(4.0, 8), 8);
        assert_eq!(make_divisible(0.5 * 512.0, 8), 256);
    }

    #[test]
    fn se_only_on_depth_sep() {
        let mut b = BlockSpec::stem(3, (2, 2), 16);
        b.use_se = true;
        assert!(b.validate().is_err());
        assert!(BlockSpec::depth_sep(5, (1, 1), 16, true).validate().is_ok());
        assert!(BlockSpec::depth_sep(7, (1, 1), 16, false).validate().is_err());
    }

    #[test]
    fn classifier_layout_rules() {
        let ok = vec![
            BlockSpec::stem(3, (2, 2), 8),
            BlockSpec::depth_sep(3, (1, 1), 8, false),
            BlockSpec::gap(),
            BlockSpec::wide_conv(),
            BlockSpec::head(10),
        ];
        assert!(validate_classifier(&ok).is_ok());
        let mut two_gaps = ok.clone();
        two_gaps.insert(2, BlockSpec::gap());
        assert!(validate_classifier(&two_gaps).is_err());
        let mut swapped = ok.clone();
        swapped.swap(2, 3);
        assert!(validate_classifier(&swapped).is_err());
    }
}
