//! Training objectives for recognition, detection and mutual learning.

mod center;
mod ctc;
mod det;
mod divergence;
mod suite;

pub use center::{center_loss, enhanced_ctc, greedy_assign, update_centers, CenterBank, EnhancedCtc};
pub use ctc::{ctc_brute_force, ctc_loss, ctc_loss_value};
pub use det::{
    bce, db_gt_loss, dice, dilate2x2, distill_loss, masked_l1, DbLoss, DetGroundTruth, DistillLoss, BCE_CLAMP,
    DICE_SMOOTH,
};
pub use divergence::{bernoulli_logits, dml_loss, feature_loss, kl_div, KL_EPS};
pub use suite::{gradcheck_loss, GRADCHECK_EPS, GRADCHECK_LOSSES, GRADCHECK_TOL};

use crate::error::{Error, Result};

/// Target symbol sequence for CTC. Class 0 is the blank and never appears in
/// `symbols`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SeqLabel {
    symbols: Vec<usize>,
}

impl SeqLabel {
    pub const BLANK: usize = 0;

    pub fn new(symbols: Vec<usize>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::invalid("empty label"));
        }
        if symbols.contains(&Self::BLANK) {
            return Err(Error::invalid(format!("label {symbols:?} contains the blank class")));
        }
        Ok(SeqLabel { symbols })
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// `blank s1 blank s2 … sL blank`, length `2L + 1`.
    pub fn extended(&self) -> Vec<usize> {
        let mut ext = Vec::with_capacity(2 * self.symbols.len() + 1);
        ext.push(Self::BLANK);
        for &s in &self.symbols {
            ext.push(s);
            ext.push(Self::BLANK);
        }
        ext
    }

    /// Shortest input that can emit this label: one step per symbol plus a
    /// separating blank between equal neighbours.
    pub fn min_timesteps(&self) -> usize {
        let repeats = self.symbols.windows(2).filter(|w| w[0] == w[1]).count();
        self.symbols.len() + repeats
    }
}

/// Two-student detection objective: both students' ground-truth and
/// distillation terms plus the shared mutual term.
pub fn cml_total(gt: (f64, f64), dml: f64, distill: (f64, f64)) -> f64 {
    gt.0 + gt.1 + dml + distill.0 + distill.1
}

/// Mutual recognition objective. `ctc` already sums both networks.
pub fn udml_total(ctc: f64, dml: f64, feat: f64) -> f64 {
    ctc + dml + feat
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_rules() {
        assert!(SeqLabel::new(vec![]).is_err());
        assert!(SeqLabel::new(vec![1, 0]).is_err());
        let l = SeqLabel::new(vec![3, 3, 1]).unwrap();
        assert_eq!(l.extended(), [0, 3, 0, 3, 0, 1, 0]);
        assert_eq!(l.min_timesteps(), 4);
    }

    #[test]
    fn totals() {
        assert_eq!(cml_total((0.0, 0.0), 0.0, (0.0, 0.0)), 0.0);
        assert_eq!(cml_total((1.0, 2.0), 3.0, (4.0, 5.0)), 15.0);
        assert!(cml_total((1.0, 2.0), 3.5, (4.0, 5.0)) > 15.0);
        assert_eq!(udml_total(0.0, 0.0, 0.0), 0.0);
        assert_eq!(udml_total(1.0, 0.5, 0.25), 1.75);
        assert_eq!(udml_total(1.0, 0.5, 0.25) - udml_total(1.0, 0.5, 0.0), 0.25);
    }
}
