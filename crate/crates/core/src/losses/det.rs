use crate::error::{Error, Result};
use crate::nn::MapVars;
use crate::tensor::{lit, ops, Element, Graph, Tensor, Var};

/// Probabilities are clamped to `[BCE_CLAMP, 1 − BCE_CLAMP]` inside `ln`.
pub const BCE_CLAMP: f64 = 1e-7;
pub const DICE_SMOOTH: f64 = 1e-6;

/// Detection targets, `[H, W]` or `[N, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DetGroundTruth<F: Element = f32> {
    /// Shrunk text regions, values in {0, 1}.
    pub prob_gt: Tensor<F>,
    /// Border ramp in `[0, 1]`.
    pub thresh_gt: Tensor<F>,
    /// Where the threshold loss applies, values in {0, 1}.
    pub thresh_mask: Tensor<F>,
}

impl<F: Element> DetGroundTruth<F> {
    pub fn new(prob_gt: Tensor<F>, thresh_gt: Tensor<F>, thresh_mask: Tensor<F>) -> Result<Self> {
        if prob_gt.shape() != thresh_gt.shape() || prob_gt.shape() != thresh_mask.shape() {
            return Err(Error::shape("detection targets", prob_gt.shape(), thresh_gt.shape()));
        }
        let binary = |t: &Tensor<F>| t.data().iter().all(|&v| v == F::zero() || v == F::one());
        if !binary(&prob_gt) || !binary(&thresh_mask) {
            return Err(Error::invalid("prob_gt and thresh_mask must be 0/1 maps"));
        }
        Ok(DetGroundTruth {
            prob_gt,
            thresh_gt,
            thresh_mask,
        })
    }

    /// Stacks per-image `[H, W]` targets into `[N, H, W]`.
    pub fn stack(items: &[&DetGroundTruth<F>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::invalid("stack of zero targets"))?;
        let hw = first.prob_gt.shape().to_vec();
        let mut shape = vec![items.len()];
        shape.extend(&hw);
        let cat = |pick: fn(&DetGroundTruth<F>) -> &Tensor<F>| -> Result<Tensor<F>> {
            let mut data = Vec::new();
            for it in items {
                if pick(it).shape() != hw.as_slice() {
                    return Err(Error::shape("stack targets", &hw, pick(it).shape()));
                }
                data.extend_from_slice(pick(it).data());
            }
            Tensor::new(shape.clone(), data)
        };
        Ok(DetGroundTruth {
            prob_gt: cat(|t| &t.prob_gt)?,
            thresh_gt: cat(|t| &t.thresh_gt)?,
            thresh_mask: cat(|t| &t.thresh_mask)?,
        })
    }

    pub fn cast<G: Element>(&self) -> DetGroundTruth<G> {
        DetGroundTruth {
            prob_gt: self.prob_gt.cast(),
            thresh_gt: self.thresh_gt.cast(),
            thresh_mask: self.thresh_mask.cast(),
        }
    }
}

fn same_shape<F: Element>(g: &Graph<F>, op: &'static str, pred: Var, target: &Tensor<F>) -> Result<()> {
    if g.shape(pred) != target.shape() {
        return Err(Error::shape(op, g.shape(pred), target.shape()));
    }
    Ok(())
}

/// Mean binary cross-entropy of probabilities `pred` against `target`.
pub fn bce<F: Element>(g: &mut Graph<F>, pred: Var, target: &Tensor<F>) -> Result<Var> {
    same_shape(g, "bce", pred, target)?;
    let lo: F = lit(BCE_CLAMP);
    let hi: F = lit(1.0 - BCE_CLAMP);
    let n = target.numel().max(1);
    let inv_n: F = lit(1.0 / n as f64);
    let p = g.value(pred).data().to_vec();
    let t = target.data().to_vec();
    let total: F = p
        .iter()
        .zip(&t)
        .map(|(&p, &t)| {
            let q = p.max(lo).min(hi);
            -(t * q.ln() + (F::one() - t) * (F::one() - q).ln())
        })
        .sum();
    Ok(g.record(Tensor::scalar(total * inv_n), &[pred], move |ctx| {
        let k = ctx.grad[0] * inv_n;
        let grad = p
            .iter()
            .zip(&t)
            .map(|(&p, &t)| {
                if p < lo || p > hi {
                    F::zero()
                } else {
                    (p - t) / (p * (F::one() - p)) * k
                }
            })
            .collect();
        vec![Some(grad)]
    }))
}

/// `1 − 2Σpg / (Σp + Σg + ε)` over the whole tensor.
pub fn dice<F: Element>(g: &mut Graph<F>, pred: Var, target: &Tensor<F>) -> Result<Var> {
    same_shape(g, "dice", pred, target)?;
    let p = g.value(pred).data().to_vec();
    let t = target.data().to_vec();
    let inter: F = p.iter().zip(&t).map(|(&a, &b)| a * b).sum();
    let denom = p.iter().copied().sum::<F>() + t.iter().copied().sum::<F>() + lit(DICE_SMOOTH);
    let two: F = lit(2.0);
    let value = F::one() - two * inter / denom;
    Ok(g.record(Tensor::scalar(value), &[pred], move |ctx| {
        let k = ctx.grad[0] * two / (denom * denom);
        vec![Some(t.iter().map(|&gt| -(gt * denom - inter) * k).collect())]
    }))
}

/// Mean absolute error over pixels where `mask` is 1. An empty mask yields a
/// constant zero and `true`.
pub fn masked_l1<F: Element>(g: &mut Graph<F>, pred: Var, target: &Tensor<F>, mask: &Tensor<F>) -> Result<(Var, bool)> {
    same_shape(g, "masked_l1", pred, target)?;
    same_shape(g, "masked_l1 mask", pred, mask)?;
    let count = mask.data().iter().filter(|&&m| m > F::zero()).count();
    if count == 0 {
        return Ok((g.constant(Tensor::scalar(F::zero())), true));
    }
    let inv: F = lit(1.0 / count as f64);
    let diff: Vec<F> = g
        .value(pred)
        .data()
        .iter()
        .zip(target.data())
        .zip(mask.data())
        .map(|((&p, &t), &m)| if m > F::zero() { p - t } else { F::zero() })
        .collect();
    let value = diff.iter().map(|d| d.abs()).sum::<F>() * inv;
    let loss = g.record(Tensor::scalar(value), &[pred], move |ctx| {
        let k = ctx.grad[0] * inv;
        let sign = |d: F| {
            if d > F::zero() {
                F::one()
            } else if d < F::zero() {
                -F::one()
            } else {
                F::zero()
            }
        };
        vec![Some(diff.iter().map(|&d| sign(d) * k).collect())]
    });
    Ok((loss, false))
}

/// Ground-truth detection loss with its weighted components.
#[derive(Clone, Copy, Debug)]
pub struct DbLoss {
    pub total: Var,
    pub prob: f64,
    pub binary: f64,
    pub thresh: f64,
    /// The threshold mask had no pixels, so the threshold term is zero.
    pub empty_mask: bool,
}

/// `bce(prob, prob_gt) + α·dice(binary, prob_gt) + β·l1(thresh, thresh_gt | mask)`.
pub fn db_gt_loss<F: Element>(
    g: &mut Graph<F>,
    maps: &MapVars,
    gt: &DetGroundTruth<F>,
    alpha: f64,
    beta: f64,
) -> Result<DbLoss> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::invalid(format!("alpha and beta must be positive, got {alpha}, {beta}")));
    }
    let lp = bce(g, maps.prob, &gt.prob_gt)?;
    let lb = dice(g, maps.binary, &gt.prob_gt)?;
    let (lt, empty_mask) = masked_l1(g, maps.thresh, &gt.thresh_gt, &gt.thresh_mask)?;
    let val = |g: &Graph<F>, v: Var| g.value(v).item().to_f64().unwrap_or(f64::NAN);
    let (prob, binary, thresh) = (val(g, lp), val(g, lb), val(g, lt));
    let total = ops::weighted_sum(g, &[(lp, 1.0), (lb, alpha), (lt, beta)])?;
    Ok(DbLoss {
        total,
        prob,
        binary,
        thresh,
        empty_mask,
    })
}

/// Grayscale dilation with a 2×2 ones kernel anchored at the top-left:
/// `out[i, j] = max(map[i..=i+1, j..=j+1])`, windows clamped at the border.
/// Works on the last two axes.
pub fn dilate2x2<F: Element>(map: &Tensor<F>) -> Tensor<F> {
    let s = map.shape();
    assert!(s.len() >= 2, "dilate2x2 needs at least two axes");
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut out = map.clone().with_requires_grad(false);
    if h * w == 0 {
        return out;
    }
    for (src, dst) in map.data().chunks(h * w).zip(out.data_mut().chunks_mut(h * w)) {
        for i in 0..h {
            for j in 0..w {
                let mut m = src[i * w + j];
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let (y, x) = (i + di, j + dj);
                    if y < h && x < w {
                        m = m.max(src[y * w + x]);
                    }
                }
                dst[i * w + j] = m;
            }
        }
    }
    out
}

/// Teacher-supervised student loss with its components.
#[derive(Clone, Copy, Debug)]
pub struct DistillLoss {
    pub total: Var,
    pub prob: f64,
    pub binary: f64,
}

/// `γ·bce(prob, dil(T)) + dice(binary, dil(T))`, where `T` is the teacher
/// probability map. The teacher map is a plain tensor and gets no gradient.
pub fn distill_loss<F: Element>(
    g: &mut Graph<F>,
    student: &MapVars,
    teacher_prob: &Tensor<F>,
    gamma: f64,
) -> Result<DistillLoss> {
    let target = dilate2x2(teacher_prob);
    let lp = bce(g, student.prob, &target)?;
    let lb = dice(g, student.binary, &target)?;
    let prob = g.value(lp).item().to_f64().unwrap_or(f64::NAN);
    let binary = g.value(lb).item().to_f64().unwrap_or(f64::NAN);
    let total = ops::weighted_sum(g, &[(lp, gamma), (lb, 1.0)])?;
    Ok(DistillLoss { total, prob, binary })
}
