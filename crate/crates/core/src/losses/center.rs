use super::{ctc_loss, SeqLabel};
use crate::error::{Error, Result};
use crate::tensor::{lit, ops, Element, Graph, Tensor, Var};

/// One center per class (blank included), updated by a moving average.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterBank<F: Element = f32> {
    /// `[C, D]`.
    pub centers: Tensor<F>,
    /// Step size in `[0, 1)`.
    pub momentum: f64,
}

impl<F: Element> CenterBank<F> {
    pub fn zeros(classes: usize, dim: usize, momentum: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&momentum) {
            return Err(Error::invalid(format!("center momentum {momentum} outside [0, 1]")));
        }
        Ok(CenterBank {
            centers: Tensor::zeros(vec![classes, dim]),
            momentum,
        })
    }

    pub fn classes(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.shape()[1]
    }
}

/// Row-wise argmax over the last axis; ties go to the lowest index.
pub fn greedy_assign<F: Element>(logits: &Tensor<F>) -> Vec<usize> {
    let c = logits.shape().last().copied().unwrap_or(1).max(1);
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

fn rows_of(shape: &[usize]) -> usize {
    shape[..shape.len().saturating_sub(1)].iter().product()
}

/// Mean over timesteps of `‖x_t − c_{y_t}‖²` with `y_t` the argmax of the
/// head logits at `t`. `features` is `[…, D]`, `head_logits` `[…, C]` with
/// the same leading dims. Only `features` receives a gradient. Returns the
/// loss and the assignments.
pub fn center_loss<F: Element>(
    g: &mut Graph<F>,
    features: Var,
    head_logits: Var,
    bank: &CenterBank<F>,
) -> Result<(Var, Vec<usize>)> {
    let fs = g.shape(features).to_vec();
    let ls = g.shape(head_logits).to_vec();
    if fs.is_empty() || ls.is_empty() || fs[..fs.len() - 1] != ls[..ls.len() - 1] {
        return Err(Error::shape("center_loss", &fs, &ls));
    }
    let d = fs[fs.len() - 1];
    if d != bank.dim() || ls[ls.len() - 1] != bank.classes() {
        return Err(Error::shape("center_loss bank", &[ls[ls.len() - 1], d], bank.centers.shape()));
    }
    let assign = greedy_assign(g.value(head_logits));
    let n = rows_of(&fs).max(1);
    let inv_n: F = lit(1.0 / n as f64);
    let centers = bank.centers.data();
    let diff: Vec<F> = g
        .value(features)
        .data()
        .chunks(d)
        .zip(&assign)
        .flat_map(|(x, &y)| x.iter().zip(&centers[y * d..(y + 1) * d]).map(|(&a, &c)| a - c))
        .collect();
    let value = diff.iter().map(|&v| v * v).sum::<F>() * inv_n;
    let loss = g.record(Tensor::scalar(value), &[features, head_logits], move |ctx| {
        let k = ctx.grad[0] * lit::<F>(2.0) * inv_n;
        vec![Some(diff.iter().map(|&v| v * k).collect()), None]
    });
    Ok((loss, assign))
}

/// Moves each assigned class center toward the mean of its assigned
/// features: `c ← c − m (c − mean)`. Unassigned classes stay put.
pub fn update_centers<F: Element>(bank: &mut CenterBank<F>, features: &Tensor<F>, assignments: &[usize]) -> Result<()> {
    let d = bank.dim();
    if features.numel() != assignments.len() * d {
        return Err(Error::shape("update_centers", features.shape(), &[assignments.len(), d]));
    }
    let c = bank.classes();
    let mut sums = vec![0.0f64; c * d];
    let mut counts = vec![0usize; c];
    for (x, &y) in features.data().chunks(d).zip(assignments) {
        if y >= c {
            return Err(Error::invalid(format!("assignment {y} outside {c} centers")));
        }
        counts[y] += 1;
        for (s, v) in sums[y * d..(y + 1) * d].iter_mut().zip(x) {
            *s += v.to_f64().unwrap_or(0.0);
        }
    }
    let m = bank.momentum;
    let data = bank.centers.data_mut();
    for y in (0..c).filter(|&y| counts[y] > 0) {
        for j in 0..d {
            let mean = sums[y * d + j] / counts[y] as f64;
            let cur = data[y * d + j].to_f64().unwrap_or(0.0);
            data[y * d + j] = F::from_f64_lossy(cur - m * (cur - mean));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct EnhancedCtc {
    pub total: Var,
    pub ctc: Var,
    pub center: Option<Var>,
    pub assignments: Vec<usize>,
}

/// `ctc + λ·center`. With `λ = 0` the center term is skipped and `total` is
/// the CTC node itself.
pub fn enhanced_ctc<F: Element>(
    g: &mut Graph<F>,
    log_probs: Var,
    labels: &[SeqLabel],
    features: Var,
    head_logits: Var,
    bank: &CenterBank<F>,
    lambda: f64,
) -> Result<EnhancedCtc> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("center weight must be non-negative, got {lambda}")));
    }
    let ctc = ctc_loss(g, log_probs, labels)?;
    if lambda == 0.0 {
        return Ok(EnhancedCtc {
            total: ctc,
            ctc,
            center: None,
            assignments: greedy_assign(g.value(head_logits)),
        });
    }
    let (center, assignments) = center_loss(g, features, head_logits, bank)?;
    let total = ops::weighted_sum(g, &[(ctc, 1.0), (center, lambda)])?;
    Ok(EnhancedCtc {
        total,
        ctc,
        center: Some(center),
        assignments,
    })
}
