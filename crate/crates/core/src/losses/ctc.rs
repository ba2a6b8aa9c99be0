//! Connectionist temporal classification.

use super::SeqLabel;
use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

#[inline]
fn lse(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + (-(a - b).abs()).exp().ln_1p()
}

/// Per-sample forward/backward result: `-log P` and the gradient w.r.t. the
/// `T×C` log-probabilities.
struct CtcSample {
    loss: f64,
    grad: Vec<f64>,
}

/// Runs the alpha/beta recursions in log space. `lp` is `T×C` row-major.
fn ctc_single(lp: &[f64], t_len: usize, classes: usize, label: &SeqLabel, want_grad: bool) -> CtcSample {
    let ext = label.extended();
    let s_len = ext.len();
    let at = |t: usize, k: usize| lp[t * classes + k];
    // can state s be reached from s-2 (skip over a blank)?
    let skip = |s: usize| s >= 2 && ext[s] != SeqLabel::BLANK && ext[s] != ext[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = at(0, ext[0]);
    if s_len > 1 {
        alpha[1] = at(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let prev = &alpha[(t - 1) * s_len..t * s_len];
            let mut v = prev[s];
            if s >= 1 {
                v = lse(v, prev[s - 1]);
            }
            if skip(s) {
                v = lse(v, prev[s - 2]);
            }
            alpha[t * s_len + s] = if v == ninf { ninf } else { v + at(t, ext[s]) };
        }
    }
    let last = &alpha[(t_len - 1) * s_len..];
    let log_p = if s_len > 1 { lse(last[s_len - 1], last[s_len - 2]) } else { last[0] };
    let loss = -log_p;
    if !want_grad || !loss.is_finite() {
        return CtcSample {
            loss,
            grad: vec![0.0; lp.len()],
        };
    }

    let mut beta = vec![ninf; t_len * s_len];
    let tl = t_len - 1;
    beta[tl * s_len + s_len - 1] = at(tl, ext[s_len - 1]);
    if s_len > 1 {
        beta[tl * s_len + s_len - 2] = at(tl, ext[s_len - 2]);
    }
    for t in (0..tl).rev() {
        for s in 0..s_len {
            let next = &beta[(t + 1) * s_len..(t + 2) * s_len];
            let mut v = next[s];
            if s + 1 < s_len {
                v = lse(v, next[s + 1]);
            }
            if s + 2 < s_len && skip(s + 2) {
                v = lse(v, next[s + 2]);
            }
            beta[t * s_len + s] = if v == ninf { ninf } else { v + at(t, ext[s]) };
        }
    }

    // d(-log P)/d lp[t,k] = -sum_{s: ext[s]=k} alpha_t(s) beta_t(s) / (y_t(k) P)
    let mut grad = vec![0.0; lp.len()];
    let mut gamma = vec![ninf; classes];
    for t in 0..t_len {
        gamma.iter_mut().for_each(|g| *g = ninf);
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            gamma[ext[s]] = lse(gamma[ext[s]], v);
        }
        for (k, &gk) in gamma.iter().enumerate() {
            if gk != ninf {
                grad[t * classes + k] = -(gk - at(t, k) - log_p).exp();
            }
        }
    }
    CtcSample { loss, grad }
}

fn split_batch(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [t, c] => Ok((1, t, c)),
        [n, t, c] => Ok((n, t, c)),
        _ => Err(Error::invalid(format!("ctc expects [T, C] or [N, T, C], got {shape:?}"))),
    }
}

fn check_labels(labels: &[SeqLabel], n: usize, t: usize, c: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::invalid(format!("ctc: {n} sequences but {} labels", labels.len())));
    }
    if t == 0 {
        return Err(Error::invalid("ctc: zero timesteps"));
    }
    for (i, l) in labels.iter().enumerate() {
        if let Some(&bad) = l.symbols().iter().find(|&&s| s >= c) {
            return Err(Error::invalid(format!("ctc: label {i} has class {bad} but only {c} classes")));
        }
        let needed = l.min_timesteps();
        if needed > t {
            return Err(Error::CtcInfeasible {
                sample: i,
                needed,
                available: t,
            });
        }
    }
    Ok(())
}

/// CTC negative log-likelihood of `labels` under per-timestep
/// log-probabilities `[T, C]` or `[N, T, C]`, averaged over the batch.
/// Blank is class 0. A label that cannot fit in `T` steps is reported as
/// [`Error::CtcInfeasible`].
pub fn ctc_loss<F: Element>(g: &mut Graph<F>, log_probs: Var, labels: &[SeqLabel]) -> Result<Var> {
    let (n, t, c) = split_batch(g.shape(log_probs))?;
    check_labels(labels, n, t, c)?;
    let lp: Vec<f64> = g.value(log_probs).to_f64_vec();
    let want_grad = g.requires_grad(log_probs);
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(if want_grad { lp.len() } else { 0 });
    for (i, label) in labels.iter().enumerate() {
        let sample = ctc_single(&lp[i * t * c..(i + 1) * t * c], t, c, label, want_grad);
        total += sample.loss;
        if want_grad {
            grad.extend(sample.grad.into_iter().map(|v| v * inv_n));
        }
    }
    let value = Tensor::scalar(F::from_f64_lossy(total * inv_n));
    Ok(g.record(value, &[log_probs], move |ctx| {
        let up = ctx.grad[0];
        vec![Some(grad.iter().map(|&v| F::from_f64_lossy(v) * up).collect())]
    }))
}

/// Plain-value CTC on a single `[T, C]` log-probability matrix. Returns
/// `+∞` when the label cannot be emitted in `T` steps.
pub fn ctc_loss_value(log_probs: &Tensor<f64>, label: &SeqLabel) -> Result<f64> {
    let (n, t, c) = split_batch(log_probs.shape())?;
    if n != 1 {
        return Err(Error::invalid("ctc_loss_value takes a single [T, C] sequence"));
    }
    match check_labels(std::slice::from_ref(label), 1, t, c) {
        Err(Error::CtcInfeasible { .. }) => return Ok(f64::INFINITY),
        Err(e) => return Err(e),
        Ok(()) => {}
    }
    Ok(ctc_single(log_probs.data(), t, c, label, false).loss)
}

/// Exhaustive oracle: sums the probability of every length-`T` path whose
/// collapse (merge repeats, drop blanks) equals `label`, and returns
/// `-ln` of the sum. `probs` is `[T, C]` (not log).
pub fn ctc_brute_force(probs: &Tensor<f64>, label: &SeqLabel) -> Result<f64> {
    let (t, c) = match *probs.shape() {
        [t, c] => (t, c),
        _ => return Err(Error::invalid(format!("ctc_brute_force expects [T, C], got {:?}", probs.shape()))),
    };
    let paths = (c as f64).powi(t as i32);
    if paths > 1e7 {
        return Err(Error::TooLarge(paths));
    }
    let target = label.symbols();
    let mut path = vec![0usize; t];
    let mut total = 0.0;
    loop {
        let mut collapsed = Vec::with_capacity(t);
        let mut prev = None;
        for &k in &path {
            if Some(k) != prev && k != SeqLabel::BLANK {
                collapsed.push(k);
            }
            prev = Some(k);
        }
        if collapsed == target {
            total += path.iter().enumerate().map(|(i, &k)| probs.data()[i * c + k]).product::<f64>();
        }
        // odometer increment
        let mut d = t;
        loop {
            if d == 0 {
                return Ok(-total.ln());
            }
            d -= 1;
            path[d] += 1;
            if path[d] < c {
                break;
            }
            path[d] = 0;
        }
    }
}
