use crate::error::{Error, Result};
use crate::tensor::ops::log_softmax_last;
use crate::tensor::{lit, Element, Graph, Tensor, Var};

/// Floor applied to the second distribution before taking its log.
pub const KL_EPS: f64 = 1e-10;

const NORM_TOL: f64 = 1e-5;

fn rows(shape: &[usize]) -> (usize, usize) {
    let c = shape.last().copied().unwrap_or(1).max(1);
    (shape.iter().product::<usize>() / c, c)
}

/// `Σ p·ln(p/q)` along the last axis, averaged over all leading positions.
/// Both inputs must be distributions; `q` is floored at [`KL_EPS`].
pub fn kl_div<F: Element>(p: &Tensor<F>, q: &Tensor<F>) -> Result<f64> {
    if p.shape() != q.shape() {
        return Err(Error::shape("kl_div", p.shape(), q.shape()));
    }
    let (n, c) = rows(p.shape());
    let (pv, qv) = (p.to_f64_vec(), q.to_f64_vec());
    for v in [&pv, &qv] {
        for (row, chunk) in v.chunks(c).enumerate() {
            let s: f64 = chunk.iter().sum();
            if (s - 1.0).abs() > NORM_TOL || chunk.iter().any(|&x| x < 0.0) {
                return Err(Error::NotNormalized { row, sum: s });
            }
        }
    }
    let total: f64 = pv
        .chunks(c)
        .zip(qv.chunks(c))
        .map(|(pr, qr)| {
            pr.iter()
                .zip(qr)
                .filter(|(&a, _)| a > 0.0)
                .map(|(&a, &b)| a * (a.ln() - b.max(KL_EPS).ln()))
                .sum::<f64>()
        })
        .sum();
    Ok(total / n.max(1) as f64)
}

/// Symmetric mutual-learning loss on logits:
/// `(KL(softmax a ‖ softmax b) + KL(softmax b ‖ softmax a)) / 2`, softmax over
/// the last axis, averaged over the leading positions. Gradients flow to both
/// inputs.
pub fn dml_loss<F: Element>(g: &mut Graph<F>, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape("dml_loss", g.shape(a), g.shape(b)));
    }
    let (n, c) = rows(g.shape(a));
    let la = log_softmax_last(g.value(a));
    let lb = log_softmax_last(g.value(b));
    let floor: F = lit(KL_EPS.ln());
    let half: F = lit(0.5);
    let inv_n: F = lit(1.0 / n.max(1) as f64);
    // KL(p‖q) + KL(q‖p) = Σ (p − q)(ln p − ln q), with ln floored
    let fa: Vec<F> = la.data().iter().map(|&v| v.max(floor)).collect();
    let fb: Vec<F> = lb.data().iter().map(|&v| v.max(floor)).collect();
    let pa: Vec<F> = la.data().iter().map(|v| v.exp()).collect();
    let pb: Vec<F> = lb.data().iter().map(|v| v.exp()).collect();
    let mut total = F::zero();
    for r in 0..n {
        let mut acc = F::zero();
        for k in r * c..(r + 1) * c {
            acc += (pa[k] - pb[k]) * (fa[k] - fb[k]);
        }
        total += acc;
    }
    let value = Tensor::scalar(total * half * inv_n);

    let (la, lb) = (la.into_data(), lb.into_data());
    Ok(g.record(value, &[a, b], move |ctx| {
        let scale = ctx.grad[0] * half * inv_n;
        // gradient w.r.t. the logits of one side given dL/d(log-softmax)
        let side = |p: &[F], lx: &[F], fx: &[F], fy: &[F], py: &[F]| {
            let mut out = vec![F::zero(); p.len()];
            for r in 0..n {
                let range = r * c..(r + 1) * c;
                let mut dl = vec![F::zero(); c];
                for (j, k) in range.clone().enumerate() {
                    let floored = lx[k] < floor;
                    // d/d ln p_k of Σ (p − q)(f_p − f_q)
                    dl[j] = p[k] * (fx[k] - fy[k]) + if floored { F::zero() } else { p[k] - py[k] };
                }
                let total: F = dl.iter().copied().sum();
                for (j, k) in range.enumerate() {
                    out[k] = (dl[j] - p[k] * total) * scale;
                }
            }
            out
        };
        vec![
            ctx.needs[0].then(|| side(&pa, &la, &fa, &fb, &pb)),
            ctx.needs[1].then(|| side(&pb, &lb, &fb, &fa, &pa)),
        ]
    }))
}

/// Turns per-element sigmoid logits `[…]` into two-class logits `[…, 2]`
/// as `(l, 0)`, so a softmax over the last axis gives `(σ(l), 1 − σ(l))`.
pub fn bernoulli_logits<F: Element>(g: &mut Graph<F>, logits: Var) -> Var {
    let mut shape = g.shape(logits).to_vec();
    shape.push(2);
    let data: Vec<F> = g.value(logits).data().iter().flat_map(|&l| [l, F::zero()]).collect();
    g.record(Tensor::from_parts(shape, data), &[logits], |ctx| {
        vec![Some(ctx.grad.iter().step_by(2).copied().collect())]
    })
}

/// Mean squared difference of two identically shaped feature tensors.
pub fn feature_loss<F: Element>(g: &mut Graph<F>, s: Var, t: Var) -> Result<Var> {
    if g.shape(s) != g.shape(t) {
        return Err(Error::shape("feature_loss", g.shape(s), g.shape(t)));
    }
    let n = g.value(s).numel().max(1);
    let inv_n: F = lit(1.0 / n as f64);
    let diff: Vec<F> = g
        .value(s)
        .data()
        .iter()
        .zip(g.value(t).data())
        .map(|(&a, &b)| a - b)
        .collect();
    let value = diff.iter().map(|&d| d * d).sum::<F>() * inv_n;
    Ok(g.record(Tensor::scalar(value), &[s, t], move |ctx| {
        let two: F = lit(2.0);
        let k = ctx.grad[0] * two * inv_n;
        let gs: Vec<F> = diff.iter().map(|&d| d * k).collect();
        let gt = ctx.needs[1].then(|| gs.iter().map(|&v| -v).collect());
        vec![ctx.needs[0].then_some(gs), gt]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, grad_check_multi};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    fn dml_value(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
        let l = dml_loss(&mut g, av, bv).unwrap();
        g.value(l).item()
    }

    #[test]
    fn kl_examples() {
        let p = t(&[2], &[0.3, 0.7]);
        assert_eq!(kl_div(&p, &p).unwrap(), 0.0);
        let v = kl_div(&t(&[2], &[1.0, 0.0]), &t(&[2], &[0.5, 0.5])).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - 0.693147).abs() < 1e-6);
        assert!(matches!(kl_div(&t(&[2], &[0.5, 0.6]), &p), Err(Error::NotNormalized { .. })));
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c = rng.gen_range(2..8);
            let mut mk = || {
                let v: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
                let s: f64 = v.iter().sum();
                t(&[c], &v.iter().map(|x| x / s).collect::<Vec<_>>())
            };
            let (p, q) = (mk(), mk());
            assert!(kl_div(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn dml_examples() {
        let a = t(&[2], &[0.0, 0.0]);
        let b = t(&[2], &[0.0, 3f64.ln()]);
        assert_eq!(dml_value(&a, &a), 0.0);
        let v = dml_value(&a, &b);
        let pa = t(&[2], &[0.5, 0.5]);
        let pb = t(&[2], &[0.25, 0.75]);
        let oracle = (kl_div(&pa, &pb).unwrap() + kl_div(&pb, &pa).unwrap()) / 2.0;
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.137327).abs() < 1e-6, "{v}");
        assert_eq!(dml_value(&a, &b), dml_value(&b, &a));
    }

    #[test]
    fn dml_gradient_both_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = Tensor::from_fn(vec![3, 5], |_| rng.gen_range(-2.0..2.0));
            let b = Tensor::from_fn(vec![3, 5], |_| rng.gen_range(-2.0..2.0));
            let err = grad_check_multi(|g, v| dml_loss(g, v[0], v[1]).unwrap(), &[a, b], 1e-5);
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn bernoulli_pairs() {
        let l = t(&[3], &[-1.0, 0.0, 2.0]);
        let mut g = Graph::new();
        let v = g.constant(l.clone());
        let b = bernoulli_logits(&mut g, v);
        let p = crate::tensor::ops::softmax_last(g.value(b));
        for i in 0..3 {
            let s = 1.0 / (1.0 + (-l.data()[i]).exp());
            assert!((p.data()[2 * i] - s).abs() < 1e-12);
        }
        let a = Tensor::from_fn(vec![2, 3], |i| i as f64 * 0.3 - 0.7);
        let b = Tensor::from_fn(vec![2, 3], |i| 0.5 - i as f64 * 0.2);
        let err = grad_check_multi(
            |g, v| {
                let (x, y) = (bernoulli_logits(g, v[0]), bernoulli_logits(g, v[1]));
                dml_loss(g, x, y).unwrap()
            },
            &[a, b],
            1e-5,
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn feature_examples() {
        let s = Tensor::from_fn(vec![2, 3], |i| i as f64);
        let mut g = Graph::new();
        let (a, b) = (g.constant(s.clone()), g.constant(s.map(|v| v + 1.0)));
        let same = feature_loss(&mut g, a, a).unwrap();
        let off = feature_loss(&mut g, b, a).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        assert_eq!(g.value(off).item(), 1.0);
        let c = g.constant(Tensor::zeros(vec![3, 2]));
        assert!(feature_loss(&mut g, a, c).is_err());
    }

    #[test]
    fn feature_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::from_fn(vec![2, 4, 3], |_| rng.gen_range(-1.0..1.0));
        let b = Tensor::from_fn(vec![2, 4, 3], |_| rng.gen_range(-1.0..1.0));
        let err = grad_check_multi(|g, v| feature_loss(g, v[0], v[1]).unwrap(), &[a.clone(), b.clone()], 1e-5);
        assert!(err < 1e-6, "{err}");
        let err = grad_check(
            |g, v| {
                let c = g.constant(b.clone());
                feature_loss(g, v, c).unwrap()
            },
            &a,
            1e-5,
        );
        assert!(err < 1e-6);
    }
}
