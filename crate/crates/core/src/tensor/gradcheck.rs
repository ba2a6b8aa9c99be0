use super::{Graph, Tensor, Var};

const NOISE_MARGIN: f64 = 1e5;

/// Largest relative error between the recorded gradient of `f` at `x` and a
/// central finite difference with step `eps`, over all elements of `x`.
///
/// Relative error is `|analytic − numeric| / max(|analytic|, |numeric|, s)`.
/// The floor `s = 1e5 · ε · max(1, |f|) / eps` (ε the f64 machine epsilon)
/// keeps elements whose gradient is at the central difference's rounding
/// level from dominating.
pub fn grad_check<L>(f: L, x: &Tensor<f64>, eps: f64) -> f64
where
    L: Fn(&mut Graph<f64>, Var) -> Var,
{
    grad_check_multi(|g, vs| f(g, vs[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several inputs at once; returns the worst element.
pub fn grad_check_multi<L>(f: L, xs: &[Tensor<f64>], eps: f64) -> f64
where
    L: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    assert!(eps > 0.0, "eps must be positive");
    let eval = |inputs: &[Tensor<f64>], grad: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| if grad { g.param(t.clone()) } else { g.constant(t.clone()) })
            .collect();
        let out = f(&mut g, &vars);
        let value = g.value(out).item();
        let grads = grad.then(|| {
            g.backward(out).expect("scalar loss");
            vars.iter()
                .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(v).numel()]))
                .collect::<Vec<_>>()
        });
        (value, grads)
    };

    let (f0, analytic) = eval(xs, true);
    let floor = (NOISE_MARGIN * f64::EPSILON * f0.abs().max(1.0) / eps).max(1e-8);
    let analytic = analytic.expect("analytic gradients");
    let mut worst = 0.0f64;
    let mut probe: Vec<Tensor<f64>> = xs.to_vec();
    for (which, x) in xs.iter().enumerate() {
        for i in 0..x.numel() {
            let orig = x.data()[i];
            probe[which].data_mut()[i] = orig + eps;
            let (fp, _) = eval(&probe, false);
            probe[which].data_mut()[i] = orig - eps;
            let (fm, _) = eval(&probe, false);
            probe[which].data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic[which][i];
            let denom = a.abs().max(numeric.abs()).max(floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn exact_for_sum() {
        let x = Tensor::from_fn(vec![3, 4], |i| i as f64 * 0.3 - 1.0);
        let err = grad_check(|g, v| ops::sum(g, v), &x, 1e-5);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn tiny_gradients_are_judged_against_rounding() {
        // d/dx of 3 + 1e-9·x is far below the rounding level of f ≈ 3
        let x = Tensor::from_fn(vec![3], |i| i as f64);
        let err = grad_check(
            |g, v| {
                let s = ops::sum(g, v);
                let s = ops::scale(g, s, 1e-9);
                let c = g.constant(Tensor::scalar(3.0));
                ops::add(g, s, c).unwrap()
            },
            &x,
            1e-5,
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // forward x^2, backward claims 3x
        let x = Tensor::from_fn(vec![4], |i| 0.5 + i as f64);
        let err = grad_check(
            |g, v| {
                let val = g.value(v).map(|a| a * a);
                let y = g.record(val, &[v], |ctx| {
                    vec![Some(ctx.inputs[0].data().iter().zip(ctx.grad).map(|(a, g)| 3.0 * a * g).collect())]
                });
                ops::sum(g, y)
            },
            &x,
            1e-5,
        );
        assert!(err > 0.1);
    }

    #[test]
    fn softmax_cross_entropy() {
        let logits = Tensor::from_fn(vec![3, 5], |i| ((i * 7919) % 13) as f64 / 6.0 - 1.0);
        let target = Tensor::from_fn(vec![3, 5], |i| if i % 5 == (i / 5) { 1.0 } else { 0.0 });
        let err = grad_check(
            |g, v| {
                let ls = ops::log_softmax(g, v, 1).unwrap();
                let t = g.constant(target.clone());
                let m = ops::mul(g, ls, t).unwrap();
                let s = ops::mean(g, m);
                ops::scale(g, s, -1.0)
            },
            &logits,
            1e-5,
        );
        assert!(err < 1e-4, "{err}");
    }
}
