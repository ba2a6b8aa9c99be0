//! Finite-difference verification of every loss on random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    center_loss, ctc_loss, db_gt_loss, distill_loss, dml_loss, enhanced_ctc, feature_loss, CenterBank, DetGroundTruth,
    SeqLabel,
};
use crate::error::{Error, Result};
use crate::nn::{build_crnn_recognizer, MapVars, RecognizerConfig};
use crate::tensor::{grad_check, grad_check_multi, ops, Graph, Tensor, Var};

/// Names accepted by [`gradcheck_loss`], in reporting order.
pub const GRADCHECK_LOSSES: &[&str] = &[
    "ctc",
    "dml",
    "feature",
    "center",
    "enhanced_ctc",
    "db_gt",
    "distill",
    "recognizer",
];

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Identity whose recorded gradient is scaled by 1.5; used to prove the
/// harness notices a wrong backward rule.
fn faulty(g: &mut Graph<f64>, v: Var) -> Var {
    let value = g.value(v).clone();
    g.record(value, &[v], |ctx| vec![Some(ctx.grad.iter().map(|d| d * 1.5).collect())])
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

fn random_label(rng: &mut ChaCha8Rng, t: usize, classes: usize) -> SeqLabel {
    loop {
        let len = rng.gen_range(1..=3.min(t));
        let l = SeqLabel::new((0..len).map(|_| rng.gen_range(1..classes)).collect()).expect("non-blank");
        if l.min_timesteps() <= t {
            return l;
        }
    }
}

fn random_gt(rng: &mut ChaCha8Rng, shape: &[usize]) -> DetGroundTruth<f64> {
    let bits = |rng: &mut ChaCha8Rng| Tensor::from_fn(shape.to_vec(), |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
    let prob = bits(rng);
    let thresh = uniform(rng, shape.to_vec(), 0.0, 1.0);
    let mask = bits(rng);
    DetGroundTruth::new(prob, thresh, mask).expect("valid targets")
}

fn maps(prob: Var, thresh: Var, binary: Var) -> MapVars {
    MapVars {
        prob,
        prob_logits: prob,
        thresh,
        binary,
    }
}

/// Worst relative error between recorded and finite-difference gradients of
/// loss `name` over `instances` random draws. With `inject_fault` the loss
/// output passes through a deliberately wrong backward rule.
pub fn gradcheck_loss(name: &str, instances: usize, seed: u64, inject_fault: bool) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wrap = move |g: &mut Graph<f64>, v: Var| if inject_fault { faulty(g, v) } else { v };
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let err = match name {
            "ctc" => {
                let (n, t, c) = (rng.gen_range(1..=2), rng.gen_range(2..=6), rng.gen_range(2..=5));
                let labels: Vec<SeqLabel> = (0..n).map(|_| random_label(&mut rng, t, c)).collect();
                let x = uniform(&mut rng, vec![n, t, c], -2.0, 2.0);
                grad_check(
                    |g, v| {
                        let lp = ops::log_softmax(g, v, 2).unwrap();
                        let l = ctc_loss(g, lp, &labels).unwrap();
                        wrap(g, l)
                    },
                    &x,
                    GRADCHECK_EPS,
                )
            }
            "dml" => {
                let shape = vec![rng.gen_range(1..=3), rng.gen_range(2..=5)];
                let a = uniform(&mut rng, shape.clone(), -2.0, 2.0);
                let b = uniform(&mut rng, shape, -2.0, 2.0);
                grad_check_multi(
                    |g, v| {
                        let l = dml_loss(g, v[0], v[1]).unwrap();
                        wrap(g, l)
                    },
                    &[a, b],
                    GRADCHECK_EPS,
                )
            }
            "feature" => {
                let shape = vec![rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4)];
                let a = uniform(&mut rng, shape.clone(), -1.0, 1.0);
                let b = uniform(&mut rng, shape, -1.0, 1.0);
                grad_check_multi(
                    |g, v| {
                        let l = feature_loss(g, v[0], v[1]).unwrap();
                        wrap(g, l)
                    },
                    &[a, b],
                    GRADCHECK_EPS,
                )
            }
            "center" => {
                let (t, c, d) = (rng.gen_range(1..=5), rng.gen_range(2..=5), rng.gen_range(1..=4));
                let feats = uniform(&mut rng, vec![t, d], -1.0, 1.0);
                let logits = uniform(&mut rng, vec![t, c], -2.0, 2.0);
                let bank = CenterBank {
                    centers: uniform(&mut rng, vec![c, d], -1.0, 1.0),
                    momentum: 0.1,
                };
                grad_check(
                    |g, v| {
                        let h = g.constant(logits.clone());
                        let (l, _) = center_loss(g, v, h, &bank).unwrap();
                        wrap(g, l)
                    },
                    &feats,
                    GRADCHECK_EPS,
                )
            }
            "enhanced_ctc" => {
                let (t, c, d) = (rng.gen_range(2..=6), rng.gen_range(2..=5), rng.gen_range(1..=4));
                let labels = vec![random_label(&mut rng, t, c)];
                let logits = uniform(&mut rng, vec![1, t, c], -2.0, 2.0);
                let feats = uniform(&mut rng, vec![1, t, d], -1.0, 1.0);
                let bank = CenterBank {
                    centers: uniform(&mut rng, vec![c, d], -1.0, 1.0),
                    momentum: 0.1,
                };
                grad_check_multi(
                    |g, v| {
                        let lp = ops::log_softmax(g, v[0], 2).unwrap();
                        let e = enhanced_ctc(g, lp, &labels, v[1], v[0], &bank, 0.05).unwrap();
                        wrap(g, e.total)
                    },
                    &[logits, feats],
                    GRADCHECK_EPS,
                )
            }
            "db_gt" => {
                let shape = vec![rng.gen_range(1..=2), rng.gen_range(2..=4), rng.gen_range(2..=4)];
                let gt = random_gt(&mut rng, &shape);
                let xs: Vec<Tensor<f64>> = (0..3).map(|_| uniform(&mut rng, shape.clone(), 0.05, 0.95)).collect();
                grad_check_multi(
                    |g, v| {
                        let m = maps(v[0], v[1], v[2]);
                        let l = db_gt_loss(g, &m, &gt, 5.0, 10.0).unwrap();
                        wrap(g, l.total)
                    },
                    &xs,
                    GRADCHECK_EPS,
                )
            }
            "distill" => {
                let shape = vec![rng.gen_range(1..=2), rng.gen_range(2..=4), rng.gen_range(2..=4)];
                let teacher = uniform(&mut rng, shape.clone(), 0.0, 1.0);
                let xs: Vec<Tensor<f64>> = (0..3).map(|_| uniform(&mut rng, shape.clone(), 0.05, 0.95)).collect();
                grad_check_multi(
                    |g, v| {
                        let m = maps(v[0], v[1], v[2]);
                        let l = distill_loss(g, &m, &teacher, 5.0).unwrap();
                        wrap(g, l.total)
                    },
                    &xs,
                    GRADCHECK_EPS,
                )
            }
            "recognizer" => {
                let cfg = RecognizerConfig {
                    scale: 0.25,
                    head_hidden: 8,
                    horizontal_downsample: 8,
                    ..RecognizerConfig::new(8, 32, 5)
                };
                let net = build_crnn_recognizer::<f64>(&cfg, rng.gen())?;
                let labels = vec![random_label(&mut rng, cfg.timesteps(), cfg.num_classes)];
                let x = uniform(&mut rng, vec![1, 1, 8, 32], -1.0, 1.0);
                grad_check(
                    |g, v| {
                        let p = net.params.bind(g);
                        let out = net.forward_recognizer(g, &p, v).unwrap();
                        let lp = ops::log_softmax(g, out.logits, 2).unwrap();
                        let l = ctc_loss(g, lp, &labels).unwrap();
                        wrap(g, l)
                    },
                    &x,
                    GRADCHECK_EPS,
                )
            }
            other => return Err(Error::invalid(format!("unknown loss `{other}`"))),
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_loss_passes_and_fault_is_caught() {
        for name in GRADCHECK_LOSSES {
            let err = gradcheck_loss(name, 3, 1, false).unwrap();
            assert!(err < GRADCHECK_TOL, "{name}: {err}");
        }
        assert!(gradcheck_loss("dml", 1, 1, true).unwrap() > GRADCHECK_TOL);
        assert!(gradcheck_loss("nope", 1, 1, false).is_err());
    }
}
