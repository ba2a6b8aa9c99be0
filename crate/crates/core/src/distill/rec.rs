use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{epoch_order, lr_at, scalar, Adam, EpochMeans, MetricsLog, TrainConfig};
use crate::datakit::{images_to_tensor, RecSample};
use crate::error::{Error, Result};
use crate::evalkit::{greedy_decode_batch, EvalReport};
use crate::losses::{dml_loss, enhanced_ctc, feature_loss, udml_total, update_centers, CenterBank, SeqLabel};
use crate::nn::{build_crnn_recognizer, Network, RecognizerConfig};
use crate::tensor::{ops, Graph, Tensor};

const EVAL_BATCH: usize = 64;

/// Result of a standalone recognition run.
#[derive(Debug)]
pub struct RecRun {
    pub net: Network<f32>,
    pub log: MetricsLog,
    /// Class centers, present when the center term was enabled.
    pub centers: Option<CenterBank<f32>>,
}

/// Result of a mutual-learning recognition run. `student` is built from slot
/// 0 and `teacher` from slot 1.
#[derive(Debug)]
pub struct UdmlRun {
    pub student: Network<f32>,
    pub teacher: Network<f32>,
    pub log: MetricsLog,
}

fn batch_inputs(data: &[RecSample], idx: &[usize]) -> Result<(Tensor<f32>, Vec<SeqLabel>)> {
    let images: Vec<_> = idx.iter().map(|&i| &data[i].image).collect();
    let labels = idx.iter().map(|&i| data[i].label.clone()).collect();
    Ok((images_to_tensor(&images)?, labels))
}

fn check_data(data: &[RecSample], rec: &RecognizerConfig) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let t = rec.timesteps();
    for (i, s) in data.iter().enumerate() {
        if s.label.min_timesteps() > t {
            return Err(Error::invalid(format!("sample {i}: label `{}` does not fit in {t} timesteps", s.text)));
        }
    }
    Ok(())
}

/// Trains one recognizer (network slot 0) with CTC, or CTC plus the center
/// term when `cfg.enhanced_ctc` is set. Logs `lr, loss, ctc, center, val_acc`;
/// `val_acc` is NaN without a validation set.
pub fn train_rec(rec: &RecognizerConfig, cfg: &TrainConfig, train: &[RecSample], val: Option<&[RecSample]>) -> Result<RecRun> {
    cfg.validate()?;
    check_data(train, rec)?;
    let mut net = build_crnn_recognizer::<f32>(rec, cfg.net_seed(0))?;
    let mut opt = Adam::new(&net.params);
    let mut bank = cfg
        .enhanced_ctc
        .then(|| CenterBank::zeros(rec.num_classes, rec.feature_dim(), cfg.center_momentum))
        .transpose()?;
    let lambda = if cfg.enhanced_ctc { cfg.lambda } else { 0.0 };
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed());
    let spe = train.len().div_ceil(cfg.batch_size);
    let mut log = MetricsLog::new(["lr", "loss", "ctc", "center", "val_acc"]);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut means = EpochMeans::new(3);
        let order = epoch_order(train.len(), &mut shuffle);
        for idx in order.chunks(cfg.batch_size) {
            let lr = lr_at(cfg, step, spe);
            let (x, labels) = batch_inputs(train, idx)?;
            let mut g = Graph::<f32>::new();
            let x = g.constant(x);
            let p = net.params.bind(&mut g);
            let out = net.forward_recognizer(&mut g, &p, x)?;
            let vars = p.into_vars();
            let lp = ops::log_softmax(&mut g, out.logits, 2)?;
            let (total, ctc, center) = match &bank {
                Some(b) => {
                    let e = enhanced_ctc(&mut g, lp, &labels, out.features, out.logits, b, lambda)?;
                    let c = e.center.map_or(0.0, |c| scalar(&g, c));
                    (e.total, e.ctc, (c, e.assignments))
                }
                None => {
                    let c = crate::losses::ctc_loss(&mut g, lp, &labels)?;
                    (c, c, (0.0, Vec::new()))
                }
            };
            let loss = scalar(&g, total);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            g.backward(total)?;
            opt.step(&mut net.params, &g, &vars, lr);
            if let Some(b) = bank.as_mut() {
                update_centers(b, g.value(out.features), &center.1)?;
            }
            means.add(&[loss, scalar(&g, ctc), center.0]);
            step += 1;
        }
        let acc = match val {
            Some(v) => eval_recognizer(&net, v)?.sentence_accuracy.unwrap_or(f64::NAN),
            None => f64::NAN,
        };
        let m = means.finish();
        log::info!("rec epoch {epoch}: loss {:.5} val_acc {acc:.4}", m[0]);
        log.push(epoch, vec![lr_at(cfg, step.saturating_sub(1), spe), m[0], m[1], m[2], acc])?;
    }
    Ok(RecRun { net, log, centers: bank })
}

/// Trains two identically configured recognizers jointly from one total:
/// both CTC terms, the symmetric KL between their per-timestep output
/// distributions and the L2 distance between their backbone features.
/// Both networks take exactly one Adam step per batch. Zero-weight terms are
/// not computed and are logged as 0.
pub fn train_udml(rec: &RecognizerConfig, cfg: &TrainConfig, train: &[RecSample], val: Option<&[RecSample]>) -> Result<UdmlRun> {
    cfg.validate()?;
    check_data(train, rec)?;
    let mut student = build_crnn_recognizer::<f32>(rec, cfg.net_seed(0))?;
    let mut teacher = build_crnn_recognizer::<f32>(rec, cfg.net_seed(1))?;
    let mut opt_s = Adam::new(&student.params);
    let mut opt_t = Adam::new(&teacher.params);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed());
    let spe = train.len().div_ceil(cfg.batch_size);
    let mut log = MetricsLog::new(["lr", "total", "ctc", "dml", "feat", "val_acc_student", "val_acc_teacher"]);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut means = EpochMeans::new(3);
        let order = epoch_order(train.len(), &mut shuffle);
        for idx in order.chunks(cfg.batch_size) {
            let lr = lr_at(cfg, step, spe);
            let (x, labels) = batch_inputs(train, idx)?;
            let mut g = Graph::<f32>::new();
            let x = g.constant(x);
            let ps = student.params.bind(&mut g);
            let pt = teacher.params.bind(&mut g);
            let b = crate::nn::forward_pair(&mut g, (&student, &ps), (&teacher, &pt), x)?;
            let (vs, vt) = (ps.into_vars(), pt.into_vars());
            let lps = ops::log_softmax(&mut g, b.s_hout, 2)?;
            let lpt = ops::log_softmax(&mut g, b.t_hout, 2)?;
            let ctc_s = crate::losses::ctc_loss(&mut g, lps, &labels)?;
            let ctc_t = crate::losses::ctc_loss(&mut g, lpt, &labels)?;
            let mut terms = vec![(ctc_s, 1.0), (ctc_t, 1.0)];
            let mut dml = 0.0;
            if cfg.dml_weight > 0.0 {
                let d = dml_loss(&mut g, b.s_hout, b.t_hout)?;
                dml = cfg.dml_weight * scalar(&g, d);
                terms.push((d, cfg.dml_weight));
            }
            let mut feat = 0.0;
            if cfg.feat_weight > 0.0 {
                let f = feature_loss(&mut g, b.s_bout, b.t_bout)?;
                feat = cfg.feat_weight * scalar(&g, f);
                terms.push((f, cfg.feat_weight));
            }
            let total = ops::weighted_sum(&mut g, &terms)?;
            let loss = scalar(&g, total);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            g.backward(total)?;
            opt_s.step(&mut student.params, &g, &vs, lr);
            opt_t.step(&mut teacher.params, &g, &vt, lr);
            means.add(&[scalar(&g, ctc_s) + scalar(&g, ctc_t), dml, feat]);
            step += 1;
        }
        let (acc_s, acc_t) = match val {
            Some(v) => (
                eval_recognizer(&student, v)?.sentence_accuracy.unwrap_or(f64::NAN),
                eval_recognizer(&teacher, v)?.sentence_accuracy.unwrap_or(f64::NAN),
            ),
            None => (f64::NAN, f64::NAN),
        };
        let m = means.finish();
        let total = udml_total(m[0], m[1], m[2]);
        log::info!("udml epoch {epoch}: total {total:.5} dml {:.5} val_acc {acc_s:.4}/{acc_t:.4}", m[1]);
        log.push(epoch, vec![lr_at(cfg, step.saturating_sub(1), spe), total, m[0], m[1], m[2], acc_s, acc_t])?;
    }
    Ok(UdmlRun { student, teacher, log })
}

/// Greedy-decodes every sample and scores exact sequence matches.
pub fn eval_recognizer(net: &Network<f32>, data: &[RecSample]) -> Result<EvalReport> {
    let mut matched = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, labels) = batch_inputs(data, chunk)?;
        let mut g = Graph::<f32>::new();
        let x = g.constant(x);
        let p = net.params.bind_frozen(&mut g);
        let out = net.forward_recognizer(&mut g, &p, x)?;
        let preds = greedy_decode_batch(g.value(out.logits))?;
        matched += preds.iter().zip(&labels).filter(|(p, l)| p.as_slice() == l.symbols()).count();
    }
    Ok(EvalReport::recognition(matched, data.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{gen_rec_dataset, Charset, RecGenConfig};

    fn tiny() -> (RecognizerConfig, Vec<RecSample>) {
        let cs = Charset::digits();
        let data = gen_rec_dataset(&cs, 8, &RecGenConfig::default(), 3).unwrap();
        let mut rc = RecognizerConfig::new(8, 32, cs.num_classes());
        rc.head_hidden = 16;
        rc.scale = 0.25;
        (rc, data)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            warmup_epochs: 0,
            batch_size: 4,
            seed: 5,
            ..TrainConfig::recognition()
        }
    }

    #[test]
    fn udml_is_reproducible() {
        let (rc, data) = tiny();
        let a = train_udml(&rc, &cfg(1), &data, None).unwrap();
        let b = train_udml(&rc, &cfg(1), &data, None).unwrap();
        assert_eq!(a.log.to_csv().unwrap(), b.log.to_csv().unwrap());
        assert!(a.student.params.bit_equal(&b.student.params));
        assert!(!a.student.params.bit_equal(&a.teacher.params));
        let row = &a.log.rows()[0].1;
        assert_eq!(row[1], udml_total(row[2], row[3], row[4]));
    }

    #[test]
    fn zero_feature_weight_logs_zero() {
        let (rc, data) = tiny();
        let c = TrainConfig { feat_weight: 0.0, ..cfg(2) };
        let run = train_udml(&rc, &c, &data, None).unwrap();
        assert!(run.log.column("feat").unwrap().iter().all(|&v| v == 0.0));
        assert!(run.log.column("dml").unwrap().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn mutual_terms_off_matches_standalone() {
        // without coupling terms the student sees exactly the standalone updates
        let (rc, data) = tiny();
        let c = TrainConfig { feat_weight: 0.0, dml_weight: 0.0, ..cfg(2) };
        let mutual = train_udml(&rc, &c, &data, None).unwrap();
        let alone = train_rec(&rc, &c, &data, None).unwrap();
        assert!(mutual.student.params.bit_equal(&alone.net.params));
    }

    #[test]
    fn center_term_and_divergence() {
        let (rc, data) = tiny();
        let c = TrainConfig { enhanced_ctc: true, ..cfg(1) };
        let run = train_rec(&rc, &c, &data, None).unwrap();
        assert!(run.log.last("center").unwrap() > 0.0);
        assert!(run.centers.unwrap().centers.data().iter().any(|&v| v != 0.0));
        let wild = TrainConfig { base_lr: 1e38, ..cfg(3) };
        match train_rec(&rc, &wild, &data, None) {
            Err(Error::Diverged { epoch, step }) => assert!(epoch >= 1 && step >= 1),
            other => panic!("expected divergence, got {:?}", other.map(|r| r.log)),
        }
    }
}
