use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{epoch_order, lr_at, scalar, Adam, EpochMeans, MetricsLog, TrainConfig};
use crate::datakit::{images_to_tensor, DetSample, Image};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_detection, DetPostprocess, EvalReport};
use crate::losses::{bernoulli_logits, cml_total, db_gt_loss, distill_loss, dml_loss, DetGroundTruth};
use crate::nn::{build_db_detector, DetectorConfig, DetectorPreset, Network};
use crate::tensor::{ops, Graph, Tensor};

const EVAL_BATCH: usize = 32;

/// Result of a standalone detection run.
#[derive(Debug)]
pub struct DetRun {
    pub net: Network<f32>,
    pub log: MetricsLog,
}

/// Result of a frozen-teacher two-student run. `students[k]` is built from
/// network slot `k`.
#[derive(Debug)]
pub struct CmlRun {
    pub students: [Network<f32>; 2],
    pub log: MetricsLog,
    /// Teacher parameter checksum, identical before and after training.
    pub teacher_checksum: u64,
}

fn check_data(data: &[DetSample]) -> Result<()> {
    let first = data.first().ok_or_else(|| Error::invalid("empty training set"))?;
    let (w, h) = (first.image.width(), first.image.height());
    if let Some(i) = data.iter().position(|s| s.image.width() != w || s.image.height() != h) {
        return Err(Error::invalid(format!("sample {i} is not {w}x{h} like the first")));
    }
    Ok(())
}

fn batch_inputs(data: &[DetSample], idx: &[usize]) -> Result<(Tensor<f32>, DetGroundTruth<f32>)> {
    let images: Vec<_> = idx.iter().map(|&i| &data[i].image).collect();
    let gts: Vec<_> = idx.iter().map(|&i| &data[i].targets).collect();
    Ok((images_to_tensor(&images)?, DetGroundTruth::stack(&gts)?))
}

fn stack_maps(maps: &[Tensor<f32>], idx: &[usize]) -> Result<Tensor<f32>> {
    let mut shape = vec![idx.len()];
    shape.extend(maps[idx[0]].shape());
    let data = idx.iter().flat_map(|&i| maps[i].data().iter().copied()).collect();
    Tensor::new(shape, data)
}

fn val_hmean(net: &Network<f32>, val: Option<&[DetSample]>) -> Result<f64> {
    match val {
        Some(v) => Ok(eval_detector(net, v, &DetPostprocess::default())?.hmean.unwrap_or(f64::NAN)),
        None => Ok(f64::NAN),
    }
}

/// Plain DB training of one detector built from network slot `slot`. Logs
/// `lr, loss, prob, binary, thresh, val_hmean` with the components already
/// weighted by `alpha` (binary) and `beta` (thresh).
pub fn train_det(
    det: &DetectorConfig,
    cfg: &TrainConfig,
    train: &[DetSample],
    val: Option<&[DetSample]>,
    slot: u64,
) -> Result<DetRun> {
    cfg.validate()?;
    check_data(train)?;
    let mut net = build_db_detector::<f32>(det, cfg.net_seed(slot))?;
    let mut opt = Adam::new(&net.params);
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed());
    let spe = train.len().div_ceil(cfg.batch_size);
    let mut log = MetricsLog::new(["lr", "loss", "prob", "binary", "thresh", "val_hmean"]);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut means = EpochMeans::new(4);
        let order = epoch_order(train.len(), &mut shuffle);
        for idx in order.chunks(cfg.batch_size) {
            let lr = lr_at(cfg, step, spe);
            let (x, gt) = batch_inputs(train, idx)?;
            let mut g = Graph::<f32>::new();
            let x = g.constant(x);
            let p = net.params.bind(&mut g);
            let maps = net.forward_detector(&mut g, &p, x)?;
            let vars = p.into_vars();
            let l = db_gt_loss(&mut g, &maps, &gt, cfg.alpha, cfg.beta)?;
            let loss = scalar(&g, l.total);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            g.backward(l.total)?;
            opt.step(&mut net.params, &g, &vars, lr);
            means.add(&[loss, l.prob, cfg.alpha * l.binary, cfg.beta * l.thresh]);
            step += 1;
        }
        let h = val_hmean(&net, val)?;
        let m = means.finish();
        log::info!("det epoch {epoch}: loss {:.5} val_hmean {h:.4}", m[0]);
        log.push(epoch, vec![lr_at(cfg, step.saturating_sub(1), spe), m[0], m[1], m[2], m[3], h])?;
    }
    Ok(DetRun { net, log })
}

/// Two students trained simultaneously against the ground truth, each other
/// (symmetric KL on the per-pixel text/background distribution) and the
/// dilated probability map of a frozen teacher. The teacher maps are computed
/// once up front since the teacher never changes. Logs `lr, total, gt,
/// gt_s1, gt_s2, dml, distill, distill_s1, distill_s2, val_hmean_s1,
/// val_hmean_s2`, all weighted; zero-weight terms are skipped and logged as 0.
pub fn train_cml(
    student_cfg: &DetectorConfig,
    cfg: &TrainConfig,
    train: &[DetSample],
    val: Option<&[DetSample]>,
    teacher: &Network<f32>,
) -> Result<CmlRun> {
    cfg.validate()?;
    check_data(train)?;
    if teacher.detector_config().map(|c| c.preset) != Some(DetectorPreset::Teacher) {
        return Err(Error::invalid(format!("teacher network must be a teacher-preset detector, got {}", teacher.arch())));
    }
    let teacher_checksum = teacher.params.checksum();
    let images: Vec<&Image> = train.iter().map(|s| &s.image).collect();
    let teacher_maps = predict_prob_maps(teacher, &images)?;

    let mut students = [
        build_db_detector::<f32>(student_cfg, cfg.net_seed(0))?,
        build_db_detector::<f32>(student_cfg, cfg.net_seed(1))?,
    ];
    let mut opts = [Adam::new(&students[0].params), Adam::new(&students[1].params)];
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed());
    let spe = train.len().div_ceil(cfg.batch_size);
    let mut log = MetricsLog::new([
        "lr",
        "total",
        "gt",
        "gt_s1",
        "gt_s2",
        "dml",
        "distill",
        "distill_s1",
        "distill_s2",
        "val_hmean_s1",
        "val_hmean_s2",
    ]);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut means = EpochMeans::new(5);
        let order = epoch_order(train.len(), &mut shuffle);
        for idx in order.chunks(cfg.batch_size) {
            let lr = lr_at(cfg, step, spe);
            let (x, gt) = batch_inputs(train, idx)?;
            let mut g = Graph::<f32>::new();
            let x = g.constant(x);
            let [s1, s2] = &students;
            let p1 = s1.params.bind(&mut g);
            let p2 = s2.params.bind(&mut g);
            let m1 = s1.forward_detector(&mut g, &p1, x)?;
            let m2 = s2.forward_detector(&mut g, &p2, x)?;
            let vars = [p1.into_vars(), p2.into_vars()];

            let gt1 = db_gt_loss(&mut g, &m1, &gt, cfg.alpha, cfg.beta)?;
            let gt2 = db_gt_loss(&mut g, &m2, &gt, cfg.alpha, cfg.beta)?;
            let mut terms = vec![(gt1.total, 1.0), (gt2.total, 1.0)];
            let mut dml = 0.0;
            if cfg.dml_weight > 0.0 {
                let a = bernoulli_logits(&mut g, m1.prob_logits);
                let b = bernoulli_logits(&mut g, m2.prob_logits);
                let d = dml_loss(&mut g, a, b)?;
                dml = cfg.dml_weight * scalar(&g, d);
                terms.push((d, cfg.dml_weight));
            }
            let mut distill = (0.0, 0.0);
            if cfg.distill_weight > 0.0 {
                let target = stack_maps(&teacher_maps, idx)?;
                let d1 = distill_loss(&mut g, &m1, &target, cfg.gamma)?;
                let d2 = distill_loss(&mut g, &m2, &target, cfg.gamma)?;
                distill = (cfg.distill_weight * scalar(&g, d1.total), cfg.distill_weight * scalar(&g, d2.total));
                terms.push((d1.total, cfg.distill_weight));
                terms.push((d2.total, cfg.distill_weight));
            }
            let total = ops::weighted_sum(&mut g, &terms)?;
            let loss = scalar(&g, total);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            g.backward(total)?;
            for ((net, opt), vars) in students.iter_mut().zip(&mut opts).zip(&vars) {
                opt.step(&mut net.params, &g, vars, lr);
            }
            means.add(&[scalar(&g, gt1.total), scalar(&g, gt2.total), dml, distill.0, distill.1]);
            step += 1;
        }
        if teacher.params.checksum() != teacher_checksum {
            return Err(Error::invalid(format!("teacher parameters changed during epoch {epoch}")));
        }
        let h1 = val_hmean(&students[0], val)?;
        let h2 = val_hmean(&students[1], val)?;
        let m = means.finish();
        let total = cml_total((m[0], m[1]), m[2], (m[3], m[4]));
        log::info!("cml epoch {epoch}: total {total:.5} dml {:.5} val_hmean {h1:.4}/{h2:.4}", m[2]);
        log.push(
            epoch,
            vec![lr_at(cfg, step.saturating_sub(1), spe), total, m[0] + m[1], m[0], m[1], m[2], m[3] + m[4], m[3], m[4], h1, h2],
        )?;
    }
    Ok(CmlRun {
        students,
        log,
        teacher_checksum,
    })
}

/// Probability maps (`[H, W]` each) of a detector, computed without
/// gradient tracking.
pub fn predict_prob_maps(net: &Network<f32>, images: &[&Image]) -> Result<Vec<Tensor<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(images_to_tensor(chunk)?);
        let p = net.params.bind_frozen(&mut g);
        let maps = net.forward_detector(&mut g, &p, x)?;
        let prob = g.value(maps.prob);
        let hw = prob.shape()[1..].to_vec();
        for plane in prob.data().chunks(hw.iter().product()) {
            out.push(Tensor::new(hw.clone(), plane.to_vec())?);
        }
    }
    Ok(out)
}

/// Precision, recall and Hmean pooled over `data`.
pub fn eval_detector(net: &Network<f32>, data: &[DetSample], post: &DetPostprocess) -> Result<EvalReport> {
    let images: Vec<&Image> = data.iter().map(|s| &s.image).collect();
    let probs = predict_prob_maps(net, &images)?;
    evaluate_detection(&probs, data, post)
}
