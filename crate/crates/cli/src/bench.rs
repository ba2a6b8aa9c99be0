use std::process::ExitCode;
use std::time::Instant;

use anyhow::Result;
use ocrdistill::losses::{ctc_loss, db_gt_loss, dilate2x2, dml_loss, DetGroundTruth, SeqLabel};
use ocrdistill::nn::{build_crnn_recognizer, build_db_detector, DetectorConfig, DetectorPreset, RecognizerConfig};
use ocrdistill::tensor::{ops, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::rundir::usage;
use crate::BenchArgs;

fn median_ms(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let m = times.len() / 2;
    if times.len() % 2 == 1 {
        times[m]
    } else {
        (times[m - 1] + times[m]) / 2.0
    }
}

/// `name,median_ms` for forward+backward of each core operation.
pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    if a.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut rand = |shape: Vec<usize>| Tensor::<f32>::from_fn(shape, |_| rng.gen_range(-1.0..1.0));
    let image = rand(vec![8, 1, 32, 32]);
    let kernel = rand(vec![8, 1, 3, 3]);
    let (ma, mb) = (rand(vec![64, 64]), rand(vec![64, 64]));
    let logits = rand(vec![8, 32, 11]);
    let other = rand(vec![8, 32, 11]);
    let rec_in = rand(vec![8, 1, 8, 32]);
    let probs = rand(vec![8, 32, 32]).map(|v| 0.5 + 0.4 * v);
    let labels: Vec<SeqLabel> = (1..=8).map(|k| SeqLabel::new(vec![k, k % 10 + 1, 3]).expect("label")).collect();
    let bits = probs.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let gt = DetGroundTruth::new(bits.clone(), probs.clone(), bits)?;
    let rec = build_crnn_recognizer::<f32>(&RecognizerConfig::new(8, 32, 11), a.seed)?;
    let det = build_db_detector::<f32>(&DetectorConfig::new(DetectorPreset::Student), a.seed)?;

    let mut rows: Vec<(&str, f64)> = Vec::new();
    rows.push(("conv2d", median_ms(a.reps, || {
        let mut g = Graph::new();
        let (x, k) = (g.param(image.clone()), g.param(kernel.clone()));
        let y = ops::conv2d(&mut g, x, k, (1, 1), (1, 1), 1).unwrap();
        let l = ops::sum(&mut g, y);
        g.backward(l).unwrap();
    })));
    rows.push(("matmul", median_ms(a.reps, || {
        let mut g = Graph::new();
        let (x, y) = (g.param(ma.clone()), g.param(mb.clone()));
        let z = ops::matmul(&mut g, x, y).unwrap();
        let l = ops::sum(&mut g, z);
        g.backward(l).unwrap();
    })));
    rows.push(("ctc_loss", median_ms(a.reps, || {
        let mut g = Graph::new();
        let x = g.param(logits.clone());
        let lp = ops::log_softmax(&mut g, x, 2).unwrap();
        let l = ctc_loss(&mut g, lp, &labels).unwrap();
        g.backward(l).unwrap();
    })));
    rows.push(("dml_loss", median_ms(a.reps, || {
        let mut g = Graph::new();
        let (x, y) = (g.param(logits.clone()), g.param(other.clone()));
        let l = dml_loss(&mut g, x, y).unwrap();
        g.backward(l).unwrap();
    })));
    rows.push(("dilate2x2", median_ms(a.reps, || {
        std::hint::black_box(dilate2x2(&probs));
    })));
    rows.push(("detector_step", median_ms(a.reps, || {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let p = det.params.bind(&mut g);
        let maps = det.forward_detector(&mut g, &p, x).unwrap();
        let l = db_gt_loss(&mut g, &maps, &gt, 5.0, 10.0).unwrap();
        g.backward(l.total).unwrap();
    })));
    rows.push(("recognizer_step", median_ms(a.reps, || {
        let mut g = Graph::new();
        let x = g.constant(rec_in.clone());
        let p = rec.params.bind(&mut g);
        let out = rec.forward_recognizer(&mut g, &p, x).unwrap();
        let lp = ops::log_softmax(&mut g, out.logits, 2).unwrap();
        let l = ctc_loss(&mut g, lp, &labels).unwrap();
        g.backward(l).unwrap();
    })));

    println!("name,median_ms");
    for (name, ms) in rows {
        println!("{name},{ms}");
    }
    Ok(ExitCode::SUCCESS)
}
