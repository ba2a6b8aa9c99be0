//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any fails. `ACCEPTANCE_ONLY=1,4,7` runs a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use ocrdistill::datakit::{
    copy_paste, gen_det_dataset, gen_rec_dataset, load_det_dataset, load_rec_dataset, point_in_polygon,
    polygons_overlap, read_annotations, save_det_dataset, save_rec_dataset, write_annotations, Charset,
    CopyPasteConfig, DetGenConfig, DetSample, RecGenConfig, ANNOTATIONS_FILE,
};
use ocrdistill::distill::{
    eval_detector, eval_recognizer, train_cml, train_det, train_rec, train_udml, MetricsLog, TrainConfig,
};
use ocrdistill::evalkit::DetPostprocess;
use ocrdistill::losses::{
    cml_total, ctc_brute_force, ctc_loss, dilate2x2, dml_loss, enhanced_ctc, gradcheck_loss, udml_total,
    CenterBank, SeqLabel, GRADCHECK_LOSSES, GRADCHECK_TOL,
};
use ocrdistill::nn::checkpoint::{decode, encode, load_checkpoint, save_checkpoint};
use ocrdistill::nn::{
    build_db_detector, build_pplcnet, BlockKind, DetectorConfig, DetectorPreset,
    RecognizerConfig, WIDE_CONV_CHANNELS,
};
use ocrdistill::tensor::ops;
use ocrdistill::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Runs `f` for every seed, one thread each.
fn per_seed<T: Send>(seeds: &[u64], f: impl Fn(u64) -> T + Sync) -> Vec<T> {
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds.iter().map(|&seed| {
            let f = &f;
            s.spawn(move || f(seed))
        }).collect();
        handles.into_iter().map(|h| h.join().expect("seed run panicked")).collect()
    })
}

fn random_label(rng: &mut ChaCha8Rng, t: usize, c: usize, max_len: usize) -> SeqLabel {
    loop {
        let len = rng.gen_range(1..=max_len);
        let label = SeqLabel::new((0..len).map(|_| rng.gen_range(1..c)).collect()).unwrap();
        if label.min_timesteps() <= t {
            return label;
        }
    }
}

fn ctc_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = rng.gen_range(1..=6);
        let c = rng.gen_range(2..=4);
        let label = random_label(&mut rng, t, c, 3);
        let logits = Tensor::<f64>::from_fn(vec![t, c], |_| rng.gen_range(-3.0..3.0));
        let mut g = Graph::new();
        let x = g.constant(logits);
        let lp = ops::log_softmax(&mut g, x, 1).unwrap();
        let probs = g.value(lp).map(f64::exp);
        let loss = ctc_loss(&mut g, lp, std::slice::from_ref(&label)).unwrap();
        let fast = g.value(loss).item();
        let oracle = ctc_brute_force(&probs, &label).unwrap();
        worst = worst.max((fast - oracle).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-6, format!("max |diff| {worst:e}"))?;
    ensure(secs < 60.0, format!("took {secs:.1} s"))?;
    Ok(format!("1000 instances, max |diff| {worst:.2e}, {secs:.2} s"))
}

fn gradient_suite() -> Check {
    let mut parts = Vec::new();
    let mut bad = Vec::new();
    for name in GRADCHECK_LOSSES {
        let err = gradcheck_loss(name, 100, 2, false).map_err(|e| e.to_string())?;
        parts.push(format!("{name} {err:.1e}"));
        if !(err < GRADCHECK_TOL) {
            bad.push(name);
        }
    }
    ensure(bad.is_empty(), format!("over tolerance: {bad:?}; {}", parts.join(", ")))?;
    let faulty = gradcheck_loss("dml", 3, 2, true).map_err(|e| e.to_string())?;
    ensure(faulty >= GRADCHECK_TOL, "an injected gradient fault went unnoticed")?;
    Ok(format!("100 instances each: {}", parts.join(", ")))
}

fn tiny_rec_run() -> (RecognizerConfig, TrainConfig, Vec<ocrdistill::datakit::RecSample>) {
    let cs = Charset::digits();
    let data = gen_rec_dataset(&cs, 16, &RecGenConfig::default(), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        warmup_epochs: 0,
        batch_size: 8,
        ..TrainConfig::recognition()
    };
    (RecognizerConfig::new(8, 32, cs.num_classes()), cfg, data)
}

fn tiny_det_run() -> (TrainConfig, Vec<DetSample>) {
    let data = gen_det_dataset(8, &DetGenConfig::default(), 4).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        warmup_epochs: 0,
        batch_size: 4,
        ..TrainConfig::detection()
    };
    (cfg, data)
}

fn loss_identities() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let a = Tensor::<f64>::from_fn(vec![2, 5, 4], |_| rng.gen_range(-8.0..8.0));
        let mut g = Graph::new();
        let (x, y) = (g.constant(a.clone()), g.constant(a));
        let d = dml_loss(&mut g, x, y).unwrap();
        ensure(g.value(d).item() == 0.0, "dml_loss(a, a) is not exactly 0")?;
    }
    for _ in 0..100 {
        let (n, t, c, dim) = (2, 6, 4, 3);
        let logits = Tensor::<f64>::from_fn(vec![n, t, c], |_| rng.gen_range(-3.0..3.0));
        let feats = Tensor::<f64>::from_fn(vec![n, t, dim], |_| rng.gen_range(-1.0..1.0));
        let labels: Vec<_> = (0..n).map(|_| random_label(&mut rng, t, c, 3)).collect();
        let bank = CenterBank::zeros(c, dim, 0.9).unwrap();
        let mut g = Graph::new();
        let x = g.param(logits.clone());
        let lp = ops::log_softmax(&mut g, x, 2).unwrap();
        let plain = ctc_loss(&mut g, lp, &labels).unwrap();
        let f = g.constant(feats);
        let head = g.constant(logits);
        let e = enhanced_ctc(&mut g, lp, &labels, f, head, &bank, 0.0).unwrap();
        let (p, q) = (g.value(plain).item(), g.value(e.total).item());
        ensure(p.to_bits() == q.to_bits(), format!("enhanced_ctc(λ=0) {q} != ctc_loss {p}"))?;
    }

    let (rc, cfg, data) = tiny_rec_run();
    let udml = train_udml(&rc, &cfg, &data, None).map_err(|e| e.to_string())?;
    let printed = MetricsLog::from_csv(&udml.log.to_csv().unwrap()).unwrap();
    let col = |log: &MetricsLog, name: &str| log.column(name).unwrap();
    let (tot, ctc, dml, feat) = (col(&printed, "total"), col(&printed, "ctc"), col(&printed, "dml"), col(&printed, "feat"));
    for i in 0..tot.len() {
        let sum = udml_total(ctc[i], dml[i], feat[i]);
        ensure(tot[i] == sum, format!("U-DML epoch {}: total {} vs components {sum}", i + 1, tot[i]))?;
    }

    let (dcfg, ddata) = tiny_det_run();
    let teacher = build_db_detector::<f32>(&DetectorConfig::new(DetectorPreset::Teacher), 5).unwrap();
    let cml = train_cml(&DetectorConfig::new(DetectorPreset::Student), &dcfg, &ddata, None, &teacher)
        .map_err(|e| e.to_string())?;
    let printed = MetricsLog::from_csv(&cml.log.to_csv().unwrap()).unwrap();
    let tot = col(&printed, "total");
    let (g1, g2, dml) = (col(&printed, "gt_s1"), col(&printed, "gt_s2"), col(&printed, "dml"));
    let (d1, d2) = (col(&printed, "distill_s1"), col(&printed, "distill_s2"));
    for i in 0..tot.len() {
        let sum = cml_total((g1[i], g2[i]), dml[i], (d1[i], d2[i]));
        ensure(tot[i] == sum, format!("CML epoch {}: total {} vs components {sum}", i + 1, tot[i]))?;
    }
    Ok("dml(a,a)=0 and enhanced_ctc(λ=0)≡ctc over 100 cases each; printed totals match their components".into())
}

fn dilation() -> Check {
    let hand = Tensor::<f64>::new(vec![2, 2], vec![0.0, 0.0, 0.0, 1.0]).unwrap();
    ensure(dilate2x2(&hand).data() == [1.0; 4], "[[0,0],[0,1]] does not dilate to all ones")?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let (h, w) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let a = Tensor::<f64>::from_fn(vec![h, w], |_| rng.gen_range(0.0..1.0));
        let b = Tensor::<f64>::from_fn(vec![h, w], |i| a.data()[i] + rng.gen_range(0.0..0.5));
        let (da, db) = (dilate2x2(&a), dilate2x2(&b));
        ensure(da.data().iter().zip(a.data()).all(|(o, i)| o >= i), "dilation is not extensive")?;
        ensure(da.data().iter().zip(db.data()).all(|(x, y)| x <= y), "dilation is not monotone")?;
    }
    Ok("hand case, extensivity and monotonicity over 1000 random maps".into())
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn udml_direction() -> Check {
    let cs = Charset::digits();
    let gen = RecGenConfig::default();
    let train = gen_rec_dataset(&cs, 2000, &gen, 1000).unwrap();
    let val = gen_rec_dataset(&cs, 200, &gen, 5000).unwrap();
    let rc = RecognizerConfig::new(gen.height, gen.width, cs.num_classes());
    let cfg = |seed| TrainConfig {
        epochs: 50,
        base_lr: 0.003,
        seed,
        ..TrainConfig::recognition()
    };
    let acc = |net: &ocrdistill::nn::Network<f32>| eval_recognizer(net, &val).unwrap().sentence_accuracy.unwrap();
    let start = Instant::now();
    let runs = per_seed(&SEEDS, |seed| {
        let mutual = train_udml(&rc, &cfg(seed), &train, None).unwrap();
        let alone = train_rec(&rc, &cfg(seed), &train, None).unwrap();
        (acc(&mutual.student), acc(&alone.net))
    });
    let mutual: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let alone: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let (mm, am) = (median(mutual.clone()), median(alone.clone()));
    let detail = format!(
        "U-DML student {mutual:?} (median {mm}), standalone {alone:?} (median {am}), {:.0} s",
        start.elapsed().as_secs_f64()
    );
    ensure(mm >= 0.95 && mm >= am, detail.clone())?;
    Ok(detail)
}

fn cml_direction() -> Check {
    let gen = DetGenConfig {
        size: 64,
        glyph_scale: 2,
        ..DetGenConfig::default()
    };
    let train = gen_det_dataset(500, &gen, 100).unwrap();
    let val = gen_det_dataset(300, &gen, 200).unwrap();
    let student = DetectorConfig::new(DetectorPreset::Student);
    let cfg = |seed| TrainConfig {
        epochs: 30,
        seed,
        ..TrainConfig::detection()
    };
    let start = Instant::now();
    let teacher_cfg = TrainConfig {
        epochs: 40,
        base_lr: 0.002,
        seed: 99,
        ..TrainConfig::detection()
    };
    let teacher = train_det(&DetectorConfig::new(DetectorPreset::Teacher), &teacher_cfg, &train, None, 0)
        .unwrap()
        .net;
    let before = teacher.params.clone();
    let post = DetPostprocess::default();
    let hmean = |net: &ocrdistill::nn::Network<f32>| eval_detector(net, &val, &post).unwrap().hmean.unwrap_or(0.0);
    let runs = per_seed(&SEEDS, |seed| {
        let cml = train_cml(&student, &cfg(seed), &train, None, &teacher).unwrap();
        let plain = train_det(&student, &cfg(seed), &train, None, 0).unwrap();
        (hmean(&cml.students[0]), hmean(&plain.net), cml.teacher_checksum)
    });
    ensure(teacher.params.bit_equal(&before), "teacher parameters changed")?;
    ensure(
        runs.iter().all(|r| r.2 == before.checksum()),
        "teacher checksum reported by a run differs",
    )?;
    let cml: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let plain: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let (cm, pm) = (median(cml.clone()), median(plain.clone()));
    let detail = format!(
        "teacher {:.3}, CML student {cml:.3?} (median {cm:.3}), plain {plain:.3?} (median {pm:.3}), {:.0} s",
        hmean(&teacher),
        start.elapsed().as_secs_f64()
    );
    ensure(cm >= pm, detail.clone())?;
    Ok(detail)
}

fn copy_paste_validator() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pool = gen_det_dataset(50, &DetGenConfig::default(), 70).unwrap();
    let donors: Vec<_> = pool.iter().flat_map(|s| s.instances.iter().cloned()).collect();
    let (mut offered, mut accepted) = (0, 0);
    for k in 0..500 {
        let base = gen_det_dataset(1, &DetGenConfig::default(), 1000 + k).unwrap().remove(0);
        let chosen: Vec<_> = (0..rng.gen_range(0..6)).map(|_| donors[rng.gen_range(0..donors.len())].clone()).collect();
        let cfg = CopyPasteConfig {
            max_attempts: rng.gen_range(1..30),
            max_rotation_deg: if k % 2 == 0 { 0.0 } else { 15.0 },
        };
        let (out, stats) = copy_paste(&base, &chosen, &mut rng, &cfg);
        ensure(stats.offered == chosen.len(), format!("#{k}: offered {} of {}", stats.offered, chosen.len()))?;
        ensure(stats.accepted + stats.skipped == stats.offered, format!("#{k}: accepted+skipped != offered"))?;
        ensure(
            out.instances.len() == base.instances.len() + stats.accepted,
            format!("#{k}: {} instances after {} accepted", out.instances.len(), stats.accepted),
        )?;
        ensure(out.instances[..base.instances.len()] == base.instances[..], format!("#{k}: base instances changed"))?;
        for i in 0..out.instances.len() {
            for j in i + 1..out.instances.len() {
                let overlap = polygons_overlap(&out.instances[i].polygon, &out.instances[j].polygon);
                ensure(!overlap, format!("#{k}: instances {i} and {j} overlap"))?;
            }
        }
        let pasted = &out.instances[base.instances.len()..];
        for y in 0..base.image.height() {
            for x in 0..base.image.width() {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                if !pasted.iter().any(|p| point_in_polygon(&p.polygon, cx, cy)) {
                    ensure(out.image.get(x, y) == base.image.get(x, y), format!("#{k}: pixel ({x},{y}) changed"))?;
                }
            }
        }
        offered += stats.offered;
        accepted += stats.accepted;
    }
    Ok(format!("500 augmentations, {accepted}/{offered} donors placed, no overlaps, untouched pixels equal"))
}

/// Reference PP-LCNet x1.0 layout: (kernel, channels, stride, se).
const LCNET: [(usize, usize, usize, bool); 13] = [
    (3, 32, 1, false),
    (3, 64, 2, false),
    (3, 64, 1, false),
    (3, 128, 2, false),
    (3, 128, 1, false),
    (3, 256, 2, false),
    (5, 256, 1, false),
    (5, 256, 1, false),
    (5, 256, 1, false),
    (5, 256, 1, false),
    (5, 256, 1, false),
    (5, 512, 2, true),
    (5, 512, 1, true),
];

fn lcnet_structure() -> Check {
    let (classes, in_ch) = (10, 3);
    let net = build_pplcnet::<f32>(1.0, in_ch, classes, 0).map_err(|e| e.to_string())?;
    let blocks = net.blocks();
    let ds: Vec<_> = blocks.iter().filter(|b| b.kind == BlockKind::DepthSepConv).collect();
    ensure(ds.len() == LCNET.len(), format!("{} depth-separable blocks", ds.len()))?;
    let first_se = ds.iter().position(|b| b.use_se).ok_or("no SE block")?;
    ensure(ds[first_se..].iter().all(|b| b.use_se), "SE blocks are not a contiguous tail")?;
    ensure(first_se >= ds.len() - 2, format!("SE starts at block {first_se}"))?;
    let first_5 = ds.iter().position(|b| b.kernel_size == 5).ok_or("no 5×5 block")?;
    ensure(ds[first_5..].iter().all(|b| b.kernel_size == 5), "5×5 kernels are not confined to the tail")?;
    ensure(blocks.iter().all(|b| b.kind == BlockKind::DepthSepConv || b.kernel_size != 5), "5×5 outside the tail")?;
    let kinds: Vec<_> = blocks.iter().map(|b| b.kind).collect();
    let gap = kinds.iter().position(|&k| k == BlockKind::Gap).ok_or("no GAP")?;
    ensure(kinds[gap + 1] == BlockKind::Conv1x1Wide, "GAP is not followed by the wide 1×1 conv")?;
    ensure(blocks[gap + 1].kernel_size == 1 && blocks[gap + 1].channels_out == 1280, "wide conv is not 1×1×1280")?;
    ensure(WIDE_CONV_CHANNELS == 1280, "wide conv constant")?;

    let mut g = Graph::new();
    let p = net.params.bind(&mut g);
    let x = g.constant(Tensor::<f32>::zeros(vec![1, in_ch, 32, 32]));
    let logits = net.forward_classifier(&mut g, &p, x).map_err(|e| e.to_string())?;
    ensure(g.shape(logits) == [1, classes], format!("logits {:?}", g.shape(logits)))?;

    let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
    let mut expect = conv(in_ch, 16, 3);
    let mut c = 16;
    for (k, cout, _, se) in LCNET {
        expect += conv(1, c, k);
        if se {
            let r = c / 4;
            expect += c * r + r + r * c + c;
        }
        expect += conv(c, cout, 1);
        c = cout;
    }
    expect += conv(c, 1280, 1) + 1280 * classes + classes;
    ensure(net.param_count() == expect, format!("{} parameters, closed form {expect}", net.param_count()))?;
    Ok(format!("SE on last {} blocks, 5×5 from block {first_5}, GAP→1×1×1280, {expect} parameters", ds.len() - first_se))
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bytes = |net: &ocrdistill::nn::Network<f32>| encode(&net.params).unwrap();
    let (rc, cfg, data) = tiny_rec_run();
    let runs: Vec<_> = (0..2).map(|_| train_rec(&rc, &cfg, &data, Some(&data)).unwrap()).collect();
    ensure(runs[0].log.to_csv().unwrap() == runs[1].log.to_csv().unwrap(), "recognizer metrics differ")?;
    ensure(bytes(&runs[0].net) == bytes(&runs[1].net), "recognizer checkpoints differ")?;
    let mutual: Vec<_> = (0..2).map(|_| train_udml(&rc, &cfg, &data, None).unwrap()).collect();
    ensure(mutual[0].log.to_csv().unwrap() == mutual[1].log.to_csv().unwrap(), "U-DML metrics differ")?;
    ensure(bytes(&mutual[0].student) == bytes(&mutual[1].student), "U-DML checkpoints differ")?;

    let (dcfg, ddata) = tiny_det_run();
    let student = DetectorConfig::new(DetectorPreset::Student);
    let dets: Vec<_> = (0..2).map(|_| train_det(&student, &dcfg, &ddata, Some(&ddata), 0).unwrap()).collect();
    ensure(dets[0].log.to_csv().unwrap() == dets[1].log.to_csv().unwrap(), "detector metrics differ")?;
    let teacher = build_db_detector::<f32>(&DetectorConfig::new(DetectorPreset::Teacher), 5).unwrap();
    let cmls: Vec<_> = (0..2).map(|_| train_cml(&student, &dcfg, &ddata, None, &teacher).unwrap()).collect();
    ensure(cmls[0].log.to_csv().unwrap() == cmls[1].log.to_csv().unwrap(), "CML metrics differ")?;
    for (i, run) in cmls.iter().enumerate() {
        let paths = [dir.path().join(format!("s{i}a")), dir.path().join(format!("s{i}b"))];
        save_checkpoint(&run.students[0], &paths[0]).unwrap();
        save_checkpoint(&run.students[1], &paths[1]).unwrap();
    }
    for name in ["a", "b"] {
        let a = std::fs::read(dir.path().join(format!("s0{name}"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("s1{name}"))).unwrap();
        ensure(a == b, "CML checkpoint files differ")?;
    }
    Ok("repeated train-rec, distill-udml, train-det and distill-cml runs are bitwise identical".into())
}

fn round_trips() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let det = build_db_detector::<f32>(&DetectorConfig::new(DetectorPreset::Student), 11).unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&det, &path).map_err(|e| e.to_string())?;
    let mut back = build_db_detector::<f32>(&DetectorConfig::new(DetectorPreset::Student), 12).unwrap();
    load_checkpoint(&mut back, &path).map_err(|e| e.to_string())?;
    ensure(back.params.bit_equal(&det.params), "checkpoint load is not bit-exact")?;
    let raw = encode(&det.params).unwrap();
    ensure(decode(&raw).unwrap().len() == det.params.len(), "decoded tensor count")?;

    let cs = Charset::digits();
    let rec = gen_rec_dataset(&cs, 50, &RecGenConfig::default(), 12).unwrap();
    save_rec_dataset(&dir.path().join("rec"), &cs, &rec).map_err(|e| e.to_string())?;
    let (cs2, rec2) = load_rec_dataset(&dir.path().join("rec")).map_err(|e| e.to_string())?;
    ensure(cs2 == cs && rec2 == rec, "recognition dataset changed on reload")?;

    let dets = gen_det_dataset(50, &DetGenConfig::default(), 13).unwrap();
    save_det_dataset(&dir.path().join("det"), &cs, &dets).map_err(|e| e.to_string())?;
    let dets2 = load_det_dataset(&dir.path().join("det")).map_err(|e| e.to_string())?;
    ensure(dets2 == dets, "detection dataset changed on reload")?;

    for sub in ["rec", "det"] {
        let file = dir.path().join(sub).join(ANNOTATIONS_FILE);
        let rows = read_annotations(&file).map_err(|e| e.to_string())?;
        let copy = dir.path().join(format!("{sub}.jsonl"));
        write_annotations(&copy, &rows).map_err(|e| e.to_string())?;
        ensure(read_annotations(&copy).unwrap() == rows, format!("{sub} annotations changed"))?;
        ensure(std::fs::read(&copy).unwrap() == std::fs::read(&file).unwrap(), format!("{sub} JSONL bytes changed"))?;
    }
    Ok("checkpoint bit-exact; 50+50 samples and their JSONL rows survive save/load".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("ctc oracle equivalence", ctc_oracle),
        ("gradient suite", gradient_suite),
        ("loss identities", loss_identities),
        ("dilation properties", dilation),
        ("u-dml direction", udml_direction),
        ("cml direction", cml_direction),
        ("copy-paste validator", copy_paste_validator),
        ("pp-lcnet structure", lcnet_structure),
        ("determinism", determinism),
        ("format round-trips", round_trips),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n:>2} {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
