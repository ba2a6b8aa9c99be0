use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use ocrdistill::datakit::{load_det_dataset, load_rec_dataset, Charset, DetSample, RecSample};
use ocrdistill::distill::{self, load_checkpoint, save_checkpoint, MetricsLog, TrainConfig};
use ocrdistill::evalkit::DetPostprocess;
use ocrdistill::nn::{build_crnn_recognizer, build_db_detector, DetectorConfig, DetectorPreset, Network, RecognizerConfig};
use serde_json::json;

use crate::rundir::{print_json, resolve_config, usage, with_out_dir, write_snapshot, METRICS_FILE};
use crate::{CmlArgs, EvalDetArgs, EvalRecArgs, RunArgs, TrainDetArgs, TrainRecArgs, UdmlArgs};

fn rec_data(run: &RunArgs) -> Result<(Charset, Vec<RecSample>, Option<Vec<RecSample>>)> {
    let (charset, train) =
        load_rec_dataset(&run.data).with_context(|| format!("loading {}", run.data.display()))?;
    let val = match &run.val {
        Some(p) => {
            let (vc, v) = load_rec_dataset(p).with_context(|| format!("loading {}", p.display()))?;
            if vc != charset {
                return Err(usage("validation charset differs from the training charset"));
            }
            Some(v)
        }
        None => None,
    };
    Ok((charset, train, val))
}

fn det_data(run: &RunArgs) -> Result<(Vec<DetSample>, Option<Vec<DetSample>>)> {
    let train = load_det_dataset(&run.data).with_context(|| format!("loading {}", run.data.display()))?;
    let val = match &run.val {
        Some(p) => Some(load_det_dataset(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    Ok((train, val))
}

/// Recognizer geometry for a dataset: input size from its images, classes
/// from its charset.
fn rec_config(charset: &Charset, samples: &[RecSample]) -> Result<RecognizerConfig> {
    let first = samples.first().ok_or_else(|| usage("dataset has no samples"))?;
    Ok(RecognizerConfig::new(first.image.height(), first.image.width(), charset.num_classes()))
}

fn finish(dir: &Path, log: &MetricsLog, nets: &[(&str, &Network<f32>)], summary: serde_json::Value) -> Result<ExitCode> {
    log.write(&dir.join(METRICS_FILE))?;
    for (name, net) in nets {
        save_checkpoint(net, dir.join(name))?;
    }
    print_json(summary);
    Ok(ExitCode::SUCCESS)
}

fn last_row(log: &MetricsLog) -> serde_json::Value {
    let row = log.rows().last().map(|(_, v)| v.clone()).unwrap_or_default();
    let fields: serde_json::Map<_, _> = log
        .columns()
        .iter()
        .zip(row)
        .map(|(c, v)| (c.clone(), json!(if v.is_finite() { Some(v) } else { None })))
        .collect();
    serde_json::Value::Object(fields)
}

pub fn train_rec(a: TrainRecArgs) -> Result<ExitCode> {
    let mut cfg = resolve_config(TrainConfig::recognition(), &a.run)?;
    cfg.enhanced_ctc |= a.enhanced_ctc;
    let (charset, train, val) = rec_data(&a.run)?;
    let rc = rec_config(&charset, &train)?;
    with_out_dir(&a.run.out, |dir| {
        write_snapshot(dir, &cfg, json!({"command": "train-rec", "data": a.run.data, "val": a.run.val}))?;
        let run = distill::train_rec(&rc, &cfg, &train, val.as_deref())?;
        let summary = json!({"command": "train-rec", "epochs": cfg.epochs, "final": last_row(&run.log)});
        finish(dir, &run.log, &[("model.ckpt", &run.net)], summary)
    })
}

pub fn train_det(a: TrainDetArgs) -> Result<ExitCode> {
    let cfg = resolve_config(TrainConfig::detection(), &a.run)?;
    let (train, val) = det_data(&a.run)?;
    let preset: DetectorPreset = a.preset.into();
    with_out_dir(&a.run.out, |dir| {
        write_snapshot(
            dir,
            &cfg,
            json!({"command": "train-det", "data": a.run.data, "val": a.run.val, "preset": preset.to_string()}),
        )?;
        let run = distill::train_det(&DetectorConfig::new(preset), &cfg, &train, val.as_deref(), 0)?;
        let summary = json!({"command": "train-det", "epochs": cfg.epochs, "final": last_row(&run.log)});
        finish(dir, &run.log, &[("model.ckpt", &run.net)], summary)
    })
}

pub fn distill_udml(a: UdmlArgs) -> Result<ExitCode> {
    let mut cfg = resolve_config(TrainConfig::recognition(), &a.run)?;
    if a.no_feat_loss {
        cfg.feat_weight = 0.0;
    }
    if a.no_dml_loss {
        cfg.dml_weight = 0.0;
    }
    let (charset, train, val) = rec_data(&a.run)?;
    let rc = rec_config(&charset, &train)?;
    with_out_dir(&a.run.out, |dir| {
        write_snapshot(dir, &cfg, json!({"command": "distill-udml", "data": a.run.data, "val": a.run.val}))?;
        let run = distill::train_udml(&rc, &cfg, &train, val.as_deref())?;
        let summary = json!({"command": "distill-udml", "epochs": cfg.epochs, "final": last_row(&run.log)});
        finish(
            dir,
            &run.log,
            &[("student.ckpt", &run.student), ("teacher.ckpt", &run.teacher)],
            summary,
        )
    })
}

pub fn distill_cml(a: CmlArgs) -> Result<ExitCode> {
    let mut cfg = resolve_config(TrainConfig::detection(), &a.run)?;
    if a.no_dml_loss {
        cfg.dml_weight = 0.0;
    }
    if a.no_distill_loss {
        cfg.distill_weight = 0.0;
    }
    if !a.teacher_ckpt.is_file() {
        return Err(usage(format!("teacher checkpoint {} does not exist", a.teacher_ckpt.display())));
    }
    let mut teacher = build_db_detector::<f32>(&DetectorConfig::new(DetectorPreset::Teacher), 0)?;
    load_checkpoint(&mut teacher, &a.teacher_ckpt)
        .with_context(|| format!("loading teacher {}", a.teacher_ckpt.display()))?;
    let (train, val) = det_data(&a.run)?;
    with_out_dir(&a.run.out, |dir| {
        write_snapshot(
            dir,
            &cfg,
            json!({"command": "distill-cml", "data": a.run.data, "val": a.run.val, "teacher_ckpt": a.teacher_ckpt}),
        )?;
        let run = distill::train_cml(
            &DetectorConfig::new(DetectorPreset::Student),
            &cfg,
            &train,
            val.as_deref(),
            &teacher,
        )?;
        let summary = json!({
            "command": "distill-cml",
            "epochs": cfg.epochs,
            "teacher_checksum": format!("{:016x}", run.teacher_checksum),
            "final": last_row(&run.log),
        });
        let [s1, s2] = &run.students;
        finish(dir, &run.log, &[("student1.ckpt", s1), ("student2.ckpt", s2)], summary)
    })
}

pub fn eval_rec(a: EvalRecArgs) -> Result<ExitCode> {
    let (charset, data) = load_rec_dataset(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let mut net = build_crnn_recognizer::<f32>(&rec_config(&charset, &data)?, 0)?;
    load_checkpoint(&mut net, &a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let report = distill::eval_recognizer(&net, &data)?;
    println!("{}", report.to_json_line());
    Ok(ExitCode::SUCCESS)
}

pub fn eval_det(a: EvalDetArgs) -> Result<ExitCode> {
    let data = load_det_dataset(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let mut net = build_db_detector::<f32>(&DetectorConfig::new(a.preset.into()), 0)?;
    load_checkpoint(&mut net, &a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let post = DetPostprocess {
        bin_thresh: a.bin_thresh,
        min_area: a.min_area,
        iou_thresh: a.iou_thresh,
    };
    let report = distill::eval_detector(&net, &data, &post)?;
    println!("{}", report.to_json_line());
    Ok(ExitCode::SUCCESS)
}
