use std::process::ExitCode;

use anyhow::{Context, Result};
use ocrdistill::datakit::{
    copy_paste, gen_det_dataset, gen_rec_dataset, load_charset, load_det_dataset, save_det_dataset, save_rec_dataset,
    read_annotations, Annotation, Charset, CopyPasteConfig, DetGenConfig, PasteStats, RecGenConfig, TextInstance,
    ANNOTATIONS_FILE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::rundir::{print_json, usage, with_out_dir};
use crate::{AugmentArgs, GenDataArgs, Kind};

pub fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let count = a.count as usize;
    with_out_dir(&a.out, |dir| {
        let charset = Charset::digits();
        match a.kind {
            Kind::Rec => {
                let mut cfg = RecGenConfig::default();
                if let Some(n) = a.noise {
                    cfg.noise_level = n;
                }
                let samples = gen_rec_dataset(&charset, count, &cfg, a.seed)?;
                save_rec_dataset(dir, &charset, &samples)?;
            }
            Kind::Det => {
                let mut cfg = DetGenConfig {
                    size: a.size,
                    glyph_scale: a.glyph_scale as usize,
                    ..DetGenConfig::default()
                };
                if let Some(n) = a.noise {
                    cfg.noise_level = n;
                }
                let samples = gen_det_dataset(count, &cfg, a.seed)?;
                save_det_dataset(dir, &charset, &samples)?;
            }
        }
        log::info!("wrote {count} samples to {}", dir.display());
        print_json(json!({
            "kind": if a.kind == Kind::Rec { "rec" } else { "det" },
            "count": count,
            "out": dir.display().to_string(),
        }));
        Ok(ExitCode::SUCCESS)
    })
}

/// Pastes `--donors` instances drawn from the other images of the dataset
/// into every image.
pub fn augment(a: AugmentArgs) -> Result<ExitCode> {
    let rows = read_annotations(&a.data.join(ANNOTATIONS_FILE))
        .with_context(|| format!("reading dataset {}", a.data.display()))?;
    if rows.iter().any(|r| matches!(r, Annotation::Rec(_))) {
        return Err(usage("augment works on detection datasets only; got a recognition dataset"));
    }
    let charset = load_charset(&a.data)?;
    let samples = load_det_dataset(&a.data)?;
    let pool: Vec<(usize, &TextInstance)> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.instances.iter().map(move |t| (i, t)))
        .collect();
    let cfg = CopyPasteConfig {
        max_attempts: a.max_attempts,
        ..CopyPasteConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut total = PasteStats::default();
    let mut out = Vec::with_capacity(samples.len());
    for (i, base) in samples.iter().enumerate() {
        let candidates: Vec<&TextInstance> = pool.iter().filter(|(j, _)| *j != i).map(|(_, t)| *t).collect();
        let donors: Vec<TextInstance> = if candidates.is_empty() {
            Vec::new()
        } else {
            (0..a.donors)
                .map(|_| candidates[rng.gen_range(0..candidates.len())].clone())
                .collect()
        };
        let (sample, stats) = copy_paste(base, &donors, &mut rng, &cfg);
        total.offered += stats.offered;
        total.accepted += stats.accepted;
        total.skipped += stats.skipped;
        out.push(sample);
    }
    with_out_dir(&a.out, |dir| {
        save_det_dataset(dir, &charset, &out)?;
        log::info!("augmented {} images into {}", out.len(), dir.display());
        print_json(json!({
            "images": out.len(),
            "offered": total.offered,
            "accepted": total.accepted,
            "skipped": total.skipped,
        }));
        Ok(ExitCode::SUCCESS)
    })
}
