use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use ocrdistill::distill::TrainConfig;

use crate::{OutArgs, RunArgs};

pub const FAILED_MARKER: &str = "FAILED";
pub const CONFIG_FILE: &str = "config.txt";
pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.csv";

/// Invalid input detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Creates the output directory, refusing to reuse a non-empty one unless
/// `overwrite` is set, then runs `body`. If `body` fails, a `FAILED` file
/// holding the error is left in the directory.
pub fn with_out_dir<T>(out: &OutArgs, body: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let dir = &out.out;
    if dir.exists() {
        let non_empty = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if non_empty && !out.overwrite {
            return Err(usage(format!(
                "output directory {} is not empty; pass --overwrite to replace it",
                dir.display()
            )));
        }
        if non_empty {
            fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    body(dir).inspect_err(|e| {
        let _ = fs::write(dir.join(FAILED_MARKER), format!("{e:#}\n"));
    })
}

/// Training config from the task preset, then the `--config` file, then
/// command-line overrides.
pub fn resolve_config(mut cfg: TrainConfig, run: &RunArgs) -> Result<TrainConfig> {
    if let Some(path) = &run.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
    }
    for kv in &run.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the resolved config and the remaining run inputs so the run can be
/// replayed.
pub fn write_snapshot(dir: &Path, cfg: &TrainConfig, run: serde_json::Value) -> Result<()> {
    fs::write(dir.join(CONFIG_FILE), cfg.to_text())?;
    fs::write(dir.join(RUN_FILE), format!("{}\n", serde_json::to_string_pretty(&run)?))?;
    Ok(())
}

pub fn print_json(value: serde_json::Value) {
    println!("{value}");
}
