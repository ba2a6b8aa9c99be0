//! Training loops: standalone recognition and detection, two-network
//! mutual learning for recognition, and frozen-teacher two-student
//! detection.

mod det;
mod metrics;
mod optim;
mod rec;

use std::fmt;
use std::str::FromStr;

pub use crate::nn::checkpoint::{load_checkpoint, save_checkpoint};
pub use det::{eval_detector, predict_prob_maps, train_cml, train_det, CmlRun, DetRun};
pub use metrics::MetricsLog;
pub use optim::Adam;
pub use rec::{eval_recognizer, train_rec, train_udml, RecRun, UdmlRun};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Cosine,
    Piecewise,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::Cosine => "cosine",
            Schedule::Piecewise => "piecewise",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Schedule::Cosine),
            "piecewise" => Ok(Schedule::Piecewise),
            other => Err(Error::invalid(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Optimisation and loss-weight settings shared by every training loop.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub schedule: Schedule,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Piecewise decay happens at this fraction of the epochs.
    pub decay_at: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub dml_weight: f64,
    pub feat_weight: f64,
    pub distill_weight: f64,
    pub enhanced_ctc: bool,
    pub center_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.001,
            schedule: Schedule::Piecewise,
            warmup_epochs: 1,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            decay_at: 0.875,
            alpha: 5.0,
            beta: 10.0,
            gamma: 5.0,
            lambda: 0.05,
            dml_weight: 1.0,
            feat_weight: 1.0,
            distill_weight: 1.0,
            enhanced_ctc: false,
            center_momentum: 0.1,
        }
    }
}

const KEYS: &[&str] = &[
    "base_lr",
    "schedule",
    "warmup_epochs",
    "epochs",
    "batch_size",
    "seed",
    "decay_at",
    "alpha",
    "beta",
    "gamma",
    "lambda",
    "dml_weight",
    "feat_weight",
    "distill_weight",
    "enhanced_ctc",
    "center_momentum",
    "optimizer",
];

impl TrainConfig {
    /// Recognition defaults: piecewise decay.
    pub fn recognition() -> Self {
        TrainConfig::default()
    }

    /// Detection defaults: cosine decay.
    pub fn detection() -> Self {
        TrainConfig {
            schedule: Schedule::Cosine,
            batch_size: 16,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return bad(format!("need epochs >= 1 and warmup_epochs < epochs, got {} / {}", self.epochs, self.warmup_epochs));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.decay_at > 0.0 && self.decay_at <= 1.0) {
            return bad(format!("decay_at must lie in (0, 1], got {}", self.decay_at));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return bad("alpha and beta must be positive".into());
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("dml_weight", self.dml_weight),
            ("feat_weight", self.feat_weight),
            ("distill_weight", self.distill_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.center_momentum) {
            return bad(format!("center_momentum must lie in [0, 1), got {}", self.center_momentum));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::invalid(format!("bad value `{v}` for {key}")))
        }
        match key {
            "base_lr" => self.base_lr = num(key, value)?,
            "schedule" => self.schedule = value.parse()?,
            "warmup_epochs" => self.warmup_epochs = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "decay_at" => self.decay_at = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "dml_weight" => self.dml_weight = num(key, value)?,
            "feat_weight" => self.feat_weight = num(key, value)?,
            "distill_weight" => self.distill_weight = num(key, value)?,
            "enhanced_ctc" => self.enhanced_ctc = num(key, value)?,
            "center_momentum" => self.center_momentum = num(key, value)?,
            "optimizer" if value == "adam" => {}
            "optimizer" => return Err(Error::invalid(format!("unsupported optimizer `{value}`"))),
            other => return Err(Error::invalid(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Overlays a `key=value` text onto `self`. Blank lines and `#` comments
    /// are ignored; errors carry the 1-based line number.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
            self.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key, one per line, in a form [`TrainConfig::parse`] reads back
    /// exactly.
    pub fn to_text(&self) -> String {
        let values = [
            self.base_lr.to_string(),
            self.schedule.to_string(),
            self.warmup_epochs.to_string(),
            self.epochs.to_string(),
            self.batch_size.to_string(),
            self.seed.to_string(),
            self.decay_at.to_string(),
            self.alpha.to_string(),
            self.beta.to_string(),
            self.gamma.to_string(),
            self.lambda.to_string(),
            self.dml_weight.to_string(),
            self.feat_weight.to_string(),
            self.distill_weight.to_string(),
            self.enhanced_ctc.to_string(),
            self.center_momentum.to_string(),
            "adam".to_string(),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Seed for the `slot`-th network of a run.
    pub fn net_seed(&self, slot: u64) -> u64 {
        mix(self.seed, slot)
    }

    /// Seed for batch shuffling.
    pub fn shuffle_seed(&self) -> u64 {
        mix(self.seed, 0x5348_5546)
    }

    /// Epoch at which the piecewise schedule drops by 10×.
    pub fn decay_epoch(&self) -> usize {
        ((self.epochs as f64) * self.decay_at).floor() as usize
    }
}

/// SplitMix64 finaliser over `seed + slot`.
fn mix(seed: u64, slot: u64) -> u64 {
    let mut z = seed.wrapping_add(slot.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Learning rate at optimizer step `step`: linear warm-up from 0 over the
/// warm-up epochs, then cosine decay to 0 or a single 10× piecewise drop.
pub fn lr_at(cfg: &TrainConfig, step: usize, steps_per_epoch: usize) -> f64 {
    let spe = steps_per_epoch.max(1);
    let warm = cfg.warmup_epochs * spe;
    if step < warm {
        return cfg.base_lr * step as f64 / warm as f64;
    }
    match cfg.schedule {
        Schedule::Cosine => {
            let span = (cfg.epochs * spe).saturating_sub(warm).max(1);
            let progress = ((step - warm) as f64 / span as f64).min(1.0);
            cfg.base_lr * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0
        }
        Schedule::Piecewise => {
            if step / spe < cfg.decay_epoch() {
                cfg.base_lr
            } else {
                cfg.base_lr / 10.0
            }
        }
    }
}

fn scalar(g: &crate::tensor::Graph<f32>, v: crate::tensor::Var) -> f64 {
    f64::from(g.value(v).item())
}

/// Running per-epoch means of a fixed set of loss components.
struct EpochMeans {
    sums: Vec<f64>,
    count: usize,
}

impl EpochMeans {
    fn new(n: usize) -> Self {
        EpochMeans { sums: vec![0.0; n], count: 0 }
    }

    fn add(&mut self, values: &[f64]) {
        self.sums.iter_mut().zip(values).for_each(|(s, v)| *s += v);
        self.count += 1;
    }

    fn finish(self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.sums.into_iter().map(|s| s / n).collect()
    }
}

/// Epoch order of sample indices for a given shuffle stream.
pub(crate) fn epoch_order(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
