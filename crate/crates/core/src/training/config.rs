//! Training configuration, presets and the flat `key = value` file format.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::wae::EnergyNorm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// CPU-sized defaults for 32x32 data.
    Desk,
    /// The published ImageNet hyperparameters.
    PaperImagenet,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper-imagenet" => Ok(Self::PaperImagenet),
            _ => Err(Error::Config(format!(
                "unknown preset `{s}` (expected desk|paper-imagenet)"
            ))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Desk => "desk",
            Self::PaperImagenet => "paper-imagenet",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    /// Divide by `lr_decay_factor` at each epoch listed in `lr_decay_epochs`.
    Fixed,
    /// Divide when evaluation error stops improving.
    Plateau,
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "plateau" => Ok(Self::Plateau),
            _ => Err(Error::Config(format!(
                "unknown lr_schedule `{s}` (expected fixed|plateau)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataSource {
    Cifar10,
    Mnist,
    Synthetic,
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar10" => Ok(Self::Cifar10),
            "mnist" => Ok(Self::Mnist),
            "synthetic" => Ok(Self::Synthetic),
            _ => Err(Error::Config(format!(
                "unknown dataset `{s}` (expected cifar10|mnist|synthetic)"
            ))),
        }
    }
}

impl DataSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cifar10 => "cifar10",
            Self::Mnist => "mnist",
            Self::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub preset: Preset,
    pub stage: u8,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_schedule: LrSchedule,
    /// Epochs without improvement before a plateau decay.
    pub plateau_patience: usize,
    /// Required improvement in error, in percentage points.
    pub plateau_min_delta: f64,
    pub plateau_max_decays: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub energy_norm: EnergyNorm,
    pub epochs: usize,
    pub seed: u64,
    pub augment: bool,
    /// Short side after resizing, before cropping.
    pub augment_base: usize,
    pub crop: usize,
    pub dataset: DataSource,
    pub data_dir: Option<PathBuf>,
    /// First `n` training images in file order; 0 keeps all.
    pub train_limit: usize,
    pub test_limit: usize,
    /// Channel count for MNIST (grey replicated) and synthetic data.
    pub channels: usize,
    pub classes: usize,
}

pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "stage",
    "lr",
    "lr_decay_factor",
    "lr_decay_epochs",
    "lr_schedule",
    "plateau_patience",
    "plateau_min_delta",
    "plateau_max_decays",
    "batch_size",
    "momentum",
    "weight_decay",
    "lambda",
    "gamma",
    "energy_norm",
    "epochs",
    "seed",
    "augment",
    "augment_base",
    "crop",
    "dataset",
    "data_dir",
    "train_limit",
    "test_limit",
    "channels",
    "classes",
];

impl TrainConfig {
    /// Defaults for `stage` under `preset`.
    pub fn preset(preset: Preset, stage: u8) -> Result<Self> {
        if !(1..=3).contains(&stage) {
            return Err(Error::Config(format!(
                "stage must be 1, 2 or 3, got {stage}"
            )));
        }
        let mut c = Self {
            preset,
            stage,
            lr: 0.0,
            lr_decay_factor: 10.0,
            lr_decay_epochs: Vec::new(),
            lr_schedule: LrSchedule::Fixed,
            plateau_patience: 3,
            plateau_min_delta: 0.1,
            plateau_max_decays: 2,
            batch_size: 0,
            momentum: 0.9,
            weight_decay: 0.0005,
            lambda: 1.0,
            gamma: 0.001,
            energy_norm: EnergyNorm::Mean,
            epochs: 0,
            seed: 0,
            augment: true,
            augment_base: 40,
            crop: 32,
            dataset: DataSource::Cifar10,
            data_dir: None,
            train_limit: 0,
            test_limit: 0,
            channels: 3,
            classes: 10,
        };
        match (preset, stage) {
            (Preset::Desk, 1) => {
                c.lr = 1e-4;
                c.batch_size = 4;
                c.epochs = 5;
                c.lr_decay_epochs = vec![10];
            }
            // paper rates at batch 256, scaled linearly to batch 64
            (Preset::Desk, 2) => {
                c.lr = 0.0025;
                c.batch_size = 64;
                c.epochs = 20;
                c.lr_schedule = LrSchedule::Plateau;
            }
            (Preset::Desk, _) => {
                c.lr = 2.5e-5;
                c.batch_size = 64;
                c.epochs = 5;
            }
            (Preset::PaperImagenet, s) => {
                c.augment_base = 256;
                c.crop = 224;
                c.classes = 1000;
                match s {
                    1 => {
                        c.lr = 1e-6;
                        c.batch_size = 4;
                        c.epochs = 20;
                        c.lr_decay_epochs = vec![10];
                    }
                    2 => {
                        c.lr = 0.01;
                        c.batch_size = 256;
                        c.epochs = 90;
                        c.lr_schedule = LrSchedule::Plateau;
                    }
                    _ => {
                        c.lr = 1e-4;
                        c.batch_size = 256;
                        c.epochs = 10;
                        c.lr_schedule = LrSchedule::Plateau;
                    }
                }
            }
        }
        Ok(c)
    }

    /// Parses `text`, applying a `preset` entry first (if any) and then every
    /// other entry in file order.
    pub fn from_text(text: &str, stage: u8) -> Result<Self> {
        Self::from_entries(&parse_entries(text)?, stage)
    }

    /// Builds from `(key, value)` pairs; the stage comes from the caller and
    /// a conflicting `stage` entry is rejected.
    pub fn from_entries(entries: &[(String, String)], stage: u8) -> Result<Self> {
        let preset = match entries.iter().rev().find(|(k, _)| k == "preset") {
            Some((_, v)) => v.parse()?,
            None => Preset::Desk,
        };
        let mut cfg = Self::preset(preset, stage)?;
        for (k, v) in entries.iter().filter(|(k, _)| k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |what: &str| Error::Config(format!("`{key}`: cannot parse `{v}` as {what}"));
        let real = || v.parse::<f64>().map_err(|_| bad("a number"));
        let count = || {
            v.parse::<usize>()
                .map_err(|_| bad("a non-negative integer"))
        };
        match key {
            "preset" => {
                let p: Preset = v.parse()?;
                if p != self.preset {
                    *self = Self::preset(p, self.stage)?;
                }
            }
            "stage" => {
                let s: u8 = v.parse().map_err(|_| bad("a stage number"))?;
                if s != self.stage {
                    return Err(Error::Config(format!(
                        "config says stage {s} but the command runs stage {}",
                        self.stage
                    )));
                }
            }
            "lr" => self.lr = real()?,
            "lr_decay_factor" => self.lr_decay_factor = real()?,
            "lr_decay_epochs" => {
                self.lr_decay_epochs = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<usize>()
                            .map_err(|_| bad("a comma-separated epoch list"))
                    })
                    .collect::<Result<_>>()?;
            }
            "lr_schedule" => self.lr_schedule = v.parse()?,
            "plateau_patience" => self.plateau_patience = count()?,
            "plateau_min_delta" => self.plateau_min_delta = real()?,
            "plateau_max_decays" => self.plateau_max_decays = count()?,
            "batch_size" => self.batch_size = count()?,
            "momentum" => self.momentum = real()?,
            "weight_decay" => self.weight_decay = real()?,
            "lambda" => self.lambda = real()?,
            "gamma" => self.gamma = real()?,
            "energy_norm" => self.energy_norm = v.parse().map_err(|_| bad("mean|sum"))?,
            "epochs" => self.epochs = count()?,
            "seed" => self.seed = v.parse().map_err(|_| bad("an unsigned integer"))?,
            "augment" => self.augment = v.parse().map_err(|_| bad("true|false"))?,
            "augment_base" => self.augment_base = count()?,
            "crop" => self.crop = count()?,
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "train_limit" => self.train_limit = count()?,
            "test_limit" => self.test_limit = count()?,
            "channels" => self.channels = count()?,
            "classes" => self.classes = count()?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    // negated comparisons reject NaN too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.lr_decay_factor >= 1.0) {
            return fail(format!(
                "lr_decay_factor must be >= 1, got {}",
                self.lr_decay_factor
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("plateau_min_delta", self.plateau_min_delta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.crop == 0 || !self.crop.is_multiple_of(8) {
            return fail(format!(
                "crop must be a positive multiple of 8, got {}",
                self.crop
            ));
        }
        if self.augment_base < self.crop {
            return fail(format!(
                "augment_base {} is smaller than crop {}",
                self.augment_base, self.crop
            ));
        }
        if self.channels == 0 || self.classes < 2 {
            return fail("channels must be >= 1 and classes >= 2".into());
        }
        Ok(())
    }

    /// Canonical text form; every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let epochs: Vec<String> = self.lr_decay_epochs.iter().map(|e| e.to_string()).collect();
        let schedule = match self.lr_schedule {
            LrSchedule::Fixed => "fixed",
            LrSchedule::Plateau => "plateau",
        };
        let data_dir = self
            .data_dir
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_default();
        let rows: [(&str, String); 26] = [
            ("preset", self.preset.name().into()),
            ("stage", self.stage.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_decay_factor", self.lr_decay_factor.to_string()),
            ("lr_decay_epochs", epochs.join(",")),
            ("lr_schedule", schedule.into()),
            ("plateau_patience", self.plateau_patience.to_string()),
            ("plateau_min_delta", self.plateau_min_delta.to_string()),
            ("plateau_max_decays", self.plateau_max_decays.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("lambda", self.lambda.to_string()),
            ("gamma", self.gamma.to_string()),
            ("energy_norm", self.energy_norm.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("augment", self.augment.to_string()),
            ("augment_base", self.augment_base.to_string()),
            ("crop", self.crop.to_string()),
            ("dataset", self.dataset.name().into()),
            ("data_dir", data_dir),
            ("train_limit", self.train_limit.to_string()),
            ("test_limit", self.test_limit.to_string()),
            ("channels", self.channels.to_string()),
            ("classes", self.classes.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of [`TrainConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Learning rate after `decays` decays: `lr / factor^decays`.
    pub fn lr_after(&self, decays: usize) -> f64 {
        self.lr / self.lr_decay_factor.powi(decays as i32)
    }

    /// Decays scheduled at or before 0-based `epoch` under the fixed schedule.
    pub fn fixed_decays_at(&self, epoch: usize) -> usize {
        self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count()
    }
}

/// Splits config text into `(key, value)` pairs. `#` starts a comment.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if !CONFIG_KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `KEY=VALUE` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not KEY=VALUE")))?;
    let k = k.trim();
    if !CONFIG_KEYS.contains(&k) {
        return Err(Error::Config(format!("unknown key `{k}`")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_matches_published_values() {
        let s1 = TrainConfig::preset(Preset::PaperImagenet, 1).unwrap();
        assert_eq!((s1.lr, s1.batch_size), (1e-6, 4));
        let s2 = TrainConfig::preset(Preset::PaperImagenet, 2).unwrap();
        assert_eq!((s2.lr, s2.batch_size), (0.01, 256));
        let s3 = TrainConfig::preset(Preset::PaperImagenet, 3).unwrap();
        assert_eq!(s3.lr, 1e-4);
        for c in [s1, s2, s3] {
            assert_eq!(
                (c.momentum, c.weight_decay, c.gamma, c.lambda),
                (0.9, 0.0005, 0.001, 1.0)
            );
        }
    }

    #[test]
    fn desk_defaults() {
        let c = TrainConfig::preset(Preset::Desk, 2).unwrap();
        assert_eq!(
            (c.lr, c.batch_size, c.lr_schedule),
            (0.0025, 64, LrSchedule::Plateau)
        );
        assert_eq!(TrainConfig::preset(Preset::Desk, 1).unwrap().lr, 1e-4);
        assert_eq!(TrainConfig::preset(Preset::Desk, 3).unwrap().lr, 2.5e-5);
    }

    #[test]
    fn parses_comments_and_overrides() {
        let text = "# stage-1 run\nlr = 0.001  # faster\n\nepochs=3\nlr_decay_epochs = 1, 2\n";
        let c = TrainConfig::from_text(text, 1).unwrap();
        assert_eq!((c.lr, c.epochs), (0.001, 3));
        assert_eq!(c.lr_decay_epochs, vec![1, 2]);
    }

    #[test]
    fn preset_entry_applies_before_others_regardless_of_order() {
        let c = TrainConfig::from_text("batch_size = 8\npreset = paper-imagenet\n", 2).unwrap();
        assert_eq!((c.batch_size, c.lr, c.crop), (8, 0.01, 224));
    }

    #[test]
    fn unknown_key_and_bad_values_rejected() {
        assert!(matches!(
            TrainConfig::from_text("lrr = 1", 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            TrainConfig::from_text("lr = fast", 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            TrainConfig::from_text("lr = 0", 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            TrainConfig::from_text("stage = 2", 1),
            Err(Error::Config(_))
        ));
        assert!(parse_override("nope=1").is_err());
    }

    #[test]
    fn text_round_trip_and_hash() {
        let mut c = TrainConfig::preset(Preset::Desk, 3).unwrap();
        c.seed = 42;
        c.lr_decay_epochs = vec![2, 4];
        let back = TrainConfig::from_text(&c.to_text(), 3).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        c.seed = 43;
        assert_ne!(back.hash(), c.hash());
    }

    #[test]
    fn lr_after_decays_is_exact() {
        let mut c = TrainConfig::preset(Preset::Desk, 1).unwrap();
        c.lr = 0.1;
        c.lr_decay_epochs = vec![2, 5];
        assert_eq!(c.lr_after(2), 0.1 / 100.0);
        assert_eq!(
            (0..7).map(|e| c.fixed_decays_at(e)).collect::<Vec<_>>(),
            vec![0, 0, 1, 1, 1, 2, 2]
        );
    }
}
