//! Line-based `key=value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. A `profile` line
//! (`full` or `desk`) selects the base values wherever it appears; every
//! other key overrides one field. [`ExperimentConfig::to_text`] writes the
//! canonical form that the config hash is computed over.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::ccn::CcnSpec;
use crate::error::{AmcError, Result};
use crate::features::GridSpec;
use crate::modem::{FadingDistribution, ModulationScheme};
use crate::neuralnet::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    Polar,
    Iq,
    Cumulants,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 3] = [FeatureMode::Polar, FeatureMode::Iq, FeatureMode::Cumulants];

    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Polar => "polar",
            FeatureMode::Iq => "iq",
            FeatureMode::Cumulants => "cumulants",
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMode {
    type Err = AmcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "polar" => Ok(FeatureMode::Polar),
            "iq" => Ok(FeatureMode::Iq),
            "cumulants" | "hoc" => Ok(FeatureMode::Cumulants),
            other => Err(AmcError::Config(format!("unknown feature mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub schemes: Vec<ModulationScheme>,
    /// Symbols per frame (L).
    pub frame_len: usize,
    /// Frames per scheme per SNR.
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub snrs_db: Vec<f64>,
    pub mode: FeatureMode,
    pub fading: bool,
    pub fading_dist: FadingDistribution,
    pub seed: u64,
    pub polar_bins: usize,
    pub r_max: f64,
    pub iq_bins: usize,
    /// Share of the training frames held out for validation.
    pub val_fraction: f64,
    pub train: TrainConfig,
    pub ccn: CcnSpec,
    /// Leading joint epochs that update only the compensator.
    pub ccn_only_epochs: usize,
    /// Compensator learning rate relative to `lr`.
    pub ccn_lr_scale: f64,
    /// Classifier checkpoint to warm-start the CCN pipeline from.
    pub ccn_init: Option<PathBuf>,
    pub hoc_phase_invariant: bool,
}

impl Default for ExperimentConfig {
    /// Full-size protocol: 5000 training and 1000 test frames per scheme and
    /// SNR.
    fn default() -> Self {
        ExperimentConfig {
            schemes: ModulationScheme::ALL.to_vec(),
            frame_len: 1000,
            train_per_class: 5000,
            test_per_class: 1000,
            snrs_db: vec![-4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            mode: FeatureMode::Polar,
            fading: false,
            fading_dist: FadingDistribution::default(),
            seed: 2019,
            polar_bins: 36,
            r_max: 3.0,
            iq_bins: 64,
            val_fraction: 0.1,
            train: TrainConfig::default(),
            ccn: CcnSpec::default(),
            ccn_only_epochs: 0,
            ccn_lr_scale: 0.1,
            ccn_init: None,
            hoc_phase_invariant: false,
        }
    }
}

impl ExperimentConfig {
    pub fn full() -> Self {
        Self::default()
    }

    /// Desk-scale profile: 500 training and 200 test frames per scheme and
    /// SNR.
    pub fn desk() -> Self {
        ExperimentConfig {
            train_per_class: 500,
            test_per_class: 200,
            ..Self::default()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name.trim() {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(AmcError::Config(format!("unknown profile '{other}' (expected full or desk)"))),
        }
    }

    pub fn polar_grid(&self) -> GridSpec {
        GridSpec::polar(self.r_max, self.polar_bins)
    }

    pub fn iq_grid(&self) -> GridSpec {
        GridSpec::iq(self.iq_bins)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AmcError::Config(m));
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        let mut seen = self.schemes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return bad("schemes must not repeat".into());
        }
        if self.frame_len == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("frame_len, train_per_class and test_per_class must be >= 1".into());
        }
        if self.snrs_db.is_empty() || self.snrs_db.iter().any(|s| !s.is_finite()) {
            return bad("snrs must be a non-empty list of finite values".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if self.polar_bins == 0 || self.iq_bins == 0 || !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return bad("grid bins must be >= 1 and r_max > 0".into());
        }
        if !(self.ccn_lr_scale > 0.0 && self.ccn_lr_scale.is_finite()) {
            return bad(format!("ccn_lr_scale must be > 0, got {}", self.ccn_lr_scale));
        }
        self.fading_dist.validate().map_err(|e| AmcError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| AmcError::Config(e.to_string()))?;
        self.ccn.validate().map_err(|e| AmcError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AmcError::Config(format!("line {}: expected key=value, got '{line}'", i + 1)))?;
            pairs.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = match pairs.iter().rev().find(|p| p.1 == "profile") {
            Some((_, _, v)) => Self::profile(v)?,
            None => Self::default(),
        };
        for (line, k, v) in &pairs {
            if k != "profile" {
                cfg.set(k, v).map_err(|e| AmcError::Config(format!("line {line}: {e}")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AmcError::io(path, e))?;
        Self::from_text(&text)
    }

    /// Overrides one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| AmcError::Config(format!("{key}: cannot parse '{v}'")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v.to_ascii_lowercase().as_str() {
                "on" | "true" | "yes" | "1" => Ok(true),
                "off" | "false" | "no" | "0" => Ok(false),
                _ => Err(AmcError::Config(format!("{key}: expected on/off, got '{v}'"))),
            }
        }
        match key {
            "schemes" => {
                self.schemes = value
                    .split(',')
                    .map(|s| s.parse::<ModulationScheme>().map_err(|e| AmcError::Config(e.to_string())))
                    .collect::<Result<_>>()?
            }
            "frame_len" => self.frame_len = num(key, value)?,
            "train_per_class" => self.train_per_class = num(key, value)?,
            "test_per_class" => self.test_per_class = num(key, value)?,
            "snrs" => {
                self.snrs_db = value
                    .split(',')
                    .map(|s| num::<f64>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "mode" => self.mode = value.parse()?,
            "fading" => self.fading = flag(key, value)?,
            "a_min" => self.fading_dist.a_min = num(key, value)?,
            "a_max" => self.fading_dist.a_max = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "polar_bins" => self.polar_bins = num(key, value)?,
            "r_max" => self.r_max = num(key, value)?,
            "iq_bins" => self.iq_bins = num(key, value)?,
            "val_fraction" => self.val_fraction = num(key, value)?,
            "lr" => self.train.lr = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "threshold" => self.train.threshold = num(key, value)?,
            "optimizer" => {
                self.train.optimizer = match value.to_ascii_lowercase().as_str() {
                    "adam" => OptimizerKind::adam(),
                    "sgd" => OptimizerKind::Sgd,
                    other => return Err(AmcError::Config(format!("optimizer: unknown '{other}'"))),
                }
            }
            "ccn_bins" => self.ccn.input_bins = num(key, value)?,
            "ccn_r_max" => self.ccn.r_max = num(key, value)?,
            "ccn_widths" => {
                let w: Vec<usize> = value.split(',').map(|s| num(key, s.trim())).collect::<Result<_>>()?;
                self.ccn.widths = w
                    .try_into()
                    .map_err(|_| AmcError::Config("ccn_widths needs exactly four values".into()))?;
            }
            "ccn_only_epochs" => self.ccn_only_epochs = num(key, value)?,
            "ccn_lr_scale" => self.ccn_lr_scale = num(key, value)?,
            "ccn_init" => {
                self.ccn_init = match value {
                    "" | "scratch" => None,
                    p => Some(PathBuf::from(p)),
                }
            }
            "hoc_phase_invariant" => self.hoc_phase_invariant = flag(key, value)?,
            other => return Err(AmcError::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Canonical text: every key, fixed order, shortest round-trip floats.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("schemes", join(self.schemes.iter().map(|s| s.name().to_string()).collect()));
        kv("frame_len", self.frame_len.to_string());
        kv("train_per_class", self.train_per_class.to_string());
        kv("test_per_class", self.test_per_class.to_string());
        kv("snrs", join(self.snrs_db.iter().map(|v| v.to_string()).collect()));
        kv("mode", self.mode.to_string());
        kv("fading", if self.fading { "on" } else { "off" }.into());
        kv("a_min", self.fading_dist.a_min.to_string());
        kv("a_max", self.fading_dist.a_max.to_string());
        kv("seed", self.seed.to_string());
        kv("polar_bins", self.polar_bins.to_string());
        kv("r_max", self.r_max.to_string());
        kv("iq_bins", self.iq_bins.to_string());
        kv("val_fraction", self.val_fraction.to_string());
        kv("lr", self.train.lr.to_string());
        kv("batch_size", self.train.batch_size.to_string());
        kv("epochs", self.train.epochs.to_string());
        kv("threshold", self.train.threshold.to_string());
        kv(
            "optimizer",
            match self.train.optimizer {
                OptimizerKind::Sgd => "sgd",
                OptimizerKind::Adam { .. } => "adam",
            }
            .into(),
        );
        kv("ccn_bins", self.ccn.input_bins.to_string());
        kv("ccn_r_max", self.ccn.r_max.to_string());
        kv("ccn_widths", join(self.ccn.widths.iter().map(|v| v.to_string()).collect()));
        kv("ccn_only_epochs", self.ccn_only_epochs.to_string());
        kv("ccn_lr_scale", self.ccn_lr_scale.to_string());
        kv(
            "ccn_init",
            self.ccn_init.as_ref().map_or("scratch".into(), |p| p.display().to_string()),
        );
        kv("hoc_phase_invariant", if self.hoc_phase_invariant { "on" } else { "off" }.into());
        s
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut c = ExperimentConfig::desk();
        c.snrs_db = vec![-4.0, 0.5, 12.0];
        c.fading = true;
        c.schemes = vec![ModulationScheme::Qam64, ModulationScheme::Qpsk];
        c.train.optimizer = OptimizerKind::Sgd;
        c.ccn_init = Some(PathBuf::from("warm.ckpt"));
        let back = ExperimentConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn profiles_and_overrides() {
        let c = ExperimentConfig::from_text("# desk run\nepochs=3\n\nprofile=desk\nseed = 7\n").unwrap();
        assert_eq!(c.train_per_class, 500);
        assert_eq!(c.test_per_class, 200);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.seed, 7);
        let p = ExperimentConfig::from_text("").unwrap();
        assert_eq!(p.train_per_class, 5000);
        assert_eq!(p.snrs_db.len(), 9);
        assert_eq!(p.frame_len, 1000);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "nonsense",
            "colour=blue",
            "epochs=many",
            "snrs=",
            "train_per_class=0",
            "schemes=QPSK,QPSK",
            "profile=huge",
            "a_min=3",
            "val_fraction=1",
            "ccn_widths=1,2,3",
        ] {
            assert!(
                matches!(ExperimentConfig::from_text(text), Err(AmcError::Config(_))),
                "accepted {text:?}"
            );
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::desk();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
