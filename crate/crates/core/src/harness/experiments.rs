//! Accuracy-vs-SNR sweeps, the polar/I–Q convergence comparison and the
//! fading experiment with and without the compensation network.
//!
//! One classifier per feature mode is trained on the pooled multi-SNR
//! training split (minus a held-out validation share) and evaluated on the
//! test split one SNR at a time.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::seq::SliceRandom;

use super::config::{ExperimentConfig, FeatureMode};
use super::data::{build_features, collect, extract, frames_digest, FrameTruth, Split};
use crate::ccn::{build_ccn, predict_frames, train_joint, CcnPipeline, CompensationParams, FrameSet, JointConfig, JointReport};
use crate::cumulants::{classify_cumulants, CumulantVector, HocOptions};
use crate::error::Result;
use crate::features::to_polar;
use crate::metrics::Confusion;
use crate::modem::ModulationScheme;
use crate::neuralnet::{build_amc_cnn, checkpoint, predict_labels, train, ImageSet, Network, TrainConfig, TrainReport};
use crate::seed::{derive_rng, derive_seed};

pub const CCN_SYSTEM: &str = "polar+ccn";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Feature mode or system name.
    pub system: String,
    pub snr_db: f64,
    pub accuracy: f64,
    /// Recall per scheme, in `ModulationScheme::ALL` order.
    pub per_class: Vec<f64>,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Training history of every trained system.
    pub training: Vec<(String, TrainReport)>,
}

impl SweepResult {
    pub fn accuracy(&self, system: &str, snr_db: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.snr_db == snr_db)
            .map(|r| r.accuracy)
    }

    /// `(snr, accuracy)` pairs of one system in sweep order.
    pub fn curve(&self, system: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.system == system)
            .map(|r| (r.snr_db, r.accuracy))
            .collect()
    }

    pub fn mean_accuracy(&self, system: &str) -> Option<f64> {
        let c = self.curve(system);
        (!c.is_empty()).then(|| c.iter().map(|p| p.1).sum::<f64>() / c.len() as f64)
    }

    pub fn report(&self, system: &str) -> Option<&TrainReport> {
        self.training.iter().find(|t| t.0 == system).map(|t| &t.1)
    }

    pub fn extend(&mut self, other: SweepResult) {
        self.rows.extend(other.rows);
        self.training.extend(other.training);
    }

    /// `system,snr_db,accuracy,acc_qpsk,acc_8psk,acc_16qam,acc_64qam`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("system,snr_db,accuracy");
        for s in ModulationScheme::ALL {
            let _ = write!(out, ",acc_{}", s.name().to_ascii_lowercase());
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{:.6}", r.system, r.snr_db, r.accuracy);
            for a in &r.per_class {
                if a.is_nan() {
                    out.push(',');
                } else {
                    let _ = write!(out, ",{a:.6}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Long-form confusion counts: `system,snr_db,truth,predicted,count`.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("system,snr_db,truth,predicted,count\n");
        for r in &self.rows {
            for (t, row) in r.confusion.counts.iter().enumerate() {
                for (p, c) in row.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{c}",
                        r.system,
                        r.snr_db,
                        ModulationScheme::ALL[t].name(),
                        ModulationScheme::ALL[p].name()
                    );
                }
            }
        }
        out
    }
}

/// Groups predictions by SNR, in the order of `config.snrs_db`.
pub fn rows_by_snr(system: &str, config: &ExperimentConfig, truth: &[FrameTruth], preds: &[usize]) -> Vec<SweepRow> {
    config
        .snrs_db
        .iter()
        .map(|&snr| {
            let mut cm = Confusion::new(ModulationScheme::COUNT);
            for (t, &p) in truth.iter().zip(preds) {
                if t.snr_db == snr {
                    cm.add(t.label(), p);
                }
            }
            SweepRow {
                system: system.to_string(),
                snr_db: snr,
                accuracy: cm.accuracy(),
                per_class: cm.per_class_accuracy(),
                confusion: cm,
            }
        })
        .collect()
}

/// Deterministic train/validation partition of `n` training samples.
pub fn split_validation(config: &ExperimentConfig, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derive_rng(config.seed, &[20]));
    let n_val = ((n as f64) * config.val_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

/// Training settings shared by every system of an experiment.
pub fn training_config(config: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(config.seed, &[201]),
        ..config.train
    }
}

pub fn network_seed(config: &ExperimentConfig) -> u64 {
    derive_seed(config.seed, &[200])
}

/// Trains a fresh classifier on the training split of an image mode.
pub fn train_classifier(config: &ExperimentConfig, set: &ImageSet) -> Result<(Network<f32>, TrainReport)> {
    let (tr, va) = split_validation(config, set.len());
    let (h, w) = (set.sample_shape[1], set.sample_shape[2]);
    let mut net = build_amc_cnn::<f32>(h, w, network_seed(config))?;
    let train_set = set.subset(&tr);
    let val_set = set.subset(&va);
    let val = (!val_set.is_empty()).then_some(&val_set);
    let report = train(&mut net, &train_set, val, &training_config(config))?;
    Ok((net, report))
}

/// Nearest-theoretical-cumulant decisions from stored cumulant features.
pub fn classify_cumulant_features(config: &ExperimentConfig, set: &ImageSet) -> Result<Vec<usize>> {
    let opts = HocOptions {
        phase_invariant: config.hoc_phase_invariant,
    };
    (0..set.len())
        .map(|i| {
            let f = set.image(i);
            let z = |k: usize| Complex64::new(f[2 * k] as f64, f[2 * k + 1] as f64);
            let c = CumulantVector {
                c20: z(0),
                c21: z(1),
                c40: z(2),
                c41: z(3),
                c42: z(4),
            };
            Ok(classify_cumulants(&c, opts)?.scheme.index())
        })
        .collect()
}

/// Convergence of one trained mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub mode: FeatureMode,
    pub epochs_to_threshold: Option<usize>,
    pub seconds_to_threshold: Option<f64>,
    pub max_epochs: usize,
    pub threshold: f64,
    pub best_val_acc: f64,
    pub total_seconds: f64,
    pub frames_sha256: String,
}

impl ConvergenceRow {
    fn from_report(mode: FeatureMode, r: &TrainReport, frames_sha256: String) -> Self {
        ConvergenceRow {
            mode,
            epochs_to_threshold: r.epochs_to_threshold(),
            seconds_to_threshold: r.seconds_to_threshold(),
            max_epochs: r.epochs.len(),
            threshold: r.threshold,
            best_val_acc: r.best_val_acc,
            total_seconds: r.total_seconds(),
            frames_sha256,
        }
    }
}

/// `mode,threshold,epochs_to_threshold,seconds_to_threshold,max_epochs,best_val_acc,total_seconds,frames_sha256`;
/// unreached thresholds are written as `not reached`.
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from(
        "mode,threshold,epochs_to_threshold,seconds_to_threshold,max_epochs,best_val_acc,total_seconds,frames_sha256\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.3},{}",
            r.mode,
            r.threshold,
            r.epochs_to_threshold.map_or("not reached".into(), |e| e.to_string()),
            r.seconds_to_threshold.map_or("not reached".into(), |s| format!("{s:.3}")),
            r.max_epochs,
            r.best_val_acc,
            r.total_seconds,
            r.frames_sha256
        );
    }
    out
}

/// Everything produced by one AWGN (or fading, per config) study.
#[derive(Debug, Clone)]
pub struct AwgnStudy {
    pub sweep: SweepResult,
    pub convergence: Vec<ConvergenceRow>,
    pub models: Vec<(FeatureMode, Network<f32>)>,
    pub train_frames_sha256: String,
    pub test_frames_sha256: String,
}

/// Builds every requested feature mode from the same frames, trains one
/// classifier per image mode and evaluates all modes per SNR.
pub fn run_awgn_study(config: &ExperimentConfig, modes: &[FeatureMode]) -> Result<AwgnStudy> {
    config.validate()?;
    let image_modes: Vec<FeatureMode> = modes.iter().copied().filter(|&m| m != FeatureMode::Cumulants).collect();
    let (test_sets, test_truth) = build_features(config, Split::Test, modes)?;
    let test_sha = frames_digest(&test_truth);
    let mut sweep = SweepResult::default();
    let mut convergence = Vec::new();
    let mut models = Vec::new();
    let mut train_sha = String::new();

    let trained: Vec<(ImageSet, Vec<FrameTruth>)> = if image_modes.is_empty() {
        Vec::new()
    } else {
        let (sets, truth) = build_features(config, Split::Train, &image_modes)?;
        train_sha = frames_digest(&truth);
        sets.into_iter().map(|s| (s, truth.clone())).collect()
    };
    let mut trained = trained.into_iter();

    for (&mode, test) in modes.iter().zip(&test_sets) {
        let preds = match mode {
            FeatureMode::Cumulants => classify_cumulant_features(config, test)?,
            _ => {
                let (set, _) = trained.next().expect("one training set per image mode");
                log::info!("training {mode} classifier on {} frames", set.len());
                let (net, report) = train_classifier(config, &set)?;
                let preds = predict_labels(&net, test)?;
                convergence.push(ConvergenceRow::from_report(mode, &report, train_sha.clone()));
                sweep.training.push((mode.to_string(), report));
                models.push((mode, net));
                preds
            }
        };
        sweep.rows.extend(rows_by_snr(mode.name(), config, &test_truth, &preds));
    }
    Ok(AwgnStudy {
        sweep,
        convergence,
        models,
        train_frames_sha256: train_sha,
        test_frames_sha256: test_sha,
    })
}

pub fn run_sweep(config: &ExperimentConfig, modes: &[FeatureMode]) -> Result<SweepResult> {
    Ok(run_awgn_study(config, modes)?.sweep)
}

/// Trains polar and I–Q classifiers with identical settings on identical
/// frames and reports how fast each reaches the validation threshold.
pub fn compare_convergence(config: &ExperimentConfig) -> Result<Vec<ConvergenceRow>> {
    Ok(run_awgn_study(config, &[FeatureMode::Polar, FeatureMode::Iq])?.convergence)
}

/// Results of the three systems on one faded test set.
#[derive(Debug, Clone)]
pub struct FadingStudy {
    /// Systems `iq`, `polar` and `polar+ccn`.
    pub sweep: SweepResult,
    pub joint: JointReport,
    pub pipeline: CcnPipeline<f32>,
    pub models: Vec<(FeatureMode, Network<f32>)>,
    /// Test-frame truth next to the compensation the CCN applied.
    pub compensation: Vec<(FrameTruth, CompensationParams)>,
    pub test_frames_sha256: String,
}

/// `index,scheme,snr_db,amplitude,phase_offset,delta_r,delta_theta`
pub fn compensation_csv(rows: &[(FrameTruth, CompensationParams)]) -> String {
    let mut out = String::from("index,scheme,snr_db,amplitude,phase_offset,delta_r,delta_theta\n");
    for (t, p) in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t.index,
            t.scheme.name(),
            t.snr_db,
            t.channel.amplitude,
            t.channel.phase_offset,
            p.delta_r,
            p.delta_theta
        );
    }
    out
}

struct FadedSplit {
    polar: ImageSet,
    iq: ImageSet,
    frames: FrameSet,
    truth: Vec<FrameTruth>,
}

fn faded_split(config: &ExperimentConfig, split: Split) -> Result<FadedSplit> {
    let rows = collect(config, split, |frame, _| {
        Ok((
            extract(config, FeatureMode::Polar, frame)?,
            extract(config, FeatureMode::Iq, frame)?,
            to_polar(frame),
        ))
    })?;
    let mut out = FadedSplit {
        polar: ImageSet::new(vec![1, config.polar_bins, config.polar_bins]),
        iq: ImageSet::new(vec![1, config.iq_bins, config.iq_bins]),
        frames: FrameSet::default(),
        truth: Vec::with_capacity(rows.len()),
    };
    for ((p, q, f), t) in rows {
        out.polar.push(&p, t.label())?;
        out.iq.push(&q, t.label())?;
        out.frames.push(f, t.label(), t.channel);
        out.truth.push(t);
    }
    Ok(out)
}

/// Builds the compensator + classifier pipeline, warm-starting the
/// classifier from `config.ccn_init` when set.
pub fn build_pipeline(config: &ExperimentConfig) -> Result<CcnPipeline<f32>> {
    let cnn = match &config.ccn_init {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| crate::error::AmcError::io(path, e))?;
            checkpoint::load::<f32, _>(std::io::BufReader::new(f))?
        }
        None => build_amc_cnn::<f32>(config.polar_bins, config.polar_bins, network_seed(config))?,
    };
    let ccn = build_ccn::<f32>(&config.ccn, derive_seed(network_seed(config), &[5]))?;
    CcnPipeline::new(ccn, cnn, config.ccn.clone(), config.polar_grid())
}

pub fn joint_config(config: &ExperimentConfig) -> JointConfig {
    JointConfig {
        train: training_config(config),
        ccn_only_epochs: config.ccn_only_epochs,
        freeze_ccn: false,
        ccn_lr_scale: config.ccn_lr_scale,
    }
}

/// Trains the compensation pipeline on the training frames.
pub fn train_pipeline(config: &ExperimentConfig, frames: &FrameSet) -> Result<(CcnPipeline<f32>, JointReport)> {
    let (tr, va) = split_validation(config, frames.len());
    let train_set = frames.subset(&tr);
    let val_set = frames.subset(&va);
    let val = (!val_set.is_empty()).then_some(&val_set);
    let mut pipe = build_pipeline(config)?;
    let report = train_joint(&mut pipe, &train_set, val, &joint_config(config))?;
    Ok((pipe, report))
}

/// Fading experiment: I–Q CNN, polar CNN and polar CNN with compensation,
/// all trained on faded frames and tested on the same faded test frames.
/// Fading is forced on regardless of `config.fading`.
pub fn run_fading_experiment(config: &ExperimentConfig) -> Result<FadingStudy> {
    let mut config = config.clone();
    config.fading = true;
    config.validate()?;
    let test = faded_split(&config, Split::Test)?;
    let train_split = faded_split(&config, Split::Train)?;
    let mut sweep = SweepResult::default();
    let mut models = Vec::new();

    for (mode, set, test_set) in [
        (FeatureMode::Iq, &train_split.iq, &test.iq),
        (FeatureMode::Polar, &train_split.polar, &test.polar),
    ] {
        log::info!("training faded {mode} classifier on {} frames", set.len());
        let (net, report) = train_classifier(&config, set)?;
        let preds = predict_labels(&net, test_set)?;
        sweep.rows.extend(rows_by_snr(mode.name(), &config, &test.truth, &preds));
        sweep.training.push((mode.to_string(), report));
        models.push((mode, net));
    }
    let FadedSplit { frames, .. } = train_split;

    log::info!("training compensation pipeline on {} frames", frames.len());
    let (pipeline, joint) = train_pipeline(&config, &frames)?;
    drop(frames);
    let (preds, params) = predict_frames(&pipeline, &test.frames)?;
    sweep.rows.extend(rows_by_snr(CCN_SYSTEM, &config, &test.truth, &preds));
    sweep.training.push((CCN_SYSTEM.to_string(), joint.report.clone()));
    let compensation = test.truth.iter().cloned().zip(params).collect();
    Ok(FadingStudy {
        sweep,
        joint,
        pipeline,
        models,
        compensation,
        test_frames_sha256: frames_digest(&test.truth),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::desk();
        c.train_per_class = 6;
        c.test_per_class = 4;
        c.snrs_db = vec![-4.0, 12.0];
        c.frame_len = 200;
        c.polar_bins = 16;
        c.iq_bins = 16;
        c.train.epochs = 1;
        c.train.batch_size = 8;
        c
    }

    #[test]
    fn validation_split_is_a_partition() {
        let c = tiny();
        let (tr, va) = split_validation(&c, 50);
        assert_eq!(va.len(), 5);
        let mut all = [tr.clone(), va.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        assert_eq!(split_validation(&c, 50), (tr, va));
    }

    #[test]
    fn cumulant_sweep_needs_no_training() {
        let r = run_sweep(&tiny(), &[FeatureMode::Cumulants]).unwrap();
        assert!(r.training.is_empty());
        assert_eq!(r.rows.len(), 2);
        for row in &r.rows {
            assert!((0.0..=1.0).contains(&row.accuracy));
            assert_eq!(row.confusion.total(), 16);
        }
        assert_eq!(r.to_csv().lines().count(), 3);
    }

    #[test]
    fn study_rows_cover_every_mode_and_snr() {
        let s = run_awgn_study(&tiny(), &FeatureMode::ALL).unwrap();
        assert_eq!(s.sweep.rows.len(), 6);
        assert_eq!(s.convergence.len(), 2);
        assert_eq!(s.convergence[0].frames_sha256, s.convergence[1].frames_sha256);
        assert_eq!(convergence_csv(&s.convergence).lines().count(), 3);
        for r in &s.sweep.rows {
            assert_eq!(r.confusion.row_sums().iter().sum::<usize>(), 16);
        }
    }

    #[test]
    fn fading_study_runs_three_systems() {
        let s = run_fading_experiment(&tiny()).unwrap();
        for sys in ["iq", "polar", CCN_SYSTEM] {
            assert_eq!(s.sweep.curve(sys).len(), 2);
        }
        assert_eq!(s.compensation.len(), 32);
        assert!(s.compensation.iter().all(|(_, p)| p.delta_r > 0.0));
        assert_eq!(s.joint.diagnostics.len(), 1);
    }
}
