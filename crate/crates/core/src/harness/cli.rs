//! `amc` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::{ExperimentConfig, FeatureMode};
use super::data::{collect, frames_digest, generate_dataset, load_dataset, Dataset, Split};
use super::experiments::{
    classify_cumulant_features, compensation_csv, convergence_csv, rows_by_snr, run_awgn_study, run_fading_experiment,
    train_classifier, train_pipeline, SweepResult, CCN_SYSTEM,
};
use crate::ccn::{predict_frames, CcnPipeline, FrameSet};
use crate::cumulants::theoretical_table_csv;
use crate::error::{AmcError, Result};
use crate::features::{rasterize_iq, rasterize_polar, to_polar};
use crate::modem::{apply_channel, generate_frame, sample_fading, ChannelParams, ModulationScheme, Snr};
use crate::neuralnet::{checkpoint, predict_labels, NetKind, Network};
use crate::seed::derive_rng;

#[derive(Parser, Debug)]
#[command(name = "amc", version, about = "Modulation classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Extra `key=value` overrides, applied after the file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::desk(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| AmcError::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset directory
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Feature mode (overrides the config)
        #[arg(long)]
        mode: Option<FeatureMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier (or the compensation pipeline) on a dataset
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path; the history goes to `<out>.history.csv`
        #[arg(long)]
        out: PathBuf,
        /// Train the compensation network jointly (polar datasets only)
        #[arg(long)]
        ccn: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset's test split
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Not needed for cumulant datasets
        #[arg(long)]
        model: Option<PathBuf>,
        /// Per-SNR accuracy CSV
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        confusion: Option<PathBuf>,
        /// Per-frame (Δr, Δθ, a, θ0) CSV for compensation checkpoints
        #[arg(long)]
        dump_compensation: Option<PathBuf>,
    },
    /// Accuracy-vs-SNR sweep over feature modes
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Repeatable; defaults to polar, iq and cumulants
        #[arg(long = "mode")]
        modes: Vec<FeatureMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Epochs and seconds for polar and I–Q training to reach the threshold
    CompareConvergence {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// I–Q CNN, polar CNN and polar CNN with compensation under fading
    FadingExperiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Theoretical cumulants of every scheme as CSV
    CumulantsTable,
    /// Render one generated frame as a PGM image
    Render {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        scheme: ModulationScheme,
        /// SNR in dB; omit for a noiseless frame
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
        #[arg(long, default_value = "polar")]
        mode: FeatureMode,
        #[arg(long)]
        fading: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &AmcError) -> i32 {
    match e {
        AmcError::InvalidArgument(_) | AmcError::Config(_) => 2,
        AmcError::Numeric(_) => 4,
        _ => 3,
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| AmcError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| AmcError::io(path, e))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn save_net(net: &Network<f32>, path: &Path) -> Result<()> {
    write(path, &checkpoint::to_bytes(net))
}

fn load_net(path: &Path, kind: NetKind) -> Result<Network<f32>> {
    let f = fs::File::open(path).map_err(|e| AmcError::io(path, e))?;
    let net = checkpoint::load::<f32, _>(BufReader::new(f))?;
    if net.kind != kind {
        return Err(AmcError::Data(format!("{} holds a {:?}, expected {kind:?}", path.display(), net.kind)));
    }
    Ok(net)
}

/// Regenerates the polar frames of a split and checks them against the
/// dataset's recorded frame hashes.
fn dataset_frames(ds: &Dataset, split: Split) -> Result<FrameSet> {
    let rows = collect(&ds.config, split, |f, _| Ok(to_polar(f)))?;
    let mut set = FrameSet::default();
    let mut truth = Vec::with_capacity(rows.len());
    for (f, t) in rows {
        set.push(f, t.label(), t.channel);
        truth.push(t);
    }
    let key = format!("{}_frames_sha256", split.name());
    if frames_digest(&truth) != ds.manifest.get(&key)? {
        return Err(AmcError::Data(format!("regenerated {} frames do not match the manifest", split.name())));
    }
    Ok(set)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { cfg, mode, out } => {
            let mut config = cfg.load()?;
            if let Some(m) = mode {
                config.mode = m;
            }
            let m = generate_dataset(&config, &out)?;
            print!("{}", m.to_text());
        }
        Command::Train { data, out, ccn, seed } => {
            let mut ds = load_dataset(&data)?;
            if let Some(s) = seed {
                ds.config.seed = s;
            }
            if ds.config.mode == FeatureMode::Cumulants {
                return Err(AmcError::InvalidArgument("cumulant datasets need no training; use eval".into()));
            }
            if ccn {
                if ds.config.mode != FeatureMode::Polar {
                    return Err(AmcError::InvalidArgument("--ccn needs a polar dataset".into()));
                }
                let frames = dataset_frames(&ds, Split::Train)?;
                let (pipe, report) = train_pipeline(&ds.config, &frames)?;
                save_net(&pipe.cnn, &out)?;
                save_net(&pipe.ccn, &with_suffix(&out, ".ccn"))?;
                write(&with_suffix(&out, ".history.csv"), report.history_csv().as_bytes())?;
            } else {
                let (net, report) = train_classifier(&ds.config, &ds.train)?;
                save_net(&net, &out)?;
                write(&with_suffix(&out, ".history.csv"), report.history_csv().as_bytes())?;
            }
        }
        Command::Eval {
            data,
            model,
            out,
            confusion,
            dump_compensation,
        } => {
            let ds = load_dataset(&data)?;
            let mut result = SweepResult::default();
            let ccn_path = model.as_ref().map(|m| with_suffix(m, ".ccn"));
            match (&model, ds.config.mode) {
                (_, FeatureMode::Cumulants) => {
                    let preds = classify_cumulant_features(&ds.config, &ds.test)?;
                    result.rows = rows_by_snr("cumulants", &ds.config, &ds.test_truth, &preds);
                }
                (Some(m), _) if ccn_path.as_ref().is_some_and(|p| p.exists()) => {
                    let cnn = load_net(m, NetKind::Classifier)?;
                    let ccn = load_net(ccn_path.as_ref().unwrap(), NetKind::Compensator)?;
                    let pipe = CcnPipeline::new(ccn, cnn, ds.config.ccn.clone(), ds.config.polar_grid())?;
                    let frames = dataset_frames(&ds, Split::Test)?;
                    let (preds, params) = predict_frames(&pipe, &frames)?;
                    result.rows = rows_by_snr(CCN_SYSTEM, &ds.config, &ds.test_truth, &preds);
                    if let Some(p) = &dump_compensation {
                        let rows: Vec<_> = ds.test_truth.iter().cloned().zip(params).collect();
                        write(p, compensation_csv(&rows).as_bytes())?;
                    }
                }
                (Some(m), mode) => {
                    let net = load_net(m, NetKind::Classifier)?;
                    let preds = predict_labels(&net, &ds.test)?;
                    result.rows = rows_by_snr(mode.name(), &ds.config, &ds.test_truth, &preds);
                }
                (None, mode) => {
                    return Err(AmcError::InvalidArgument(format!("--model is required for {mode} datasets")));
                }
            }
            if dump_compensation.is_some() && !result.rows.iter().any(|r| r.system == CCN_SYSTEM) {
                return Err(AmcError::InvalidArgument("--dump-compensation needs a compensation checkpoint".into()));
            }
            write(&out, result.to_csv().as_bytes())?;
            if let Some(c) = confusion {
                write(&c, result.confusion_csv().as_bytes())?;
            }
            print!("{}", result.to_csv());
        }
        Command::Sweep { cfg, modes, out } => {
            let config = cfg.load()?;
            let modes = if modes.is_empty() { FeatureMode::ALL.to_vec() } else { modes };
            let study = run_awgn_study(&config, &modes)?;
            write(&out.join("sweep.csv"), study.sweep.to_csv().as_bytes())?;
            write(&out.join("confusion.csv"), study.sweep.confusion_csv().as_bytes())?;
            if !study.convergence.is_empty() {
                write(&out.join("convergence.csv"), convergence_csv(&study.convergence).as_bytes())?;
            }
            for (mode, net) in &study.models {
                save_net(net, &out.join(format!("{mode}.ckpt")))?;
            }
            for (name, report) in &study.sweep.training {
                write(&out.join(format!("{name}_history.csv")), report.to_csv().as_bytes())?;
            }
            print!("{}", study.sweep.to_csv());
        }
        Command::CompareConvergence { cfg, out } => {
            let config = cfg.load()?;
            let study = run_awgn_study(&config, &[FeatureMode::Polar, FeatureMode::Iq])?;
            let csv = convergence_csv(&study.convergence);
            write(&out.join("convergence.csv"), csv.as_bytes())?;
            for (name, report) in &study.sweep.training {
                write(&out.join(format!("{name}_history.csv")), report.to_csv().as_bytes())?;
            }
            print!("{csv}");
        }
        Command::FadingExperiment { cfg, out } => {
            let config = cfg.load()?;
            let study = run_fading_experiment(&config)?;
            write(&out.join("fading.csv"), study.sweep.to_csv().as_bytes())?;
            write(&out.join("confusion.csv"), study.sweep.confusion_csv().as_bytes())?;
            write(&out.join("compensation.csv"), compensation_csv(&study.compensation).as_bytes())?;
            write(&out.join("joint_history.csv"), study.joint.to_csv().as_bytes())?;
            for (mode, net) in &study.models {
                save_net(net, &out.join(format!("{mode}.ckpt")))?;
            }
            save_net(&study.pipeline.cnn, &out.join("ccn_classifier.ckpt"))?;
            save_net(&study.pipeline.ccn, &out.join("ccn_classifier.ckpt.ccn"))?;
            print!("{}", study.sweep.to_csv());
        }
        Command::CumulantsTable => print!("{}", theoretical_table_csv()),
        Command::Render {
            cfg,
            scheme,
            snr,
            mode,
            fading,
            out,
        } => {
            let config = cfg.load()?;
            let mut rng = derive_rng(config.seed, &[300]);
            let tx = generate_frame(scheme, config.frame_len, &mut rng)?;
            let snr = snr.map_or(Snr::Noiseless, Snr::Db);
            let channel = if fading {
                sample_fading(&config.fading_dist, snr, &mut rng)
            } else {
                ChannelParams::awgn(snr)
            };
            let rx = apply_channel(&tx, &channel, &mut rng)?;
            let img = match mode {
                FeatureMode::Polar => rasterize_polar(&to_polar(&rx), &config.polar_grid()),
                FeatureMode::Iq => rasterize_iq(&rx, &config.iq_grid()),
                FeatureMode::Cumulants => {
                    return Err(AmcError::InvalidArgument("render needs an image mode (polar or iq)".into()))
                }
            };
            let mut bytes = Vec::new();
            img.write_pgm(&mut bytes).map_err(|e| AmcError::io(&out, e))?;
            write(&out, &bytes)?;
        }
    }
    Ok(())
}
