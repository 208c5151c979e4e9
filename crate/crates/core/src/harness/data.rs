//! Frame generation, feature extraction and on-disk datasets.
//!
//! Frame `k` of scheme `s` at SNR `snr` in split `p` is drawn from the stream
//! `derive(seed, [100, p, s, round(1000·snr), k])`: symbols first, then the
//! fading draw (when enabled), then the noise. Every feature mode therefore
//! sees the same frames, and frames can be produced in any order.
//!
//! Dataset directory layout:
//!
//! ```text
//! config.cfg          canonical config text
//! manifest.txt        key=value summary with hashes
//! train.f32 test.f32  little-endian float32 features, one sample after another
//! train_truth.csv     index,scheme,label,snr_db,amplitude,phase_offset,frame_sha256
//! test_truth.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, FeatureMode};
use crate::cumulants::empirical_cumulants;
use crate::error::{AmcError, Result};
use crate::features::{rasterize_iq, rasterize_polar, to_polar};
use crate::modem::{apply_channel, generate_frame, sample_fading, ChannelParams, ModulationScheme, Snr, SymbolFrame};
use crate::neuralnet::ImageSet;
use crate::seed::derive_rng;

pub const DATASET_FORMAT: &str = "amc-dataset-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

/// Identity and channel of one generated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub index: usize,
    pub scheme: ModulationScheme,
    pub snr_db: f64,
    pub channel: ChannelParams,
    /// SHA-256 of the received frame's binary encoding.
    pub frame_sha256: String,
}

impl FrameTruth {
    pub fn label(&self) -> usize {
        self.scheme.index()
    }
}

fn snr_key(snr_db: f64) -> u64 {
    (snr_db * 1000.0).round() as i64 as u64
}

/// Frame coordinates in generation order: scheme, then SNR, then repeat.
pub fn frame_plan(config: &ExperimentConfig, split: Split) -> Vec<(ModulationScheme, f64, usize)> {
    let per = match split {
        Split::Train => config.train_per_class,
        Split::Test => config.test_per_class,
    };
    let mut plan = Vec::with_capacity(config.schemes.len() * config.snrs_db.len() * per);
    for &s in &config.schemes {
        for &snr in &config.snrs_db {
            for k in 0..per {
                plan.push((s, snr, k));
            }
        }
    }
    plan
}

/// Generates one received frame.
pub fn make_frame(config: &ExperimentConfig, split: Split, scheme: ModulationScheme, snr_db: f64, k: usize) -> Result<(SymbolFrame, ChannelParams)> {
    let mut rng = derive_rng(config.seed, &[100, split.tag(), scheme.index() as u64, snr_key(snr_db), k as u64]);
    let tx = generate_frame(scheme, config.frame_len, &mut rng)?;
    let channel = if config.fading {
        sample_fading(&config.fading_dist, Snr::Db(snr_db), &mut rng)
    } else {
        ChannelParams::awgn(Snr::Db(snr_db))
    };
    let rx = apply_channel(&tx, &channel, &mut rng)?;
    Ok((rx, channel))
}

pub fn frame_hash(frame: &SymbolFrame) -> String {
    hex::encode(Sha256::digest(frame.to_binary()))
}

/// Runs `f` on every frame of `split`, spreading the work over the available
/// cores. Results come back in plan order.
pub fn collect<X, F>(config: &ExperimentConfig, split: Split, f: F) -> Result<Vec<(X, FrameTruth)>>
where
    X: Send,
    F: Fn(&SymbolFrame, &FrameTruth) -> Result<X> + Sync,
{
    let plan = frame_plan(config, split);
    let work = |start: usize, items: &[(ModulationScheme, f64, usize)]| -> Result<Vec<(X, FrameTruth)>> {
        items
            .iter()
            .enumerate()
            .map(|(j, &(scheme, snr_db, k))| {
                let (frame, channel) = make_frame(config, split, scheme, snr_db, k)?;
                let truth = FrameTruth {
                    index: start + j,
                    scheme,
                    snr_db,
                    channel,
                    frame_sha256: frame_hash(&frame),
                };
                Ok((f(&frame, &truth)?, truth))
            })
            .collect()
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(plan.len().max(1));
    if threads <= 1 {
        return work(0, &plan);
    }
    let chunk = plan.len().div_ceil(threads);
    let parts: Vec<Result<Vec<(X, FrameTruth)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = plan
            .chunks(chunk)
            .enumerate()
            .map(|(i, items)| {
                let work = &work;
                scope.spawn(move || work(i * chunk, items))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("generation thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(plan.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Per-sample feature shape of a mode.
pub fn feature_shape(config: &ExperimentConfig, mode: FeatureMode) -> Vec<usize> {
    match mode {
        FeatureMode::Polar => vec![1, config.polar_bins, config.polar_bins],
        FeatureMode::Iq => vec![1, config.iq_bins, config.iq_bins],
        FeatureMode::Cumulants => vec![10],
    }
}

/// Feature vector of one frame: a max-normalized image, or the real and
/// imaginary parts of (C20, C21, C40, C41, C42).
pub fn extract(config: &ExperimentConfig, mode: FeatureMode, frame: &SymbolFrame) -> Result<Vec<f32>> {
    Ok(match mode {
        FeatureMode::Polar => rasterize_polar(&to_polar(frame), &config.polar_grid())
            .data
            .iter()
            .map(|&v| v as f32)
            .collect(),
        FeatureMode::Iq => rasterize_iq(frame, &config.iq_grid()).data.iter().map(|&v| v as f32).collect(),
        FeatureMode::Cumulants => {
            let c = empirical_cumulants(frame)?;
            [c.c20, c.c21, c.c40, c.c41, c.c42]
                .iter()
                .flat_map(|z| [z.re as f32, z.im as f32])
                .collect()
        }
    })
}

/// Features of one split for several modes, computed from a single pass over
/// the frames.
pub fn build_features(config: &ExperimentConfig, split: Split, modes: &[FeatureMode]) -> Result<(Vec<ImageSet>, Vec<FrameTruth>)> {
    let rows = collect(config, split, |frame, _| {
        modes.iter().map(|&m| extract(config, m, frame)).collect::<Result<Vec<_>>>()
    })?;
    let mut sets: Vec<ImageSet> = modes.iter().map(|&m| ImageSet::new(feature_shape(config, m))).collect();
    let mut truth = Vec::with_capacity(rows.len());
    for (feats, t) in rows {
        for (set, f) in sets.iter_mut().zip(feats) {
            set.push(&f, t.label())?;
        }
        truth.push(t);
    }
    Ok((sets, truth))
}

/// Digest over the ordered per-frame hashes.
pub fn frames_digest(truth: &[FrameTruth]) -> String {
    let mut h = Sha256::new();
    for t in truth {
        h.update(t.frame_sha256.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn truth_csv(truth: &[FrameTruth]) -> String {
    let mut out = String::from("index,scheme,label,snr_db,amplitude,phase_offset,frame_sha256\n");
    for t in truth {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            t.index,
            t.scheme.name(),
            t.label(),
            t.snr_db,
            t.channel.amplitude,
            t.channel.phase_offset,
            t.frame_sha256
        );
    }
    out
}

fn parse_truth_csv(text: &str, path: &Path) -> Result<Vec<FrameTruth>> {
    let bad = |line: usize, m: &str| AmcError::Data(format!("{}:{line}: {m}", path.display()));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(i + 1, "expected 7 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        let snr_db = num(f[3])?;
        out.push(FrameTruth {
            index: f[0].parse().map_err(|_| bad(i + 1, "bad index"))?,
            scheme: f[1].parse().map_err(|_| bad(i + 1, "bad scheme"))?,
            snr_db,
            channel: ChannelParams {
                amplitude: num(f[4])?,
                freq_offset: 0.0,
                phase_offset: num(f[5])?,
                snr: Snr::Db(snr_db),
            },
            frame_sha256: f[6].to_string(),
        });
    }
    Ok(out)
}

fn blob(set: &ImageSet) -> Vec<u8> {
    set.data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parsed `manifest.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| AmcError::Data(format!("manifest lacks '{key}'")))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AmcError::Data(format!("bad manifest line '{line}'")))?;
            entries.insert(k.to_string(), v.to_string());
        }
        Ok(Manifest { entries })
    }
}

/// A dataset in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: ExperimentConfig,
    pub manifest: Manifest,
    pub train: ImageSet,
    pub train_truth: Vec<FrameTruth>,
    pub test: ImageSet,
    pub test_truth: Vec<FrameTruth>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| AmcError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AmcError::io(path, e))
}

/// Generates the dataset for `config.mode` into `out`. Files are written to
/// a sibling temporary directory that replaces `out` only once complete.
pub fn generate_dataset(config: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    config.validate()?;
    let name = out
        .file_name()
        .ok_or_else(|| AmcError::InvalidArgument(format!("bad output path {}", out.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp-{}", std::process::id()));
    let tmp: PathBuf = out.with_file_name(tmp_name);
    let result = write_dataset(config, &tmp).and_then(|m| {
        if out.exists() {
            fs::remove_dir_all(out).map_err(|e| AmcError::io(out, e))?;
        }
        fs::rename(&tmp, out).map_err(|e| AmcError::io(out, e))?;
        Ok(m)
    });
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

fn write_dataset(config: &ExperimentConfig, dir: &Path) -> Result<Manifest> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| AmcError::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| AmcError::io(dir, e))?;
    let mut entries = BTreeMap::new();
    entries.insert("format".to_string(), DATASET_FORMAT.to_string());
    entries.insert("config_sha256".into(), config.hash());
    entries.insert("mode".into(), config.mode.to_string());
    entries.insert("seed".into(), config.seed.to_string());
    let shape = feature_shape(config, config.mode);
    entries.insert(
        "sample_shape".into(),
        shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","),
    );
    write(&dir.join("config.cfg"), config.to_text().as_bytes())?;
    for split in [Split::Train, Split::Test] {
        let (sets, truth) = build_features(config, split, &[config.mode])?;
        let bytes = blob(&sets[0]);
        let n = split.name();
        write(&dir.join(format!("{n}.f32")), &bytes)?;
        write(&dir.join(format!("{n}_truth.csv")), truth_csv(&truth).as_bytes())?;
        entries.insert(format!("{n}_count"), truth.len().to_string());
        entries.insert(format!("{n}_features_sha256"), sha_hex(&bytes));
        entries.insert(format!("{n}_frames_sha256"), frames_digest(&truth));
    }
    let manifest = Manifest { entries };
    write(&dir.join("manifest.txt"), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

/// Loads a dataset, verifying the config hash and the feature blobs against
/// the manifest.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.txt");
    if !manifest_path.exists() {
        return Err(AmcError::Data(format!(
            "no dataset at {} (run `amc gen-data --out {}` first)",
            dir.display(),
            dir.display()
        )));
    }
    let manifest = Manifest::parse(&String::from_utf8_lossy(&read(&manifest_path)?))?;
    if manifest.get("format")? != DATASET_FORMAT {
        return Err(AmcError::Data(format!("unsupported dataset format '{}'", manifest.get("format")?)));
    }
    let cfg_path = dir.join("config.cfg");
    let config = ExperimentConfig::from_text(&String::from_utf8_lossy(&read(&cfg_path)?))
        .map_err(|e| AmcError::Data(format!("{}: {e}", cfg_path.display())))?;
    if config.hash() != manifest.get("config_sha256")? {
        return Err(AmcError::Data("config.cfg does not match the manifest hash".into()));
    }
    let shape = feature_shape(&config, config.mode);
    let load_split = |split: Split| -> Result<(ImageSet, Vec<FrameTruth>)> {
        let n = split.name();
        let bytes = read(&dir.join(format!("{n}.f32")))?;
        if sha_hex(&bytes) != manifest.get(&format!("{n}_features_sha256"))? {
            return Err(AmcError::Data(format!("{n}.f32 does not match the manifest hash")));
        }
        let truth_path = dir.join(format!("{n}_truth.csv"));
        let truth = parse_truth_csv(&String::from_utf8_lossy(&read(&truth_path)?), &truth_path)?;
        let mut set = ImageSet::new(shape.clone());
        if bytes.len() != truth.len() * set.sample_len() * 4 {
            return Err(AmcError::Data(format!("{n}.f32 size does not match {} samples", truth.len())));
        }
        set.data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        set.labels = truth.iter().map(FrameTruth::label).collect();
        if frames_digest(&truth) != manifest.get(&format!("{n}_frames_sha256"))? {
            return Err(AmcError::Data(format!("{n}_truth.csv does not match the manifest hash")));
        }
        Ok((set, truth))
    };
    let (train, train_truth) = load_split(Split::Train)?;
    let (test, test_truth) = load_split(Split::Test)?;
    Ok(Dataset {
        config,
        manifest,
        train,
        train_truth,
        test,
        test_truth,
    })
}
