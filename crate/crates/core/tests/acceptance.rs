//! Acceptance suite. Each test checks one criterion and prints a single
//! `A<n> PASS|FAIL ...` line to the real stdout (not the captured one), so
//! the verdicts show up in a plain `cargo test` log.
//!
//! A3, A4 and A5 share one desk-scale AWGN study; A6 runs the desk-scale
//! fading experiment. Together they take on the order of two hours on a
//! single core.

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::Instant;

use amc_core::ccn::{compensate, CompensationParams};
use amc_core::cumulants::{classify_hoc, empirical_cumulants, theoretical_cumulants, HocOptions};
use amc_core::features::{
    iq_counts, polar_counts, soft_rasterize_polar, to_polar, wrap_angle, GridSpec,
};
use amc_core::harness::cli;
use amc_core::harness::{run_awgn_study, run_fading_experiment, AwgnStudy, ExperimentConfig, FadingStudy, FeatureMode};
use amc_core::harness::experiments::CCN_SYSTEM;
use amc_core::metrics::spearman;
use amc_core::modem::{
    apply_channel, constellation, generate_frame, sample_fading, ChannelParams, FadingDistribution, ModulationScheme,
    Snr,
};
use amc_core::seed::{derive_rng, rng_from};
use num_complex::Complex64;
use rand::Rng;


fn verdict(id: &str, pass: bool, detail: &str) {
    let line = format!("{id} {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    // The harness captures `print!`; the verdict goes to the process stdout.
    match std::fs::OpenOptions::new().append(true).open("/dev/stdout") {
        Ok(mut out) => {
            let _ = out.write_all(line.as_bytes());
        }
        Err(_) => print!("{line}"),
    }
    assert!(pass, "{id} failed: {detail}");
}

fn awgn_study() -> &'static AwgnStudy {
    static STUDY: OnceLock<AwgnStudy> = OnceLock::new();
    STUDY.get_or_init(|| run_awgn_study(&ExperimentConfig::desk(), &FeatureMode::ALL).expect("AWGN study"))
}

fn fading_study() -> &'static FadingStudy {
    static STUDY: OnceLock<FadingStudy> = OnceLock::new();
    STUDY.get_or_init(|| {
        let mut c = ExperimentConfig::desk();
        c.fading = true;
        run_fading_experiment(&c).expect("fading experiment")
    })
}

/// Cumulants straight from the moment definitions, averaged over the
/// equiprobable constellation points.
fn brute_force_cumulants(points: &[Complex64]) -> [Complex64; 5] {
    let n = points.len() as f64;
    let mean = |f: &dyn Fn(Complex64) -> Complex64| points.iter().map(|&x| f(x)).sum::<Complex64>() / n;
    let m20 = mean(&|x| x * x);
    let m21 = mean(&|x| x * x.conj());
    let m40 = mean(&|x| x * x * x * x);
    let m41 = mean(&|x| x * x * x * x.conj());
    let m42 = mean(&|x| x * x * x.conj() * x.conj());
    [
        m20,
        m21,
        m40 - 3.0 * m20 * m20,
        m41 - 3.0 * m20 * m21,
        m42 - m20 * m20.conj() - 2.0 * m21 * m21,
    ]
}

#[test]
fn a1_cumulant_oracle() {
    let mut worst_theory = 0.0f64;
    for s in ModulationScheme::ALL {
        let t = theoretical_cumulants(s);
        let b = brute_force_cumulants(&constellation(s));
        for (x, y) in [t.c20, t.c21, t.c40, t.c41, t.c42].iter().zip(&b) {
            worst_theory = worst_theory.max((x - y).norm());
        }
    }
    let mut hits = 0;
    let mut worst_emp = 0.0f64;
    for s in ModulationScheme::ALL {
        let t = theoretical_cumulants(s);
        for trial in 0..50u64 {
            let mut rng = derive_rng(11, &[s.index() as u64, trial]);
            let frame = generate_frame(s, 100_000, &mut rng).unwrap();
            let c = empirical_cumulants(&frame).unwrap();
            let e = (c.c40 - t.c40).norm().max((c.c42 - t.c42).norm());
            worst_emp = worst_emp.max(e);
            hits += usize::from(e <= 0.05);
        }
    }
    verdict(
        "A1",
        worst_theory <= 1e-12 && hits == 200,
        &format!("theory vs brute force max err {worst_theory:.1e} (<=1e-12); empirical C40/C42 within 0.05 in {hits}/200 trials (worst {worst_emp:.4})"),
    );
}

#[test]
fn a2_gradient_integrity() {
    let checks: [(&str, fn()); 11] = [
        ("conv2d", gradient_check::conv2d_gradients),
        ("dense", gradient_check::dense_gradients),
        ("relu", gradient_check::relu_gradients),
        ("maxpool", gradient_check::maxpool_gradients),
        ("dropout", gradient_check::dropout_gradients),
        ("softmax", gradient_check::softmax_gradients),
        ("classifier", gradient_check::full_classifier_stack_gradients),
        ("cross_entropy", gradient_check::fused_cross_entropy_gradient),
        ("soft_raster", gradient_check::soft_rasterizer_and_max_normalization_gradients),
        ("compensation", gradient_check::compensation_gradients),
        ("ccn_head", gradient_check::ccn_head_gradients_per_weight),
    ];
    let start = Instant::now();
    let mut failed = Vec::new();
    for (name, f) in checks {
        if catch_unwind(AssertUnwindSafe(f)).is_err() {
            failed.push(name);
        }
    }
    if catch_unwind(AssertUnwindSafe(gradient_check::tiny_pipeline_end_to_end_gradients)).is_err() {
        failed.push("tiny_pipeline");
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "A2",
        failed.is_empty() && secs < 120.0,
        &format!("12 finite-difference checks, failed {failed:?}, {secs:.1}s (<120s)"),
    );
}

#[test]
fn a3_polar_desk_accuracy() {
    let study = awgn_study();
    let curve = study.sweep.curve("polar");
    let acc12 = study.sweep.accuracy("polar", 12.0).unwrap_or(f64::NAN);
    let (snr, acc): (Vec<f64>, Vec<f64>) = curve.iter().copied().unzip();
    let rho = spearman(&snr, &acc);
    let secs = study.sweep.report("polar").map_or(f64::NAN, |r| r.total_seconds());
    verdict(
        "A3",
        curve.len() == 9 && acc12 >= 0.90 && rho >= 0.9,
        &format!("polar acc@12dB {acc12:.4} (>=0.90), spearman {rho:.3} over {} SNRs (>=0.9), training {secs:.0}s", curve.len()),
    );
}

#[test]
fn a4a_polar_vs_iq_accuracy() {
    let s = &awgn_study().sweep;
    let p0 = s.accuracy("polar", 0.0).unwrap_or(f64::NAN);
    let i0 = s.accuracy("iq", 0.0).unwrap_or(f64::NAN);
    let pm = s.mean_accuracy("polar").unwrap_or(f64::NAN);
    let im = s.mean_accuracy("iq").unwrap_or(f64::NAN);
    verdict(
        "A4a",
        p0 >= i0 - 0.01 && pm >= im,
        &format!("acc@0dB polar {p0:.4} vs iq {i0:.4} (polar >= iq - 0.01); mean polar {pm:.4} vs iq {im:.4}"),
    );
}

#[test]
fn a4b_polar_vs_iq_convergence() {
    let study = awgn_study();
    let row = |m: FeatureMode| study.convergence.iter().find(|r| r.mode == m).expect("convergence row");
    let (p, i) = (row(FeatureMode::Polar), row(FeatureMode::Iq));
    let same_frames = p.frames_sha256 == i.frames_sha256;
    let pass = same_frames
        && match (p.epochs_to_threshold, i.epochs_to_threshold) {
            (Some(pe), Some(ie)) => pe <= ie,
            (Some(_), None) => true,
            (None, _) => false,
        };
    let show = |e: Option<usize>, best: f64| match e {
        Some(e) => format!("{e} epochs"),
        None => format!("not reached (best val {best:.4})"),
    };
    verdict(
        "A4b",
        pass,
        &format!(
            "epochs to {:.0}% val: polar {}, iq {}; identical frames {same_frames}",
            p.threshold * 100.0,
            show(p.epochs_to_threshold, p.best_val_acc),
            show(i.epochs_to_threshold, i.best_val_acc)
        ),
    );
}

#[test]
fn a5_hoc_baseline() {
    let opts = HocOptions::default();
    let mut correct = 0;
    for s in ModulationScheme::ALL {
        for trial in 0..100u64 {
            let mut rng = derive_rng(12, &[s.index() as u64, trial]);
            let frame = generate_frame(s, 100_000, &mut rng).unwrap();
            correct += usize::from(classify_hoc(&frame, opts).unwrap().scheme == s);
        }
    }
    let sweep = &awgn_study().sweep;
    let h0 = sweep.accuracy("cumulants", 0.0).unwrap_or(f64::NAN);
    let p0 = sweep.accuracy("polar", 0.0).unwrap_or(f64::NAN);
    verdict(
        "A5",
        correct == 400 && h0 < p0,
        &format!("noiseless L=1e5: {correct}/400 correct; acc@0dB cumulants {h0:.4} < polar {p0:.4}"),
    );
}

#[test]
fn a6_compensation_benefit_under_fading() {
    let study = fading_study();
    let acc = |sys: &str| study.sweep.accuracy(sys, 8.0).unwrap_or(f64::NAN);
    let (ccn, polar, iq) = (acc(CCN_SYSTEM), acc("polar"), acc("iq"));
    verdict(
        "A6",
        ccn - polar >= 0.05 && ccn - iq >= 0.05,
        &format!("faded acc@8dB polar+ccn {ccn:.4}, polar {polar:.4}, iq {iq:.4} (margins >= 0.05)"),
    );
}

#[test]
fn a7_compensation_exactness() {
    let dist = FadingDistribution::default();
    let mut worst = 0.0f64;
    for k in 0..1000u64 {
        let mut rng = derive_rng(13, &[k]);
        let s = ModulationScheme::from_index(rng.gen_range(0..4)).unwrap();
        let tx = generate_frame(s, 1000, &mut rng).unwrap();
        let ch = sample_fading(&dist, Snr::Noiseless, &mut rng);
        let rx = apply_channel(&tx, &ch, &mut rng).unwrap();
        let back = compensate(&to_polar(&rx), &CompensationParams::inverse_of(&ch));
        for (p, q) in back.samples.iter().zip(&to_polar(&tx).samples) {
            worst = worst.max((p.r - q.r).abs()).max(wrap_angle(p.theta - q.theta).abs());
        }
    }
    verdict("A7", worst <= 1e-12, &format!("1000 faded frames, max per-sample error {worst:.2e} (<=1e-12)"));
}

fn run_cli(args: &[&str]) {
    let mut argv = vec!["amc"];
    argv.extend_from_slice(args);
    assert_eq!(cli::run(argv), 0, "amc {args:?}");
}

/// gen-data, train (plain and with compensation) and eval into `dir`.
fn pipeline_run(dir: &Path, cfg: &Path) {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let cfg = cfg.to_str().unwrap();
    run_cli(&["gen-data", "--config", cfg, "--out", &p("data")]);
    run_cli(&["train", "--data", &p("data"), "--out", &p("cnn.ckpt")]);
    run_cli(&["eval", "--data", &p("data"), "--model", &p("cnn.ckpt"), "--out", &p("cnn.csv"), "--confusion", &p("cnn_confusion.csv")]);
    run_cli(&["train", "--data", &p("data"), "--ccn", "--out", &p("ccn.ckpt")]);
    run_cli(&[
        "eval",
        "--data",
        &p("data"),
        "--model",
        &p("ccn.ckpt"),
        "--out",
        &p("ccn.csv"),
        "--dump-compensation",
        &p("compensation.csv"),
    ]);
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn a8_determinism() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("small.cfg");
    std::fs::write(
        &cfg,
        "profile = desk\nfading = true\ntrain_per_class = 12\ntest_per_class = 6\nsnrs = 0,8\nframe_len = 300\nepochs = 2\nbatch_size = 16\n",
    )
    .unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    pipeline_run(&a, &cfg);
    pipeline_run(&b, &cfg);
    let (fa, fb) = (files(&a), files(&b));
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let names_match = fa.iter().map(|f| &f.0).eq(fb.iter().map(|f| &f.0));
    verdict(
        "A8",
        names_match && differing.is_empty() && fa.len() >= 12,
        &format!("two gen-data/train/eval runs, {} files compared, differing {differing:?}", fa.len()),
    );
}

#[test]
fn a9_rasterizer_conservation() {
    let polar = GridSpec::polar(3.0, 36);
    let iq = GridSpec::iq(64);
    let dist = FadingDistribution::default();
    let mut rng = rng_from(14);
    let (mut hard_bad, mut soft_worst, mut samples) = (0usize, 0.0f64, 0usize);
    for _ in 0..10_000 {
        let s = ModulationScheme::from_index(rng.gen_range(0..4)).unwrap();
        let snr = Snr::Db(rng.gen_range(-4.0..12.0));
        let tx = generate_frame(s, 1000, &mut rng).unwrap();
        let ch = if rng.gen_bool(0.5) { sample_fading(&dist, snr, &mut rng) } else { ChannelParams::awgn(snr) };
        let rx = apply_channel(&tx, &ch, &mut rng).unwrap();
        let pf = to_polar(&rx);
        let in_polar = pf.samples.iter().filter(|p| (0.0..=3.0).contains(&p.r)).count();
        let in_iq = rx
            .samples
            .iter()
            .filter(|z| (-3.5..=3.5).contains(&z.re) && (-3.5..=3.5).contains(&z.im))
            .count();
        hard_bad += usize::from(polar_counts(&pf, &polar).data.iter().sum::<f64>() != in_polar as f64);
        hard_bad += usize::from(iq_counts(&rx, &iq).data.iter().sum::<f64>() != in_iq as f64);
        let soft = soft_rasterize_polar(&pf, &polar).image.data.iter().sum::<f64>();
        soft_worst = soft_worst.max((soft - in_polar as f64).abs());
        samples += rx.len();
    }
    verdict(
        "A9",
        hard_bad == 0 && soft_worst <= 1e-9,
        &format!("10^4 frames ({samples} samples): hard mismatches {hard_bad} (exact), soft mass max error {soft_worst:.1e} (<=1e-9)"),
    );
}

/// Coherent maximum-likelihood accuracy at -4 dB with (a, θ0) known to the
/// receiver, L = 1000, a ~ U[0.5, 2]: 0.5125 ± 0.0125 from 1600 Monte-Carlo
/// frames. No classifier of the faded frames can do better.
const FADED_ML_ACCURACY_AT_MINUS_4_DB: f64 = 0.5125;

#[test]
fn faded_systems_between_chance_and_ml_bound_at_lowest_snr() {
    let study = fading_study();
    for sys in ["iq", "polar", CCN_SYSTEM] {
        let a = study.sweep.accuracy(sys, -4.0).unwrap();
        assert!(a >= 0.25 - 0.10, "{sys} at -4 dB: {a}");
        assert!(a <= FADED_ML_ACCURACY_AT_MINUS_4_DB + 3.0 * 0.0125, "{sys} at -4 dB: {a}");
    }
}

/// Nested-constellation structure of low-SNR confusions under AWGN.
#[test]
fn low_snr_confusions_stay_within_nested_pairs() {
    let family = |k: usize| k / 2; // {QPSK, 8PSK}, {16QAM, 64QAM}
    for sys in ["polar", "iq"] {
        let row = awgn_study()
            .sweep
            .rows
            .iter()
            .find(|r| r.system == sys && r.snr_db == -2.0)
            .unwrap();
        let c = &row.confusion.counts;
        let (mut within, mut across) = (0, 0);
        let mut pairs = Vec::new();
        for t in 0..4 {
            for p in 0..4 {
                if family(t) == family(p) {
                    within += c[t][p];
                } else {
                    across += c[t][p];
                }
                if t < p {
                    pairs.push((c[t][p] + c[p][t], t, p));
                }
            }
        }
        assert!(across < within, "{sys}: cross-family mass {across} vs within {within}");
        pairs.sort_by(|a, b| b.cmp(a));
        let mut top: Vec<(usize, usize)> = pairs[..2].iter().map(|&(_, t, p)| (t, p)).collect();
        top.sort_unstable();
        assert_eq!(top, vec![(0, 1), (2, 3)], "{sys}: largest confusions {pairs:?}");
    }
}
