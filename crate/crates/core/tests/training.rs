//! Small end-to-end training behaviour: chance before training, learning on
//! an easy problem, and the compensation pipeline staying put when there is
//! nothing to compensate.

use amc_core::ccn::FrameSet;
use amc_core::features::to_polar;
use amc_core::harness::data::{build_features, collect};
use amc_core::harness::experiments::{network_seed, train_classifier, train_pipeline};
use amc_core::harness::{ExperimentConfig, FeatureMode, Split};
use amc_core::modem::ModulationScheme;
use amc_core::neuralnet::{build_amc_cnn, evaluate};

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.frame_len = 256;
    c.snrs_db = vec![12.0];
    c.polar_bins = 16;
    c.train.batch_size = 16;
    c
}

#[test]
fn untrained_classifier_is_at_chance() {
    let mut c = small();
    c.test_per_class = 25;
    let (sets, _) = build_features(&c, Split::Test, &[FeatureMode::Polar]).unwrap();
    let net = build_amc_cnn::<f32>(16, 16, network_seed(&c)).unwrap();
    let acc = evaluate(&net, &sets[0]).unwrap().accuracy();
    assert!((0.1..=0.4).contains(&acc), "untrained accuracy {acc}");
}

#[test]
fn learns_a_separable_pair() {
    let mut c = small();
    c.schemes = vec![ModulationScheme::Qpsk, ModulationScheme::Qam16];
    c.train_per_class = 60;
    c.test_per_class = 30;
    c.train.epochs = 8;
    let (train, _) = build_features(&c, Split::Train, &[FeatureMode::Polar]).unwrap();
    let (test, _) = build_features(&c, Split::Test, &[FeatureMode::Polar]).unwrap();
    let (net, report) = train_classifier(&c, &train[0]).unwrap();
    let acc = evaluate(&net, &test[0]).unwrap().accuracy();
    assert!(acc >= 0.95, "test accuracy {acc}; history:\n{}", report.history_csv());
    let first = report.epochs.first().unwrap().loss;
    let last = report.epochs.last().unwrap().loss;
    assert!(last < first, "loss went from {first} to {last}");
}

fn frames(c: &ExperimentConfig) -> FrameSet {
    let mut set = FrameSet::default();
    for (f, t) in collect(c, Split::Train, |f, _| Ok(to_polar(f))).unwrap() {
        set.push(f, t.label(), t.channel);
    }
    set
}

#[test]
fn compensation_stays_near_identity_without_fading() {
    let mut c = small();
    c.train_per_class = 20;
    c.train.epochs = 3;
    let set = frames(&c);
    let (_, report) = train_pipeline(&c, &set).unwrap();
    for d in &report.diagnostics {
        assert!(d.delta_r_deviation < 0.2, "mean |Δr−1| = {}", d.delta_r_deviation);
    }
}

#[test]
fn joint_training_is_reproducible() {
    let mut c = small();
    c.fading = true;
    c.train_per_class = 8;
    c.train.epochs = 2;
    let set = frames(&c);
    let (a, ra) = train_pipeline(&c, &set).unwrap();
    let (b, rb) = train_pipeline(&c, &set).unwrap();
    assert_eq!(ra.history_csv(), rb.history_csv());
    assert_eq!(a.ccn.snapshot(), b.ccn.snapshot());
    assert_eq!(a.cnn.snapshot(), b.cnn.snapshot());
}
