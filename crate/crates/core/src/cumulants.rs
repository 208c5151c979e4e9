//! Fourth-order cumulant features and the nearest-theoretical-value
//! classifier.
//!
//! Distances are measured in the amplitude-normalized space
//! `(Re C40/C21², Im C40/C21², C42/C21²)`; with `phase_invariant` set the
//! first two coordinates collapse to `|C40|/C21²` so that a carrier phase
//! rotation (which turns C40 by 4θ0) does not move the feature.

use num_complex::Complex64;

use crate::error::{AmcError, Result};
use crate::modem::{constellation, ModulationScheme, SymbolFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulantVector {
    pub c20: Complex64,
    pub c21: Complex64,
    pub c40: Complex64,
    pub c41: Complex64,
    pub c42: Complex64,
}

impl CumulantVector {
    /// Cumulants from the raw moments E[y²], E|y|², E[y⁴], E[y³y*], E|y|⁴.
    fn from_moments(m20: Complex64, m21: f64, m40: Complex64, m41: Complex64, m42: f64) -> Self {
        let c21 = Complex64::new(m21, 0.0);
        CumulantVector {
            c20: m20,
            c21,
            c40: m40 - 3.0 * m20 * m20,
            c41: m41 - 3.0 * m20 * c21,
            c42: Complex64::new(m42 - m20.norm_sqr() - 2.0 * m21 * m21, 0.0),
        }
    }

    fn as_array(&self) -> [Complex64; 5] {
        [self.c20, self.c21, self.c40, self.c41, self.c42]
    }
}

fn moments<'a, I: IntoIterator<Item = &'a Complex64>>(samples: I, weight: f64) -> CumulantVector {
    let mut m20 = Complex64::new(0.0, 0.0);
    let mut m21 = 0.0;
    let mut m40 = Complex64::new(0.0, 0.0);
    let mut m41 = Complex64::new(0.0, 0.0);
    let mut m42 = 0.0;
    for &y in samples {
        let y2 = y * y;
        let p = y.norm_sqr();
        m20 += y2;
        m21 += p;
        m40 += y2 * y2;
        m41 += y2 * p;
        m42 += p * p;
    }
    CumulantVector::from_moments(m20 * weight, m21 * weight, m40 * weight, m41 * weight, m42 * weight)
}

/// Sample cumulants Ĉ20, Ĉ21, Ĉ40, Ĉ41, Ĉ42 of a received frame.
pub fn empirical_cumulants(frame: &SymbolFrame) -> Result<CumulantVector> {
    if frame.is_empty() {
        return Err(AmcError::InvalidArgument("cumulants need at least one sample".into()));
    }
    Ok(moments(&frame.samples, 1.0 / frame.len() as f64))
}

/// Exact cumulants of the unit-energy constellation, by averaging over its
/// points.
pub fn theoretical_cumulants(scheme: ModulationScheme) -> CumulantVector {
    let pts = constellation(scheme);
    let mut c = moments(&pts, 1.0 / pts.len() as f64);
    // Exact unit energy: the float average differs from 1 only by rounding.
    if (c.c21.re - 1.0).abs() < 1e-12 {
        let m42 = c.c42.re + c.c20.norm_sqr() + 2.0 * c.c21.re * c.c21.re;
        c.c21 = Complex64::new(1.0, 0.0);
        c.c42 = Complex64::new(m42 - c.c20.norm_sqr() - 2.0, 0.0);
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HocOptions {
    /// Use |C40| in place of (Re C40, Im C40).
    pub phase_invariant: bool,
}

/// Classifier decision together with the distance to every scheme, indexed in
/// `ModulationScheme::ALL` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HocDecision {
    pub scheme: ModulationScheme,
    pub distances: [f64; 4],
}

fn feature(c: &CumulantVector, opts: HocOptions) -> Result<[f64; 3]> {
    let p = c.c21.re;
    if p <= 0.0 || !p.is_finite() {
        return Err(AmcError::DegenerateInput("C21 is zero; frame carries no power".into()));
    }
    let scale = 1.0 / (p * p);
    let c40 = c.c40 * scale;
    let c42 = c.c42.re * scale;
    Ok(if opts.phase_invariant {
        [c40.norm(), 0.0, c42]
    } else {
        [c40.re, c40.im, c42]
    })
}

/// Nearest-theoretical classification of a cumulant vector. Ties go to the
/// scheme that comes first in enumeration order.
pub fn classify_cumulants(c: &CumulantVector, opts: HocOptions) -> Result<HocDecision> {
    let f = feature(c, opts)?;
    let mut distances = [0.0; 4];
    for s in ModulationScheme::ALL {
        let t = feature(&theoretical_cumulants(s), opts)?;
        distances[s.index()] = f.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    }
    Ok(HocDecision {
        scheme: ModulationScheme::ALL[nearest(&distances)],
        distances,
    })
}

/// Index of the smallest distance; the first one wins on ties.
fn nearest(distances: &[f64; 4]) -> usize {
    let mut best = 0;
    for i in 1..4 {
        if distances[i] < distances[best] {
            best = i;
        }
    }
    best
}

pub fn classify_hoc(frame: &SymbolFrame, opts: HocOptions) -> Result<HocDecision> {
    classify_cumulants(&empirical_cumulants(frame)?, opts)
}

/// CSV of the theoretical cumulants: one row per scheme, real and imaginary
/// parts of all five statistics.
pub fn theoretical_table_csv() -> String {
    let mut out = String::from(
        "scheme,c20_re,c20_im,c21_re,c21_im,c40_re,c40_im,c41_re,c41_im,c42_re,c42_im\n",
    );
    for s in ModulationScheme::ALL {
        out.push_str(s.name());
        for v in theoretical_cumulants(s).as_array() {
            // Print exact zeros without a sign so the table is stable.
            let clean = |x: f64| if x.abs() < 1e-15 { 0.0 } else { x };
            out.push_str(&format!(",{:.12},{:.12}", clean(v.re), clean(v.im)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::{apply_channel, generate_frame, ChannelParams, Snr};
    use crate::seed::rng_from;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn constant_frame() {
        let f = SymbolFrame::new(vec![Complex64::new(1.0, 0.0); 17], ModulationScheme::Qpsk).unwrap();
        let c = empirical_cumulants(&f).unwrap();
        assert_abs_diff_eq!(c.c20.re, 1.0);
        assert_abs_diff_eq!(c.c21.re, 1.0);
        assert_abs_diff_eq!(c.c40.re, -2.0);
        assert_abs_diff_eq!(c.c41.re, -2.0);
        assert_abs_diff_eq!(c.c42.re, -2.0);
    }

    #[test]
    fn empty_frame_rejected() {
        let f = SymbolFrame { samples: vec![], scheme: ModulationScheme::Qpsk };
        assert!(matches!(empirical_cumulants(&f), Err(AmcError::InvalidArgument(_))));
    }

    #[test]
    fn zero_power_is_degenerate() {
        let f = SymbolFrame::new(vec![Complex64::new(0.0, 0.0); 4], ModulationScheme::Qpsk).unwrap();
        assert!(matches!(classify_hoc(&f, HocOptions::default()), Err(AmcError::DegenerateInput(_))));
    }

    #[test]
    fn theoretical_values() {
        let q = theoretical_cumulants(ModulationScheme::Qpsk);
        assert_abs_diff_eq!(q.c40.re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q.c42.re, -1.0, epsilon = 1e-12);
        let p = theoretical_cumulants(ModulationScheme::Psk8);
        assert_abs_diff_eq!(p.c40.norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.c42.re, -1.0, epsilon = 1e-12);
        let q16 = theoretical_cumulants(ModulationScheme::Qam16);
        assert_abs_diff_eq!(q16.c42.re, -0.68, epsilon = 1e-12);
        assert_abs_diff_eq!(q16.c40.re, -0.68, epsilon = 1e-12);
        let q64 = theoretical_cumulants(ModulationScheme::Qam64);
        // E|s|⁴ over the 64-point grid is 2.3809523…; C42 = that − 2 = −13/21.
        assert_abs_diff_eq!(q64.c42.re, -13.0 / 21.0, epsilon = 1e-12);
        for s in ModulationScheme::ALL {
            let c = theoretical_cumulants(s);
            assert_eq!(c.c21.re, 1.0);
            assert_eq!(c.c21.im, 0.0);
            assert_eq!(c.c42.im, 0.0);
        }
    }

    #[test]
    fn scale_and_phase_behaviour() {
        let f = generate_frame(ModulationScheme::Qam16, 2000, &mut rng_from(1)).unwrap();
        let base = empirical_cumulants(&f).unwrap();
        let a = 1.7;
        let theta = 0.9;
        let ch = ChannelParams { amplitude: a, freq_offset: 0.0, phase_offset: theta, snr: Snr::Noiseless };
        let y = apply_channel(&f, &ch, &mut rng_from(0)).unwrap();
        let c = empirical_cumulants(&y).unwrap();
        assert_abs_diff_eq!(c.c21.re, a * a * base.c21.re, epsilon = 1e-10);
        assert_abs_diff_eq!(c.c42.re, a.powi(4) * base.c42.re, epsilon = 1e-10);
        assert_abs_diff_eq!(c.c40.norm(), a.powi(4) * base.c40.norm(), epsilon = 1e-10);
        let rotated = base.c40 * Complex64::from_polar(a.powi(4), 4.0 * theta);
        assert!((c.c40 - rotated).norm() < 1e-10);
        assert_abs_diff_eq!(c.c42.im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn qpsk_vs_8psk_distances() {
        let f = generate_frame(ModulationScheme::Qpsk, 100_000, &mut rng_from(2)).unwrap();
        let d = classify_hoc(&f, HocOptions::default()).unwrap();
        assert_eq!(d.scheme, ModulationScheme::Qpsk);
        assert!(d.distances[0] < 1e-2);
        assert!(d.distances[1] >= 0.99);
    }

    #[test]
    fn amplitude_does_not_change_decision() {
        let mut rng = rng_from(3);
        for s in ModulationScheme::ALL {
            let f = generate_frame(s, 5000, &mut rng).unwrap();
            let ch = ChannelParams { amplitude: 3.0, ..ChannelParams::noiseless() };
            let y = apply_channel(&f, &ch, &mut rng).unwrap();
            let d1 = classify_hoc(&f, HocOptions::default()).unwrap();
            let d3 = classify_hoc(&y, HocOptions::default()).unwrap();
            assert_eq!(d1.scheme, d3.scheme);
            for (x, z) in d1.distances.iter().zip(&d3.distances) {
                assert_abs_diff_eq!(x, z, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn phase_invariant_option_survives_rotation() {
        let f = generate_frame(ModulationScheme::Qpsk, 20_000, &mut rng_from(4)).unwrap();
        let ch = ChannelParams { phase_offset: PI / 4.0, ..ChannelParams::noiseless() };
        let y = apply_channel(&f, &ch, &mut rng_from(0)).unwrap();
        // A π/4 rotation turns QPSK's C40 from −1 to +1.
        let plain = classify_hoc(&y, HocOptions::default()).unwrap();
        assert_ne!(plain.scheme, ModulationScheme::Qpsk);
        let inv = classify_hoc(&y, HocOptions { phase_invariant: true }).unwrap();
        assert_eq!(inv.scheme, ModulationScheme::Qpsk);
    }

    #[test]
    fn ties_break_in_enumeration_order() {
        assert_eq!(nearest(&[0.5, 0.5, 0.7, 0.9]), 0);
        assert_eq!(nearest(&[0.9, 0.3, 0.3, 0.3]), 1);
        assert_eq!(nearest(&[0.9, 0.8, 0.7, 0.6]), 3);
    }

    #[test]
    fn table_has_four_rows() {
        let csv = theoretical_table_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().starts_with("QPSK,"));
    }
}
