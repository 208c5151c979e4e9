//! Symbol generation and the flat-fading + AWGN channel.
//!
//! The received baseband sample is
//!
//! ```text
//! y(n) = a · exp(j(2π f0 n + θ0)) · s(n) + g(n),    n = 1..=L
//! ```
//!
//! with `s(n)` drawn uniformly from a unit-energy constellation and `g(n)`
//! circular complex Gaussian noise of total variance `10^(-snr_db/10)`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{AmcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModulationScheme {
    Qpsk,
    Psk8,
    Qam16,
    Qam64,
}

impl ModulationScheme {
    /// Enumeration order; also the tie-breaking order for classifiers.
    pub const ALL: [ModulationScheme; 4] = [
        ModulationScheme::Qpsk,
        ModulationScheme::Psk8,
        ModulationScheme::Qam16,
        ModulationScheme::Qam64,
    ];

    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn order(self) -> usize {
        match self {
            ModulationScheme::Qpsk => 4,
            ModulationScheme::Psk8 => 8,
            ModulationScheme::Qam16 => 16,
            ModulationScheme::Qam64 => 64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModulationScheme::Qpsk => "QPSK",
            ModulationScheme::Psk8 => "8PSK",
            ModulationScheme::Qam16 => "16QAM",
            ModulationScheme::Qam64 => "64QAM",
        }
    }

    /// Smallest rotation mapping the constellation onto itself.
    pub fn rotational_symmetry(self) -> f64 {
        match self {
            ModulationScheme::Psk8 => PI / 4.0,
            _ => PI / 2.0,
        }
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationScheme {
    type Err = AmcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "QPSK" => Ok(ModulationScheme::Qpsk),
            "8PSK" | "PSK8" => Ok(ModulationScheme::Psk8),
            "16QAM" | "QAM16" => Ok(ModulationScheme::Qam16),
            "64QAM" | "QAM64" => Ok(ModulationScheme::Qam64),
            other => Err(AmcError::InvalidArgument(format!(
                "unknown modulation scheme '{other}'"
            ))),
        }
    }
}

/// Unit-average-energy constellation points for `scheme`.
///
/// PSK points sit at `exp(jπk/4)` (8PSK) and `(±1±j)/√2` (QPSK), so QPSK is a
/// subset of 8PSK. QAM points form the square odd-integer grid scaled by
/// `1/√10` (16QAM) or `1/√42` (64QAM).
pub fn constellation(scheme: ModulationScheme) -> Vec<Complex64> {
    match scheme {
        ModulationScheme::Qpsk => [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .iter()
            .map(|&(i, q)| Complex64::new(i * FRAC_1_SQRT_2, q * FRAC_1_SQRT_2))
            .collect(),
        ModulationScheme::Psk8 => (0..8)
            .map(|k| Complex64::from_polar(1.0, k as f64 * PI / 4.0))
            .collect(),
        ModulationScheme::Qam16 => square_qam(4, 10.0),
        ModulationScheme::Qam64 => square_qam(8, 42.0),
    }
}

fn square_qam(side: i32, mean_energy: f64) -> Vec<Complex64> {
    let scale = mean_energy.sqrt().recip();
    let levels: Vec<f64> = (0..side).map(|k| (2 * k - side + 1) as f64).collect();
    let mut pts = Vec::with_capacity((side * side) as usize);
    for &q in levels.iter().rev() {
        for &i in &levels {
            pts.push(Complex64::new(i * scale, q * scale));
        }
    }
    pts
}

/// An ordered sequence of complex baseband samples with its modulation label.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub samples: Vec<Complex64>,
    pub scheme: ModulationScheme,
}

impl SymbolFrame {
    pub fn new(samples: Vec<Complex64>, scheme: ModulationScheme) -> Result<Self> {
        if let Some(n) = samples.iter().position(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(AmcError::InvalidArgument(format!(
                "sample {n} is not finite"
            )));
        }
        Ok(SymbolFrame { samples, scheme })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of |y|² over the frame.
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Little-endian binary: `scheme id: u8`, `L: u32`, then `2L` f64 values,
    /// I and Q interleaved.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&[self.scheme.index() as u8])?;
        w.write_all(&(self.samples.len() as u32).to_le_bytes())?;
        for c in &self.samples {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(5 + 16 * self.samples.len());
        self.write_binary(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let io = |e| AmcError::Data(format!("truncated frame: {e}"));
        let mut id = [0u8; 1];
        r.read_exact(&mut id).map_err(io)?;
        let scheme = ModulationScheme::from_index(id[0] as usize)
            .ok_or_else(|| AmcError::Data(format!("unknown scheme id {}", id[0])))?;
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(io)?;
        let len = u32::from_le_bytes(len) as usize;
        let mut samples = Vec::with_capacity(len);
        let mut word = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut word).map_err(io)?;
            let re = f64::from_le_bytes(word);
            r.read_exact(&mut word).map_err(io)?;
            let im = f64::from_le_bytes(word);
            samples.push(Complex64::new(re, im));
        }
        SymbolFrame::new(samples, scheme).map_err(|e| AmcError::Data(e.to_string()))
    }

    /// Debug export with columns `n,I,Q` (n counted from 1).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,I,Q\n");
        for (n, c) in self.samples.iter().enumerate() {
            out.push_str(&format!("{},{:e},{:e}\n", n + 1, c.re, c.im));
        }
        out
    }
}

/// Draws `len` symbols independently and uniformly from the constellation.
pub fn generate_frame<R: Rng + ?Sized>(
    scheme: ModulationScheme,
    len: usize,
    rng: &mut R,
) -> Result<SymbolFrame> {
    if len == 0 {
        return Err(AmcError::InvalidArgument("frame length must be >= 1".into()));
    }
    let points = constellation(scheme);
    let samples = (0..len)
        .map(|_| points[rng.gen_range(0..points.len())])
        .collect();
    Ok(SymbolFrame { samples, scheme })
}

/// Noise level of the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    /// Es/N0 in dB against the unit-energy transmitted symbols.
    Db(f64),
    /// No noise at all; the channel is then a pure complex gain.
    Noiseless,
}

impl Snr {
    /// Total complex noise variance σ².
    pub fn noise_variance(self) -> f64 {
        match self {
            Snr::Db(db) => 10f64.powf(-db / 10.0),
            Snr::Noiseless => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub amplitude: f64,
    /// Cycles per sample.
    pub freq_offset: f64,
    /// Radians.
    pub phase_offset: f64,
    pub snr: Snr,
}

impl ChannelParams {
    pub fn awgn(snr: Snr) -> Self {
        ChannelParams {
            amplitude: 1.0,
            freq_offset: 0.0,
            phase_offset: 0.0,
            snr,
        }
    }

    pub fn noiseless() -> Self {
        Self::awgn(Snr::Noiseless)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(AmcError::InvalidArgument(format!(
                "amplitude must be positive and finite, got {}",
                self.amplitude
            )));
        }
        if !self.freq_offset.is_finite() || !self.phase_offset.is_finite() {
            return Err(AmcError::InvalidArgument("channel offsets must be finite".into()));
        }
        if let Snr::Db(db) = self.snr {
            if !db.is_finite() {
                return Err(AmcError::InvalidArgument("snr_db must be finite".into()));
            }
        }
        Ok(())
    }
}

/// Passes `frame` through the flat-fading channel. Noise is drawn from `rng`
/// only when the SNR is finite.
pub fn apply_channel<R: Rng + ?Sized>(
    frame: &SymbolFrame,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<SymbolFrame> {
    params.validate()?;
    let sigma = (params.snr.noise_variance() / 2.0).sqrt();
    let noisy = matches!(params.snr, Snr::Db(_));
    let samples = frame
        .samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let n = (i + 1) as f64;
            let phase = 2.0 * PI * params.freq_offset * n + params.phase_offset;
            let faded = if phase == 0.0 {
                s * params.amplitude
            } else {
                s * Complex64::from_polar(params.amplitude, phase)
            };
            if noisy {
                let gi: f64 = StandardNormal.sample(rng);
                let gq: f64 = StandardNormal.sample(rng);
                faded + Complex64::new(sigma * gi, sigma * gq)
            } else {
                faded
            }
        })
        .collect();
    Ok(SymbolFrame {
        samples,
        scheme: frame.scheme,
    })
}

/// Block-fading distribution: one amplitude and phase draw per frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadingDistribution {
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for FadingDistribution {
    fn default() -> Self {
        FadingDistribution {
            a_min: 0.5,
            a_max: 2.0,
        }
    }
}

impl FadingDistribution {
    pub fn new(a_min: f64, a_max: f64) -> Result<Self> {
        let d = FadingDistribution { a_min, a_max };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a_min > 0.0 && self.a_min <= self.a_max && self.a_max.is_finite()) {
            return Err(AmcError::InvalidArgument(format!(
                "fading range must satisfy 0 < a_min <= a_max, got [{}, {}]",
                self.a_min, self.a_max
            )));
        }
        Ok(())
    }
}

/// Samples `a ~ U[a_min, a_max]`, `θ0 ~ U[-π, π]`, `f0 = 0`.
pub fn sample_fading<R: Rng + ?Sized>(
    dist: &FadingDistribution,
    snr: Snr,
    rng: &mut R,
) -> ChannelParams {
    let amplitude = if dist.a_min == dist.a_max {
        dist.a_min
    } else {
        rng.gen_range(dist.a_min..=dist.a_max)
    };
    let phase_offset = rng.gen_range(-PI..=PI);
    ChannelParams {
        amplitude,
        freq_offset: 0.0,
        phase_offset,
        snr,
    }
}
