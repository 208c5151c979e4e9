//! Polar transform and constellation rasterizers.
//!
//! Images are stored row-major with the second axis (θ for polar grids, Q for
//! I–Q grids) on rows and the first axis (r, or I) on columns. Bins are
//! half-open `[edge_i, edge_{i+1})` except the last, which is closed; values
//! outside the axis range are dropped.
//!
//! The soft rasterizer splats every sample over its (up to) four nearest bin
//! centers with bilinear weights, so each cell is a piecewise-linear function
//! of the sample coordinates and gradients can flow back to (r, θ).

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{AmcError, Result};
use crate::modem::{ModulationScheme, SymbolFrame};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarSample {
    pub r: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarFrame {
    pub samples: Vec<PolarSample>,
    pub scheme: ModulationScheme,
}

impl PolarFrame {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Four-quadrant polar transform; `θ(0, 0) = 0`.
pub fn to_polar(frame: &SymbolFrame) -> PolarFrame {
    let samples = frame
        .samples
        .iter()
        .map(|c| PolarSample {
            r: c.norm(),
            theta: if c.re == 0.0 && c.im == 0.0 { 0.0 } else { c.im.atan2(c.re) },
        })
        .collect();
    PolarFrame {
        samples,
        scheme: frame.scheme,
    }
}

pub fn from_polar(polar: &PolarFrame) -> SymbolFrame {
    SymbolFrame {
        samples: polar
            .samples
            .iter()
            .map(|p| Complex64::from_polar(p.r, p.theta))
            .collect(),
        scheme: polar.scheme,
    }
}

/// Wraps an angle into `[-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if (-PI..=PI).contains(&theta) {
        return theta;
    }
    let two_pi = 2.0 * PI;
    let w = theta - two_pi * (theta / two_pi).round();
    w.clamp(-PI, PI)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
}

impl AxisRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        AxisRange { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Hard bin index under the half-open/last-closed convention.
    pub fn bin(&self, v: f64, bins: usize) -> Option<usize> {
        if !(v >= self.lo && v <= self.hi) {
            return None;
        }
        let idx = ((v - self.lo) / self.width() * bins as f64).floor() as usize;
        Some(idx.min(bins - 1))
    }
}

/// Axis ranges and resolution of a constellation image.
///
/// `x` maps to columns (`width` bins), `y` to rows (`height` bins). A
/// circular `y` axis wraps around in the soft rasterizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x: AxisRange,
    pub y: AxisRange,
    pub width: usize,
    pub height: usize,
    pub y_circular: bool,
}

impl GridSpec {
    pub fn new(x: AxisRange, y: AxisRange, width: usize, height: usize, y_circular: bool) -> Result<Self> {
        let spec = GridSpec {
            x,
            y,
            width,
            height,
            y_circular,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok_axis = |a: &AxisRange| a.lo.is_finite() && a.hi.is_finite() && a.lo < a.hi;
        if !ok_axis(&self.x) || !ok_axis(&self.y) {
            return Err(AmcError::InvalidArgument("grid axes need lo < hi".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(AmcError::InvalidArgument("grid resolution must be >= 1".into()));
        }
        Ok(())
    }

    /// r ∈ [0, 3] on columns, θ ∈ [-π, π] on rows, 36×36.
    pub fn polar_default() -> Self {
        Self::polar(3.0, 36)
    }

    /// Square polar grid with r ∈ [0, r_max] and circular θ.
    pub fn polar(r_max: f64, bins: usize) -> Self {
        GridSpec {
            x: AxisRange::new(0.0, r_max),
            y: AxisRange::new(-PI, PI),
            width: bins,
            height: bins,
            y_circular: true,
        }
    }

    /// I, Q ∈ [-3.5, 3.5], 64×64.
    pub fn iq_default() -> Self {
        Self::iq(64)
    }

    pub fn iq(bins: usize) -> Self {
        GridSpec {
            x: AxisRange::new(-3.5, 3.5),
            y: AxisRange::new(-3.5, 3.5),
            width: bins,
            height: bins,
            y_circular: false,
        }
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn cell_width(&self) -> f64 {
        self.x.width() / self.width as f64
    }

    pub fn cell_height(&self) -> f64 {
        self.y.width() / self.height as f64
    }

    fn hard_cell(&self, x: f64, y: f64) -> Option<usize> {
        let col = self.x.bin(x, self.width)?;
        let row = self.y.bin(y, self.height)?;
        Some(row * self.width + col)
    }
}

/// A 2-D density image.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationImage {
    /// Row-major, `spec.height × spec.width`.
    pub data: Vec<f64>,
    pub spec: GridSpec,
    pub in_range_count: usize,
}

impl ConstellationImage {
    pub fn zeros(spec: GridSpec) -> Self {
        ConstellationImage {
            data: vec![0.0; spec.cells()],
            spec,
            in_range_count: 0,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.spec.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn nonzero_cells(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Scales cells so the maximum is 1; a zero image stays zero.
    pub fn normalized(mut self) -> Self {
        let m = self.max();
        if m > 0.0 {
            self.data.iter_mut().for_each(|v| *v /= m);
        }
        self
    }

    /// 8-bit binary PGM of the max-normalized image.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.max();
        write!(w, "P5\n{} {}\n255\n", self.spec.width, self.spec.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| if m > 0.0 { (v / m * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
            .collect();
        w.write_all(&bytes)
    }

    /// Little-endian float32 cells, row-major.
    pub fn to_f32_blob(&self) -> Vec<u8> {
        self.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
    }
}

fn hard_histogram<I>(points: I, spec: &GridSpec) -> ConstellationImage
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut img = ConstellationImage::zeros(*spec);
    for (x, y) in points {
        if let Some(cell) = spec.hard_cell(x, y) {
            img.data[cell] += 1.0;
            img.in_range_count += 1;
        }
    }
    img
}

/// Raw bin counts of (r, θ) pairs; cells sum to `in_range_count`.
pub fn polar_counts(polar: &PolarFrame, spec: &GridSpec) -> ConstellationImage {
    hard_histogram(polar.samples.iter().map(|p| (p.r, p.theta)), spec)
}

/// Raw bin counts of (I, Q) samples.
pub fn iq_counts(frame: &SymbolFrame, spec: &GridSpec) -> ConstellationImage {
    hard_histogram(frame.samples.iter().map(|c| (c.re, c.im)), spec)
}

/// Hard polar histogram, max-normalized to `[0, 1]`.
pub fn rasterize_polar(polar: &PolarFrame, spec: &GridSpec) -> ConstellationImage {
    polar_counts(polar, spec).normalized()
}

/// Hard I–Q histogram, max-normalized to `[0, 1]`.
pub fn rasterize_iq(frame: &SymbolFrame, spec: &GridSpec) -> ConstellationImage {
    iq_counts(frame, spec).normalized()
}

/// Bilinear footprint of one sample: four (cell, weight) entries plus the
/// partial derivatives of each weight with respect to the sample's x and y.
/// Entries may repeat a cell at a clamped border.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub cells: [usize; 4],
    pub weights: [f64; 4],
    pub d_dx: [f64; 4],
    pub d_dy: [f64; 4],
}

/// Linear interpolation footprint along one axis: (index, weight, dweight/dv) × 2.
fn axis_footprint(v: f64, axis: &AxisRange, bins: usize, circular: bool) -> Option<[(usize, f64, f64); 2]> {
    let step = axis.width() / bins as f64;
    let inv = 1.0 / step;
    if circular {
        let u = (v - axis.lo) * inv - 0.5;
        let fl = u.floor();
        let frac = u - fl;
        let i0 = (fl as i64).rem_euclid(bins as i64) as usize;
        let i1 = (i0 + 1) % bins;
        return Some([(i0, 1.0 - frac, -inv), (i1, frac, inv)]);
    }
    if !(v >= axis.lo && v <= axis.hi) {
        return None;
    }
    let u = (v - axis.lo) * inv - 0.5;
    let last = (bins - 1) as f64;
    if u <= 0.0 {
        return Some([(0, 1.0, 0.0), (0, 0.0, 0.0)]);
    }
    if u >= last {
        return Some([(bins - 1, 1.0, 0.0), (bins - 1, 0.0, 0.0)]);
    }
    let fl = u.floor();
    let frac = u - fl;
    let i0 = fl as usize;
    Some([(i0, 1.0 - frac, -inv), (i0 + 1, frac, inv)])
}

impl GridSpec {
    /// Bilinear footprint of the point (x, y), or `None` when it falls
    /// outside a non-circular axis.
    pub fn splat(&self, x: f64, y: f64) -> Option<Splat> {
        let fx = axis_footprint(x, &self.x, self.width, false)?;
        let fy = axis_footprint(y, &self.y, self.height, self.y_circular)?;
        let mut s = Splat {
            cells: [0; 4],
            weights: [0.0; 4],
            d_dx: [0.0; 4],
            d_dy: [0.0; 4],
        };
        let mut k = 0;
        for &(row, wy, dwy) in &fy {
            for &(col, wx, dwx) in &fx {
                s.cells[k] = row * self.width + col;
                s.weights[k] = wx * wy;
                s.d_dx[k] = dwx * wy;
                s.d_dy[k] = wx * dwy;
                k += 1;
            }
        }
        Some(s)
    }
}

/// Output of the soft rasterizer: the unnormalized mass image plus each
/// sample's footprint, which is what the backward pass needs.
#[derive(Debug, Clone)]
pub struct SoftRaster {
    pub image: ConstellationImage,
    pub splats: Vec<Option<Splat>>,
}

impl SoftRaster {
    /// Vector-Jacobian product: given ∂L/∂cell, returns (∂L/∂r, ∂L/∂θ) per
    /// input sample. Dropped samples get zero gradient.
    pub fn backward(&self, grad_cells: &[f64]) -> Vec<(f64, f64)> {
        assert_eq!(grad_cells.len(), self.image.data.len());
        self.splats
            .iter()
            .map(|s| match s {
                Some(s) => (0..4).fold((0.0, 0.0), |(gx, gy), k| {
                    let g = grad_cells[s.cells[k]];
                    (gx + g * s.d_dx[k], gy + g * s.d_dy[k])
                }),
                None => (0.0, 0.0),
            })
            .collect()
    }

    /// Nonzero entries of row `n` of the Jacobian as (cell, ∂cell/∂r, ∂cell/∂θ).
    pub fn jacobian_row(&self, n: usize) -> Vec<(usize, f64, f64)> {
        let mut out: Vec<(usize, f64, f64)> = Vec::new();
        if let Some(s) = &self.splats[n] {
            for k in 0..4 {
                match out.iter_mut().find(|e| e.0 == s.cells[k]) {
                    Some(e) => {
                        e.1 += s.d_dx[k];
                        e.2 += s.d_dy[k];
                    }
                    None => out.push((s.cells[k], s.d_dx[k], s.d_dy[k])),
                }
            }
        }
        out
    }
}

/// Differentiable bilinear splatting of (r, θ) pairs. The returned image is
/// not normalized; its total mass equals the number of in-range pairs.
pub fn soft_rasterize_polar(polar: &PolarFrame, spec: &GridSpec) -> SoftRaster {
    let mut image = ConstellationImage::zeros(*spec);
    let splats: Vec<Option<Splat>> = polar
        .samples
        .iter()
        .map(|p| spec.splat(p.r, p.theta))
        .collect();
    for s in splats.iter().flatten() {
        for k in 0..4 {
            image.data[s.cells[k]] += s.weights[k];
        }
        image.in_range_count += 1;
    }
    SoftRaster { image, splats }
}

/// Max-normalization with a recorded argmax so it can be differentiated.
#[derive(Debug, Clone)]
pub struct MaxNormalized {
    pub data: Vec<f64>,
    pub max: f64,
    pub argmax: usize,
}

impl MaxNormalized {
    pub fn forward(x: &[f64]) -> Self {
        let (argmax, max) = x
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
        let data = if max > 0.0 {
            x.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; x.len()]
        };
        MaxNormalized { data, max, argmax }
    }

    /// ∂L/∂x from ∂L/∂y where y = x / max(x).
    pub fn backward(&self, grad_out: &[f64]) -> Vec<f64> {
        if self.max <= 0.0 {
            return vec![0.0; grad_out.len()];
        }
        let inv = 1.0 / self.max;
        let mut g: Vec<f64> = grad_out.iter().map(|v| v * inv).collect();
        // y_i = x_i / x_m, so ∂y_i/∂x_m picks up -x_i / x_m² = -y_i / x_m.
        let dot: f64 = grad_out.iter().zip(&self.data).map(|(a, b)| a * b).sum();
        g[self.argmax] -= dot * inv;
        g
    }
}
