//! Focused TEM00 beam: intensity field, isointensity volumes and the
//! volumetric weighting kernel |dV/dI|.
//!
//! Lengths are in µm and intensities in W/cm².

use crate::error::{check, Error, Result};
use crate::numeric::quad::{gauss_legendre_on, integrate};
use rayon::prelude::*;
use std::f64::consts::{LN_2, PI};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamGeometry {
    pub wavelength: f64,
    pub waist_w0: f64,
    pub rayleigh_range: f64,
    pub focus_position: f64,
}

impl BeamGeometry {
    /// Beam with zR derived as π·w0²/λ.
    pub fn new(wavelength: f64, waist_w0: f64) -> Result<Self> {
        check(wavelength > 0.0 && wavelength.is_finite(), || format!("wavelength must be > 0, got {wavelength}"))?;
        check(waist_w0 > 0.0 && waist_w0.is_finite(), || format!("w0 must be > 0, got {waist_w0}"))?;
        Ok(BeamGeometry {
            wavelength,
            waist_w0,
            rayleigh_range: PI * waist_w0 * waist_w0 / wavelength,
            focus_position: 0.0,
        })
    }

    pub fn with_rayleigh_range(mut self, zr: f64) -> Result<Self> {
        check(zr > 0.0 && zr.is_finite(), || format!("Rayleigh range must be > 0, got {zr}"))?;
        self.rayleigh_range = zr;
        Ok(self)
    }

    pub fn with_focus_position(mut self, z: f64) -> Self {
        self.focus_position = z;
        self
    }

    /// 800 nm, w0 = 30 µm.
    pub fn default_800nm() -> Self {
        BeamGeometry::new(0.8, 30.0).unwrap()
    }

    pub fn width_at(&self, z: f64) -> f64 {
        let zeta = (z - self.focus_position) / self.rayleigh_range;
        self.waist_w0 * (1.0 + zeta * zeta).sqrt()
    }

    /// π·w0²·zR, the scale of every isointensity volume.
    pub fn volume_scale(&self) -> f64 {
        PI * self.waist_w0 * self.waist_w0 * self.rayleigh_range
    }

    /// I/I0 at a point.
    pub fn relative_intensity(&self, x: f64, y: f64, z: f64) -> f64 {
        let zeta = (z - self.focus_position) / self.rayleigh_range;
        let g = 1.0 + zeta * zeta;
        let w2 = self.waist_w0 * self.waist_w0 * g;
        (-2.0 * (x * x + y * y) / w2).exp() / g
    }
}

pub fn intensity_at(point: (f64, f64, f64), beam: &BeamGeometry, peak_intensity: f64) -> f64 {
    peak_intensity * beam.relative_intensity(point.0, point.1, point.2)
}

/// Peak intensity of a Gaussian pulse in a Gaussian spot.
///
/// P_peak = (E/τ)·√(4 ln2/π) for a Gaussian envelope of FWHM τ; I0 = 2·P_peak/(π w0²).
pub fn peak_intensity_from_pulse(avg_power: f64, rep_rate: f64, pulse_fwhm: f64, beam: &BeamGeometry) -> Result<f64> {
    check(avg_power > 0.0, || format!("average power must be > 0, got {avg_power}"))?;
    check(rep_rate > 0.0, || format!("repetition rate must be > 0, got {rep_rate}"))?;
    check(pulse_fwhm > 0.0, || format!("pulse duration must be > 0, got {pulse_fwhm}"))?;
    let energy = avg_power / rep_rate;
    let p_peak = energy / pulse_fwhm * (4.0 * LN_2 / PI).sqrt();
    let w0_cm = beam.waist_w0 * 1e-4;
    Ok(2.0 * p_peak / (PI * w0_cm * w0_cm))
}

// V(u)/(π w0² zR) in closed form, a = √(u−1).
fn volume_shape(a: f64) -> f64 {
    if a < 1e-2 {
        let a2 = a * a;
        a * a2 * (2.0 / 3.0 - a2 * (4.0 / 15.0 - a2 * 4.0 / 21.0))
    } else {
        2.0 / 9.0 * a * a * a + 4.0 / 3.0 * (a - a.atan())
    }
}

/// Volume (µm³) where the intensity is at least `i`.
pub fn isointensity_volume(i: f64, peak_intensity: f64, beam: &BeamGeometry) -> Result<f64> {
    check(i > 0.0, || format!("intensity must be > 0, got {i}"))?;
    if i >= peak_intensity {
        return Ok(0.0);
    }
    let a = (peak_intensity / i - 1.0).sqrt();
    Ok(beam.volume_scale() * volume_shape(a))
}

/// Same volume from the slice integral by adaptive Gauss–Kronrod.
pub fn isointensity_volume_quadrature(i: f64, peak_intensity: f64, beam: &BeamGeometry) -> Result<f64> {
    check(i > 0.0, || format!("intensity must be > 0, got {i}"))?;
    if i >= peak_intensity {
        return Ok(0.0);
    }
    let u = peak_intensity / i;
    let zm = (u - 1.0).sqrt();
    let q = integrate(|z| (1.0 + z * z) * (u / (1.0 + z * z)).ln(), 0.0, zm, 1e-12, 1e-9)?;
    Ok(beam.volume_scale() * q.value)
}

/// |∂V/∂I| in µm³ per W/cm², from differentiating the slice integral.
pub fn dv_di(i: f64, peak_intensity: f64, beam: &BeamGeometry) -> Result<f64> {
    check(i > 0.0 && i < peak_intensity, || {
        format!("dV/dI needs 0 < I < I0, got I = {i}, I0 = {peak_intensity}")
    })?;
    let a = (peak_intensity / i - 1.0).sqrt();
    Ok(beam.volume_scale() * (a + a * a * a / 3.0) / i)
}

/// |∂V/∂I|·I as a function of s = ln(I0/I).
pub(crate) fn log_kernel(s: f64, beam: &BeamGeometry) -> f64 {
    let e = s.exp_m1();
    if e <= 0.0 {
        return 0.0;
    }
    let a = e.sqrt();
    beam.volume_scale() * (a + a * e / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spacing {
    Log,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityGrid {
    values: Vec<f64>,
    spacing: Spacing,
}

impl IntensityGrid {
    pub fn new(values: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Grid("empty intensity grid".into()));
        }
        if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Grid("intensities must be finite and > 0".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Grid("intensity grid must be strictly increasing".into()));
        }
        Ok(IntensityGrid { values, spacing })
    }

    /// Infer the spacing from the values (log if ratios are constant).
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let spacing = if is_log_spaced(&values) { Spacing::Log } else { Spacing::Linear };
        IntensityGrid::new(values, spacing)
    }

    pub fn logspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && n >= 2) {
            return Err(Error::Grid(format!("bad log grid: {lo} .. {hi}, {n} points")));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let mut v: Vec<f64> = (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect();
        v[0] = lo;
        v[n - 1] = hi;
        IntensityGrid::new(v, Spacing::Log)
    }

    pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && n >= 2) {
            return Err(Error::Grid(format!("bad linear grid: {lo} .. {hi}, {n} points")));
        }
        let v = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
        IntensityGrid::new(v, Spacing::Linear)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn spacing(&self) -> Spacing {
        self.spacing
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn min(&self) -> f64 {
        self.values[0]
    }
    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
    /// Decades spanned.
    pub fn decades(&self) -> f64 {
        (self.max() / self.min()).log10()
    }
}

pub(crate) fn is_log_spaced(v: &[f64]) -> bool {
    if v.len() < 3 {
        return v.len() == 2 && v[0] > 0.0;
    }
    let r0 = (v[1] / v[0]).ln();
    v.windows(2).all(|w| ((w[1] / w[0]).ln() - r0).abs() <= 1e-6 * r0.abs())
}

/// Axis-aligned box in the beam frame: x and y transverse, z along propagation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionVolume {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    /// Box centre downstream of the waist.
    pub z_offset: f64,
    pub transverse_offset: (f64, f64),
}

/// How the entrance slits and the TOF-mapped depth sit in the beam frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlitOrientation {
    /// Long slit along propagation (z), narrow slit along y, TOF depth along x.
    LongAlongBeam,
    /// Narrow slit along x, long slit along y, TOF depth along z.
    LongTransverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl SlitOrientation {
    pub fn depth_axis(self) -> Axis {
        match self {
            SlitOrientation::LongAlongBeam => Axis::X,
            SlitOrientation::LongTransverse => Axis::Z,
        }
    }
}

impl DetectionVolume {
    pub fn new(dx: f64, dy: f64, dz: f64, z_offset: f64) -> Result<Self> {
        let v = DetectionVolume { dx, dy, dz, z_offset, transverse_offset: (0.0, 0.0) };
        v.validate()?;
        Ok(v)
    }

    pub fn from_slits(narrow: f64, long: f64, depth: f64, z_offset: f64, o: SlitOrientation) -> Result<Self> {
        match o {
            SlitOrientation::LongAlongBeam => DetectionVolume::new(depth, narrow, long, z_offset),
            SlitOrientation::LongTransverse => DetectionVolume::new(narrow, long, depth, z_offset),
        }
    }

    /// 10 µm × 400 µm slits, 3 µm depth, 1.7 mm downstream.
    pub fn reference() -> Self {
        DetectionVolume::from_slits(10.0, 400.0, 3.0, 1700.0, SlitOrientation::LongAlongBeam).unwrap()
    }

    pub fn with_transverse_offset(mut self, x0: f64, y0: f64) -> Self {
        self.transverse_offset = (x0, y0);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dx", self.dx), ("dy", self.dy), ("dz", self.dz)] {
            check(v > 0.0 && v.is_finite(), || format!("degenerate detection volume: {name} = {v}"))?;
        }
        check(self.z_offset.is_finite(), || "z_offset must be finite".into())
    }

    pub fn volume(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    pub fn extent(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.dx,
            Axis::Y => self.dy,
            Axis::Z => self.dz,
        }
    }

    pub fn with_extent(mut self, axis: Axis, len: f64) -> Result<Self> {
        match axis {
            Axis::X => self.dx = len,
            Axis::Y => self.dy = len,
            Axis::Z => self.dz = len,
        }
        self.validate()?;
        Ok(self)
    }

    pub fn center(&self, beam: &BeamGeometry) -> (f64, f64, f64) {
        (self.transverse_offset.0, self.transverse_offset.1, beam.focus_position + self.z_offset)
    }

    /// Tensor-product Gauss–Legendre nodes: relative intensities and weights (µm³).
    pub fn quadrature(&self, beam: &BeamGeometry, order: usize) -> (Vec<f64>, Vec<f64>) {
        let (cx, cy, cz) = self.center(beam);
        let (xs, wx) = gauss_legendre_on(order, cx - self.dx / 2.0, cx + self.dx / 2.0);
        let (ys, wy) = gauss_legendre_on(order, cy - self.dy / 2.0, cy + self.dy / 2.0);
        let (zs, wz) = gauss_legendre_on(order, cz - self.dz / 2.0, cz + self.dz / 2.0);
        let n = order * order * order;
        let mut eta = Vec::with_capacity(n);
        let mut w = Vec::with_capacity(n);
        for (x, a) in xs.iter().zip(&wx) {
            for (y, b) in ys.iter().zip(&wy) {
                for (z, c) in zs.iter().zip(&wz) {
                    eta.push(beam.relative_intensity(*x, *y, *z));
                    w.push(a * b * c);
                }
            }
        }
        (eta, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntensityStats {
    pub mean: f64,
    pub std: f64,
    /// std/mean
    pub rstd: f64,
}

/// Relative standard deviation (std/mean) of the intensity over a box.
pub fn intensity_rstd(volume: &DetectionVolume, beam: &BeamGeometry, peak_intensity: f64, order: usize) -> Result<IntensityStats> {
    volume.validate()?;
    check(order >= 1, || "quadrature order must be >= 1".into())?;
    let (cx, cy, cz) = volume.center(beam);
    let (xs, wx) = gauss_legendre_on(order, cx - volume.dx / 2.0, cx + volume.dx / 2.0);
    let (ys, wy) = gauss_legendre_on(order, cy - volume.dy / 2.0, cy + volume.dy / 2.0);
    let (zs, wz) = gauss_legendre_on(order, cz - volume.dz / 2.0, cz + volume.dz / 2.0);
    // per-z-node partial sums are independent; ordered reduction keeps results bit-stable
    let moments = |f: &(dyn Fn(f64) -> f64 + Sync)| -> f64 {
        let parts: Vec<f64> = (0..order)
            .into_par_iter()
            .map(|k| {
                let mut m = 0.0;
                for (x, a) in xs.iter().zip(&wx) {
                    for (y, b) in ys.iter().zip(&wy) {
                        m += a * b * f(beam.relative_intensity(*x, *y, zs[k]));
                    }
                }
                m * wz[k]
            })
            .collect();
        parts.iter().sum()
    };
    // normalise by the rule's own measure: for tiny boxes far from the origin the
    // node spacing carries rounding that would otherwise leak into the variance
    let measure = moments(&|_| 1.0);
    let m1 = moments(&|v| v) / measure;
    let var = moments(&|v| (v - m1) * (v - m1)) / measure;
    let std = var.max(0.0).sqrt();
    Ok(IntensityStats { mean: m1 * peak_intensity, std: std * peak_intensity, rstd: std / m1 })
}
