//! Forward model of the measurement: P(I) averaged over the whole focus or
//! over a clipped detection box.
//!
//! The proportionality constant of the focal average is fixed to 1, so full
//! focus yields are in µm³ and clipped yields in µm³ of ionized volume.

use crate::beam::{dv_di, log_kernel, Axis, BeamGeometry, DetectionVolume, IntensityGrid};
use crate::error::{check, Error, Result};
use crate::fitkit::{fit_two_slope, FitOptions, FitResult};
use crate::ionmodel::ProbabilityCurve;
use crate::numeric::quad::integrate;
use rayon::prelude::*;

/// Lower integration limit as a fraction of I0.
pub const DEFAULT_CUTOFF: f64 = 1e-4;
/// Gauss–Legendre points per box axis.
pub const DEFAULT_ORDER: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverageMode {
    FullFocus,
    Clipped,
}

impl AverageMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AverageMode::FullFocus => "full_focus",
            AverageMode::Clipped => "clipped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full_focus" | "full" => Some(AverageMode::FullFocus),
            "clipped" => Some(AverageMode::Clipped),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct YieldCurve {
    pub grid: IntensityGrid,
    pub s: Vec<f64>,
    pub mode: AverageMode,
    /// Upper bound on the part of S cut off below the integration limit
    /// (full focus only; zero for clipped curves).
    pub truncation_bound: Vec<f64>,
    pub metadata: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy)]
pub struct FullFocusOptions {
    pub cutoff: f64,
    pub rel_tol: f64,
}

impl Default for FullFocusOptions {
    fn default() -> Self {
        FullFocusOptions { cutoff: DEFAULT_CUTOFF, rel_tol: 1e-9 }
    }
}

/// S(I0) = ∫ P(I)|∂V/∂I| dI over [lower, I0] for an arbitrary P.
///
/// Integrates in t with I = I0·exp(−t²), which removes the √ behaviour of
/// the kernel at I → I0. Returns (S, truncation bound) per grid point.
pub fn full_focus_fn<F>(p: F, beam: &BeamGeometry, i0: &[f64], lower: &[f64], rel_tol: f64) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(f64) -> f64 + Sync,
{
    let out: Result<Vec<(f64, f64)>> = i0
        .par_iter()
        .zip(lower.par_iter())
        .map(|(&i0, &lo)| {
            if !(lo > 0.0 && lo < i0) {
                return Err(Error::Grid(format!("integration limit {lo:e} must lie in (0, {i0:e})")));
            }
            let tmax = (i0 / lo).ln().sqrt();
            let q = integrate(
                |t| {
                    let s = t * t;
                    p(i0 * (-s).exp()) * log_kernel(s, beam) * 2.0 * t
                },
                0.0,
                tmax,
                0.0,
                rel_tol,
            )?;
            Ok((q.value, tail_bound(&p, beam, i0, lo)))
        })
        .collect();
    Ok(out?.into_iter().unzip())
}

// Contribution below `lo` assuming P continues as a power law; infinite when
// the local order does not beat the 3/2 growth of the volume.
fn tail_bound<F: Fn(f64) -> f64>(p: &F, beam: &BeamGeometry, i0: f64, lo: f64) -> f64 {
    let p0 = p(lo);
    if p0 <= 0.0 {
        return 0.0;
    }
    let h = 0.01;
    let p1 = p(lo * f64::exp(h));
    let n = if p1 > 0.0 { (p1 / p0).ln() / h } else { f64::INFINITY };
    if n <= 1.5 {
        return f64::INFINITY;
    }
    p0 * dv_di(lo, i0, beam).unwrap_or(0.0) * lo / (n - 1.5)
}

/// Focal average over the full Gaussian focus.
pub fn average_full_focus(p: &ProbabilityCurve, beam: &BeamGeometry, i0_grid: &IntensityGrid) -> Result<YieldCurve> {
    average_full_focus_with(p, beam, i0_grid, FullFocusOptions::default())
}

pub fn average_full_focus_with(p: &ProbabilityCurve, beam: &BeamGeometry, i0_grid: &IntensityGrid, opts: FullFocusOptions) -> Result<YieldCurve> {
    check(opts.cutoff > 0.0 && opts.cutoff < 1.0, || format!("cutoff must lie in (0, 1), got {}", opts.cutoff))?;
    let (pmin, pmax) = (p.grid.min(), p.grid.max());
    if pmax < i0_grid.max() * (1.0 - 1e-12) {
        return Err(Error::Grid(format!("probability table ends at {pmax:e}, below the largest I0 {:e}", i0_grid.max())));
    }
    if pmin > opts.cutoff * i0_grid.max() * (1.0 + 1e-12) {
        return Err(Error::Grid(format!(
            "probability table starts at {pmin:e}; coverage down to {:e} is required",
            opts.cutoff * i0_grid.max()
        )));
    }
    // below the table the remainder goes into the truncation bound
    let lower: Vec<f64> = i0_grid.values().iter().map(|i0| (i0 * opts.cutoff).max(pmin)).collect();
    let interp = |i: f64| crate::numeric::interp::loglog(p.grid.values(), &p.p, i);
    let (s, bound) = full_focus_fn(interp, beam, i0_grid.values(), &lower, opts.rel_tol)?;
    Ok(YieldCurve {
        grid: i0_grid.clone(),
        s,
        mode: AverageMode::FullFocus,
        truncation_bound: bound,
        metadata: vec![
            ("mode".into(), "full_focus".into()),
            ("cutoff".into(), format!("{:e}", opts.cutoff)),
            ("beam".into(), describe_beam(beam)),
            ("probability".into(), p.provenance.clone()),
        ],
    })
}

/// Box average for an arbitrary P: S(I0) = Σ w·P(I0·η) over Gauss–Legendre nodes.
pub fn clipped_fn<F>(p: F, beam: &BeamGeometry, volume: &DetectionVolume, i0: &[f64], order: usize) -> Result<Vec<f64>>
where
    F: Fn(f64) -> f64 + Sync,
{
    volume.validate()?;
    check(order >= 8, || format!("quadrature order must be >= 8, got {order}"))?;
    let (eta, w) = volume.quadrature(beam, order);
    Ok(i0
        .par_iter()
        .map(|&i0| eta.iter().zip(&w).map(|(e, w)| w * p(i0 * e)).sum())
        .collect())
}

/// Relative-intensity range seen by the box quadrature nodes.
pub fn eta_range(beam: &BeamGeometry, volume: &DetectionVolume, order: usize) -> (f64, f64) {
    let (eta, _) = volume.quadrature(beam, order);
    eta.iter().fold((f64::INFINITY, 0.0f64), |(a, b), e| (a.min(*e), b.max(*e)))
}

pub fn average_clipped(
    p: &ProbabilityCurve,
    beam: &BeamGeometry,
    volume: &DetectionVolume,
    i0_grid: &IntensityGrid,
    order: usize,
) -> Result<YieldCurve> {
    volume.validate()?;
    check(order >= 8, || format!("quadrature order must be >= 8, got {order}"))?;
    let (emin, emax) = eta_range(beam, volume, order);
    let need = (emin * i0_grid.min(), emax * i0_grid.max());
    let tol = 1e-9;
    if p.grid.min() > need.0 * (1.0 + tol) || p.grid.max() < need.1 * (1.0 - tol) {
        return Err(Error::Grid(format!(
            "probability table [{:e}, {:e}] does not cover the box intensities [{:e}, {:e}]",
            p.grid.min(),
            p.grid.max(),
            need.0,
            need.1
        )));
    }
    let interp = |i: f64| crate::numeric::interp::loglog(p.grid.values(), &p.p, i);
    let s = clipped_fn(interp, beam, volume, i0_grid.values(), order)?;
    Ok(YieldCurve {
        grid: i0_grid.clone(),
        truncation_bound: vec![0.0; s.len()],
        s,
        mode: AverageMode::Clipped,
        metadata: vec![
            ("mode".into(), "clipped".into()),
            ("beam".into(), describe_beam(beam)),
            ("volume".into(), describe_volume(volume)),
            ("quadrature_order".into(), order.to_string()),
            ("probability".into(), p.provenance.clone()),
        ],
    })
}

pub fn describe_beam(b: &BeamGeometry) -> String {
    format!(
        "wavelength={}um w0={}um zR={}um focus={}um",
        b.wavelength, b.waist_w0, b.rayleigh_range, b.focus_position
    )
}

pub fn describe_volume(v: &DetectionVolume) -> String {
    format!(
        "dx={}um dy={}um dz={}um z_offset={}um x0={}um y0={}um",
        v.dx, v.dy, v.dz, v.z_offset, v.transverse_offset.0, v.transverse_offset.1
    )
}

#[derive(Debug, Clone)]
pub struct ScanRow {
    pub volume: DetectionVolume,
    pub fit: FitResult,
}

/// Fit every volume of a family; kink-free P should give insignificant kinks throughout.
pub fn clipping_artifact_scan(
    p: &ProbabilityCurve,
    beam: &BeamGeometry,
    family: &[DetectionVolume],
    i0_grid: &IntensityGrid,
    order: usize,
    fit_opts: &FitOptions,
) -> Result<Vec<ScanRow>> {
    check(!family.is_empty(), || "volume family is empty".into())?;
    family
        .iter()
        .map(|v| {
            let y = average_clipped(p, beam, v, i0_grid, order)?;
            let fit = fit_two_slope(y.grid.values(), &y.s, fit_opts)?;
            Ok(ScanRow { volume: *v, fit })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub factor: f64,
    pub extent: f64,
    pub fit: FitResult,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub axis: Axis,
    pub rows: Vec<ConvergenceRow>,
    /// n_b never rises by more than the noise band as the box shrinks.
    pub nonincreasing: bool,
    pub final_n_b: f64,
    /// |final n_b − target| ≤ 0.2 when a target was given.
    pub converged: Option<bool>,
}

/// Fit-noise band for the monotonicity check.
pub const NB_NOISE_BAND: f64 = 0.05;

#[allow(clippy::too_many_arguments)]
pub fn residual_averaging_convergence(
    p: &ProbabilityCurve,
    beam: &BeamGeometry,
    base: &DetectionVolume,
    axis: Axis,
    factors: &[f64],
    i0_grid: &IntensityGrid,
    order: usize,
    target_n2: Option<f64>,
) -> Result<ConvergenceReport> {
    check(!factors.is_empty(), || "no shrink factors".into())?;
    check(factors.iter().all(|f| *f > 0.0 && *f <= 1.0), || "shrink factors must lie in (0, 1]".into())?;
    check(factors.windows(2).all(|w| w[1] < w[0]), || "shrink factors must be strictly decreasing".into())?;
    let base_len = base.extent(axis);
    let mut rows = Vec::with_capacity(factors.len());
    for &f in factors {
        let v = base.with_extent(axis, base_len * f)?;
        let y = average_clipped(p, beam, &v, i0_grid, order)?;
        let fit = fit_two_slope(y.grid.values(), &y.s, &FitOptions::default())?;
        rows.push(ConvergenceRow { factor: f, extent: base_len * f, fit });
    }
    let nonincreasing = rows.windows(2).all(|w| w[1].fit.n_b <= w[0].fit.n_b + NB_NOISE_BAND);
    let final_n_b = rows.last().unwrap().fit.n_b;
    Ok(ConvergenceReport { axis, nonincreasing, final_n_b, converged: target_n2.map(|t| (final_n_b - t).abs() <= 0.2), rows })
}
