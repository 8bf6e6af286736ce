//! Regularized inversion of the full-focus average: recover P(I) from S(I0).
//!
//! P is expanded in hat functions that are linear in ln I on a log grid.
//! Row j of the kernel integrates each hat against |∂V/∂I| over
//! [cutoff·I0_j, I0_j]; a partial top interval holds P at its lower node so
//! that no column above I0_j enters the row. Below the first node P is
//! continued as a power law p_0·(I/I_min)^γ, which folds into column 0.

use crate::beam::{is_log_spaced, log_kernel, BeamGeometry, IntensityGrid, Spacing};
use crate::error::{check, Error, Result};
use crate::focalavg::{AverageMode, YieldCurve, DEFAULT_CUTOFF};
use crate::ionmodel::ProbabilityCurve;
use crate::numeric::quad::integrate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub i0_grid: IntensityGrid,
    pub i_grid: IntensityGrid,
    /// Rows follow `i0_grid`, columns `i_grid`.
    pub weights: DMatrix<f64>,
    pub beam: BeamGeometry,
    pub cutoff: f64,
    /// Exponent of the power-law continuation below `i_grid.min()`; `None`
    /// means P is taken as zero there.
    pub tail_exponent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationSpec {
    pub lambda: f64,
    pub order: usize,
    pub nonnegativity: bool,
}

impl RegularizationSpec {
    pub fn new(lambda: f64, order: usize, nonnegativity: bool) -> Result<Self> {
        check(lambda >= 0.0 && lambda.is_finite(), || format!("lambda must be >= 0, got {lambda}"))?;
        check(order <= 2, || format!("derivative order must be 0, 1 or 2, got {order}"))?;
        Ok(RegularizationSpec { lambda, order, nonnegativity })
    }
}

fn require_log(g: &IntensityGrid) -> Result<()> {
    if g.spacing() != Spacing::Log || !is_log_spaced(g.values()) {
        return Err(Error::Grid("inversion needs log-spaced intensity grids; linear grids are rejected".into()));
    }
    Ok(())
}

// ∫ K(s)·f(s) ds over [sa, sb], integrated in t = √s.
fn piece(beam: &BeamGeometry, sa: f64, sb: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let (ta, tb) = (sa.max(0.0).sqrt(), sb.sqrt());
    if tb <= ta {
        return Ok(0.0);
    }
    let q = integrate(|t| log_kernel(t * t, beam) * f(t * t) * 2.0 * t, ta, tb, 0.0, 1e-11)?;
    Ok(q.value)
}

/// Kernel on matched grids (`i_grid` = `i0_grid`) with zero continuation below.
pub fn build_kernel(beam: &BeamGeometry, i0_grid: &IntensityGrid, i_grid: &IntensityGrid) -> Result<KernelMatrix> {
    build_kernel_with(beam, i0_grid, i_grid, DEFAULT_CUTOFF, None)
}

pub fn build_kernel_with(
    beam: &BeamGeometry,
    i0_grid: &IntensityGrid,
    i_grid: &IntensityGrid,
    cutoff: f64,
    tail_exponent: Option<f64>,
) -> Result<KernelMatrix> {
    require_log(i0_grid)?;
    require_log(i_grid)?;
    check(cutoff > 0.0 && cutoff < 1.0, || "cutoff must lie in (0, 1)".into())?;
    if let Some(g) = tail_exponent {
        check(g.is_finite() && g >= 0.0, || format!("tail exponent must be >= 0, got {g}"))?;
    }
    if i_grid.min() <= cutoff * i0_grid.min() * (1.0 - 1e-12) {
        return Err(Error::Grid(format!(
            "intensity grid starts at {:e}, below the integration cutoff {:e}",
            i_grid.min(),
            cutoff * i0_grid.min()
        )));
    }
    if (i_grid.max() / i0_grid.max() - 1.0).abs() > 1e-12 {
        return Err(Error::Grid("intensity grid must end at the largest I0".into()));
    }
    let y: Vec<f64> = i_grid.values().iter().map(|v| v.ln()).collect();
    let ni = y.len();
    let rows: Result<Vec<Vec<f64>>> = i0_grid
        .values()
        .par_iter()
        .map(|&i0| {
            let l0 = i0.ln();
            let lo = l0 + cutoff.ln();
            let mut row = vec![0.0; ni];
            for k in 0..ni - 1 {
                let (ya, yb) = (y[k], y[k + 1]);
                if yb <= lo || ya >= l0 {
                    continue;
                }
                let (a, b) = (ya.max(lo), yb.min(l0));
                let (sa, sb) = (l0 - b, l0 - a);
                let h = yb - ya;
                if yb <= l0 + 1e-12 * l0.abs() {
                    row[k] += piece(beam, sa, sb, |s| (yb - (l0 - s)) / h)?;
                    row[k + 1] += piece(beam, sa, sb, |s| ((l0 - s) - ya) / h)?;
                } else {
                    // I0 falls inside this interval: hold P at the lower node
                    row[k] += piece(beam, sa, sb, |_| 1.0)?;
                }
            }
            if let Some(g) = tail_exponent {
                let (s0, s1) = (l0 - y[0], l0 - lo);
                if s0 >= 0.0 && s1 > s0 {
                    row[0] += piece(beam, s0, s1, |s| (-g * (s - s0)).exp())?;
                }
            }
            Ok(row)
        })
        .collect();
    let rows = rows?;
    let weights = DMatrix::from_fn(i0_grid.len(), ni, |j, k| rows[j][k]);
    Ok(KernelMatrix { i0_grid: i0_grid.clone(), i_grid: i_grid.clone(), weights, beam: *beam, cutoff, tail_exponent })
}

/// Local log-log slope of the lowest tenth (at least four points) of a yield curve.
pub fn low_end_exponent(grid: &[f64], s: &[f64]) -> Option<f64> {
    let n = (grid.len() / 10).max(4).min(grid.len());
    let pts: Vec<(f64, f64)> = grid[..n].iter().zip(&s[..n]).filter(|(_, v)| **v > 0.0).map(|(i, v)| (i.ln(), v.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((sxy / sxx).max(0.0))
}

impl KernelMatrix {
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        (&self.weights * DVector::from_column_slice(p)).iter().copied().collect()
    }
}

fn difference_matrix(n: usize, order: usize) -> DMatrix<f64> {
    match order {
        0 => DMatrix::identity(n, n),
        1 => DMatrix::from_fn(n - 1, n, |i, j| if j == i { -1.0 } else if j == i + 1 { 1.0 } else { 0.0 }),
        _ => DMatrix::from_fn(n - 2, n, |i, j| {
            if j == i || j == i + 2 {
                1.0
            } else if j == i + 1 {
                -2.0
            } else {
                0.0
            }
        }),
    }
}

#[derive(Debug, Clone)]
pub struct Deconvolution {
    pub grid: IntensityGrid,
    /// Solution after normalisation; may dip slightly below zero without the
    /// nonnegativity constraint.
    pub p: Vec<f64>,
    /// Factor divided out so that max(p) ≤ 1.
    pub scale: f64,
    pub lambda: f64,
    pub condition: f64,
    /// ‖Kp − s‖/‖s‖.
    pub residual_rel: f64,
    pub penalty: f64,
}

impl Deconvolution {
    /// Probability curve with values clamped into [0, 1].
    pub fn curve(&self) -> Result<ProbabilityCurve> {
        let p = self.p.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        ProbabilityCurve::new(self.grid.clone(), p, format!("deconvolved lambda={:e}", self.lambda))
    }

    pub fn interpolate(&self, i: f64) -> f64 {
        crate::numeric::interp::loglog(self.grid.values(), &self.p, i)
    }
}

pub fn deconvolve(s: &YieldCurve, kernel: &KernelMatrix, reg: &RegularizationSpec) -> Result<Deconvolution> {
    if s.mode != AverageMode::FullFocus {
        return Err(Error::InvalidInput(
            "deconvolution inverts the full-focus average; clipped yields already approximate P directly".into(),
        ));
    }
    let g = s.grid.values();
    let k0 = kernel.i0_grid.values();
    if g.len() != k0.len() || g.iter().zip(k0).any(|(a, b)| (a / b - 1.0).abs() > 1e-9) {
        return Err(Error::Grid("yield grid does not match the kernel's I0 grid".into()));
    }
    match with_tail(kernel, s)? {
        Some(k) => solve(&s.s, &k, reg),
        None => solve(&s.s, kernel, reg),
    }
}

/// When the grid stops short of the cutoff and no tail was set, a kernel whose
/// tail follows the low-end slope of `s`.
pub fn with_tail(kernel: &KernelMatrix, s: &YieldCurve) -> Result<Option<KernelMatrix>> {
    let covered = kernel.i_grid.min() <= kernel.cutoff * kernel.i0_grid.min() * (1.0 + 1e-9);
    if kernel.tail_exponent.is_some() || covered {
        return Ok(None);
    }
    match low_end_exponent(s.grid.values(), &s.s) {
        Some(g) => Ok(Some(build_kernel_with(&kernel.beam, &kernel.i0_grid, &kernel.i_grid, kernel.cutoff, Some(g))?)),
        None => Ok(None),
    }
}

fn solve(s: &[f64], kernel: &KernelMatrix, reg: &RegularizationSpec) -> Result<Deconvolution> {
    let ni = kernel.i_grid.len();
    let m = s.len();
    if s.iter().all(|v| *v == 0.0) {
        return Ok(Deconvolution {
            grid: kernel.i_grid.clone(),
            p: vec![0.0; ni],
            scale: 1.0,
            lambda: reg.lambda,
            condition: 1.0,
            residual_rel: 0.0,
            penalty: 0.0,
        });
    }
    // λ is measured against data scaled to a unit maximum
    let smax_data = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let w = vec![1.0 / smax_data; m];
    let d = difference_matrix(ni, reg.order);
    let nd = if reg.lambda > 0.0 { d.nrows() } else { 0 };
    let sl = reg.lambda.sqrt();
    let a = DMatrix::from_fn(m + nd, ni, |i, j| if i < m { w[i] * kernel.weights[(i, j)] } else { sl * d[(i - m, j)] });
    let b = DVector::from_fn(m + nd, |i, _| if i < m { w[i] * s[i] } else { 0.0 });
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = smax / smin;
    let mut p: Vec<f64> = if reg.lambda > 0.0 {
        if !(cond <= MAX_CONDITION) {
            return Err(Error::IllConditioned(cond));
        }
        svd.solve(&b, 0.0).map_err(|e| Error::InvalidInput(e.to_string()))?.iter().copied().collect()
    } else if m == ni && is_lower_triangular(&a) {
        // unregularized square system: forward substitution is backward stable
        forward_substitute(&a, &b)?
    } else {
        svd.solve(&b, smax * 1e-15).map_err(|e| Error::InvalidInput(e.to_string()))?.iter().copied().collect()
    };
    if reg.nonnegativity && p.iter().any(|v| *v < 0.0) {
        p = nonnegative_ls(&a, &b, smax)?;
    }
    let resid = {
        let kp = &kernel.weights * DVector::from_column_slice(&p);
        let num: f64 = (0..m).map(|i| (w[i] * (kp[i] - s[i])).powi(2)).sum::<f64>().sqrt();
        let den: f64 = (0..m).map(|i| (w[i] * s[i]).powi(2)).sum::<f64>().sqrt();
        num / den
    };
    let penalty = (&d * DVector::from_column_slice(&p)).norm();
    let pmax = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if pmax > 1.0 { pmax } else { 1.0 };
    p.iter_mut().for_each(|v| *v /= scale);
    Ok(Deconvolution {
        grid: kernel.i_grid.clone(),
        p,
        scale,
        lambda: reg.lambda,
        condition: cond,
        residual_rel: resid,
        penalty,
    })
}

fn is_lower_triangular(a: &DMatrix<f64>) -> bool {
    (0..a.nrows()).all(|j| (j + 1..a.ncols()).all(|k| a[(j, k)] == 0.0))
}

fn forward_substitute(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    let mut x = vec![0.0; n];
    for j in 0..n {
        if a[(j, j)] == 0.0 {
            return Err(Error::IllConditioned(f64::INFINITY));
        }
        let acc: f64 = (0..j).map(|k| a[(j, k)] * x[k]).sum();
        x[j] = (b[j] - acc) / a[(j, j)];
    }
    Ok(x)
}

// Lawson–Hanson active set: the gradient of ‖Ap − b‖² picks which bound to
// release, the free block is solved exactly. First-order projection stalls on
// the near-singular systems that small λ produces.
fn nonnegative_ls(a: &DMatrix<f64>, b: &DVector<f64>, smax: f64) -> Result<Vec<f64>> {
    let n = a.ncols();
    let norm1 = (0..n).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let tol = 10.0 * f64::EPSILON * norm1 * a.nrows().max(n) as f64;
    let at = a.transpose();
    let mut x = DVector::zeros(n);
    let mut free = vec![false; n];
    let sub_solve = |free: &[bool]| -> Result<DVector<f64>> {
        let idx: Vec<usize> = (0..n).filter(|&j| free[j]).collect();
        let sub = DMatrix::from_fn(a.nrows(), idx.len(), |i, k| a[(i, idx[k])]);
        let z = sub.svd(true, true).solve(b, smax * 1e-15).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut full = DVector::zeros(n);
        for (k, &j) in idx.iter().enumerate() {
            full[j] = z[k];
        }
        Ok(full)
    };
    for _ in 0..3 * n {
        let w = &at * (b - a * &x);
        let pick = (0..n).filter(|&j| !free[j] && w[j] > tol).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = pick else {
            return Ok(x.iter().copied().collect());
        };
        free[t] = true;
        loop {
            let z = sub_solve(&free)?;
            if (0..n).all(|j| !free[j] || z[j] > 0.0) {
                x = z;
                break;
            }
            let alpha = (0..n)
                .filter(|&j| free[j] && z[j] <= 0.0)
                .map(|j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x += (z - &x) * alpha;
            for j in 0..n {
                if free[j] && x[j] <= tol {
                    free[j] = false;
                    x[j] = 0.0;
                }
            }
            if !free.iter().any(|f| *f) {
                break;
            }
        }
    }
    Err(Error::InvalidInput("nonnegativity projection did not converge".into()))
}

#[derive(Debug, Clone)]
pub struct LCurvePoint {
    pub lambda: f64,
    pub residual: f64,
    pub penalty: f64,
    pub curvature: f64,
}

#[derive(Debug, Clone)]
pub struct LCurve {
    pub points: Vec<LCurvePoint>,
    pub best: usize,
}

impl LCurve {
    pub fn lambda(&self) -> f64 {
        self.points[self.best].lambda
    }
}

pub const LCURVE_POINTS: usize = 25;
pub const DEFAULT_LAMBDA_RANGE: (f64, f64) = (1e-10, 1e2);
/// First differences. With second differences the corner of the L-curve sits
/// well past the error minimum for sigmoid-like P, since a line in ln I is
/// left unpenalised and the curve never develops a clean horizontal leg.
pub const DEFAULT_PENALTY_ORDER: usize = 1;

/// Below this curvature (ln-ln units) the L-curve is treated as having no corner.
/// Noise-free data give a curve that only flattens out, with a gentle bend near
/// λ ~ 1 where the smoothing starts to bite; picking that bend over-smooths.
pub const MIN_CORNER_CURVATURE: f64 = 1.0;

/// Maximum-curvature corner of (log residual, log penalty) over a 25-point λ sweep.
/// Without a corner sharper than [`MIN_CORNER_CURVATURE`] the smallest λ is taken.
pub fn l_curve(s: &YieldCurve, kernel: &KernelMatrix, order: usize, lambda_range: (f64, f64)) -> Result<LCurve> {
    check(lambda_range.0 > 0.0 && lambda_range.1 > lambda_range.0, || "bad lambda range".into())?;
    let (l0, l1) = (lambda_range.0.ln(), lambda_range.1.ln());
    let n = LCURVE_POINTS;
    let lambdas: Vec<f64> = (0..n).map(|k| (l0 + (l1 - l0) * k as f64 / (n - 1) as f64).exp()).collect();
    let tailed = with_tail(kernel, s)?;
    let kernel = tailed.as_ref().unwrap_or(kernel);
    let sols: Vec<Option<(f64, f64)>> = lambdas
        .par_iter()
        .map(|&lam| {
            let reg = RegularizationSpec { lambda: lam, order, nonnegativity: false };
            deconvolve(s, kernel, &reg).ok().map(|d| (d.residual_rel, d.penalty * d.scale))
        })
        .collect();
    let mut points: Vec<LCurvePoint> = lambdas
        .iter()
        .zip(&sols)
        .filter_map(|(l, s)| s.map(|(r, p)| LCurvePoint { lambda: *l, residual: r, penalty: p, curvature: f64::NAN }))
        .collect();
    if points.len() < 3 {
        return Err(Error::IllConditioned(f64::INFINITY));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.residual.max(1e-300).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.penalty.max(1e-300).ln()).collect();
    let ts: Vec<f64> = points.iter().map(|p| p.lambda.ln()).collect();
    let mut best = 1;
    let mut best_k = f64::NEG_INFINITY;
    for i in 1..points.len() - 1 {
        let (h1, h2) = (ts[i] - ts[i - 1], ts[i + 1] - ts[i]);
        let d1 = |v: &[f64]| (v[i + 1] - v[i - 1]) / (h1 + h2);
        let d2 = |v: &[f64]| 2.0 * ((v[i + 1] - v[i]) / h2 - (v[i] - v[i - 1]) / h1) / (h1 + h2);
        let (x1, y1, x2, y2) = (d1(&xs), d1(&ys), d2(&xs), d2(&ys));
        let k = (x1 * y2 - x2 * y1) / (x1 * x1 + y1 * y1).powf(1.5);
        points[i].curvature = k;
        if k > best_k {
            best_k = k;
            best = i;
        }
    }
    if !(best_k >= MIN_CORNER_CURVATURE) {
        best = 0;
    }
    Ok(LCurve { points, best })
}

/// Relative L2 error over the interior 80% of a reference grid.
pub fn interior_error(estimate: impl Fn(f64) -> f64, truth: impl Fn(f64) -> f64, grid: &[f64]) -> f64 {
    let n = grid.len();
    let cut = n / 10;
    let (mut num, mut den) = (0.0, 0.0);
    for &i in &grid[cut..n - cut] {
        let t = truth(i);
        num += (estimate(i) - t).powi(2);
        den += t * t;
    }
    (num / den).sqrt()
}
