//! Slope analysis of yield and probability curves.
//!
//! The two-slope model, with x = ln I:
//!
//! ```text
//! K(x)    = (1/s)·ln(1 + exp(−s·(n_a − n_b)·(x − ln I_k)))
//! ln Q(x) = n_b·(x − ln I_sat) − K(x) + K(ln I_sat)
//! F(I)    = A·[1 − (1 + β·Q)^(−1/β)]          (β → 0 gives A·(1 − e^(−Q)))
//! ```
//!
//! Below I_k the log-log slope is n_a, between I_k and I_sat it is n_b, and
//! above I_sat F rolls over to the constant A. β widens the roll-over; the
//! single-slope model is the same family with n_a = n_b. Q(I_sat) = 1.

use crate::error::{Error, Result};
use crate::numeric::lm::{minimize, LmOptions};
use rayon::prelude::*;

/// Residual scale (ln units) of the kink-significance transform.
pub const SIGNIFICANCE_SCALE: f64 = 0.05;
/// Below this significance a curve is treated as kink-free.
pub const KINK_THRESHOLD: f64 = 0.05;

const MAX_SHARPNESS: f64 = 50.0;
const MAX_SOFTNESS: f64 = 20.0;
const MIN_KINK_GAP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub amplitude: f64,
    pub n_a: f64,
    pub n_b: f64,
    pub i_kink: f64,
    pub i_sat: f64,
    /// Kink sharpness s ≥ 1.
    pub sharpness: f64,
    /// Roll-over width β ≥ 0.
    pub saturation_softness: f64,
    /// RMS of the (weighted) log residuals.
    pub residual_rms: f64,
    /// RMS of the best single-slope fit on the same points.
    pub single_slope_rms: f64,
    pub kink_significance: f64,
    pub converged: bool,
    pub valid: bool,
    pub points_used: usize,
}

impl FitResult {
    /// Fitted model value at intensity `i`.
    pub fn eval(&self, i: f64) -> f64 {
        let x = i.ln();
        let p = [
            0.0,
            self.n_b,
            self.n_a - self.n_b,
            self.i_sat.ln(),
            self.i_sat.ln() - self.i_kink.ln(),
            self.sharpness,
            self.saturation_softness,
        ];
        self.amplitude * log_model(&p, x).exp()
    }

    /// d ln F / d ln I of the fitted model.
    pub fn log_slope(&self, i: f64) -> f64 {
        let h: f64 = 1e-5;
        (self.eval(i * h.exp()).ln() - self.eval(i * (-h).exp()).ln()) / (2.0 * h)
    }

    pub fn is_kinked(&self) -> bool {
        self.kink_significance >= KINK_THRESHOLD
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    /// Counting statistics: weight ∝ √S on ln S.
    Poisson,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub weighting: Weighting,
    pub censor_postmax: bool,
    pub initial_guess: Option<FitResult>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { weighting: Weighting::Uniform, censor_postmax: false, initial_guess: None }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

// p = [ln A, n_b, Δ, ln I_sat, ln I_sat − ln I_k, s, β]
fn log_model(p: &[f64; 7], x: f64) -> f64 {
    let (la, nb, dn, ls, d, s, beta) = (p[0], p[1], p[2], p[3], p[4], p[5], p[6]);
    let lk = ls - d;
    // normalised so that Q(I_sat) = 1 for any kink
    let lnq = nb * (x - ls) - (softplus(-s * dn * (x - lk)) - softplus(-s * dn * d)) / s;
    if lnq < -30.0 {
        return la + lnq;
    }
    let q = lnq.exp();
    let l = if beta > 0.0 { (beta * q).ln_1p() / beta } else { q };
    la + (-(-l).exp_m1()).ln()
}

/// 1 − exp(−(Δ/ε²)²) with Δ = r_single² − r_two².
pub fn kink_significance(r_two: f64, r_single: f64) -> f64 {
    let gain = (r_single * r_single - r_two * r_two).max(0.0) / (SIGNIFICANCE_SCALE * SIGNIFICANCE_SCALE);
    1.0 - (-gain * gain).exp()
}

/// Index of the first local maximum that a persistent decrease follows.
pub fn first_local_max(values: &[f64]) -> Option<usize> {
    const W: usize = 3;
    let n = values.len();
    for i in 1..n.saturating_sub(1) {
        let ahead = &values[i + 1..(i + 1 + W).min(n)];
        let behind = &values[i.saturating_sub(W)..i];
        if ahead.iter().all(|v| *v < values[i]) && behind.iter().all(|v| *v <= values[i]) {
            return Some(i);
        }
    }
    None
}

struct Prepared {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    x_ref: f64,
    y_ref: f64,
}

fn prepare(grid: &[f64], values: &[f64], opts: &FitOptions) -> Result<Prepared> {
    if grid.len() != values.len() {
        return Err(Error::InvalidInput(format!("{} intensities but {} values", grid.len(), values.len())));
    }
    let end = if opts.censor_postmax { first_local_max(values).map_or(values.len(), |m| m + 1) } else { values.len() };
    let pts: Vec<(f64, f64)> = grid[..end]
        .iter()
        .zip(&values[..end])
        .filter(|(i, v)| **i > 0.0 && **v > 0.0 && v.is_finite())
        .map(|(i, v)| (*i, *v))
        .collect();
    if pts.len() < 15 {
        return Err(Error::Fit(format!("need at least 15 positive points, have {}", pts.len())));
    }
    let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
    if (hi / lo).log10() < 2.0 - 1e-9 {
        return Err(Error::Fit(format!("insufficient span: {:.2} decades (need 2)", (hi / lo).log10())));
    }
    let x_ref = 0.5 * (lo.ln() + hi.ln());
    let y_ref = pts.iter().map(|p| p.1.ln()).fold(f64::NEG_INFINITY, f64::max);
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln() - x_ref).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln() - y_ref).collect();
    let w = match opts.weighting {
        Weighting::Uniform => vec![1.0; pts.len()],
        Weighting::Poisson => {
            let mean = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
            pts.iter().map(|p| (p.1 / mean).sqrt()).collect()
        }
    };
    Ok(Prepared { x, y, w, x_ref, y_ref })
}

fn lm_opts() -> LmOptions {
    LmOptions { max_iter: 300, ..LmOptions::default() }
}

struct Fitted {
    p: [f64; 7],
    ssr: f64,
    converged: bool,
}

fn better(a: &Fitted, b: &Fitted) -> bool {
    match a.ssr.total_cmp(&b.ssr) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.p[1] < b.p[1],
    }
}

fn pick_best(cands: Vec<Fitted>) -> Fitted {
    let mut it = cands.into_iter();
    let mut best = it.next().unwrap();
    for c in it {
        if better(&c, &best) {
            best = c;
        }
    }
    best
}

fn low_slope(d: &Prepared) -> f64 {
    let k = (d.x.len() / 5).max(4);
    let (xs, ys) = (&d.x[..k], &d.y[..k]);
    let mx = xs.iter().sum::<f64>() / k as f64;
    let my = ys.iter().sum::<f64>() / k as f64;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxy / sxx).clamp(0.5, 25.0)
}

fn fit_single(d: &Prepared) -> Fitted {
    let m = d.x.len();
    let x0 = d.x[0];
    let x1 = d.x[m - 1];
    let ls0 = x0 + 0.75 * (x1 - x0);
    let n_lo = low_slope(d);
    let mut starts = Vec::new();
    for nb in [1.0, 2.0, 3.0, 5.0, 7.0, n_lo] {
        for beta in [0.01, 0.5] {
            starts.push([0.0, nb, ls0, beta]);
        }
    }
    let lo = [-60.0, 0.01, x0 - 30.0, 0.0];
    let hi = [60.0, 30.0, x1 + 30.0, MAX_SOFTNESS];
    let cands: Vec<Fitted> = starts
        .par_iter()
        .map(|s| {
            let r = minimize(
                |q, r| {
                    let p = [q[0], q[1], 0.0, q[2], 1.0, 1.0, q[3]];
                    for i in 0..m {
                        r[i] = d.w[i] * (log_model(&p, d.x[i]) - d.y[i]);
                    }
                },
                m,
                s,
                &lo,
                &hi,
                &lm_opts(),
            );
            Fitted { p: [r.x[0], r.x[1], 0.0, r.x[2], 1.0, 1.0, r.x[3]], ssr: r.ssr, converged: r.converged }
        })
        .collect();
    pick_best(cands)
}

fn fit_two(d: &Prepared, single: &Fitted, guess: Option<[f64; 7]>) -> Fitted {
    let m = d.x.len();
    let x0 = d.x[0];
    let x1 = d.x[m - 1];
    let ls0 = x0 + 0.75 * (x1 - x0);
    let n_lo = low_slope(d);
    let mut starts = vec![single.p];
    if let Some(g) = guess {
        starts.push(g);
    }
    for nb in [1.0, 2.0, 3.0, 5.0, 7.0, 0.5 * n_lo] {
        for dn in [1.0, 3.0, (n_lo - nb).max(0.5)] {
            for f in [1.0 / 3.0, 2.0 / 3.0] {
                let lk = x0 + f * (x1 - x0);
                for beta in [0.01, 0.5] {
                    starts.push([0.0, nb, dn, ls0, (ls0 - lk).max(0.1), 1.0, beta]);
                }
            }
        }
    }
    let lo = [-60.0, 0.01, 0.0, x0 - 30.0, MIN_KINK_GAP, 1.0, 0.0];
    let hi = [60.0, 30.0, 30.0, x1 + 30.0, 30.0, MAX_SHARPNESS, MAX_SOFTNESS];
    let cands: Vec<Fitted> = starts
        .par_iter()
        .map(|s| {
            let r = minimize(
                |q, r| {
                    let p = [q[0], q[1], q[2], q[3], q[4], q[5], q[6]];
                    for i in 0..m {
                        r[i] = d.w[i] * (log_model(&p, d.x[i]) - d.y[i]);
                    }
                },
                m,
                s,
                &lo,
                &hi,
                &lm_opts(),
            );
            let mut p = [0.0; 7];
            p.copy_from_slice(&r.x);
            Fitted { p, ssr: r.ssr, converged: r.converged }
        })
        .collect();
    pick_best(cands)
}

fn to_result(d: &Prepared, f: &Fitted, single: &Fitted) -> FitResult {
    let m = d.x.len() as f64;
    let r2 = (f.ssr / m).sqrt();
    let r1 = (single.ssr / m).sqrt().max(r2);
    let p = f.p;
    let n_a = p[1] + p[2];
    let n_b = p[1];
    let i_sat = (p[3] + d.x_ref).exp();
    let i_kink = (p[3] - p[4] + d.x_ref).exp();
    let valid = f.converged && n_a > 0.0 && n_b > 0.0 && i_kink < i_sat && r2.is_finite();
    FitResult {
        amplitude: (p[0] + d.y_ref).exp(),
        n_a,
        n_b,
        i_kink,
        i_sat,
        sharpness: p[5],
        saturation_softness: p[6],
        residual_rms: r2,
        single_slope_rms: r1,
        kink_significance: kink_significance(r2, r1),
        converged: f.converged,
        valid,
        points_used: d.x.len(),
    }
}

/// Fit the two-slope-then-saturation model in log-log space.
///
/// When the kink is not significant the single-slope solution is returned
/// (n_a = n_b, i_kink = i_sat) together with the measured significance.
/// Non-convergence is reported through `converged`/`valid` with the best
/// parameters found rather than as an error.
pub fn fit_two_slope(grid: &[f64], values: &[f64], opts: &FitOptions) -> Result<FitResult> {
    let d = prepare(grid, values, opts)?;
    let single = fit_single(&d);
    let guess = opts.initial_guess.as_ref().map(|g| {
        [
            g.amplitude.ln() - d.y_ref,
            g.n_b,
            (g.n_a - g.n_b).max(0.0),
            g.i_sat.ln() - d.x_ref,
            (g.i_sat.ln() - g.i_kink.ln()).max(MIN_KINK_GAP),
            g.sharpness.clamp(1.0, MAX_SHARPNESS),
            g.saturation_softness.clamp(0.0, MAX_SOFTNESS),
        ]
    });
    let two = fit_two(&d, &single, guess);
    let two = if two.ssr <= single.ssr { two } else { Fitted { p: single.p, ssr: single.ssr, converged: single.converged } };
    let r = to_result(&d, &two, &single);
    if r.is_kinked() {
        return Ok(r);
    }
    // without a significant kink n_a and n_b are not separately identifiable
    let mut s = to_result(&d, &single, &single);
    s.i_kink = s.i_sat;
    s.valid = single.converged && s.n_b > 0.0;
    s.kink_significance = r.kink_significance;
    Ok(s)
}

/// Single slope plus saturation (n_a = n_b); significance is 0 by construction.
pub fn fit_single_slope(grid: &[f64], values: &[f64], opts: &FitOptions) -> Result<FitResult> {
    let d = prepare(grid, values, opts)?;
    let single = fit_single(&d);
    let mut r = to_result(&d, &single, &single);
    r.i_kink = r.i_sat;
    r.valid = single.converged && r.n_b > 0.0;
    Ok(r)
}

/// Residual vector of a fitted model on a curve (ln data − ln model).
pub fn log_residuals(fit: &FitResult, grid: &[f64], values: &[f64]) -> Vec<f64> {
    grid.iter().zip(values).filter(|(_, v)| **v > 0.0).map(|(i, v)| v.ln() - fit.eval(*i).ln()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeCurve {
    pub grid: Vec<f64>,
    /// `None` where the window held fewer than three usable points.
    pub slope: Vec<Option<f64>>,
    pub window_decades: f64,
}

/// Least-squares slope of log10 S against log10 I in a centred window.
pub fn local_loglog_slope(grid: &[f64], values: &[f64], window_decades: f64) -> Result<SlopeCurve> {
    if grid.len() != values.len() {
        return Err(Error::InvalidInput("grid and values differ in length".into()));
    }
    if !(window_decades > 0.0) {
        return Err(Error::InvalidInput(format!("window must be > 0 decades, got {window_decades}")));
    }
    let lx: Vec<f64> = grid.iter().map(|i| i.log10()).collect();
    let half = 0.5 * window_decades * (1.0 + 1e-12);
    let slope = (0..grid.len())
        .map(|c| {
            let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for k in 0..grid.len() {
                if (lx[k] - lx[c]).abs() > half || !(values[k] > 0.0) || !values[k].is_finite() {
                    continue;
                }
                let (x, y) = (lx[k] - lx[c], values[k].log10());
                n += 1.0;
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
            }
            let den = n * sxx - sx * sx;
            if n < 3.0 || den <= 0.0 {
                None
            } else {
                Some((n * sxy - sx * sy) / den)
            }
        })
        .collect();
    Ok(SlopeCurve { grid: grid.to_vec(), slope, window_decades })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    /// Geometric centre of the run.
    pub center: f64,
    pub mean_slope: f64,
    pub width_decades: f64,
    pub start: f64,
    pub end: f64,
}

/// Maximal runs (scanned left to right) whose slopes stay within `tolerance`
/// of the run mean and that span at least `min_width_decades`.
pub fn plateau_detect(curve: &SlopeCurve, tolerance: f64, min_width_decades: f64) -> Vec<Plateau> {
    let n = curve.grid.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if curve.slope[i].is_none() {
            i += 1;
            continue;
        }
        let mut end = i;
        let mut sum = curve.slope[i].unwrap();
        for j in i + 1..n {
            let Some(v) = curve.slope[j] else { break };
            let mean = (sum + v) / (j - i + 1) as f64;
            let ok = curve.slope[i..=j].iter().all(|s| (s.unwrap() - mean).abs() <= tolerance);
            if !ok {
                break;
            }
            sum += v;
            end = j;
        }
        let width = (curve.grid[end] / curve.grid[i]).log10();
        if width >= min_width_decades - 1e-12 && end > i {
            out.push(Plateau {
                center: (curve.grid[i] * curve.grid[end]).sqrt(),
                mean_slope: sum / (end - i + 1) as f64,
                width_decades: width,
                start: curve.grid[i],
                end: curve.grid[end],
            });
            i = end + 1;
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Saturation {
    Saturated {
        /// I_sat parameter of the two-slope fit.
        i_sat_fit: f64,
        /// Where the fitted curve reaches (1 − 1/e) of its asymptote.
        i_sat_1e: f64,
        fit: FitResult,
    },
    NotSaturated { max_fraction: f64 },
}

pub fn saturation_intensity(grid: &[f64], values: &[f64], opts: &FitOptions) -> Result<Saturation> {
    let fit = fit_two_slope(grid, values, opts)?;
    let vmax = values.iter().cloned().fold(0.0, f64::max);
    let frac = vmax / fit.amplitude;
    if !(frac >= 0.9) {
        return Ok(Saturation::NotSaturated { max_fraction: frac });
    }
    let target = (1.0 - (-1.0f64).exp()) * fit.amplitude;
    let (mut a, mut b) = ((grid[0] / 1e3).ln(), (grid[grid.len() - 1] * 1e3).ln());
    if fit.eval(a.exp()) > target || fit.eval(b.exp()) < target {
        return Ok(Saturation::NotSaturated { max_fraction: frac });
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if fit.eval(m.exp()) < target {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(Saturation::Saturated { i_sat_fit: fit.i_sat, i_sat_1e: (0.5 * (a + b)).exp(), fit })
}
