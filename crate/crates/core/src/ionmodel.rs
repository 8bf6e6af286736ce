//! Intensity-resolved ionization probability models and photon bookkeeping.
//!
//! Intensities in W/cm², times in fs, energies in eV, wavelengths in µm.

use crate::beam::IntensityGrid;
use crate::config::{Config, ConfigError};
use crate::error::{check, Error, Result};
use crate::numeric::ode::{dopri5, OdeOptions};
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};

/// hc in eV·nm.
pub const HC_EV_NM: f64 = 1239.84198;

#[derive(Debug, Clone, PartialEq)]
pub struct Species {
    pub name: String,
    pub ionization_energy: f64,
    pub state_energies: BTreeMap<String, f64>,
    pub reference_photon_energy: f64,
    /// Parent-ion mass in u.
    pub mass: f64,
}

const BENZENE: &str = include_str!("../presets/benzene.ini");
const ANILINE: &str = include_str!("../presets/aniline.ini");
const XENON: &str = include_str!("../presets/xenon.ini");

/// Species and model presets shipped with the crate.
pub fn preset_source(name: &str) -> Option<&'static str> {
    match name.to_ascii_lowercase().as_str() {
        "benzene" => Some(BENZENE),
        "aniline" => Some(ANILINE),
        "xenon" | "xe" => Some(XENON),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 3] = ["benzene", "aniline", "xenon"];

impl Species {
    pub fn new(name: &str, ionization_energy: f64) -> Result<Self> {
        let s = Species {
            name: name.to_string(),
            ionization_energy,
            state_energies: BTreeMap::new(),
            reference_photon_energy: 1.55,
            mass: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_state(mut self, label: &str, energy: f64) -> Result<Self> {
        self.state_energies.insert(label.to_string(), energy);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.ionization_energy > 0.0, || format!("{}: ionization energy must be > 0", self.name))?;
        for (k, e) in &self.state_energies {
            check(*e > 0.0 && *e < self.ionization_energy, || {
                format!("{}: state {k} at {e} eV is outside (0, IE)", self.name)
            })?;
        }
        check(self.reference_photon_energy > 0.0, || "photon energy must be > 0".into())
    }

    pub fn preset(name: &str) -> Result<Self> {
        let src = preset_source(name).ok_or_else(|| Error::InvalidInput(format!("unknown species preset `{name}`")))?;
        let cfg = Config::parse(src).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Species::from_config(&cfg).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    /// Reads `[species]` and `[states]`.
    pub fn from_config(cfg: &Config) -> std::result::Result<Self, ConfigError> {
        let sec = cfg
            .section("species")
            .ok_or(ConfigError { line: None, message: "missing [species] section".into() })?;
        let name: String = sec.get_or("name", "custom".to_string())?;
        let ie = sec.positive("ionization_energy")?.ok_or_else(|| sec.error("ionization_energy", "missing key `ionization_energy` in [species]"))?;
        let ph = sec.positive("reference_photon_energy")?.unwrap_or(1.55);
        let mass = sec.positive("mass")?.unwrap_or(1.0);
        let mut states = BTreeMap::new();
        if let Some(st) = cfg.section("states") {
            let keys: Vec<String> = st.keys().map(|k| k.to_string()).collect();
            for k in keys {
                let e: f64 = st.require(&k)?;
                if !(e > 0.0 && e < ie) {
                    return Err(st.error(&k, format!("state `{k}` at {e} eV must lie in (0, {ie})")));
                }
                states.insert(k, e);
            }
        }
        Ok(Species { name, ionization_energy: ie, state_energies: states, reference_photon_energy: ph, mass })
    }
}

/// Smallest n with n·ħω ≥ IE.
pub fn photon_order(species: &Species, photon_energy: f64) -> Result<u32> {
    check(photon_energy > 0.0, || format!("photon energy must be > 0, got {photon_energy}"))?;
    let r = species.ionization_energy / photon_energy;
    // guard against r landing a hair above an integer from rounding
    let n = (r - 1e-12).ceil().max(1.0);
    Ok(n as u32)
}

/// Up = 9.33e-14·I·λ² (eV, with I in W/cm² and λ in µm).
pub fn ponderomotive_energy(intensity: f64, wavelength: f64) -> f64 {
    9.33e-14 * intensity * wavelength * wavelength
}

pub fn keldysh_gamma(species: &Species, intensity: f64, wavelength: f64) -> Result<f64> {
    check(intensity > 0.0, || format!("Keldysh parameter needs I > 0, got {intensity}"))?;
    Ok((species.ionization_energy / (2.0 * ponderomotive_energy(intensity, wavelength))).sqrt())
}

/// n·ħω − (E_state + f·Up); positive when the photons overshoot the state.
pub fn resonance_detuning(
    species: &Species,
    state: &str,
    n_photons: u32,
    photon_energy: f64,
    intensity: f64,
    wavelength: f64,
    shift_fraction: f64,
) -> Result<f64> {
    let e = species
        .state_energies
        .get(&state.to_ascii_lowercase())
        .or_else(|| species.state_energies.get(state))
        .ok_or_else(|| Error::InvalidInput(format!("{} has no state `{state}`", species.name)))?;
    Ok(n_photons as f64 * photon_energy - (e + shift_fraction * ponderomotive_energy(intensity, wavelength)))
}

/// Energy FWHM at the n-photon level: n·hc·Δλ/λ² (first order), wavelengths in nm.
pub fn bandwidth_window(fwhm_wavelength_nm: f64, center_wavelength_nm: f64, n_photons: u32) -> Result<f64> {
    check(center_wavelength_nm > 0.0, || "centre wavelength must be > 0".into())?;
    check(fwhm_wavelength_nm >= 0.0, || "bandwidth must be >= 0".into())?;
    Ok(n_photons as f64 * HC_EV_NM * fwhm_wavelength_nm / (center_wavelength_nm * center_wavelength_nm))
}

/// True when |detuning| is within half the bandwidth FWHM.
pub fn within_bandwidth(detuning: f64, window_fwhm: f64) -> bool {
    detuning.abs() <= 0.5 * window_fwhm
}

/// Effective duration of Iⁿ(t) for a Gaussian envelope of FWHM τ:
/// ∫ exp(−4 ln2·n·t²/τ²) dt = τ·√(π/(4 ln2))/√n.
pub fn effective_duration(pulse_fwhm: f64, n: u32) -> f64 {
    pulse_fwhm * (PI / (4.0 * LN_2)).sqrt() / (n as f64).sqrt()
}

/// Rate coefficient placing c·Iⁿ·τ_eff = 1 at `intensity`.
pub fn coefficient_for(intensity: f64, n: u32, pulse_fwhm: f64) -> f64 {
    1.0 / (intensity.powi(n as i32) * effective_duration(pulse_fwhm, n))
}

/// P = 1 − exp(−c·Iⁿ·τ_eff).
pub fn mpi_probability(intensity: f64, n: u32, c: f64, pulse_fwhm: f64) -> f64 {
    if intensity <= 0.0 {
        return 0.0;
    }
    -(-c * intensity.powi(n as i32) * effective_duration(pulse_fwhm, n)).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequentialModel {
    pub n1: u32,
    pub n2: u32,
    pub c1: f64,
    pub c2: f64,
    pub pulse_fwhm: f64,
    /// Only used for detuning reports; the rate equations ignore it.
    pub stark_shift_fraction: f64,
}

impl SequentialModel {
    pub fn new(n1: u32, n2: u32, c1: f64, c2: f64, pulse_fwhm: f64) -> Result<Self> {
        let m = SequentialModel { n1, n2, c1, c2, pulse_fwhm, stark_shift_fraction: 0.0 };
        m.validate()?;
        Ok(m)
    }

    /// Coefficients chosen so step i has unit fluence k_i at `i_step_i`.
    pub fn calibrated(n1: u32, n2: u32, i_step1: f64, i_step2: f64, pulse_fwhm: f64) -> Result<Self> {
        check(i_step1 > 0.0 && i_step2 > 0.0, || "calibration intensities must be > 0".into())?;
        SequentialModel::new(n1, n2, coefficient_for(i_step1, n1, pulse_fwhm), coefficient_for(i_step2, n2, pulse_fwhm), pulse_fwhm)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.n1 >= 1 && self.n2 >= 1, || "photon orders must be >= 1".into())?;
        check(self.c1 >= 0.0 && self.c2 >= 0.0, || "rate coefficients must be >= 0".into())?;
        check(self.pulse_fwhm > 0.0, || "pulse FWHM must be > 0".into())?;
        check((0.0..=1.0).contains(&self.stark_shift_fraction), || "stark_shift_fraction must lie in [0, 1]".into())
    }

    /// Step fluences (k1, k2) at peak intensity `i`.
    pub fn fluences(&self, i: f64) -> (f64, f64) {
        (
            self.c1 * i.powi(self.n1 as i32) * effective_duration(self.pulse_fwhm, self.n1),
            self.c2 * i.powi(self.n2 as i32) * effective_duration(self.pulse_fwhm, self.n2),
        )
    }
}

/// Ion yield of the three-level rate system g → e → ion over t ∈ [−3τ, 3τ].
pub fn sequential_probability(i_peak: f64, model: &SequentialModel) -> Result<f64> {
    model.validate()?;
    check(i_peak >= 0.0, || format!("peak intensity must be >= 0, got {i_peak}"))?;
    if i_peak == 0.0 || model.c1 == 0.0 || model.c2 == 0.0 {
        return Ok(0.0);
    }
    let tau = model.pulse_fwhm;
    let a = 4.0 * LN_2 / (tau * tau);
    let r1p = model.c1 * i_peak.powi(model.n1 as i32);
    let r2p = model.c2 * i_peak.powi(model.n2 as i32);
    let (n1, n2) = (model.n1 as f64, model.n2 as f64);
    let rhs = |t: f64, y: &[f64; 3]| {
        let e = (-a * t * t).exp();
        let r1 = r1p * e.powf(n1);
        let r2 = r2p * e.powf(n2);
        [-r1 * y[0], r1 * y[0] - r2 * y[1], r2 * y[1]]
    };
    if r1p.max(r2p) * tau > STIFF_RATE_TAU {
        let y = stiff_chain(|t| r1p * (-a * n1 * t * t).exp(), |t| r2p * (-a * n2 * t * t).exp(), -3.0 * tau, 3.0 * tau)?;
        return Ok((1.0 - (y[0] + y[1])).clamp(0.0, 1.0));
    }
    let opts = OdeOptions { rtol: 1e-9, atol: [1e-12, 1e-300, 1e-300], h0: tau * 1e-2, max_steps: 200_000 };
    let (y, _) = dopri5(rhs, -3.0 * tau, 3.0 * tau, [1.0, 0.0, 0.0], &opts, |t, y| {
        let drift = (y[0] + y[1] + y[2] - 1.0).abs();
        if drift > 1e-9 || y.iter().any(|v| *v < -1e-12) {
            Err(Error::Integrator(format!("population not conserved at t = {t:.3} fs (drift {drift:e})")))
        } else {
            Ok(())
        }
    })?;
    // near saturation the depleted populations carry more precision than the ion share
    let ion = if y[2] < 0.5 { y[2] } else { 1.0 - (y[0] + y[1]) };
    Ok(ion.clamp(0.0, 1.0))
}

/// Peak rate × τ above which explicit Runge–Kutta is stability-limited
/// (h·r ≲ 3) and the chain switches to `stiff_chain`.
const STIFF_RATE_TAU: f64 = 1e4;

// Exponential midpoint for y' = A(t)·y with A the g → e → ion chain: over a
// step the rates are frozen at the midpoint and the bidiagonal exponential is
// applied in closed form, so any step is stable and population is conserved
// exactly. Second order per step, third with the Richardson correction that
// step doubling makes available.
fn stiff_chain(r1: impl Fn(f64) -> f64, r2: impl Fn(f64) -> f64, t0: f64, t1: f64) -> Result<[f64; 3]> {
    let advance = |y: [f64; 3], t: f64, h: f64| {
        let tm = t + 0.5 * h;
        let (a, b) = (r1(tm) * h, r2(tm) * h);
        let (ea, eb) = ((-a).exp(), (-b).exp());
        let d = b - a;
        // (e^−a − e^−b)/(b − a), kept finite as b → a
        let w = if d.abs() > 1e-3 { (ea - eb) / d } else { ea * (1.0 - d / 2.0 + d * d / 6.0) };
        let g = ea * y[0];
        let e = eb * y[1] + a * y[0] * w;
        [g, e, y[2] + (y[0] - g) + (y[1] - e)]
    };
    let (rtol, atol) = (1e-9, 1e-14);
    let mut y = [1.0, 0.0, 0.0];
    let mut t = t0;
    let mut h = (t1 - t0) * 1e-3;
    for _ in 0..2_000_000 {
        if t >= t1 {
            return Ok(y);
        }
        h = h.min(t1 - t);
        let big = advance(y, t, h);
        let half = advance(advance(y, t, 0.5 * h), t + 0.5 * h, 0.5 * h);
        let err = (0..2).map(|i| (half[i] - big[i]).abs() / (atol + rtol * half[i].abs())).fold(0.0, f64::max);
        if err <= 1.0 {
            // local Richardson step; both estimates sum to one, so this does too
            let x = [0, 1, 2].map(|i| (4.0 * half[i] - big[i]) / 3.0);
            y = if x.iter().all(|v| *v >= 0.0) { x } else { half };
            t += h;
        }
        h *= (0.9 * err.max(1e-12).powf(-1.0 / 3.0)).clamp(0.2, 5.0);
    }
    Err(Error::Integrator(format!("stiff step budget exhausted at t = {t:.3} fs")))
}

/// Two-step fluence model: P = 1 − (k2·e^−k1 − k1·e^−k2)/(k2 − k1).
pub fn sequential_probability_fluence(i_peak: f64, model: &SequentialModel) -> f64 {
    let (k1, k2) = model.fluences(i_peak);
    two_step_closed_form(k1, k2)
}

pub fn two_step_closed_form(k1: f64, k2: f64) -> f64 {
    if k1 <= 0.0 || k2 <= 0.0 {
        return 0.0;
    }
    let d = k2 - k1;
    if k1.max(k2) < 1e-4 {
        // series keeps precision where the difference form cancels
        return k1 * k2 / 2.0 * (1.0 - (k1 + k2) / 3.0 + (k1 * k1 + k1 * k2 + k2 * k2) / 12.0);
    }
    if d.abs() < 1e-6 * k1.max(k2) {
        let k = 0.5 * (k1 + k2);
        // 1 − (1+k)e^−k, derivative correction is O(d²)
        return (1.0 - (1.0 + k) * (-k).exp()).clamp(0.0, 1.0);
    }
    let p = 1.0 - (k2 * (-k1).exp() - k1 * (-k2).exp()) / d;
    p.clamp(0.0, 1.0)
}

/// Probability model shipped by the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbabilityModel {
    Mpi { n: u32, c: f64, pulse_fwhm: f64 },
    Sequential(SequentialModel),
}

impl ProbabilityModel {
    pub fn mpi_saturating_at(n: u32, i_sat: f64, pulse_fwhm: f64) -> Result<Self> {
        check(n >= 1, || "photon order must be >= 1".into())?;
        check(i_sat > 0.0 && pulse_fwhm > 0.0, || "saturation intensity and pulse FWHM must be > 0".into())?;
        Ok(ProbabilityModel::Mpi { n, c: coefficient_for(i_sat, n, pulse_fwhm), pulse_fwhm })
    }

    pub fn preset(name: &str) -> Result<Self> {
        let src = preset_source(name).ok_or_else(|| Error::InvalidInput(format!("unknown model preset `{name}`")))?;
        let cfg = Config::parse(src).map_err(|e| Error::InvalidInput(e.to_string()))?;
        ProbabilityModel::from_section(&cfg, "model").map_err(|e| Error::InvalidInput(e.to_string()))
    }

    /// Reads a model section: `kind = mpi | sequential` plus either raw
    /// coefficients (`c`, `c1`, `c2`) or calibration intensities.
    pub fn from_section(cfg: &Config, name: &str) -> std::result::Result<Self, ConfigError> {
        let sec = cfg.section(name).ok_or(ConfigError { line: None, message: format!("missing [{name}] section") })?;
        let kind: String = sec.require("kind")?;
        let tau = sec.positive("pulse_fwhm")?.unwrap_or(45.0);
        match kind.as_str() {
            "mpi" => {
                let n: u32 = sec.require("n")?;
                if n == 0 {
                    return Err(sec.error("n", "photon order `n` must be >= 1"));
                }
                let c = match (sec.positive("c")?, sec.positive("i_sat")?) {
                    (Some(c), None) => c,
                    (None, Some(i)) => coefficient_for(i, n, tau),
                    _ => return Err(sec.error("kind", "mpi model needs exactly one of `c` or `i_sat`")),
                };
                Ok(ProbabilityModel::Mpi { n, c, pulse_fwhm: tau })
            }
            "sequential" => {
                let n1: u32 = sec.require("n1")?;
                let n2: u32 = sec.require("n2")?;
                if n1 == 0 || n2 == 0 {
                    return Err(sec.error("n1", "photon orders must be >= 1"));
                }
                let c1 = pick(&sec, "c1", "i_step1", n1, tau)?;
                let c2 = pick(&sec, "c2", "i_step2", n2, tau)?;
                let f: f64 = sec.get_or("stark_shift_fraction", 0.0)?;
                if !(0.0..=1.0).contains(&f) {
                    return Err(sec.error("stark_shift_fraction", "stark_shift_fraction must lie in [0, 1]"));
                }
                Ok(ProbabilityModel::Sequential(SequentialModel { n1, n2, c1, c2, pulse_fwhm: tau, stark_shift_fraction: f }))
            }
            other => Err(sec.error("kind", format!("unknown model kind `{other}` (expected mpi or sequential)"))),
        }
    }

    pub fn probability(&self, i: f64) -> Result<f64> {
        match self {
            ProbabilityModel::Mpi { n, c, pulse_fwhm } => Ok(mpi_probability(i, *n, *c, *pulse_fwhm)),
            ProbabilityModel::Sequential(m) => sequential_probability(i, m),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ProbabilityModel::Mpi { n, c, pulse_fwhm } => format!("mpi n={n} c={c:e} pulse_fwhm={pulse_fwhm}fs"),
            ProbabilityModel::Sequential(m) => format!(
                "sequential n1={} n2={} c1={:e} c2={:e} pulse_fwhm={}fs",
                m.n1, m.n2, m.c1, m.c2, m.pulse_fwhm
            ),
        }
    }

    /// Tabulate P on a grid (parallel over points, order preserved).
    pub fn curve(&self, grid: &IntensityGrid) -> Result<ProbabilityCurve> {
        let p: Result<Vec<f64>> = grid.values().par_iter().map(|i| self.probability(*i)).collect();
        ProbabilityCurve::new(grid.clone(), p?, self.describe())
    }
}

fn pick(sec: &crate::config::Section<'_>, ck: &str, ik: &str, n: u32, tau: f64) -> std::result::Result<f64, ConfigError> {
    match (sec.get::<f64>(ck)?, sec.positive(ik)?) {
        (Some(c), None) if c >= 0.0 => Ok(c),
        (Some(_), None) => Err(sec.error(ck, format!("`{ck}` must be >= 0"))),
        (None, Some(i)) => Ok(coefficient_for(i, n, tau)),
        _ => Err(sec.error("kind", format!("give exactly one of `{ck}` or `{ik}`"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityCurve {
    pub grid: IntensityGrid,
    pub p: Vec<f64>,
    pub provenance: String,
}

impl ProbabilityCurve {
    pub fn new(grid: IntensityGrid, p: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if p.len() != grid.len() {
            return Err(Error::Grid(format!("{} probabilities for {} grid points", p.len(), grid.len())));
        }
        if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("probability {v} outside [0, 1]")));
        }
        Ok(ProbabilityCurve { grid, p, provenance: provenance.into() })
    }

    /// Log-log interpolation; values outside the table are an error.
    pub fn interpolate(&self, i: f64) -> Result<f64> {
        let g = self.grid.values();
        let tol = 1e-9;
        if i < g[0] * (1.0 - tol) || i > g[g.len() - 1] * (1.0 + tol) {
            return Err(Error::OutOfRange(i));
        }
        Ok(crate::numeric::interp::loglog(g, &self.p, i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stiff_chain_agrees_with_runge_kutta() {
        let tau = 45.0;
        let a = 4.0 * LN_2 / (tau * tau);
        // rates where both integrators are affordable, including near-equal ones
        for (r1p, r2p) in [(2.0, 0.05), (30.0, 0.4), (0.02, 0.02), (1e-3, 50.0)] {
            let r1 = |t: f64| r1p * (-3.0 * a * t * t).exp();
            let r2 = |t: f64| r2p * (-2.0 * a * t * t).exp();
            let rhs = |t: f64, y: &[f64; 3]| [-r1(t) * y[0], r1(t) * y[0] - r2(t) * y[1], r2(t) * y[1]];
            let opts = OdeOptions { rtol: 1e-11, atol: [1e-14; 3], h0: 0.1, max_steps: 1_000_000 };
            let (rk, _) = dopri5(rhs, -3.0 * tau, 3.0 * tau, [1.0, 0.0, 0.0], &opts, |_, _| Ok(())).unwrap();
            let ex = stiff_chain(r1, r2, -3.0 * tau, 3.0 * tau).unwrap();
            for i in 0..3 {
                assert!((rk[i] - ex[i]).abs() <= 1e-7 * rk[i].abs().max(1e-6), "{r1p} {r2p}: {rk:?} vs {ex:?}");
            }
        }
    }

    #[test]
    fn photon_orders() {
        for (name, n) in [("benzene", 6), ("aniline", 5), ("xenon", 8)] {
            assert_eq!(photon_order(&Species::preset(name).unwrap(), 1.55).unwrap(), n);
        }
    }

    #[test]
    fn keldysh_values() {
        let b = Species::preset("benzene").unwrap();
        assert!((ponderomotive_energy(1e14, 0.8) - 5.9712).abs() < 1e-9);
        assert!((keldysh_gamma(&b, 1e14, 0.8).unwrap() - 0.880).abs() < 1e-3);
        let a = Species::preset("aniline").unwrap();
        assert!((keldysh_gamma(&a, 1e14, 0.8).unwrap() - 0.804).abs() < 1e-3);
    }

    #[test]
    fn mpi_half() {
        let c = LN_2 / (1e13f64.powi(4) * effective_duration(45.0, 4));
        assert!((mpi_probability(1e13, 4, c, 45.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn closed_form_limits() {
        let k = 0.7;
        let a = two_step_closed_form(k, k * (1.0 + 1e-9));
        assert!((a - (1.0 - (1.0 + k) * (-k as f64).exp())).abs() < 1e-9);
        let s = two_step_closed_form(1e-5, 2e-5);
        assert!((s / (1e-10) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn presets_parse() {
        for name in PRESET_NAMES {
            ProbabilityModel::preset(name).unwrap();
        }
        let a = Species::preset("aniline").unwrap();
        assert_eq!(a.state_energies["pi-sigma-star"], 4.6);
    }
}
