//! One-dimensional reflectron time-of-flight model.
//!
//! Axis layout: repeller (RP) at 0, slit plate (SP) at `extraction_gap`,
//! then the first drift to the mirror entrance G1, the two mirror stages
//! G1–G2 and G2–G3, and after the turn a field-free return drift from G1 to
//! the detector. Grids are ideal, so each region has a uniform field set by
//! the potentials of its two bounding electrodes. Birth position `x0` is
//! measured from the repeller. Lengths in mm, potentials in V, times in µs.

use crate::error::{check, Error, Result};
use crate::numeric::interp::Pchip;
use crate::numeric::roots::brent;
use rayon::prelude::*;

const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
const ATOMIC_MASS: f64 = 1.660_539_066_60e-27;

/// Speed in mm/µs of a particle with q/m = 1 e/u after falling through 1 V.
pub fn unit_speed() -> f64 {
    (2.0 * ELEMENTARY_CHARGE / ATOMIC_MASS).sqrt() * 1e-3
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TofGeometry {
    pub extraction_gap: f64,
    pub drift_length_1: f64,
    pub mirror_stage_1: f64,
    pub mirror_stage_2: f64,
    pub drift_length_2: f64,
}

impl TofGeometry {
    pub fn new(extraction_gap: f64, drift_length_1: f64, mirror_stage_1: f64, mirror_stage_2: f64, drift_length_2: f64) -> Result<Self> {
        let g = TofGeometry { extraction_gap, drift_length_1, mirror_stage_1, mirror_stage_2, drift_length_2 };
        g.validate()?;
        Ok(g)
    }

    /// Illustrative spectrometer: 10 mm extraction, 500 mm drifts, 20 + 100 mm mirror.
    pub fn reference() -> Self {
        TofGeometry { extraction_gap: 10.0, drift_length_1: 500.0, mirror_stage_1: 20.0, mirror_stage_2: 100.0, drift_length_2: 500.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("extraction_gap", self.extraction_gap),
            ("drift_length_1", self.drift_length_1),
            ("mirror_stage_1", self.mirror_stage_1),
            ("mirror_stage_2", self.mirror_stage_2),
            ("drift_length_2", self.drift_length_2),
        ] {
            check(v > 0.0 && v.is_finite(), || format!("{name} must be > 0, got {v}"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TofVoltages {
    pub v_repeller: f64,
    pub v_slit: f64,
    pub v_g1: f64,
    pub v_g2: f64,
    pub v_g3: f64,
}

impl TofVoltages {
    /// Reference voltages with G2 at the space-focus value for `TofGeometry::reference()`.
    pub fn reference() -> Self {
        TofVoltages { v_repeller: 1100.0, v_slit: 1000.0, v_g1: 0.0, v_g2: 888.875, v_g3: 1200.0 }
    }

    pub fn with(&self, p: TuneParameter, value: f64) -> Self {
        match p {
            TuneParameter::VG2 => TofVoltages { v_g2: value, ..*self },
        }
    }

    pub fn get(&self, p: TuneParameter) -> f64 {
        match p {
            TuneParameter::VG2 => self.v_g2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonSpec {
    /// u
    pub mass: f64,
    /// e
    pub charge: f64,
}

impl IonSpec {
    pub fn new(mass: f64, charge: f64) -> Result<Self> {
        check(mass > 0.0 && mass.is_finite(), || format!("ion mass must be > 0, got {mass}"))?;
        check(charge >= 1.0 && charge.is_finite(), || format!("ion charge must be >= 1, got {charge}"))?;
        Ok(IonSpec { mass, charge })
    }

    /// Kinetic energy in eV at speed `v` (mm/µs).
    pub fn kinetic_energy(&self, v: f64) -> f64 {
        let v_si = v * 1e3;
        0.5 * self.mass * ATOMIC_MASS * v_si * v_si / ELEMENTARY_CHARGE
    }

    /// Acceleration in mm/µs² in a field of `e` V/mm.
    pub fn acceleration(&self, e: f64) -> f64 {
        self.charge * e / self.mass * ELEMENTARY_CHARGE / ATOMIC_MASS * 1e-6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneParameter {
    VG2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: &'static str,
    /// Path length travelled in the segment (mm).
    pub length: f64,
    pub v_in: f64,
    pub v_out: f64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flight {
    pub segments: Vec<Segment>,
    pub total_time: f64,
    /// Potential at the birth point.
    pub birth_potential: f64,
    /// Kinetic energy at the detector (eV).
    pub final_energy: f64,
}

/// Potential at `x0` mm from the repeller.
pub fn birth_potential(x0: f64, geom: &TofGeometry, volts: &TofVoltages) -> f64 {
    volts.v_repeller + (volts.v_slit - volts.v_repeller) * x0 / geom.extraction_gap
}

// Uniform-field segment from potential pa to pb over length l, entered at v_in.
fn traverse(name: &'static str, ion: &IonSpec, l: f64, pa: f64, pb: f64, v_in: f64) -> Segment {
    let a = ion.acceleration((pa - pb) / l);
    let v_out = (v_in * v_in + 2.0 * a * l).max(0.0).sqrt();
    Segment { name, length: l, v_in, v_out, time: 2.0 * l / (v_in + v_out) }
}

/// Segment-by-segment closed-form flight of an ion born at rest at `x0`.
pub fn trajectory(x0: f64, ion: &IonSpec, geom: &TofGeometry, volts: &TofVoltages) -> Result<Flight> {
    geom.validate()?;
    let gap = geom.extraction_gap;
    if !(x0 > 0.0 && x0 < gap) {
        return Err(Error::InvalidInput(format!("birth position {x0} mm outside the open gap (0, {gap})")));
    }
    let phi0 = birth_potential(x0, geom, volts);
    if volts.v_repeller <= volts.v_slit {
        return Err(Error::WrongPolarity("the slit plate"));
    }
    if phi0 <= volts.v_g1 {
        return Err(Error::WrongPolarity("the mirror entrance"));
    }
    let mut segs = Vec::with_capacity(7);
    let s = traverse("extraction", ion, gap - x0, phi0, volts.v_slit, 0.0);
    segs.push(Segment { time: 2.0 * s.length / s.v_out, ..s });
    let v = segs[0].v_out;
    segs.push(traverse("drift1", ion, geom.drift_length_1, volts.v_slit, volts.v_g1, v));
    let v_g1 = segs[1].v_out;
    let stages = [
        ("stage1", geom.mirror_stage_1, volts.v_g1, volts.v_g2),
        ("stage2", geom.mirror_stage_2, volts.v_g2, volts.v_g3),
    ];
    let mut inbound = Vec::new();
    let mut v = v_g1;
    let mut turn = None;
    for (name, l, pa, pb) in stages {
        if phi0 < pb {
            // decelerates to rest at depth d and comes straight back
            let d = l * (phi0 - pa) / (pb - pa);
            turn = Some(Segment { name, length: 2.0 * d, v_in: v, v_out: v, time: 4.0 * d / v });
            break;
        }
        let s = traverse(name, ion, l, pa, pb, v);
        v = s.v_out;
        inbound.push(s);
    }
    let Some(turn) = turn else {
        return Err(Error::MirrorPassThrough);
    };
    // the outbound crossing of each traversed stage mirrors the inbound one
    segs.extend(inbound.iter().cloned());
    segs.push(turn);
    for s in inbound.iter().rev() {
        segs.push(Segment { name: s.name, length: s.length, v_in: s.v_out, v_out: s.v_in, time: s.time });
    }
    segs.push(Segment { name: "drift2", length: geom.drift_length_2, v_in: v_g1, v_out: v_g1, time: geom.drift_length_2 / v_g1 });
    let total_time = segs.iter().map(|s| s.time).sum();
    let final_energy = ion.kinetic_energy(v_g1);
    Ok(Flight { segments: segs, total_time, birth_potential: phi0, final_energy })
}

pub fn flight_time(x0: f64, ion: &IonSpec, geom: &TofGeometry, volts: &TofVoltages) -> Result<f64> {
    Ok(trajectory(x0, ion, geom, volts)?.total_time)
}

/// Central-difference dt/dx0 in µs/mm.
pub fn time_slope(x0: f64, ion: &IonSpec, geom: &TofGeometry, volts: &TofVoltages) -> Result<f64> {
    let h = 1e-4 * geom.extraction_gap;
    let h = h.min(0.5 * x0).min(0.5 * (geom.extraction_gap - x0));
    let tp = flight_time(x0 + h, ion, geom, volts)?;
    let tm = flight_time(x0 - h, ion, geom, volts)?;
    Ok((tp - tm) / (2.0 * h))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispersion {
    /// Birth positions (mm from the repeller).
    pub x0: Vec<f64>,
    /// Flight times (µs).
    pub t: Vec<f64>,
    /// dt/dx0 (µs/mm).
    pub slope: Vec<f64>,
}

/// Samples `n_points` equally spaced birth positions strictly inside the gap.
pub fn dispersion_curve(ion: &IonSpec, geom: &TofGeometry, volts: &TofVoltages, n_points: usize) -> Result<Dispersion> {
    check(n_points >= 2, || "dispersion needs at least two points".into())?;
    let gap = geom.extraction_gap;
    let xs: Vec<f64> = (0..n_points).map(|i| gap * (i + 1) as f64 / (n_points + 1) as f64).collect();
    sample(ion, geom, volts, xs)
}

/// Samples `n_points` birth positions spanning `[xa, xb]` inclusive.
pub fn dispersion_over(ion: &IonSpec, geom: &TofGeometry, volts: &TofVoltages, xa: f64, xb: f64, n_points: usize) -> Result<Dispersion> {
    check(n_points >= 2, || "dispersion needs at least two points".into())?;
    check(xa > 0.0 && xb < geom.extraction_gap && xa < xb, || format!("interval [{xa}, {xb}] must lie inside the gap"))?;
    let xs: Vec<f64> = (0..n_points).map(|i| xa + (xb - xa) * i as f64 / (n_points - 1) as f64).collect();
    sample(ion, geom, volts, xs)
}

fn sample(ion: &IonSpec, geom: &TofGeometry, volts: &TofVoltages, xs: Vec<f64>) -> Result<Dispersion> {
    let rows: Result<Vec<(f64, f64)>> = xs
        .par_iter()
        .map(|&x| Ok((flight_time(x, ion, geom, volts)?, time_slope(x, ion, geom, volts)?)))
        .collect();
    let rows = rows?;
    Ok(Dispersion { x0: xs, t: rows.iter().map(|r| r.0).collect(), slope: rows.iter().map(|r| r.1).collect() })
}

impl Dispersion {
    /// Whether dt/dx0 keeps one sign over the central `fraction` of the samples.
    pub fn is_monotone_over(&self, fraction: f64) -> bool {
        let n = self.x0.len();
        let cut = ((1.0 - fraction) * 0.5 * n as f64).floor() as usize;
        let mid = &self.slope[cut..n - cut];
        mid.iter().all(|s| *s > 0.0) || mid.iter().all(|s| *s < 0.0)
    }
}

/// Root of dt/dx0 at the gap midpoint in the tuned voltage.
///
/// Without a bracket the tuned voltage is scanned between G1 and G3.
pub fn find_space_focus(
    ion: &IonSpec,
    geom: &TofGeometry,
    base: &TofVoltages,
    tune: TuneParameter,
    bracket: Option<(f64, f64)>,
) -> Result<TofVoltages> {
    let mid = 0.5 * geom.extraction_gap;
    let slope_at = |v: f64| time_slope(mid, ion, geom, &base.with(tune, v));
    let (a, b) = match bracket {
        Some(br) => br,
        None => {
            let (lo, hi) = (base.v_g1, base.v_g3);
            let n = 400;
            let vs: Vec<f64> = (1..n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
            let ss: Vec<Option<f64>> = vs.par_iter().map(|&v| slope_at(v).ok()).collect();
            let found = (0..vs.len() - 1).find_map(|i| match (ss[i], ss[i + 1]) {
                (Some(s0), Some(s1)) if s0 * s1 <= 0.0 => Some((vs[i], vs[i + 1])),
                _ => None,
            });
            found.ok_or_else(|| Error::NoRoot("no sign change of dt/dx0 while scanning the tuned voltage".into()))?
        }
    };
    let (sa, sb) = (slope_at(a)?, slope_at(b)?);
    if sa * sb > 0.0 {
        return Err(Error::NoRoot(format!("dt/dx0 does not change sign on [{a}, {b}] V")));
    }
    let v = brent(|v| slope_at(v).unwrap_or(f64::NAN), a, b, 1e-10 * (b - a).abs().max(1.0), 200)?;
    let out = base.with(tune, v);
    let s = slope_at(v)?;
    if s.abs() > 1e-6 {
        return Err(Error::NoRoot(format!("stationarity not reached: dt/dx0 = {s:e} µs/mm")));
    }
    Ok(out)
}

/// Imaging mode: the tuned voltage raised by `detune` (fractional).
pub fn imaging_mode(focus: &TofVoltages, tune: TuneParameter, detune: f64) -> TofVoltages {
    focus.with(tune, focus.get(tune) * (1.0 + detune))
}

/// Birth position for arrival time `t`, by monotone cubic interpolation of x0(t).
pub fn invert_arrival_time(t: f64, dispersion: &Dispersion) -> Result<f64> {
    let inc = dispersion.t.windows(2).all(|w| w[1] > w[0]);
    let dec = dispersion.t.windows(2).all(|w| w[1] < w[0]);
    if !inc && !dec {
        return Err(Error::NotMonotone);
    }
    let (mut ts, mut xs) = (dispersion.t.clone(), dispersion.x0.clone());
    if dec {
        ts.reverse();
        xs.reverse();
    }
    let (t0, t1) = (ts[0], ts[ts.len() - 1]);
    if !(t >= t0 && t <= t1) {
        return Err(Error::OutOfRange(t));
    }
    Ok(Pchip::new(ts, xs)?.eval(t))
}

/// Depth resolved by one time bin of `bin` µs at birth position `x0`, in µm.
pub fn bin_depth(x0: f64, bin: f64, ion: &IonSpec, geom: &TofGeometry, volts: &TofVoltages) -> Result<f64> {
    let s = time_slope(x0, ion, geom, volts)?;
    if s == 0.0 {
        return Err(Error::NotMonotone);
    }
    Ok(bin / s.abs() * 1e3)
}
