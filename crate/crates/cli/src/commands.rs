use crate::settings::{self, Settings};
use crate::{AvgMode, AxisArg, Failure, ScanKind, TofMode};
use ionyield::beam::{Axis, IntensityGrid};
use ionyield::curvefile::CurveFile;
use ionyield::deconv::{build_kernel, deconvolve as invert, l_curve, RegularizationSpec, DEFAULT_LAMBDA_RANGE};
use ionyield::fitkit::{fit_two_slope, local_loglog_slope, plateau_detect, saturation_intensity, FitResult, Saturation, KINK_THRESHOLD};
use ionyield::focalavg::{
    average_clipped, average_full_focus, clipping_artifact_scan, describe_beam, describe_volume, residual_averaging_convergence,
    AverageMode, DEFAULT_CUTOFF,
};
use ionyield::ionmodel::{
    bandwidth_window, keldysh_gamma, photon_order, ponderomotive_energy, resonance_detuning, within_bandwidth, ProbabilityCurve,
    Species, HC_EV_NM,
};
use ionyield::tofmap::{
    bin_depth, dispersion_curve, dispersion_over, find_space_focus, imaging_mode, invert_arrival_time, Dispersion, IonSpec,
    TofGeometry, TofVoltages, TuneParameter,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

type Outcome = Result<(), Failure>;

/// Probability tables reach this far below the smallest I0.
const TABLE_REACH: f64 = 0.5 * DEFAULT_CUTOFF;
const TABLE_PER_DECADE: f64 = 100.0;
/// One multiscaler bin (µs).
const TIME_BIN: f64 = 0.00025;

fn measurement_grid(s: &Settings) -> Result<IntensityGrid, Failure> {
    match &s.grid {
        Some(g) => g.build(),
        None => Ok(IntensityGrid::logspace(1e12, 1.5e14, 60)?),
    }
}

fn probability_table(s: &Settings) -> Result<IntensityGrid, Failure> {
    let g = measurement_grid(s)?;
    let lo = g.min() * TABLE_REACH;
    let n = ((g.max() / lo).log10() * TABLE_PER_DECADE).ceil() as usize + 1;
    Ok(IntensityGrid::logspace(lo, g.max(), n)?)
}

fn read_curve(path: &Path) -> Result<CurveFile, Failure> {
    CurveFile::read(path).map_err(|e| Failure::Usage(e.to_string()))
}

fn write_curve(f: &CurveFile, path: &Path) -> Outcome {
    f.write(path).map_err(|e| Failure::Runtime(e.to_string()))
}

fn tabulate(s: &Settings) -> Result<ProbabilityCurve, Failure> {
    let model = s.model.as_ref().ok_or_else(|| Failure::Usage("configuration has no [model] section".into()))?;
    Ok(model.curve(&probability_table(s)?)?)
}

pub fn probability(config: &Path, out: &Path) -> Outcome {
    let s = settings::load(Some(config))?;
    let p = tabulate(&s)?;
    write_curve(&CurveFile::from_probability(&p), out)?;
    println!("wrote {} points of P(I) on [{:e}, {:e}] W/cm^2 to {}", p.grid.len(), p.grid.min(), p.grid.max(), out.display());
    Ok(())
}

pub fn average(config: Option<&Path>, input: &Path, out: &Path, mode: AvgMode, noise: f64, seed: u64) -> Outcome {
    let s = settings::load(config)?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Failure::Usage(format!("--noise must be >= 0, got {noise}")));
    }
    let p = read_curve(input)?.to_probability().map_err(|e| Failure::Usage(format!("{}: {e}", input.display())))?;
    let g = measurement_grid(&s)?;
    let mut y = match mode {
        AvgMode::Full => average_full_focus(&p, &s.beam, &g),
        AvgMode::Clipped => average_clipped(&p, &s.beam, &s.volume, &g, s.order),
    }
    .map_err(|e| match e {
        ionyield::Error::Grid(m) => Failure::Usage(format!("incompatible grids: {m}")),
        other => other.into(),
    })?;
    if noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, noise).map_err(|e| Failure::Usage(e.to_string()))?;
        for v in y.s.iter_mut() {
            *v *= 1.0 + dist.sample(&mut rng);
        }
        y.metadata.push(("noise".into(), format!("relative {noise} seed {seed}")));
    }
    write_curve(&CurveFile::from_yield(&y), out)?;
    println!("{} average of {} over {} points written to {}", y.mode.as_str(), input.display(), g.len(), out.display());
    Ok(())
}

fn fit_columns(f: &CurveFile) -> Result<(Vec<f64>, Vec<f64>), Failure> {
    if f.columns.len() < 2 {
        return Err(Failure::Usage("curve file needs at least two columns".into()));
    }
    Ok((f.rows.iter().map(|r| r[0]).collect(), f.rows.iter().map(|r| r[1]).collect()))
}

fn fit_row_file(r: &FitResult) -> CurveFile {
    let mut f = CurveFile::new(
        &["n_a", "n_b", "i_kink", "i_sat", "amplitude", "sharpness", "saturation_softness", "residual_rms", "single_slope_rms", "kink_significance", "converged", "points_used"],
        &["1", "1", "W/cm^2", "W/cm^2", "input", "1", "1", "ln", "ln", "1", "1", "1"],
    )
    .meta("kind", "fit");
    f.rows.push(vec![
        r.n_a,
        r.n_b,
        r.i_kink,
        r.i_sat,
        r.amplitude,
        r.sharpness,
        r.saturation_softness,
        r.residual_rms,
        r.single_slope_rms,
        r.kink_significance,
        if r.converged { 1.0 } else { 0.0 },
        r.points_used as f64,
    ]);
    f
}

pub fn fit(input: &Path, config: Option<&Path>, out: Option<&Path>, slope_out: Option<&Path>, censor: bool) -> Outcome {
    let s = settings::load(config)?;
    let file = read_curve(input)?;
    let (x, y) = fit_columns(&file)?;
    let mut opts = s.fit.options.clone();
    opts.censor_postmax |= censor;
    let r = fit_two_slope(&x, &y, &opts)?;
    println!("fit of {} ({} of {} points)", input.display(), r.points_used, x.len());
    println!("  n_a = {:.4}", r.n_a);
    println!("  n_b = {:.4}", r.n_b);
    println!("  I_kink = {:.4e} W/cm^2", r.i_kink);
    println!("  I_sat = {:.4e} W/cm^2", r.i_sat);
    println!("  rms two-slope = {:.5}, single-slope = {:.5}", r.residual_rms, r.single_slope_rms);
    let verdict = if r.is_kinked() { "kinked" } else { "no kink" };
    println!("  kink significance = {:.4} ({verdict}, threshold {KINK_THRESHOLD})", r.kink_significance);
    if !r.converged {
        println!("  warning: optimiser stopped at its iteration limit");
    }
    match saturation_intensity(&x, &y, &opts)? {
        Saturation::Saturated { i_sat_fit, i_sat_1e, .. } => {
            println!("  saturation: fit {i_sat_fit:.4e}, 1-1/e crossing {i_sat_1e:.4e} W/cm^2")
        }
        Saturation::NotSaturated { max_fraction } => println!("  not saturated (maximum reaches {max_fraction:.3} of the plateau)"),
    }
    let sc = local_loglog_slope(&x, &y, s.fit.slope_window)?;
    for p in plateau_detect(&sc, s.fit.plateau_tolerance, s.fit.plateau_min_width) {
        println!("  slope plateau {:.3} over {:.2} decades around {:.3e} W/cm^2", p.mean_slope, p.width_decades, p.center);
    }
    if let Some(path) = out {
        write_curve(&fit_row_file(&r).meta("source", input.display().to_string()), path)?;
    }
    if let Some(path) = slope_out {
        let mut f = CurveFile::new(&["I", "slope"], &["W/cm^2", "1"])
            .meta("kind", "slope")
            .meta("window_decades", sc.window_decades.to_string());
        f.rows = sc.grid.iter().zip(&sc.slope).map(|(i, v)| vec![*i, v.unwrap_or(f64::NAN)]).collect();
        write_curve(&f, path)?;
    }
    Ok(())
}

pub fn deconvolve(input: &Path, config: Option<&Path>, out: &Path, lambda: Option<f64>, order: usize, nonneg: bool) -> Outcome {
    let s = settings::load(config)?;
    let y = read_curve(input)?.to_yield().map_err(|e| Failure::Usage(format!("{}: {e}", input.display())))?;
    if y.mode != AverageMode::FullFocus {
        return Err(Failure::Usage(format!(
            "{} holds a {} yield; only full-focus averages are deconvolved, a clipped yield already approximates P",
            input.display(),
            y.mode.as_str()
        )));
    }
    if order > 2 {
        return Err(Failure::Usage(format!("--order must be 0, 1 or 2, got {order}")));
    }
    let kernel = build_kernel(&s.beam, &y.grid, &y.grid).map_err(|e| Failure::Usage(e.to_string()))?;
    let lam = match lambda {
        Some(l) if l >= 0.0 && l.is_finite() => l,
        Some(l) => return Err(Failure::Usage(format!("--lambda must be >= 0, got {l}"))),
        None => {
            let lc = l_curve(&y, &kernel, order, DEFAULT_LAMBDA_RANGE)?;
            println!("L-curve corner at lambda = {:e}", lc.lambda());
            lc.lambda()
        }
    };
    let reg = RegularizationSpec::new(lam, order, nonneg).map_err(|e| Failure::Usage(e.to_string()))?;
    let d = invert(&y, &kernel, &reg)?;
    let mut f = CurveFile::new(&["I", "P", "P_unclamped"], &["W/cm^2", "1", "1"])
        .meta("kind", "probability")
        .meta("model", format!("deconvolved from {}", input.display()))
        .meta("lambda", format!("{lam:e}"))
        .meta("order", order.to_string())
        .meta("nonnegativity", nonneg.to_string())
        .meta("scale", format!("{:e}", d.scale))
        .meta("condition", format!("{:e}", d.condition))
        .meta("residual", format!("{:e}", d.residual_rel))
        .meta("beam", describe_beam(&s.beam));
    f.rows = d.grid.values().iter().zip(&d.p).map(|(i, v)| vec![*i, v.clamp(0.0, 1.0), *v]).collect();
    write_curve(&f, out)?;
    println!("lambda = {lam:e}, order = {order}, relative residual = {:e}, condition = {:e}, scale = {:e}", d.residual_rel, d.condition, d.scale);
    Ok(())
}

fn describe_tof(g: &TofGeometry, v: &TofVoltages) -> (String, String) {
    (
        format!(
            "gap={}mm drift1={}mm stage1={}mm stage2={}mm drift2={}mm",
            g.extraction_gap, g.drift_length_1, g.mirror_stage_1, g.mirror_stage_2, g.drift_length_2
        ),
        format!("repeller={}V slit={}V g1={}V g2={}V g3={}V", v.v_repeller, v.v_slit, v.v_g1, v.v_g2, v.v_g3),
    )
}

fn round_trip_error(d: &Dispersion, ion: &IonSpec, g: &TofGeometry, v: &TofVoltages) -> Result<f64, Failure> {
    let (xa, xb) = (d.x0[0], d.x0[d.x0.len() - 1]);
    let mut worst = 0.0f64;
    for k in 0..11 {
        let x = xa + (xb - xa) * (k as f64 + 0.5) / 11.0;
        let t = ionyield::tofmap::flight_time(x, ion, g, v)?;
        worst = worst.max((invert_arrival_time(t, d)? - x).abs());
    }
    Ok(worst * 1e3)
}

pub fn tof(config: Option<&Path>, out: &Path, mode: TofMode, second_mass: Option<f64>) -> Outcome {
    let s = settings::load(config)?;
    let t = &s.tof;
    let (geom, ion) = (t.geometry, t.ion);
    let volts = match mode {
        TofMode::Fixed => t.voltages,
        TofMode::SpaceFocus => find_space_focus(&ion, &geom, &t.voltages, TuneParameter::VG2, None)?,
        TofMode::Imaging => {
            let f = find_space_focus(&ion, &geom, &t.voltages, TuneParameter::VG2, None)?;
            imaging_mode(&f, TuneParameter::VG2, t.detune)
        }
    };
    let ion2 = second_mass.map(|m| IonSpec::new(m, ion.charge)).transpose().map_err(|e| Failure::Usage(e.to_string()))?;
    let d = dispersion_curve(&ion, &geom, &volts, t.points)?;
    let illustrative = geom == TofGeometry::reference() && t.voltages == TofVoltages::reference();
    let (gdesc, vdesc) = describe_tof(&geom, &volts);
    let mode_name = match mode {
        TofMode::Fixed => "fixed",
        TofMode::SpaceFocus => "space-focus",
        TofMode::Imaging => "imaging",
    };
    let mut cols = vec!["x0", "t", "dt_dx0"];
    let mut units = vec!["um", "us", "us/mm"];
    if ion2.is_some() {
        cols.push("t2");
        units.push("us");
    }
    let mut f = CurveFile::new(&cols, &units)
        .meta("kind", "dispersion")
        .meta("mode", mode_name)
        .meta("geometry", gdesc)
        .meta("voltages", vdesc)
        .meta("ion", format!("mass={}u charge={}e", ion.mass, ion.charge));
    if illustrative {
        f = f.meta("preset", "illustrative reference spectrometer, not a measured instrument");
    }
    let t2: Option<Vec<f64>> = match ion2 {
        Some(i2) => {
            f = f.meta("ion2", format!("mass={}u charge={}e", i2.mass, i2.charge));
            Some(dispersion_curve(&i2, &geom, &volts, t.points)?.t)
        }
        None => None,
    };
    f.rows = (0..d.x0.len())
        .map(|k| {
            let mut r = vec![d.x0[k] * 1e3, d.t[k], d.slope[k]];
            if let Some(t2) = &t2 {
                r.push(t2[k]);
            }
            r
        })
        .collect();
    let tmin = d.t.iter().cloned().fold(f64::INFINITY, f64::min);
    let tmax = d.t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("{mode_name}: G2 = {:.6} V, flight times {tmin:.6} .. {tmax:.6} us", volts.v_g2);
    let mid = 0.5 * geom.extraction_gap;
    match mode {
        TofMode::SpaceFocus => {
            let n = d.slope.len();
            let min_slope = d.slope[1..n - 1].iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
            let tol = 1e-4 * (tmax - tmin) / geom.extraction_gap;
            println!("  interior min |dt/dx0| = {min_slope:e} us/mm (tolerance {tol:e})");
        }
        _ => {
            let monotone = d.is_monotone_over(0.8);
            println!("  monotone over the central 80%: {}", if monotone { "yes" } else { "no" });
            if monotone {
                let gap = geom.extraction_gap;
                let table = dispersion_over(&ion, &geom, &volts, 0.1 * gap, 0.9 * gap, t.points)?;
                match round_trip_error(&table, &ion, &geom, &volts) {
                    Ok(e) => println!("  x0 -> t -> x0 round trip: max error {e:.4} um"),
                    Err(Failure::Runtime(m)) => println!("  x0(t) mapping unavailable: {m}"),
                    Err(e) => return Err(e),
                }
                let w = bin_depth(mid, TIME_BIN, &ion, &geom, &volts)?;
                println!("  depth per 250 ps bin at mid-gap: {w:.4} um");
                f = f.meta("bin_depth_um", format!("{w:e}"));
            }
        }
    }
    write_curve(&f, out)
}

pub struct ScanArgs {
    pub kind: ScanKind,
    pub axis: Option<AxisArg>,
    pub extents: Vec<f64>,
    pub base_extent: f64,
    pub factors: Vec<f64>,
    pub target: Option<f64>,
}

fn scan_header(axis: Axis) -> CurveFile {
    let name = match axis {
        Axis::X => "dx",
        Axis::Y => "dy",
        Axis::Z => "dz",
    };
    CurveFile::new(
        &[name, "n_a", "n_b", "i_kink", "i_sat", "kink_significance", "residual_rms", "single_slope_rms"],
        &["um", "1", "1", "W/cm^2", "W/cm^2", "1", "ln", "ln"],
    )
}

fn scan_row(extent: f64, r: &FitResult) -> Vec<f64> {
    vec![extent, r.n_a, r.n_b, r.i_kink, r.i_sat, r.kink_significance, r.residual_rms, r.single_slope_rms]
}

pub fn scan(config: Option<&Path>, input: Option<&Path>, out: &Path, a: ScanArgs) -> Outcome {
    let s = settings::load(config)?;
    let p = match input {
        Some(path) => read_curve(path)?.to_probability().map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
        None => tabulate(&s)?,
    };
    let axis = match a.axis {
        Some(AxisArg::X) => Axis::X,
        Some(AxisArg::Y) => Axis::Y,
        Some(AxisArg::Z) => Axis::Z,
        None => s.depth_axis,
    };
    let g = measurement_grid(&s)?;
    let mut f = scan_header(axis)
        .meta("beam", describe_beam(&s.beam))
        .meta("volume", describe_volume(&s.volume))
        .meta("probability", p.provenance.clone());
    match a.kind {
        ScanKind::Clipping => {
            if a.extents.is_empty() || a.extents.iter().any(|e| !(*e > 0.0)) {
                return Err(Failure::Usage("--extents must be positive".into()));
            }
            let family: Result<Vec<_>, _> = a.extents.iter().map(|e| s.volume.with_extent(axis, *e)).collect();
            let family = family.map_err(|e| Failure::Usage(e.to_string()))?;
            let rows = clipping_artifact_scan(&p, &s.beam, &family, &g, s.order, &s.fit.options)?;
            f = f.meta("kind", "clipping_scan");
            let mut worst = 0.0f64;
            for (e, r) in a.extents.iter().zip(&rows) {
                println!("  extent {e:>8.3} um: n_a {:.3} n_b {:.3} significance {:.4}", r.fit.n_a, r.fit.n_b, r.fit.kink_significance);
                worst = worst.max(r.fit.kink_significance);
                f.rows.push(scan_row(*e, &r.fit));
            }
            let verdict = if worst < KINK_THRESHOLD { "no artificial kink" } else { "kink detected" };
            println!("max kink significance {worst:.4} (threshold {KINK_THRESHOLD}): {verdict}");
        }
        ScanKind::Convergence => {
            if !(a.base_extent > 0.0) {
                return Err(Failure::Usage("--base-extent must be positive".into()));
            }
            let base = s.volume.with_extent(axis, a.base_extent).map_err(|e| Failure::Usage(e.to_string()))?;
            let rep = residual_averaging_convergence(&p, &s.beam, &base, axis, &a.factors, &g, s.order, a.target)
                .map_err(|e| match e {
                    ionyield::Error::InvalidInput(m) => Failure::Usage(m),
                    other => other.into(),
                })?;
            f = f.meta("kind", "convergence_scan");
            for r in &rep.rows {
                println!("  extent {:>8.3} um: n_a {:.3} n_b {:.3} significance {:.4}", r.extent, r.fit.n_a, r.fit.n_b, r.fit.kink_significance);
                f.rows.push(scan_row(r.extent, &r.fit));
            }
            println!("n_b non-increasing as the box shrinks: {}", if rep.nonincreasing { "yes" } else { "no" });
            match rep.converged {
                Some(c) => println!("final n_b {:.3}, within 0.2 of target: {}", rep.final_n_b, if c { "yes" } else { "no" }),
                None => println!("final n_b {:.3}", rep.final_n_b),
            }
        }
    }
    write_curve(&f, out)
}

pub fn keldysh(config: Option<&Path>, species: Option<&str>, intensity: Option<f64>, bandwidth: f64) -> Outcome {
    let s = settings::load(config)?;
    let sp: Species = match species {
        Some(name) => Species::preset(name).map_err(|e| Failure::Usage(e.to_string()))?,
        None => s.species.clone().ok_or_else(|| Failure::Usage("no species: give --species or a [species] section".into()))?,
    };
    let i = match intensity.or_else(|| s.pulse.as_ref().and_then(|p| p.peak_intensity)) {
        Some(i) if i > 0.0 => i,
        Some(i) => return Err(Failure::Usage(format!("intensity must be > 0, got {i}"))),
        None => return Err(Failure::Usage("no intensity: give --intensity or [pulse] peak_intensity".into())),
    };
    if !(bandwidth >= 0.0) {
        return Err(Failure::Usage(format!("--bandwidth must be >= 0, got {bandwidth}")));
    }
    let wl = s.beam.wavelength;
    let up = ponderomotive_energy(i, wl);
    let gamma = keldysh_gamma(&sp, i, wl)?;
    let photon = HC_EV_NM / (wl * 1e3);
    println!("species {} (IE {} eV) at {i:e} W/cm^2, {wl} um", sp.name, sp.ionization_energy);
    println!("  Up = {up:.4} eV");
    println!("  gamma = {gamma:.4}");
    println!("  photon energy = {photon:.4} eV, photon order = {}", photon_order(&sp, photon)?);
    let ph = sp.reference_photon_energy;
    for (state, e) in &sp.state_energies {
        let n = ((e / ph).round() as u32).max(1);
        let det = resonance_detuning(&sp, state, n, ph, i, wl, 0.0)?;
        let win = bandwidth_window(bandwidth, wl * 1e3, n)?;
        let inside = if within_bandwidth(det, win) { "inside" } else { "outside" };
        println!("  {state}: {e} eV, {n} x {ph} eV detuning {det:+.4} eV, window {win:.4} eV ({inside})");
    }
    Ok(())
}
