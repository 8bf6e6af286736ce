//! Run configuration: every known section is parsed up front so that unknown
//! keys anywhere in the file are rejected, whatever the subcommand.

use crate::Failure;
use ionyield::beam::{peak_intensity_from_pulse, Axis, BeamGeometry, DetectionVolume, IntensityGrid, SlitOrientation, Spacing};
use ionyield::config::{Config, ConfigError, Section};
use ionyield::fitkit::{FitOptions, Weighting};
use ionyield::focalavg::DEFAULT_ORDER;
use ionyield::ionmodel::{ProbabilityModel, Species};
use ionyield::tofmap::{IonSpec, TofGeometry, TofVoltages};
use std::path::Path;

pub struct Settings {
    pub beam: BeamGeometry,
    pub pulse: Option<Pulse>,
    pub species: Option<Species>,
    pub model: Option<ProbabilityModel>,
    pub volume: DetectionVolume,
    pub order: usize,
    pub depth_axis: Axis,
    pub grid: Option<GridSpec>,
    pub fit: FitSettings,
    pub tof: TofSettings,
}

pub struct Pulse {
    pub peak_intensity: Option<f64>,
}

pub struct GridSpec {
    pub i_min: f64,
    pub i_max: f64,
    pub points: usize,
    pub spacing: Spacing,
}

impl GridSpec {
    pub fn build(&self) -> Result<IntensityGrid, Failure> {
        let g = match self.spacing {
            Spacing::Log => IntensityGrid::logspace(self.i_min, self.i_max, self.points),
            Spacing::Linear => IntensityGrid::linspace(self.i_min, self.i_max, self.points),
        };
        g.map_err(|e| Failure::Usage(format!("[grid]: {e}")))
    }
}

pub struct FitSettings {
    pub options: FitOptions,
    pub slope_window: f64,
    pub plateau_tolerance: f64,
    pub plateau_min_width: f64,
}

pub struct TofSettings {
    pub geometry: TofGeometry,
    pub voltages: TofVoltages,
    pub ion: IonSpec,
    pub points: usize,
    pub detune: f64,
}

fn usage(e: ConfigError) -> Failure {
    Failure::Usage(e.to_string())
}

pub fn load(path: Option<&Path>) -> Result<Settings, Failure> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let cfg = Config::parse(&text).map_err(usage)?;
    let s = from_config(&cfg).map_err(usage)?;
    cfg.finish().map_err(usage)?;
    Ok(s)
}

fn only_preset(sec: &Section<'_>) -> Result<Option<String>, ConfigError> {
    let preset: Option<String> = sec.get("preset")?;
    if preset.is_some() {
        if let Some(k) = sec.keys().find(|k| *k != "preset") {
            return Err(sec.error(k, format!("`preset` in [{}] cannot be combined with `{k}`", sec.name())));
        }
    }
    Ok(preset)
}

fn from_config(cfg: &Config) -> Result<Settings, ConfigError> {
    let beam = match cfg.section("beam") {
        None => BeamGeometry::default_800nm(),
        Some(sec) => {
            let wl = sec.positive("wavelength")?.unwrap_or(0.8);
            let w0 = sec.positive("w0")?.unwrap_or(30.0);
            let mut b = BeamGeometry::new(wl, w0).map_err(|e| sec.error("w0", e.to_string()))?;
            if let Some(zr) = sec.positive("rayleigh_range")? {
                b = b.with_rayleigh_range(zr).map_err(|e| sec.error("rayleigh_range", e.to_string()))?;
            }
            if let Some(z) = sec.get::<f64>("focus_position")? {
                b = b.with_focus_position(z);
            }
            b
        }
    };

    let pulse = match cfg.section("pulse") {
        None => None,
        Some(sec) => {
            let fwhm = sec.positive("fwhm")?;
            let direct = sec.positive("peak_intensity")?;
            let power = sec.positive("avg_power")?;
            let rate = sec.positive("rep_rate")?;
            let peak_intensity = match (direct, power, rate) {
                (Some(i), None, None) => Some(i),
                (None, Some(p), Some(r)) => {
                    let tau = fwhm.ok_or_else(|| sec.error("avg_power", "`avg_power` needs `fwhm` as well"))?;
                    Some(peak_intensity_from_pulse(p, r, tau, &beam).map_err(|e| sec.error("avg_power", e.to_string()))?)
                }
                (None, None, None) => None,
                _ => return Err(sec.error("peak_intensity", "give either `peak_intensity` or both `avg_power` and `rep_rate`")),
            };
            Some(Pulse { peak_intensity })
        }
    };

    let species = match cfg.section("species") {
        None => None,
        Some(sec) => match only_preset(&sec)? {
            Some(name) => Some(Species::preset(&name).map_err(|e| sec.error("preset", e.to_string()))?),
            None => Some(Species::from_config(cfg)?),
        },
    };
    if species.is_none() && cfg.has_section("states") {
        let sec = cfg.section("states").expect("section exists");
        return Err(ConfigError { line: Some(sec.line()), message: "[states] needs a [species] section".into() });
    }

    let model = match cfg.section("model") {
        None => None,
        Some(sec) => match only_preset(&sec)? {
            Some(name) => Some(ProbabilityModel::preset(&name).map_err(|e| sec.error("preset", e.to_string()))?),
            None => Some(ProbabilityModel::from_section(cfg, "model")?),
        },
    };

    let (volume, order, depth_axis) = match cfg.section("volume") {
        None => (DetectionVolume::reference(), DEFAULT_ORDER, SlitOrientation::LongAlongBeam.depth_axis()),
        Some(sec) => {
            let order: usize = sec.get_or("order", DEFAULT_ORDER)?;
            if order < 8 {
                return Err(sec.error("order", "`order` must be >= 8"));
            }
            let z_offset: f64 = sec.get_or("z_offset", 1700.0)?;
            let slit_keys = ["narrow_slit", "long_slit", "depth", "orientation"];
            let box_keys = ["dx", "dy", "dz"];
            let uses_slits = slit_keys.iter().any(|k| sec.keys().any(|s| s == *k));
            let uses_box = box_keys.iter().any(|k| sec.keys().any(|s| s == *k));
            if uses_slits && uses_box {
                return Err(sec.error("dx", "give either dx/dy/dz or slit sizes, not both"));
            }
            let (v, axis) = if uses_box {
                let need = |k: &str| sec.positive(k)?.ok_or_else(|| sec.error(k, format!("missing key `{k}` in [volume]")));
                let axis = match sec.get::<String>("scan_axis")?.as_deref() {
                    None | Some("x") => Axis::X,
                    Some("y") => Axis::Y,
                    Some("z") => Axis::Z,
                    Some(o) => return Err(sec.error("scan_axis", format!("unknown axis `{o}` (x, y or z)"))),
                };
                (DetectionVolume::new(need("dx")?, need("dy")?, need("dz")?, z_offset).map_err(|e| sec.error("dx", e.to_string()))?, axis)
            } else {
                let o = match sec.get::<String>("orientation")?.as_deref() {
                    None | Some("long_along_beam") => SlitOrientation::LongAlongBeam,
                    Some("long_transverse") => SlitOrientation::LongTransverse,
                    Some(o) => {
                        return Err(sec.error("orientation", format!("unknown orientation `{o}` (long_along_beam or long_transverse)")))
                    }
                };
                let narrow = sec.positive("narrow_slit")?.unwrap_or(10.0);
                let long = sec.positive("long_slit")?.unwrap_or(400.0);
                let depth = sec.positive("depth")?.unwrap_or(3.0);
                let v = DetectionVolume::from_slits(narrow, long, depth, z_offset, o).map_err(|e| sec.error("depth", e.to_string()))?;
                (v, o.depth_axis())
            };
            let x0: f64 = sec.get_or("x_offset", 0.0)?;
            let y0: f64 = sec.get_or("y_offset", 0.0)?;
            (v.with_transverse_offset(x0, y0), order, axis)
        }
    };

    let grid = match cfg.section("grid") {
        None => None,
        Some(sec) => {
            let i_min = sec.positive("i_min")?.ok_or_else(|| sec.error("i_min", "missing key `i_min` in [grid]"))?;
            let i_max = sec.positive("i_max")?.ok_or_else(|| sec.error("i_max", "missing key `i_max` in [grid]"))?;
            let points: usize = sec.require("points")?;
            let spacing = match sec.get::<String>("spacing")?.as_deref() {
                None | Some("log") => Spacing::Log,
                Some("linear") => Spacing::Linear,
                Some(o) => return Err(sec.error("spacing", format!("unknown spacing `{o}` (log or linear)"))),
            };
            if i_max <= i_min || points < 2 {
                return Err(sec.error("points", "grid needs i_max > i_min and at least 2 points"));
            }
            Some(GridSpec { i_min, i_max, points, spacing })
        }
    };

    let fit = match cfg.section("fit") {
        None => FitSettings { options: FitOptions::default(), slope_window: 0.25, plateau_tolerance: 0.2, plateau_min_width: 0.3 },
        Some(sec) => {
            let weighting = match sec.get::<String>("weighting")?.as_deref() {
                None | Some("uniform") => Weighting::Uniform,
                Some("poisson") => Weighting::Poisson,
                Some(o) => return Err(sec.error("weighting", format!("unknown weighting `{o}` (uniform or poisson)"))),
            };
            let censor: bool = sec.get_or("censor_postmax", false)?;
            FitSettings {
                options: FitOptions { weighting, censor_postmax: censor, initial_guess: None },
                slope_window: sec.positive("slope_window")?.unwrap_or(0.25),
                plateau_tolerance: sec.positive("plateau_tolerance")?.unwrap_or(0.2),
                plateau_min_width: sec.positive("plateau_min_width")?.unwrap_or(0.3),
            }
        }
    };

    let default_mass = species.as_ref().map(|s| s.mass).filter(|m| *m > 1.0).unwrap_or(78.0469);
    let tof = match cfg.section("tof") {
        None => TofSettings {
            geometry: TofGeometry::reference(),
            voltages: TofVoltages::reference(),
            ion: IonSpec::new(default_mass, 1.0).expect("positive mass"),
            points: 101,
            detune: 0.10,
        },
        Some(sec) => {
            let g0 = TofGeometry::reference();
            let geometry = TofGeometry {
                extraction_gap: sec.positive("extraction_gap")?.unwrap_or(g0.extraction_gap),
                drift_length_1: sec.positive("drift_length_1")?.unwrap_or(g0.drift_length_1),
                mirror_stage_1: sec.positive("mirror_stage_1")?.unwrap_or(g0.mirror_stage_1),
                mirror_stage_2: sec.positive("mirror_stage_2")?.unwrap_or(g0.mirror_stage_2),
                drift_length_2: sec.positive("drift_length_2")?.unwrap_or(g0.drift_length_2),
            };
            let v0 = TofVoltages::reference();
            let voltages = TofVoltages {
                v_repeller: sec.get_or("v_repeller", v0.v_repeller)?,
                v_slit: sec.get_or("v_slit", v0.v_slit)?,
                v_g1: sec.get_or("v_g1", v0.v_g1)?,
                v_g2: sec.get_or("v_g2", v0.v_g2)?,
                v_g3: sec.get_or("v_g3", v0.v_g3)?,
            };
            let mass = sec.positive("mass")?.unwrap_or(default_mass);
            let charge: f64 = sec.get_or("charge", 1.0)?;
            let ion = IonSpec::new(mass, charge).map_err(|e| sec.error("charge", e.to_string()))?;
            let points: usize = sec.get_or("points", 101)?;
            if points < 11 {
                return Err(sec.error("points", "`points` must be >= 11"));
            }
            let detune: f64 = sec.get_or("detune", 0.10)?;
            TofSettings { geometry, voltages, ion, points, detune }
        }
    };

    Ok(Settings { beam, pulse, species, model, volume, order, depth_axis, grid, fit, tof })
}
