mod commands;
mod settings;

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

/// Intensity-resolved ionization yields: forward models, inversion, fitting and TOF mapping.
#[derive(Parser)]
#[command(name = "ionyield", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AvgMode {
    Full,
    Clipped,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum TofMode {
    /// Tune G2 so that dt/dx0 = 0 at mid-gap
    SpaceFocus,
    /// Space focus with G2 detuned by the configured fraction
    Imaging,
    /// Voltages exactly as configured
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ScanKind {
    /// Fit a family of box depths for artificial kinks
    Clipping,
    /// Shrink the box and track the post-kink slope
    Convergence,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum AxisArg {
    X,
    Y,
    Z,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate P(I) for the configured model
    Probability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average a P(I) table over the full focus or a clipped detection box
    Average {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Probability curve file
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        mode: AvgMode,
        /// Relative Gaussian noise added to S
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Two-slope fit of a yield or probability curve
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the fitted parameters as a one-row CSV
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the local log-log slope curve
        #[arg(long)]
        slope_curve: Option<PathBuf>,
        /// Drop points after the first local maximum
        #[arg(long)]
        censor: bool,
    },
    /// Recover P(I) from a full-focus yield curve
    Deconvolve {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Tikhonov strength; chosen from the L-curve when absent
        #[arg(long)]
        lambda: Option<f64>,
        /// Order of the derivative penalty (0, 1 or 2)
        #[arg(long, default_value_t = ionyield::deconv::DEFAULT_PENALTY_ORDER)]
        order: usize,
        #[arg(long)]
        nonneg: bool,
    },
    /// Reflectron dispersion curve x0 -> t
    Tof {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "imaging")]
        mode: TofMode,
        /// Mass (u) of a second ion tabulated alongside the first
        #[arg(long)]
        second_mass: Option<f64>,
    },
    /// Clipping-artifact or residual-averaging scan over detection boxes
    Scan {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Probability curve file; the configured model is tabulated otherwise
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "clipping")]
        kind: ScanKind,
        #[arg(long, value_enum)]
        axis: Option<AxisArg>,
        /// Box extents (µm) along the scan axis for a clipping scan
        #[arg(long, value_delimiter = ',', default_value = "1,3,10,30,100")]
        extents: Vec<f64>,
        /// Starting extent (µm) for a convergence scan
        #[arg(long, default_value_t = 100.0)]
        base_extent: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,0.3,0.1,0.03")]
        factors: Vec<f64>,
        /// Expected post-kink slope for the convergence check
        #[arg(long)]
        target: Option<f64>,
    },
    /// Keldysh parameter, ponderomotive energy and photon order
    Keldysh {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Species preset (overrides [species])
        #[arg(long)]
        species: Option<String>,
        /// Peak intensity in W/cm² (overrides [pulse])
        #[arg(long)]
        intensity: Option<f64>,
        /// Spectral FWHM in nm for the resonance window
        #[arg(long, default_value_t = 23.0)]
        bandwidth: f64,
    },
}

pub enum Failure {
    /// Bad arguments, configuration or input files: exit status 2.
    Usage(String),
    /// Numerical or runtime failure: exit status 1.
    Runtime(String),
}

impl From<ionyield::Error> for Failure {
    fn from(e: ionyield::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Probability { config, out } => commands::probability(&config, &out),
        Command::Average { config, input, out, mode, noise, seed } => {
            commands::average(config.as_deref(), &input, &out, mode, noise, seed)
        }
        Command::Fit { input, config, out, slope_curve, censor } => {
            commands::fit(&input, config.as_deref(), out.as_deref(), slope_curve.as_deref(), censor)
        }
        Command::Deconvolve { input, config, out, lambda, order, nonneg } => {
            commands::deconvolve(&input, config.as_deref(), &out, lambda, order, nonneg)
        }
        Command::Tof { config, out, mode, second_mass } => commands::tof(config.as_deref(), &out, mode, second_mass),
        Command::Scan { config, input, out, kind, axis, extents, base_extent, factors, target } => commands::scan(
            config.as_deref(),
            input.as_deref(),
            &out,
            commands::ScanArgs { kind, axis, extents, base_extent, factors, target },
        ),
        Command::Keldysh { config, species, intensity, bandwidth } => {
            commands::keldysh(config.as_deref(), species.as_deref(), intensity, bandwidth)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
