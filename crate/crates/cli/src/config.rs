//! Command-line flags and their resolution into self-contained run
//! configurations. Flags override values from a config file, which
//! override the defaults; the resolved value is what the manifest records.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use freeconv::haar::Field;
use freeconv::measure::DiscreteMeasure;
use freeconv::resolvent::{EnsembleConfig, EnsembleSpec, InlineMeasure};
use freeconv::Measure;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Parser)]
#[command(name = "freeconv", version, about = "Free additive convolution and local-law Monte Carlo checks")]
pub struct Cli {
    /// Output directory.
    #[arg(long, env = "FREECONV_OUT", default_value = "freeconv-out", global = true)]
    pub out: PathBuf,
    /// Worker threads (default: all logical processors).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Re-run the resolved configuration recorded in a manifest.
    #[arg(long, value_name = "MANIFEST")]
    pub from_manifest: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Density of μ₁ ⊞ μ₂ on a grid.
    Convolve(ScanArgs),
    /// Subordination functions at given points.
    Subordinate(SubordinateArgs),
    /// Density with regular-bulk flags and Γ per grid point.
    BulkScan(ScanArgs),
    /// Bulk endpoints of ξδ₁ + (1-ξ)δ₀ ⊞ ζδ_θ + (1-ζ)δ₀.
    Endpoints(EndpointArgs),
    /// Eigenvalues of sampled ensembles against the convolution density.
    SampleSpectrum(SpectrumArgs),
    /// Local-law errors over a spectral grid.
    Verify(VerifyArgs),
    /// Eigenvector delocalization scores.
    Deloc(DelocArgs),
    /// Statistical checks of the Haar sampler.
    HaarTest(HaarArgs),
    /// Lévy-distance control of subordination functions.
    LevyCheck(LevyArgs),
}

#[derive(Debug, Args)]
pub struct SolverFlags {
    /// Subordination residual tolerance.
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Measure file for μ₁ ("location weight" per line).
    #[arg(long)]
    pub mu1: PathBuf,
    #[arg(long)]
    pub mu2: PathBuf,
    /// Energy interval (default: sum of supports padded by 0.5).
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub interval: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-5)]
    pub eta: f64,
    #[arg(long, default_value_t = 1001)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub density_floor: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub im_floor: f64,
    /// Largest tolerated fraction of unconverged points before exiting with status 2.
    #[arg(long, default_value_t = 0.01)]
    pub max_unconverged: f64,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Args)]
pub struct SubordinateArgs {
    #[arg(long)]
    pub mu1: PathBuf,
    #[arg(long)]
    pub mu2: PathBuf,
    /// Spectral parameter as `RE IM`; repeatable.
    #[arg(long = "z", num_args = 2, value_names = ["RE", "IM"], allow_negative_numbers = true, required = true, action = clap::ArgAction::Append)]
    pub z: Vec<f64>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

#[derive(Debug, Args)]
pub struct EndpointArgs {
    #[arg(long)]
    pub xi: f64,
    #[arg(long)]
    pub zeta: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: f64,
}

#[derive(Debug, Args)]
pub struct EnsembleFlags {
    /// Ensemble JSON: {N, a_spec, b_spec, field, center, seed}.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "n", value_name = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub ensemble: EnsembleFlags,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub ensemble: EnsembleFlags,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub interval: Option<Vec<f64>>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub n_e: Option<usize>,
    #[arg(long)]
    pub n_eta: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DelocArgs {
    #[command(flatten)]
    pub ensemble: EnsembleFlags,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub interval: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct HaarArgs {
    #[arg(long = "n", value_name = "N", default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value = "unitary")]
    pub field: Field,
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Also write the first sample in the binary dump format.
    #[arg(long)]
    pub dump: bool,
}

#[derive(Debug, Args)]
pub struct LevyArgs {
    #[arg(long)]
    pub mu_a: PathBuf,
    #[arg(long)]
    pub mu_b: PathBuf,
    #[arg(long)]
    pub mu_alpha: PathBuf,
    #[arg(long)]
    pub mu_beta: PathBuf,
    /// Energies of the comparison grid.
    #[arg(long, num_args = 1.., allow_negative_numbers = true, required = true)]
    pub e: Vec<f64>,
    /// Heights of the comparison grid.
    #[arg(long, num_args = 1.., default_values_t = [0.1, 0.01])]
    pub eta: Vec<f64>,
    #[command(flatten)]
    pub solver: SolverFlags,
}

/// A fully resolved run: every input inlined, every default filled in.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Resolved {
    Convolve(ScanRun),
    Subordinate(SubordinateRun),
    BulkScan(ScanRun),
    Endpoints(EndpointRun),
    SampleSpectrum(SpectrumRun),
    Verify(VerifyRun),
    Deloc(DelocRun),
    HaarTest(HaarRun),
    LevyCheck(LevyRun),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRun {
    pub mu1: InlineMeasure,
    pub mu2: InlineMeasure,
    pub interval: (f64, f64),
    pub eta: f64,
    pub points: usize,
    pub density_floor: f64,
    pub im_floor: f64,
    pub max_unconverged: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubordinateRun {
    pub mu1: InlineMeasure,
    pub mu2: InlineMeasure,
    pub z: Vec<(f64, f64)>,
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointRun {
    pub xi: f64,
    pub zeta: f64,
    pub theta: f64,
}

/// Diagonals before centering, so that the run rebuilds the same matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleRun {
    #[serde(rename = "N")]
    pub n: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub field: Field,
    pub center: bool,
    pub seed: u64,
    pub samples: usize,
}

impl EnsembleRun {
    pub fn config(&self) -> Result<EnsembleConfig<f64>> {
        Ok(EnsembleConfig::new(self.a.clone(), self.b.clone(), self.field, self.center)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumRun {
    pub ensemble: EnsembleRun,
    pub bins: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyRun {
    pub ensemble: EnsembleRun,
    pub interval: (f64, f64),
    pub gamma: f64,
    pub n_e: usize,
    pub n_eta: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DelocRun {
    pub ensemble: EnsembleRun,
    pub interval: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HaarRun {
    #[serde(rename = "N")]
    pub n: usize,
    pub field: Field,
    pub samples: usize,
    pub seed: u64,
    pub dump: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevyRun {
    pub mu_a: InlineMeasure,
    pub mu_b: InlineMeasure,
    pub mu_alpha: InlineMeasure,
    pub mu_beta: InlineMeasure,
    pub e: Vec<f64>,
    pub eta: Vec<f64>,
    pub tol: f64,
}

/// Optional run parameters that may sit next to the ensemble fields in a
/// config file.
#[derive(Debug, Deserialize)]
struct EnsembleFile {
    #[serde(flatten)]
    spec: EnsembleSpec,
    seed: Option<u64>,
    samples: Option<usize>,
    interval: Option<(f64, f64)>,
    gamma: Option<f64>,
    n_e: Option<usize>,
    n_eta: Option<usize>,
    tol: Option<f64>,
    bins: Option<usize>,
}

pub fn inline(m: &Measure) -> InlineMeasure {
    InlineMeasure { locations: m.locations().to_vec(), weights: m.weights().to_vec() }
}

fn read_measure(path: &Path) -> Result<InlineMeasure> {
    let m = DiscreteMeasure::<f64>::read_file(path).with_context(|| format!("measure file {}", path.display()))?;
    Ok(inline(&m))
}

fn interval(v: &[f64]) -> Result<(f64, f64)> {
    let (lo, hi) = (v[0], v[1]);
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        bail!("interval must satisfy LO < HI, got {lo} {hi}");
    }
    Ok((lo, hi))
}

fn check_tol(tol: f64) -> Result<f64> {
    if !(tol > 0.0 && tol <= 1e-2) {
        bail!("--tol must lie in (0, 1e-2], got {tol}");
    }
    Ok(tol)
}

fn check_positive(name: &str, v: f64) -> Result<f64> {
    if !(v > 0.0 && v.is_finite()) {
        bail!("{name} must be positive and finite, got {v}");
    }
    Ok(v)
}

fn check_count(name: &str, v: usize, min: usize) -> Result<usize> {
    if v < min {
        bail!("{name} must be at least {min}, got {v}");
    }
    Ok(v)
}

fn resolve_scan(a: ScanArgs) -> Result<ScanRun> {
    let mu1 = read_measure(&a.mu1)?;
    let mu2 = read_measure(&a.mu2)?;
    let interval = match &a.interval {
        Some(v) => interval(v)?,
        None => {
            let (m1, m2) = (mu1.to_measure()?, mu2.to_measure()?);
            (m1.support().0 + m2.support().0 - 0.5, m1.support().1 + m2.support().1 + 0.5)
        }
    };
    if !(0.0..=1.0).contains(&a.max_unconverged) {
        bail!("--max-unconverged must lie in [0, 1], got {}", a.max_unconverged);
    }
    Ok(ScanRun {
        mu1,
        mu2,
        interval,
        eta: check_positive("--eta", a.eta)?,
        points: check_count("--points", a.points, 2)?,
        density_floor: a.density_floor,
        im_floor: a.im_floor,
        max_unconverged: a.max_unconverged,
        tol: check_tol(a.solver.tol)?,
    })
}

fn load_ensemble(flags: &EnsembleFlags, default_samples: usize) -> Result<(EnsembleRun, EnsembleFile)> {
    let text =
        std::fs::read_to_string(&flags.config).with_context(|| format!("reading {}", flags.config.display()))?;
    let mut file: EnsembleFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", flags.config.display()))?;
    if let Some(n) = flags.n {
        file.spec.n = n;
    }
    check_count("N", file.spec.n, 2)?;
    let base = flags.config.parent().unwrap_or(Path::new("."));
    let a = file.spec.a_spec.resolve(file.spec.n, base)?;
    let b = file.spec.b_spec.resolve(file.spec.n, base)?;
    let run = EnsembleRun {
        n: file.spec.n,
        a,
        b,
        field: file.spec.field,
        center: file.spec.center,
        seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        samples: check_count("samples", flags.samples.or(file.samples).unwrap_or(default_samples), 1)?,
    };
    run.config()?;
    Ok((run, file))
}

/// Bulk interval used when none is given: the middle half of the support
/// of `μ_A ⊞ μ_B`.
fn default_interval(run: &EnsembleRun) -> Result<(f64, f64)> {
    let c = run.config()?;
    let lo = c.a.iter().copied().fold(f64::INFINITY, f64::min) + c.b.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = c.a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        + c.b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let quarter = 0.25 * (hi - lo);
    Ok((lo + quarter, hi - quarter))
}

pub fn resolve(command: Command) -> Result<Resolved> {
    Ok(match command {
        Command::Convolve(a) => Resolved::Convolve(resolve_scan(a)?),
        Command::BulkScan(a) => Resolved::BulkScan(resolve_scan(a)?),
        Command::Subordinate(a) => {
            let z: Vec<(f64, f64)> = a.z.chunks(2).map(|c| (c[0], c[1])).collect();
            for &(_, im) in &z {
                check_positive("Im z", im)?;
            }
            Resolved::Subordinate(SubordinateRun {
                mu1: read_measure(&a.mu1)?,
                mu2: read_measure(&a.mu2)?,
                z,
                tol: check_tol(a.solver.tol)?,
            })
        }
        Command::Endpoints(a) => Resolved::Endpoints(EndpointRun { xi: a.xi, zeta: a.zeta, theta: a.theta }),
        Command::SampleSpectrum(a) => {
            let (ensemble, file) = load_ensemble(&a.ensemble, 1)?;
            let bins = check_count("bins", a.bins.or(file.bins).unwrap_or(60), 1)?;
            Resolved::SampleSpectrum(SpectrumRun { ensemble, bins })
        }
        Command::Verify(a) => {
            let (ensemble, file) = load_ensemble(&a.ensemble, 20)?;
            let interval = match a.interval.as_deref() {
                Some(v) => interval(v)?,
                None => file.interval.map_or_else(|| default_interval(&ensemble), Ok)?,
            };
            let gamma = a.gamma.or(file.gamma).unwrap_or(0.2);
            if !(gamma > 0.0 && gamma < 1.0) {
                bail!("gamma must lie in (0, 1), got {gamma}");
            }
            Resolved::Verify(VerifyRun {
                ensemble,
                interval,
                gamma,
                n_e: check_count("n_e", a.n_e.or(file.n_e).unwrap_or(9), 1)?,
                n_eta: check_count("n_eta", a.n_eta.or(file.n_eta).unwrap_or(12), 3)?,
                tol: check_tol(a.tol.or(file.tol).unwrap_or(1e-12))?,
            })
        }
        Command::Deloc(a) => {
            let (ensemble, file) = load_ensemble(&a.ensemble, 20)?;
            let interval = match a.interval.as_deref() {
                Some(v) => interval(v)?,
                None => file.interval.map_or_else(|| default_interval(&ensemble), Ok)?,
            };
            Resolved::Deloc(DelocRun { ensemble, interval })
        }
        Command::HaarTest(a) => Resolved::HaarTest(HaarRun {
            n: check_count("N", a.n, 2)?,
            field: a.field,
            samples: check_count("samples", a.samples, 10)?,
            seed: a.seed,
            dump: a.dump,
        }),
        Command::LevyCheck(a) => {
            for &eta in &a.eta {
                check_positive("--eta", eta)?;
            }
            Resolved::LevyCheck(LevyRun {
                mu_a: read_measure(&a.mu_a)?,
                mu_b: read_measure(&a.mu_b)?,
                mu_alpha: read_measure(&a.mu_alpha)?,
                mu_beta: read_measure(&a.mu_beta)?,
                e: a.e,
                eta: a.eta,
                tol: check_tol(a.solver.tol)?,
            })
        }
    })
}
