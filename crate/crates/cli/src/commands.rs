use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use freeconv::haar::{partial_decompose, sample_haar, Field, HaarMatrix};
use freeconv::locallaw::{delocalization_report, make_grid, verify_local_law, ErrorKind, LocalLawOptions};
use freeconv::measure::{convolution_atoms, HalfPlanePoint};
use freeconv::resolvent::{build_ensemble, eigen_decompose};
use freeconv::rng::sample_seed;
use freeconv::stats::{self, LinearFit};
use freeconv::subordination::{
    regular_bulk_scan, solve_subordination, stability_gamma, stieltjes_from_pair, two_point_endpoints, BulkOptions,
    BulkScan, SolverOptions,
};
use freeconv::{locallaw, Measure};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::*;
use crate::output::OutputDir;
use crate::plot::{histogram_outline, line_chart, Scale, Series};

/// Raised after the artifacts are written when too much of a run failed
/// numerically; maps to exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct NumericalFailure(pub String);

const SLOPE_BAND: (f64, f64) = (-0.65, -0.35);
const MIN_R2: f64 = 0.9;
const OFFDIAG_RATIO: f64 = 3.0;

fn solver(tol: f64) -> SolverOptions<f64> {
    SolverOptions { tol, ..SolverOptions::default() }
}

fn measure(m: &freeconv::resolvent::InlineMeasure) -> Result<Measure> {
    Ok(m.to_measure()?)
}

pub fn execute(run: &Resolved, out: &mut OutputDir) -> Result<()> {
    match run {
        Resolved::Convolve(r) => convolve(r, out),
        Resolved::BulkScan(r) => bulk_scan(r, out),
        Resolved::Subordinate(r) => subordinate(r, out),
        Resolved::Endpoints(r) => endpoints(r, out),
        Resolved::SampleSpectrum(r) => sample_spectrum(r, out),
        Resolved::Verify(r) => verify(r, out),
        Resolved::Deloc(r) => deloc(r, out),
        Resolved::HaarTest(r) => haar_test(r, out),
        Resolved::LevyCheck(r) => levy_check(r, out),
    }
}

fn scan(r: &ScanRun) -> Result<(Measure, Measure, BulkScan<f64>)> {
    let (mu1, mu2) = (measure(&r.mu1)?, measure(&r.mu2)?);
    let opts = BulkOptions {
        density_floor: r.density_floor,
        im_floor: r.im_floor,
        solver: solver(r.tol),
        ..BulkOptions::default()
    };
    let scan = regular_bulk_scan(&mu1, &mu2, r.interval, r.points, r.eta, &opts)?;
    Ok((mu1, mu2, scan))
}

fn unconverged_check(scan: &BulkScan<f64>, tolerated: f64) -> Result<()> {
    let bad = scan.points.iter().filter(|p| !p.converged).count();
    let fraction = bad as f64 / scan.points.len() as f64;
    if fraction > tolerated {
        return Err(NumericalFailure(format!(
            "{bad} of {} grid points did not converge (tolerated fraction {tolerated})",
            scan.points.len()
        ))
        .into());
    }
    Ok(())
}

#[derive(Serialize)]
struct ScanSummary {
    integrated_density: f64,
    atoms: Vec<(f64, f64)>,
    total_mass: f64,
    bulk_intervals: Vec<(f64, f64)>,
    unconverged: usize,
}

fn scan_summary(mu1: &Measure, mu2: &Measure, scan: &BulkScan<f64>) -> ScanSummary {
    ScanSummary {
        integrated_density: scan.integrated_density(),
        atoms: convolution_atoms(mu1, mu2),
        total_mass: scan.total_mass(mu1, mu2),
        bulk_intervals: scan.intervals.clone(),
        unconverged: scan.points.iter().filter(|p| !p.converged).count(),
    }
}

fn convolve(r: &ScanRun, out: &mut OutputDir) -> Result<()> {
    let (mu1, mu2, scan) = scan(r)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["E", "density", "Re m", "Im m"])?;
    for p in &scan.points {
        w.write_record([p.e, p.density, p.m.re, p.m.im].map(|v| v.to_string()))?;
    }
    out.write("density.csv", &w.into_inner()?)?;
    let summary = scan_summary(&mu1, &mu2, &scan);
    out.write_json("summary.json", &summary)?;
    let curve: Vec<(f64, f64)> = scan.points.iter().map(|p| (p.e, p.density)).collect();
    let svg = line_chart("density of the free convolution", "E", "density", Scale::Linear, &[Series::new("density", curve)]);
    out.write("density.svg", svg.as_bytes())?;
    println!("mass {:.6} (continuous {:.6}), bulk {:?}", summary.total_mass, summary.integrated_density, summary.bulk_intervals);
    unconverged_check(&scan, r.max_unconverged)
}

fn bulk_scan(r: &ScanRun, out: &mut OutputDir) -> Result<()> {
    let (mu1, mu2, scan) = scan(r)?;
    let mut buf = Vec::new();
    scan.write_csv(&mut buf)?;
    out.write("bulk_scan.csv", &buf)?;
    out.write_json("summary.json", &scan_summary(&mu1, &mu2, &scan))?;
    for (lo, hi) in &scan.intervals {
        println!("bulk {lo} {hi}");
    }
    unconverged_check(&scan, r.max_unconverged)
}

fn subordinate(r: &SubordinateRun, out: &mut OutputDir) -> Result<()> {
    let (mu1, mu2) = (measure(&r.mu1)?, measure(&r.mu2)?);
    let opts = solver(r.tol);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "E", "eta", "Re omega1", "Im omega1", "Re omega2", "Im omega2", "Re m", "Im m", "gamma", "residual", "iterations",
        "converged",
    ])?;
    let mut failed = 0;
    for &(e, eta) in &r.z {
        let z = HalfPlanePoint::new(e, eta)?;
        let p = solve_subordination(&mu1, &mu2, z, &opts);
        let m = stieltjes_from_pair(&mu1, &p, z).0;
        let gamma = stability_gamma(&mu1, &mu2, p.omega1, p.omega2).map(|s| s.gamma).unwrap_or(f64::NAN);
        failed += usize::from(!p.converged);
        println!(
            "z = {e}+{eta}i: omega1 = {}, omega2 = {}, m = {m}, gamma = {gamma:.4}, residual = {:.1e}",
            p.omega1, p.omega2, p.residual_norm
        );
        let row = [e, eta, p.omega1.re, p.omega1.im, p.omega2.re, p.omega2.im, m.re, m.im, gamma, p.residual_norm];
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(p.iterations.to_string());
        rec.push(p.converged.to_string());
        w.write_record(&rec)?;
    }
    out.write("subordination.csv", &w.into_inner()?)?;
    if failed > 0 {
        bail!(NumericalFailure(format!("{failed} of {} points did not converge", r.z.len())));
    }
    Ok(())
}

fn endpoints(r: &EndpointRun, out: &mut OutputDir) -> Result<()> {
    let ends = two_point_endpoints(r.xi, r.zeta, r.theta)?;
    println!("{} {} {} {}", ends[0], ends[1], ends[2], ends[3]);
    out.write_json("endpoints.json", &ends)
}

fn sample_spectrum(r: &SpectrumRun, out: &mut OutputDir) -> Result<()> {
    let config = r.ensemble.config()?;
    let spectra: Vec<Vec<f64>> = (0..r.ensemble.samples)
        .into_par_iter()
        .map(|s| -> Result<Vec<f64>> {
            let sample = build_ensemble(&config, sample_seed(r.ensemble.seed, s as u64))?;
            Ok(eigen_decompose(&sample)?.0)
        })
        .collect::<Result<_>>()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample", "index", "eigenvalue"])?;
    for (s, vals) in spectra.iter().enumerate() {
        for (k, v) in vals.iter().enumerate() {
            w.write_record([s.to_string(), k.to_string(), v.to_string()])?;
        }
    }
    out.write("eigenvalues.csv", &w.into_inner()?)?;

    let all: Vec<f64> = spectra.concat();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-3);
    let range = (lo - pad, hi + pad);
    let (mu_a, mu_b) = (config.measure_a()?, config.measure_b()?);
    let density = regular_bulk_scan(&mu_a, &mu_b, range, 400, 1e-3, &BulkOptions::default())?;
    let curve: Vec<(f64, f64)> = density.points.iter().map(|p| (p.e, p.density)).collect();
    let svg = line_chart(
        "eigenvalues against the free convolution density",
        "E",
        "density",
        Scale::Linear,
        &[Series::new("eigenvalues", histogram_outline(&all, range, r.bins)), Series::new("convolution", curve)],
    );
    out.write("spectrum.svg", svg.as_bytes())?;
    println!("{} eigenvalues in [{lo:.4}, {hi:.4}]", all.len());
    Ok(())
}

#[derive(Serialize)]
struct Thresholds {
    slope_band: (f64, f64),
    min_r2: f64,
    offdiag_over_diag: f64,
}

#[derive(Serialize)]
struct VerifyPass {
    slope_diag: bool,
    slope_trace: bool,
    offdiag: bool,
}

#[derive(Serialize)]
struct VerifySummary {
    #[serde(rename = "N")]
    n: usize,
    n_samples: usize,
    master_seed: u64,
    interval: (f64, f64),
    gamma: f64,
    eta_min: f64,
    bulk_e: Vec<bool>,
    fitted_slope_diag: Option<LinearFit>,
    fitted_slope_trace: Option<LinearFit>,
    fitted_slope_offdiag: Option<LinearFit>,
    fitted_slope_omega_b: Option<LinearFit>,
    median_diag_at_eta_min: f64,
    median_offdiag_at_eta_min: f64,
    unconverged_rows: usize,
    thresholds: Thresholds,
    pass: VerifyPass,
}

fn slope_ok(f: &Option<LinearFit>) -> bool {
    f.is_some_and(|f| f.slope >= SLOPE_BAND.0 && f.slope <= SLOPE_BAND.1 && f.r2 >= MIN_R2)
}

fn verify(r: &VerifyRun, out: &mut OutputDir) -> Result<()> {
    let config = r.ensemble.config()?;
    let grid = make_grid(r.interval, r.ensemble.n, r.gamma, r.n_e, r.n_eta)?;
    let mut opts = LocalLawOptions::default();
    opts.bulk.solver = solver(r.tol);
    let start = Instant::now();
    let report = verify_local_law(&config, &grid, r.ensemble.samples, r.ensemble.seed, &opts)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    out.write("local_law.csv", &buf)?;

    let diag = report.median_at_eta_min(ErrorKind::Diag);
    let offdiag = report.median_at_eta_min(ErrorKind::Offdiag);
    let unconverged = report.rows.iter().filter(|row| row.flags.contains("not_converged")).count();
    let summary = VerifySummary {
        n: r.ensemble.n,
        n_samples: r.ensemble.samples,
        master_seed: r.ensemble.seed,
        interval: r.interval,
        gamma: r.gamma,
        eta_min: grid.eta_min(),
        bulk_e: report.bulk_e.clone(),
        fitted_slope_diag: report.fitted_slope_diag,
        fitted_slope_trace: report.fitted_slope_trace,
        fitted_slope_offdiag: locallaw::fit_exponent(&report, ErrorKind::Offdiag).ok(),
        fitted_slope_omega_b: locallaw::fit_exponent(&report, ErrorKind::OmegaB).ok(),
        median_diag_at_eta_min: diag,
        median_offdiag_at_eta_min: offdiag,
        unconverged_rows: unconverged,
        thresholds: Thresholds { slope_band: SLOPE_BAND, min_r2: MIN_R2, offdiag_over_diag: OFFDIAG_RATIO },
        pass: VerifyPass {
            slope_diag: slope_ok(&report.fitted_slope_diag),
            slope_trace: slope_ok(&report.fitted_slope_trace),
            offdiag: offdiag < OFFDIAG_RATIO * diag,
        },
    };
    out.write_json("summary.json", &summary)?;

    let series: Vec<Series> = [ErrorKind::Diag, ErrorKind::Offdiag, ErrorKind::Trace, ErrorKind::OmegaB]
        .into_iter()
        .map(|kind| {
            let pts = (0..grid.eta_points.len())
                .map(|k| {
                    let meds: Vec<f64> = (0..grid.e_points.len())
                        .filter(|&e| report.bulk_e[e])
                        .map(|e| report.aggregate(e, k).quantiles(kind).median)
                        .collect();
                    (grid.n as f64 * grid.eta_points[k], stats::median(&meds))
                })
                .collect();
            Series::new(format!("{kind:?}"), pts)
        })
        .collect();
    let svg = line_chart("median local-law errors", "N eta", "error", Scale::Log, &series);
    out.write("local_law.svg", svg.as_bytes())?;

    let show = |f: &Option<LinearFit>| f.map_or("none".to_string(), |f| format!("{:.3} (r2 {:.3})", f.slope, f.r2));
    println!(
        "slope diag {}, slope trace {}, offdiag/diag at eta_min {:.3}; {:.1} s",
        show(&summary.fitted_slope_diag),
        show(&summary.fitted_slope_trace),
        offdiag / diag,
        start.elapsed().as_secs_f64()
    );
    if unconverged * 100 > report.rows.len() {
        bail!(NumericalFailure(format!("{unconverged} of {} rows have no converged reference", report.rows.len())));
    }
    Ok(())
}

#[derive(Serialize)]
struct DelocSummary {
    #[serde(rename = "N")]
    n: usize,
    n_samples: usize,
    master_seed: u64,
    interval: (f64, f64),
    eigenvectors: usize,
    max_score: f64,
    median_score: f64,
    q99_score: f64,
    threshold: f64,
    pass: bool,
}

fn deloc(r: &DelocRun, out: &mut OutputDir) -> Result<()> {
    let config = r.ensemble.config()?;
    let report = delocalization_report(&config, r.interval, r.ensemble.samples, r.ensemble.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &report.scores {
        w.serialize(s)?;
    }
    out.write("deloc.csv", &w.into_inner()?)?;
    let summary = DelocSummary {
        n: report.n,
        n_samples: report.n_samples,
        master_seed: report.master_seed,
        interval: report.interval,
        eigenvectors: report.scores.len(),
        max_score: report.max_score,
        median_score: report.median_score,
        q99_score: report.q99_score,
        threshold: report.threshold,
        pass: report.max_score <= report.threshold,
    };
    out.write_json("summary.json", &summary)?;
    println!(
        "max N|u|^2 {:.3} over {} eigenvectors, threshold {:.3}",
        summary.max_score, summary.eigenvectors, summary.threshold
    );
    Ok(())
}

#[derive(Serialize)]
struct HaarSummary {
    #[serde(rename = "N")]
    n: usize,
    field: Field,
    samples: usize,
    seed: u64,
    max_unitarity_defect: f64,
    scaled_first_entry_mean: f64,
    scaled_first_entry_variance: f64,
    ks_statistic: f64,
    ks_critical_1pct: f64,
    max_round_trip_error: f64,
    pass: bool,
}

fn haar_test(r: &HaarRun, out: &mut OutputDir) -> Result<()> {
    let draw = |k: u64| -> Result<HaarMatrix<f64>> { Ok(sample_haar(r.n, r.field, sample_seed(r.seed, k))?) };
    let count = r.samples as u64;
    let first: Vec<HaarMatrix<f64>> = (0..count).into_par_iter().map(draw).collect::<Result<_>>()?;
    let rotation = draw(2 * count)?;
    let rotated: Vec<f64> = (count..2 * count)
        .into_par_iter()
        .map(|k| Ok((rotation.entries.row(0) * draw(k)?.entries.column(0))[(0, 0)].norm_sqr()))
        .collect::<Result<_>>()?;
    let plain: Vec<f64> = first.iter().map(|u| u.entries[(0, 0)].norm_sqr()).collect();
    let unitarity = first.iter().map(|u| u.unitarity_defect()).fold(0.0, f64::max);
    let mut round_trip: f64 = 0.0;
    for (k, u) in first.iter().enumerate() {
        let d = partial_decompose(&u.entries, r.field, k % r.n)?;
        round_trip = round_trip.max(freeconv::haar::max_entry_difference(&d.reconstruct(), &u.entries));
    }
    let scaled: Vec<f64> = plain.iter().map(|x| x * r.n as f64).collect();
    let ks = stats::ks_statistic(&plain, &rotated);
    let crit = stats::ks_critical(plain.len(), rotated.len(), 0.01);
    let summary = HaarSummary {
        n: r.n,
        field: r.field,
        samples: r.samples,
        seed: r.seed,
        max_unitarity_defect: unitarity,
        scaled_first_entry_mean: stats::mean(&scaled),
        scaled_first_entry_variance: stats::variance(&scaled),
        ks_statistic: ks,
        ks_critical_1pct: crit,
        max_round_trip_error: round_trip,
        pass: unitarity <= 1e-10 && ks < crit && round_trip <= 1e-12,
    };
    out.write_json("haar.json", &summary)?;
    if r.dump {
        let mut buf = Vec::new();
        first[0].write_binary(&mut buf)?;
        out.write("haar.bin", &buf)?;
    }
    println!(
        "unitarity {:.1e}, KS {:.4} (critical {:.4}), round trip {:.1e}",
        unitarity, ks, crit, round_trip
    );
    Ok(())
}

fn levy_check(r: &LevyRun, out: &mut OutputDir) -> Result<()> {
    let grid: Vec<HalfPlanePoint<f64>> = r
        .e
        .iter()
        .flat_map(|&e| r.eta.iter().map(move |&eta| HalfPlanePoint::new(e, eta)))
        .collect::<Result<_, _>>()?;
    let c = locallaw::levy_control_check(
        &measure(&r.mu_a)?,
        &measure(&r.mu_b)?,
        &measure(&r.mu_alpha)?,
        &measure(&r.mu_beta)?,
        &grid,
        &solver(r.tol),
    )
    .map_err(|e| anyhow!(e))?;
    out.write_json("levy.json", &c)?;
    println!("lhs {:.4e}, d_L {:.4e} + {:.4e}, ratio {:.4}", c.lhs, c.levy_a, c.levy_b, c.bound_ratio);
    Ok(())
}
