//! Monte Carlo checks of the local law and of eigenvector delocalization
//! for `H = A + U B U*`, and the Lévy-distance control of subordination
//! functions.
//!
//! The local-law errors at `z = E + iη` are measured against the
//! subordination functions of the empirical pair `(μ_A, μ_B)`:
//!
//! ```text
//! err_diag    = max_i |G_ii - 1/(a_i - ω_B)|
//! err_offdiag = max_{i≠j} |G_ij|            (pair subset for large N)
//! err_trace   = |m_H - m_{μ_A⊞μ_B}|
//! err_omegaB  = |ω_B^c - ω_B|
//! ```
//!
//! All three local-law estimates predict decay like `(Nη)^{-1/2}`.

use std::io::Write;

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{levy_distance, DiscreteMeasure, HalfPlanePoint};
use crate::resolvent::{build_ensemble, eigen_decompose, resolvent_snapshots, EnsembleConfig, EnsembleSample};
use crate::rng::sample_seed;
use crate::scalar::{LinalgReal, Real};
use crate::stats::{self, LinearFit};
use crate::subordination::{
    solve_column, solve_subordination, stieltjes_from_pair, BulkOptions, SolverOptions, SubordinationPair,
};

type C64 = Complex<f64>;

fn c64<T: Real>(c: Complex<T>) -> C64 {
    C64::new(c.re.to_f64_lossy(), c.im.to_f64_lossy())
}

/// Rectangular lattice of spectral parameters `E + iη` with `E` in an
/// interval and `N^{-1+γ} ≤ η ≤ 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralGrid {
    pub interval: (f64, f64),
    pub n: usize,
    pub gamma: f64,
    pub e_points: Vec<f64>,
    /// Strictly descending, from 1 to `N^{-1+γ}`.
    pub eta_points: Vec<f64>,
}

/// `n_e` equally spaced energies (the midpoint if `n_e = 1`) and `n_eta`
/// log-spaced heights from 1 down to `N^{-1+γ}`.
pub fn make_grid(interval: (f64, f64), n: usize, gamma: f64, n_e: usize, n_eta: usize) -> Result<SpectralGrid> {
    let (lo, hi) = interval;
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!("empty interval ({lo}, {hi})")));
    }
    if n_e < 1 || n_eta < 1 {
        return Err(Error::Domain("grid needs at least one E and one eta".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if n < 2 {
        return Err(Error::Dimension("grid needs N of at least 2".into()));
    }
    let e_points = if n_e == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..n_e).map(|k| if k + 1 == n_e { hi } else { lo + (hi - lo) * k as f64 / (n_e - 1) as f64 }).collect()
    };
    let eta_min = (n as f64).powf(-1.0 + gamma);
    let eta_points = if n_eta == 1 {
        vec![1.0]
    } else {
        (0..n_eta)
            .map(|k| if k + 1 == n_eta { eta_min } else { eta_min.powf(k as f64 / (n_eta - 1) as f64) })
            .collect()
    };
    Ok(SpectralGrid { interval, n, gamma, e_points, eta_points })
}

impl SpectralGrid {
    pub fn eta_min(&self) -> f64 {
        *self.eta_points.last().expect("non-empty grid")
    }

    pub fn len(&self) -> usize {
        self.e_points.len() * self.eta_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(E, η)` in E-major order, η descending within each E.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.e_points.iter().flat_map(move |&e| self.eta_points.iter().map(move |&eta| (e, eta)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Diag,
    Offdiag,
    Trace,
    #[serde(rename = "omegaB")]
    OmegaB,
}

/// One `(sample, E, η)` measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalLawRow {
    pub sample: usize,
    #[serde(rename = "E")]
    pub e: f64,
    pub eta: f64,
    #[serde(rename = "N_eta_product")]
    pub n_eta: f64,
    pub err_diag: f64,
    pub err_offdiag: f64,
    pub err_trace: f64,
    #[serde(rename = "err_omegaB")]
    pub err_omega_b: f64,
    pub solver_iters: usize,
    /// `|`-separated markers: `not_converged`, `outside_bulk`.
    pub flags: String,
    #[serde(skip)]
    pub m_h: C64,
    #[serde(skip)]
    pub m_conv: C64,
}

impl LocalLawRow {
    pub fn error(&self, kind: ErrorKind) -> f64 {
        match kind {
            ErrorKind::Diag => self.err_diag,
            ErrorKind::Offdiag => self.err_offdiag,
            ErrorKind::Trace => self.err_trace,
            ErrorKind::OmegaB => self.err_omega_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorQuantiles {
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

impl ErrorQuantiles {
    fn of(values: &[f64]) -> Self {
        Self {
            q10: stats::quantile(values, 0.1),
            median: stats::median(values),
            q90: stats::quantile(values, 0.9),
            max: stats::quantile(values, 1.0),
        }
    }
}

/// Quantiles over samples at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalLawAggregate {
    #[serde(rename = "E")]
    pub e: f64,
    pub eta: f64,
    #[serde(rename = "N_eta_product")]
    pub n_eta: f64,
    pub in_bulk: bool,
    pub samples: usize,
    pub diag: ErrorQuantiles,
    pub offdiag: ErrorQuantiles,
    pub trace: ErrorQuantiles,
    #[serde(rename = "omegaB")]
    pub omega_b: ErrorQuantiles,
}

impl LocalLawAggregate {
    pub fn quantiles(&self, kind: ErrorKind) -> &ErrorQuantiles {
        match kind {
            ErrorKind::Diag => &self.diag,
            ErrorKind::Offdiag => &self.offdiag,
            ErrorKind::Trace => &self.trace,
            ErrorKind::OmegaB => &self.omega_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalLawReport {
    pub grid: SpectralGrid,
    pub n_samples: usize,
    pub master_seed: u64,
    /// Per grid energy: whether it passed the regular-bulk test at `η_min`.
    pub bulk_e: Vec<bool>,
    pub rows: Vec<LocalLawRow>,
    pub aggregates: Vec<LocalLawAggregate>,
    pub fitted_slope_diag: Option<LinearFit>,
    pub fitted_slope_trace: Option<LinearFit>,
}

/// Per-grid-point quantiles of the raw rows, in grid order.
pub fn aggregate_rows(grid: &SpectralGrid, bulk_e: &[bool], rows: &[LocalLawRow]) -> Vec<LocalLawAggregate> {
    let n = grid.n as f64;
    let mut out = Vec::with_capacity(grid.len());
    for (ke, &e) in grid.e_points.iter().enumerate() {
        for &eta in &grid.eta_points {
            let here: Vec<&LocalLawRow> = rows.iter().filter(|r| r.e == e && r.eta == eta).collect();
            let col = |k: ErrorKind| -> Vec<f64> { here.iter().map(|r| r.error(k)).collect() };
            out.push(LocalLawAggregate {
                e,
                eta,
                n_eta: n * eta,
                in_bulk: bulk_e.get(ke).copied().unwrap_or(false),
                samples: here.len(),
                diag: ErrorQuantiles::of(&col(ErrorKind::Diag)),
                offdiag: ErrorQuantiles::of(&col(ErrorKind::Offdiag)),
                trace: ErrorQuantiles::of(&col(ErrorKind::Trace)),
                omega_b: ErrorQuantiles::of(&col(ErrorKind::OmegaB)),
            });
        }
    }
    out
}

/// Least-squares fit of `log(median error)` against `log(Nη)`, pooled over
/// bulk energies.
pub fn fit_aggregates(aggregates: &[LocalLawAggregate], kind: ErrorKind) -> Result<LinearFit> {
    let pts: Vec<(f64, f64)> = aggregates
        .iter()
        .filter(|a| a.in_bulk)
        .map(|a| (a.n_eta, a.quantiles(kind).median))
        .filter(|&(x, y)| x > 0.0 && y > 0.0 && y.is_finite())
        .collect();
    let mut etas: Vec<f64> = pts.iter().map(|p| p.0).collect();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    if etas.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} distinct heights with positive median error; need 3",
            etas.len()
        )));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    stats::least_squares(&x, &y)
}

pub fn fit_exponent(report: &LocalLawReport, kind: ErrorKind) -> Result<LinearFit> {
    fit_aggregates(&report.aggregates, kind)
}

impl LocalLawReport {
    /// Assembles a report from raw rows (aggregates and fits recomputed).
    pub fn from_rows(
        grid: SpectralGrid,
        n_samples: usize,
        master_seed: u64,
        bulk_e: Vec<bool>,
        rows: Vec<LocalLawRow>,
    ) -> Self {
        let aggregates = aggregate_rows(&grid, &bulk_e, &rows);
        let fitted_slope_diag = fit_aggregates(&aggregates, ErrorKind::Diag).ok();
        let fitted_slope_trace = fit_aggregates(&aggregates, ErrorKind::Trace).ok();
        Self { grid, n_samples, master_seed, bulk_e, rows, aggregates, fitted_slope_diag, fitted_slope_trace }
    }

    pub fn aggregate(&self, e_index: usize, eta_index: usize) -> &LocalLawAggregate {
        &self.aggregates[e_index * self.grid.eta_points.len() + eta_index]
    }

    /// Median over bulk energies of the per-point medians at `η_min`.
    pub fn median_at_eta_min(&self, kind: ErrorKind) -> f64 {
        let eta = self.grid.eta_min();
        let v: Vec<f64> =
            self.aggregates.iter().filter(|a| a.in_bulk && a.eta == eta).map(|a| a.quantiles(kind).median).collect();
        stats::median(&v)
    }

    /// Raw table as CSV: `sample, E, eta, N_eta_product, err_diag,
    /// err_offdiag, err_trace, err_omegaB, solver_iters, flags`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalLawOptions<T> {
    pub bulk: BulkOptions<T>,
}

impl<T: Real> Default for LocalLawOptions<T> {
    fn default() -> Self {
        Self { bulk: BulkOptions::default() }
    }
}

/// Deterministic reference subordination on the grid: `refs[e][eta]`.
fn reference_pairs<T: Real>(
    mu_a: &DiscreteMeasure<T>,
    mu_b: &DiscreteMeasure<T>,
    grid: &SpectralGrid,
    opts: &SolverOptions<T>,
) -> Result<Vec<Vec<SubordinationPair<T>>>> {
    let etas: Vec<T> = grid.eta_points.iter().map(|&x| T::lit(x)).collect();
    grid.e_points.par_iter().map(|&e| solve_column(mu_a, mu_b, T::lit(e), &etas, opts)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenvectorScore {
    pub sample: usize,
    pub eigenvalue: f64,
    /// `‖u‖∞`.
    pub sup_norm: f64,
    /// `N ‖u‖∞²`, between 1 and `N` for a unit vector.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelocalizationReport {
    pub n: usize,
    pub interval: (f64, f64),
    pub n_samples: usize,
    pub master_seed: u64,
    pub scores: Vec<EigenvectorScore>,
    pub max_score: f64,
    pub median_score: f64,
    pub q99_score: f64,
    /// `5 (ln N)²`.
    pub threshold: f64,
}

/// Everything a sample needs to turn snapshots into local-law rows.
struct LawContext<T: LinalgReal> {
    mu_a: DiscreteMeasure<T>,
    points: Vec<(HalfPlanePoint<T>, Option<Complex<T>>)>,
    /// Reference pair and bulk flag per grid point, in grid order.
    refs: Vec<(SubordinationPair<T>, bool)>,
    bulk_e: Vec<bool>,
}

fn law_context<T: LinalgReal>(
    config: &EnsembleConfig<T>,
    grid: &SpectralGrid,
    opts: &LocalLawOptions<T>,
) -> Result<LawContext<T>> {
    if grid.n != config.n {
        return Err(Error::Dimension(format!("grid built for N = {} but ensemble has N = {}", grid.n, config.n)));
    }
    let mu_a = config.measure_a()?;
    let mu_b = config.measure_b()?;
    let columns = reference_pairs(&mu_a, &mu_b, grid, &opts.bulk.solver)?;
    let eta_min = T::lit(grid.eta_min());
    let bulk_e: Vec<bool> = columns
        .iter()
        .map(|column| {
            let p = column.last().expect("non-empty column");
            let density = mu_a.stieltjes(p.omega2).im / T::PI();
            let gap = num_traits::Float::min(p.omega1.im, p.omega2.im) - eta_min;
            p.converged && density > opts.bulk.density_floor && gap > opts.bulk.im_floor
        })
        .collect();
    for (e, inside) in grid.e_points.iter().zip(&bulk_e) {
        if !inside {
            log::warn!("E = {e} is outside the regular bulk at eta = {}", grid.eta_min());
        }
    }
    let refs: Vec<(SubordinationPair<T>, bool)> = columns
        .iter()
        .zip(&bulk_e)
        .flat_map(|(col, &inside)| col.iter().map(move |p| (*p, inside)))
        .collect();
    let points = grid
        .points()
        .zip(&refs)
        .map(|((e, eta), (p, _))| {
            let z = HalfPlanePoint::new(T::lit(e), T::lit(eta)).expect("grid heights are positive");
            (z, p.converged.then_some(p.omega2))
        })
        .collect();
    Ok(LawContext { mu_a, points, refs, bulk_e })
}

fn law_rows<T: LinalgReal>(
    ctx: &LawContext<T>,
    grid: &SpectralGrid,
    index: usize,
    sample: &EnsembleSample<T>,
) -> Result<Vec<LocalLawRow>> {
    let n = grid.n as f64;
    let snaps = resolvent_snapshots(sample, &ctx.points)?;
    Ok(snaps
        .iter()
        .zip(&ctx.refs)
        .zip(grid.points())
        .map(|((snap, (pair, inside)), (e, eta))| {
            let mut flags = Vec::new();
            if !pair.converged {
                flags.push("not_converged");
            }
            if !inside {
                flags.push("outside_bulk");
            }
            let m_h = c64(snap.m_h);
            let (m_conv, err_diag, err_trace, err_omega_b) = if pair.converged {
                let m_conv = c64(stieltjes_from_pair(&ctx.mu_a, pair, snap.z).0);
                (
                    m_conv,
                    snap.diag_deviation.map(|d| d.to_f64_lossy()).unwrap_or(f64::NAN),
                    (m_h - m_conv).norm(),
                    (c64(snap.omega_b_c) - c64(pair.omega2)).norm(),
                )
            } else {
                (C64::new(f64::NAN, f64::NAN), f64::NAN, f64::NAN, f64::NAN)
            };
            LocalLawRow {
                sample: index,
                e,
                eta,
                n_eta: n * eta,
                err_diag,
                err_offdiag: snap.max_offdiag.to_f64_lossy(),
                err_trace,
                err_omega_b,
                solver_iters: pair.iterations,
                flags: flags.join("|"),
                m_h,
                m_conv,
            }
        })
        .collect())
}

fn eigenvector_scores<T: LinalgReal>(
    index: usize,
    sample: &EnsembleSample<T>,
    interval: (f64, f64),
) -> Result<Vec<EigenvectorScore>> {
    let (lo, hi) = interval;
    let n = sample.dim() as f64;
    let (vals, vecs) = eigen_decompose(sample)?;
    Ok(vals
        .iter()
        .enumerate()
        .filter(|(_, l)| {
            let l = l.to_f64_lossy();
            l >= lo && l <= hi
        })
        .map(|(k, l)| {
            let sup = vecs.column(k).iter().fold(0.0f64, |m, v| m.max(v.norm().to_f64_lossy()));
            EigenvectorScore { sample: index, eigenvalue: l.to_f64_lossy(), sup_norm: sup, score: n * sup * sup }
        })
        .collect())
}

fn finish_delocalization(
    n: usize,
    interval: (f64, f64),
    n_samples: usize,
    master_seed: u64,
    scores: Vec<EigenvectorScore>,
) -> Result<DelocalizationReport> {
    if scores.is_empty() {
        return Err(Error::EmptySelection { lo: interval.0, hi: interval.1 });
    }
    let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let ln_n = (n as f64).ln();
    Ok(DelocalizationReport {
        n,
        interval,
        n_samples,
        master_seed,
        max_score: stats::quantile(&values, 1.0),
        median_score: stats::median(&values),
        q99_score: stats::quantile(&values, 0.99),
        threshold: 5.0 * ln_n * ln_n,
        scores,
    })
}

fn check_interval(interval: (f64, f64)) -> Result<()> {
    let (lo, hi) = interval;
    if lo <= hi {
        Ok(())
    } else {
        Err(Error::Domain(format!("empty interval ({lo}, {hi})")))
    }
}

/// Runs `n_samples` independent realizations of the ensemble and records
/// the four local-law errors at every grid point. Sample `k` uses the seed
/// `master_seed ^ k`; rows are ordered by sample, then `E`, then `η`.
pub fn verify_local_law<T: LinalgReal>(
    config: &EnsembleConfig<T>,
    grid: &SpectralGrid,
    n_samples: usize,
    master_seed: u64,
    opts: &LocalLawOptions<T>,
) -> Result<LocalLawReport> {
    let ctx = law_context(config, grid, opts)?;
    let per_sample: Vec<Vec<LocalLawRow>> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let sample = build_ensemble(config, sample_seed(master_seed, s as u64))?;
            law_rows(&ctx, grid, s, &sample)
        })
        .collect::<Result<_>>()?;
    let rows = per_sample.into_iter().flatten().collect();
    Ok(LocalLawReport::from_rows(grid.clone(), n_samples, master_seed, ctx.bulk_e, rows))
}

/// `N ‖u‖∞²` for every eigenvector of `H` whose eigenvalue lies in
/// `interval`, over `n_samples` realizations.
pub fn delocalization_report<T: LinalgReal>(
    config: &EnsembleConfig<T>,
    interval: (f64, f64),
    n_samples: usize,
    master_seed: u64,
) -> Result<DelocalizationReport> {
    check_interval(interval)?;
    let per_sample: Vec<Vec<EigenvectorScore>> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let sample = build_ensemble(config, sample_seed(master_seed, s as u64))?;
            eigenvector_scores(s, &sample, interval)
        })
        .collect::<Result<_>>()?;
    finish_delocalization(config.n, interval, n_samples, master_seed, per_sample.into_iter().flatten().collect())
}

/// [`verify_local_law`] and [`delocalization_report`] over the same
/// samples, diagonalizing each realization once. Both reports equal those
/// of the separate calls.
pub fn local_law_and_delocalization<T: LinalgReal>(
    config: &EnsembleConfig<T>,
    grid: &SpectralGrid,
    interval: (f64, f64),
    n_samples: usize,
    master_seed: u64,
    opts: &LocalLawOptions<T>,
) -> Result<(LocalLawReport, DelocalizationReport)> {
    check_interval(interval)?;
    let ctx = law_context(config, grid, opts)?;
    let per_sample: Vec<(Vec<LocalLawRow>, Vec<EigenvectorScore>)> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let sample = build_ensemble(config, sample_seed(master_seed, s as u64))?;
            sample.spectral()?;
            Ok((law_rows(&ctx, grid, s, &sample)?, eigenvector_scores(s, &sample, interval)?))
        })
        .collect::<Result<_>>()?;
    let (rows, scores): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
    let law = LocalLawReport::from_rows(
        grid.clone(),
        n_samples,
        master_seed,
        ctx.bulk_e,
        rows.into_iter().flatten().collect(),
    );
    let deloc =
        finish_delocalization(config.n, interval, n_samples, master_seed, scores.into_iter().flatten().collect())?;
    Ok((law, deloc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevyControl {
    /// Max over the grid of `|ω_A - ω_α|`, `|ω_B - ω_β|` and `|m_{μ_A⊞μ_B} - m_{μ_α⊞μ_β}|`.
    pub lhs: f64,
    /// `lhs / (d_L(μ_A, μ_α) + d_L(μ_B, μ_β))`, or 0 when that sum vanishes.
    pub bound_ratio: f64,
    pub levy_a: f64,
    pub levy_b: f64,
}

/// Compares the subordination functions and convolution transforms of
/// `(μ_A, μ_B)` and `(μ_α, μ_β)` on `grid` against the Lévy distances of
/// the inputs.
pub fn levy_control_check<T: Real>(
    mu_a: &DiscreteMeasure<T>,
    mu_b: &DiscreteMeasure<T>,
    mu_alpha: &DiscreteMeasure<T>,
    mu_beta: &DiscreteMeasure<T>,
    grid: &[HalfPlanePoint<T>],
    opts: &SolverOptions<T>,
) -> Result<LevyControl> {
    let levy_a = levy_distance(mu_a, mu_alpha).to_f64_lossy();
    let levy_b = levy_distance(mu_b, mu_beta).to_f64_lossy();
    let worst: Vec<f64> = grid
        .par_iter()
        .map(|&z| -> Result<f64> {
            let p = solve_subordination(mu_a, mu_b, z, opts).require_converged()?;
            let q = solve_subordination(mu_alpha, mu_beta, z, opts).require_converged()?;
            let m_p = stieltjes_from_pair(mu_a, &p, z).0;
            let m_q = stieltjes_from_pair(mu_alpha, &q, z).0;
            Ok((p.omega1 - q.omega1).norm().to_f64_lossy())
                .map(|d| d.max((p.omega2 - q.omega2).norm().to_f64_lossy()))
                .map(|d| d.max((m_p - m_q).norm().to_f64_lossy()))
        })
        .collect::<Result<_>>()?;
    let lhs = worst.into_iter().fold(0.0, f64::max);
    let sum = levy_a + levy_b;
    let bound_ratio = if sum == 0.0 {
        if lhs > 1e-10 {
            return Err(Error::Domain(format!("identical inputs but subordination differs by {lhs:e}")));
        }
        0.0
    } else {
        lhs / sum
    };
    Ok(LevyControl { lhs, bound_ratio, levy_a, levy_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::Field;

    #[test]
    fn grid_examples() {
        let g = make_grid((0.0, 1.0), 1000, 0.2, 9, 1).unwrap();
        assert_eq!(g.eta_points, vec![1.0]);
        let g = make_grid((0.0, 1.0), 1000, 0.2, 9, 12).unwrap();
        assert!((g.eta_min() - 3.98e-3).abs() < 1e-5);
        assert_eq!(g.eta_points[0], 1.0);
        assert!(g.eta_points.windows(2).all(|w| w[0] > w[1]));
        for (e, eta) in g.points() {
            assert!((0.0..=1.0).contains(&e) && eta <= 1.0 && eta >= 1000f64.powf(-0.8));
        }
        assert_eq!(g.len(), 108);
        assert!(matches!(make_grid((1.0, 0.0), 10, 0.2, 3, 3), Err(Error::Domain(_))));
        assert_eq!(make_grid((0.0, 1.0), 10, 0.5, 1, 2).unwrap().e_points, vec![0.5]);
    }

    fn synthetic(noise: impl Fn(usize) -> f64) -> LocalLawReport {
        let grid = make_grid((0.0, 1.0), 1000, 0.2, 3, 8).unwrap();
        let mut rows = Vec::new();
        let mut k = 0;
        for s in 0..5 {
            for (e, eta) in grid.points() {
                let x = 1000.0 * eta;
                let err = x.powf(-0.5) * (1.0 + noise(k));
                k += 1;
                rows.push(LocalLawRow {
                    sample: s,
                    e,
                    eta,
                    n_eta: x,
                    err_diag: err,
                    err_offdiag: err,
                    err_trace: err,
                    err_omega_b: err,
                    solver_iters: 0,
                    flags: String::new(),
                    m_h: C64::new(0.0, 0.0),
                    m_conv: C64::new(0.0, 0.0),
                });
            }
        }
        LocalLawReport::from_rows(grid, 5, 0, vec![true; 3], rows)
    }

    #[test]
    fn exact_power_law_fit() {
        let r = synthetic(|_| 0.0);
        let f = fit_exponent(&r, ErrorKind::Diag).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_power_law_fit() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise: Vec<f64> = (0..1000).map(|_| rng.random_range(-0.05..0.05)).collect();
        let r = synthetic(|k| noise[k]);
        let f = fit_exponent(&r, ErrorKind::Trace).unwrap();
        assert!((-0.55..=-0.45).contains(&f.slope), "{f:?}");
    }

    #[test]
    fn fit_needs_three_heights() {
        let grid = make_grid((0.0, 1.0), 100, 0.5, 2, 2).unwrap();
        let r = LocalLawReport::from_rows(grid, 0, 0, vec![true; 2], Vec::new());
        assert!(matches!(fit_exponent(&r, ErrorKind::Diag), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn zero_b_has_no_diagonal_error() {
        let a: Vec<f64> = (0..40).map(|i| (i as f64 / 40.0) - 0.5).collect();
        let config = EnsembleConfig::new(a, vec![0.0; 40], Field::Unitary, false).unwrap();
        let grid = make_grid((-0.2, 0.2), 40, 0.5, 3, 4).unwrap();
        let r = verify_local_law(&config, &grid, 2, 1, &LocalLawOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 2 * 12);
        for row in &r.rows {
            assert!(row.err_diag < 1e-12, "{row:?}");
            assert_eq!(row.err_offdiag, 0.0);
        }
    }

    #[test]
    fn small_ensemble_report_invariants() {
        let mu = DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let config = EnsembleConfig::from_measures(&mu, &mu, 60, Field::Unitary, true).unwrap();
        let grid = make_grid((0.3, 0.6), 60, 0.3, 2, 5).unwrap();
        let r = verify_local_law(&config, &grid, 4, 7, &LocalLawOptions::default()).unwrap();
        let again = verify_local_law(&config, &grid, 4, 7, &LocalLawOptions::default()).unwrap();
        assert_eq!(r.rows, again.rows);
        let first_two = verify_local_law(&config, &grid, 2, 7, &LocalLawOptions::default()).unwrap();
        assert_eq!(&r.rows[..first_two.rows.len()], &first_two.rows[..]);
        assert_eq!(r.aggregates, aggregate_rows(&r.grid, &r.bulk_e, &r.rows));
        for row in &r.rows {
            assert!(row.err_diag >= 0.0 && row.err_offdiag >= 0.0 && row.err_trace >= 0.0 && row.err_omega_b >= 0.0);
            assert!(row.err_trace <= row.err_diag + 1e-12);
            assert!(row.flags.is_empty(), "{}", row.flags);
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "sample,E,eta,N_eta_product,err_diag,err_offdiag,err_trace,err_omegaB,solver_iters,flags\n"
        ));
        assert_eq!(text.lines().count(), 1 + r.rows.len());
    }

    #[test]
    fn delocalization_of_diagonal_model_is_localized() {
        let a: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        let config = EnsembleConfig::new(a, vec![0.0; 30], Field::Orthogonal, false).unwrap();
        let r = delocalization_report(&config, (0.0, 1.0), 2, 3).unwrap();
        assert_eq!(r.scores.len(), 60);
        assert!(r.scores.iter().all(|s| (s.score - 30.0).abs() < 1e-9));
        assert!(matches!(
            delocalization_report(&config, (5.0, 6.0), 1, 3),
            Err(Error::EmptySelection { .. })
        ));
    }

    #[test]
    fn delocalization_scores_are_bounded() {
        let mu = DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let config = EnsembleConfig::from_measures(&mu, &mu, 80, Field::Unitary, true).unwrap();
        let r = delocalization_report(&config, (-0.8, 0.8), 2, 3).unwrap();
        assert!(r.scores.iter().all(|s| s.score >= 1.0 - 1e-12 && s.score <= 80.0 + 1e-9));
        assert!(r.max_score < r.threshold);
    }

    #[test]
    fn combined_run_matches_separate_runs() {
        let mu = DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let config = EnsembleConfig::from_measures(&mu, &mu, 40, Field::Unitary, true).unwrap();
        let grid = make_grid((0.2, 0.6), 40, 0.3, 2, 3).unwrap();
        let opts = LocalLawOptions::default();
        let (law, deloc) = local_law_and_delocalization(&config, &grid, (-0.5, 0.5), 3, 9, &opts).unwrap();
        assert_eq!(law, verify_local_law(&config, &grid, 3, 9, &opts).unwrap());
        assert_eq!(deloc, delocalization_report(&config, (-0.5, 0.5), 3, 9).unwrap());
    }

    #[test]
    fn levy_control_identical_inputs() {
        let mu = DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let nu = DiscreteMeasure::new([(0.0, 0.2), (0.5, 0.3), (1.0, 0.5)]).unwrap();
        let grid: Vec<_> = [0.3, 0.7, 1.2].iter().map(|&e| HalfPlanePoint::new(e, 0.05).unwrap()).collect();
        let c = levy_control_check(&mu, &nu, &mu, &nu, &grid, &SolverOptions::default()).unwrap();
        assert!(c.lhs <= 1e-10);
        assert_eq!(c.bound_ratio, 0.0);
    }
}
