//! Subordination equations for the free additive convolution `μ₁ ⊞ μ₂`.
//!
//! For `z` in the upper half-plane the pair `(ω₁, ω₂)` solves
//!
//! ```text
//! F_{μ₁}(ω₂) - ω₁ - ω₂ + z = 0,
//! F_{μ₂}(ω₁) - ω₁ - ω₂ + z = 0,
//! ```
//!
//! with `Im ω_j ≥ Im z`, and `m_{μ₁⊞μ₂}(z) = m_{μ₁}(ω₂(z))`.
//!
//! The solver alternates `ω₁ ← z + h₁(ω₂)`, `ω₂ ← z + h₂(ω₁)` with
//! `h_j(w) = F_{μ_j}(w) - w` (damped when the residual grows) until the
//! residual is small, then polishes with Newton steps on the exact 2×2
//! Jacobian. Scans traverse each `E` column from large to small `η`, warm
//! starting every rung from the previous one.

use std::io::Write;

use num_complex::Complex;
use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{convolution_atoms, density_from_stieltjes, DiscreteMeasure, HalfPlanePoint};
use crate::scalar::{cplx, imag_unit, norm2, Real};

/// Determinant magnitude below which the stability matrix counts as singular.
pub const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions<T> {
    /// Target for `‖Φ‖₂`, scaled by `max(1, |z|)` since `Φ` cannot be
    /// resolved below rounding of `ω ≈ z`.
    pub tol: T,
    pub max_iter: usize,
    /// Residual below which Newton steps take over from substitution.
    pub newton_switch: T,
    /// Imaginary offset of the starting `ω₂` when `μ₁ = μ₂`.
    pub tie_break: T,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::tol(1e-12, 16.0),
            max_iter: 10_000,
            newton_switch: T::lit(1e-3),
            tie_break: T::lit(1e-8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubordinationPair<T> {
    pub omega1: Complex<T>,
    pub omega2: Complex<T>,
    pub residual_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Real> SubordinationPair<T> {
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { iterations: self.iterations, residual: self.residual_norm.to_f64_lossy() })
        }
    }

    /// `Im ω_j ≥ Im z` up to `1e-10` slack.
    pub fn in_domain(&self, z: Complex<T>) -> bool {
        let slack = T::tol(1e-10, 64.0) * (T::one() + z.norm());
        self.omega1.im >= z.im - slack && self.omega2.im >= z.im - slack
    }
}

/// Which case of the theory a pair of measures falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// One measure is a point mass: the convolution is a translate.
    PointMassShift,
    /// Both measures have exactly two atoms (special stability analysis).
    TwoPointPair,
    /// Neither is a point mass and one has at least three atoms.
    Generic,
}

pub fn regime<T: Real>(mu1: &DiscreteMeasure<T>, mu2: &DiscreteMeasure<T>) -> Regime {
    if mu1.is_point_mass() || mu2.is_point_mass() {
        Regime::PointMassShift
    } else if mu1.len() == 2 && mu2.len() == 2 {
        Regime::TwoPointPair
    } else {
        Regime::Generic
    }
}

/// `Φ_{μ₁,μ₂}(ω₁, ω₂, z)`.
pub fn phi_residual<T: Real>(
    mu1: &DiscreteMeasure<T>,
    mu2: &DiscreteMeasure<T>,
    omega1: Complex<T>,
    omega2: Complex<T>,
    z: impl Into<Complex<T>>,
) -> (Complex<T>, Complex<T>) {
    let z = z.into();
    let common = z - omega1 - omega2;
    (mu1.neg_recip(omega2) + common, mu2.neg_recip(omega1) + common)
}

struct System<'a, T> {
    mu1: &'a DiscreteMeasure<T>,
    mu2: &'a DiscreteMeasure<T>,
    z: Complex<T>,
}

impl<T: Real> System<'_, T> {
    fn residual(&self, w1: Complex<T>, w2: Complex<T>) -> T {
        let (r1, r2) = phi_residual(self.mu1, self.mu2, w1, w2, self.z);
        let n = norm2(r1, r2);
        if n.is_finite() {
            n
        } else {
            T::infinity()
        }
    }

    /// One Gauss–Seidel sweep of the substitution map, relaxed by `lambda`.
    fn substitution(&self, w1: Complex<T>, w2: Complex<T>, lambda: T) -> (Complex<T>, Complex<T>) {
        let c1 = self.z + self.mu1.neg_recip(w2) - w2;
        let n1 = w1 + (c1 - w1) * lambda;
        let c2 = self.z + self.mu2.neg_recip(n1) - n1;
        let n2 = w2 + (c2 - w2) * lambda;
        (n1, n2)
    }

    /// Newton direction `-DΦ⁻¹ Φ`, or `None` if the Jacobian is singular.
    fn newton_direction(&self, w1: Complex<T>, w2: Complex<T>) -> Option<(Complex<T>, Complex<T>)> {
        let (f1, df1) = self.mu1.neg_recip_with_derivative(w2);
        let (f2, df2) = self.mu2.neg_recip_with_derivative(w1);
        let common = self.z - w1 - w2;
        let (p1, p2) = (f1 + common, f2 + common);
        let a = df1 - T::one();
        let b = df2 - T::one();
        let det = Complex::new(T::one(), T::zero()) - a * b;
        if !(det.norm() > T::epsilon()) {
            return None;
        }
        let d1 = (p1 + a * p2) / det;
        let d2 = (b * p1 + p2) / det;
        (d1.re.is_finite() && d1.im.is_finite() && d2.re.is_finite() && d2.im.is_finite()).then_some((d1, d2))
    }

    /// Backtracking Newton step; returns the accepted point and residual.
    fn newton_step(&self, w1: Complex<T>, w2: Complex<T>, res: T) -> Option<(Complex<T>, Complex<T>, T)> {
        let (d1, d2) = self.newton_direction(w1, w2)?;
        let mut t = T::one();
        for _ in 0..40 {
            let (n1, n2) = (w1 + d1 * t, w2 + d2 * t);
            if n1.im > T::zero() && n2.im > T::zero() {
                let r = self.residual(n1, n2);
                if r < res {
                    return Some((n1, n2, r));
                }
            }
            t = t * T::lit(0.5);
        }
        None
    }
}

/// Solves `Φ = 0` at `z` from the cold start `ω₁ = ω₂ = z` (with the
/// symmetric tie-break when `μ₁ = μ₂`). If that fails to converge inside
/// the domain `Im ω ≥ Im z`, the point is reached by continuation from
/// larger `η` instead; the returned pair reports the total iteration count.
pub fn solve_subordination<T: Real>(
    mu1: &DiscreteMeasure<T>,
    mu2: &DiscreteMeasure<T>,
    z: HalfPlanePoint<T>,
    opts: &SolverOptions<T>,
) -> SubordinationPair<T> {
    let zc = z.to_complex();
    let start = cold_start(mu1, mu2, zc, opts);
    let direct = solve_subordination_from(mu1, mu2, z, opts, start);
    if direct.converged && direct.in_domain(zc) {
        return direct;
    }

    let eta = z.im();
    let top = Float::max(Float::max(T::one(), Float::abs(z.re())), eta * T::lit(2.0));
    let mut ladder = geometric_ladder(top, eta, T::lit(0.25));
    if ladder.len() < 2 {
        return direct;
    }
    ladder.pop();
    let mut spent = direct.iterations;
    let mut prev: Option<SubordinationPair<T>> = None;
    for &h in &ladder {
        let w = HalfPlanePoint::new(z.re(), h).expect("positive ladder rung");
        let pair = match prev {
            Some(p) => solve_subordination_from(mu1, mu2, w, opts, (p.omega1, p.omega2)),
            None => solve_subordination_from(mu1, mu2, w, opts, cold_start(mu1, mu2, w.to_complex(), opts)),
        };
        spent += pair.iterations;
        prev = Some(pair);
    }
    let p = prev.expect("non-empty ladder");
    let mut last = solve_subordination_from(mu1, mu2, z, opts, (p.omega1, p.omega2));
    last.iterations += spent;
    if last.converged && last.in_domain(zc) {
        last
    } else if direct.residual_norm <= last.residual_norm {
        SubordinationPair { converged: false, iterations: last.iterations, ..direct }
    } else {
        SubordinationPair { converged: false, ..last }
    }
}

fn cold_start<T: Real>(
    mu1: &DiscreteMeasure<T>,
    mu2: &DiscreteMeasure<T>,
    z: Complex<T>,
    opts: &SolverOptions<T>,
) -> (Complex<T>, Complex<T>) {
    if mu1 == mu2 {
        (z, z + imag_unit::<T>() * opts.tie_break)
    } else {
        (z, z)
    }
}

/// Solves `Φ = 0` at `z` starting from `start` (warm start). Returns the
/// best pair found; `converged` is set iff `‖Φ‖₂ ≤ tol`.
pub fn solve_subordination_from<T: Real>(
    mu1: &DiscreteMeasure<T>,
    mu2: &DiscreteMeasure<T>,
    z: HalfPlanePoint<T>,
    opts: &SolverOptions<T>,
    start: (Complex<T>, Complex<T>),
) -> SubordinationPair<T> {
    let sys = System { mu1, mu2, z: z.to_complex() };
    let (mut w1, mut w2) = start;
    if !(w1.im > T::zero() && w2.im > T::zero()) {
        w1 = sys.z;
        w2 = sys.z;
    }
    let target = opts.tol * Float::max(T::one(), sys.z.norm());
    let mut res = sys.residual(w1, w2);
    let mut best = (w1, w2, res);
    let mut lambda = T::one();
    let lambda_min = T::lit(1.0 / 64.0);
    let mut iters = 0usize;
    // substitution steps to take before Newton is tried again
    let mut newton_cooldown = 0usize;

    while iters < opts.max_iter {
        if res <= target {
            // one polishing step; kept only if it helps
            if let Some((n1, n2, r)) = sys.newton_step(w1, w2, res) {
                iters += 1;
                w1 = n1;
                w2 = n2;
                res = r;
            }
            break;
        }
        if res < opts.newton_switch && newton_cooldown == 0 {
            iters += 1;
            match sys.newton_step(w1, w2, res) {
                Some((n1, n2, r)) => {
                    w1 = n1;
                    w2 = n2;
                    res = r;
                }
                None => newton_cooldown = 25,
            }
        } else {
            iters += 1;
            newton_cooldown = newton_cooldown.saturating_sub(1);
            let (n1, n2) = sys.substitution(w1, w2, lambda);
            let r = sys.residual(n1, n2);
            if r > res {
                lambda = Float::max(lambda * T::lit(0.5), lambda_min);
            } else {
                lambda = Float::min(lambda * T::lit(2.0), T::one());
            }
            w1 = n1;
            w2 = n2;
            res = r;
        }
        if res < best.2 {
            best = (w1, w2, res);
        }
    }
    if res < best.2 {
        best = (w1, w2, res);
    }
    SubordinationPair {
        omega1: best.0,
        omega2: best.1,
        residual_norm: best.2,
        iterations: iters,
        converged: best.2 <= target,
    }
}

/// `η` values from `top` down to `bottom` with ratio `factor` per rung;
/// both ends included, strictly descending.
pub fn geometric_ladder<T: Real>(top: T, bottom: T, factor: T) -> Vec<T> {
    let mut out = Vec::new();
    let mut h = top;
    while h > bottom {
        out.push(h);
        h = h * factor;
    }
    out.push(bottom);
    out
}

/// Solves along a vertical line `E + iη` for the given descending `η`
/// values, warm-starting each rung from the previous solution.
pub fn solve_column<T: Real>(
    mu1: &DiscreteMeasure<T>,
    mu2: &DiscreteMeasure<T>,
    e: T,
    etas: &[T],
    opts: &SolverOptions<T>,
) -> Result<Vec<SubordinationPair<T>>> {
    let mut out: Vec<SubordinationPair<T>> = Vec::with_capacity(etas.len());
    for &eta in etas {
        let z = HalfPlanePoint::new(e, eta)?;
        let pair = match out.last() {
            Some(prev) if prev.converged => {
                let warm = solve_subordination_from(mu1, mu2, z, opts, (prev.omega1, prev.omega2));
                if warm.converged && warm.in_domain(z.to_complex()) {
                    warm
                } else {
                    let mut cold = solve_subordination(mu1, mu2, z, opts);
                    cold.iterations += warm.iterations;
                    cold
                }
            }
            _ => solve_subordination(mu1, mu2, z, opts),
        };
        out.push(pair);
    }
    Ok(out)
}

/// `m_{μ₁⊞μ₂}(z)` evaluated from a solved pair both as `-1/F_{μ₁}(ω₂)` and
/// as `-1/(ω₁ + ω₂ - z)`.
pub fn stieltjes_from_pair<T: Real>(
    mu1: &DiscreteMeasure<T>,
    pair: &SubordinationPair<T>,
    z: impl Into<Complex<T>>,
) -> (Complex<T>, Complex<T>) {
    let z = z.into();
    (mu1.stieltjes(pair.omega2), -(pair.omega1 + pair.omega2 - z).inv())
}

/// Stieltjes transform of `μ₁ ⊞ μ₂` at `z`.
pub fn free_convolution_stieltjes<T: Real>(
    mu1: &DiscreteMeasure<T>,
    mu2: &DiscreteMeasure<T>,
    z: HalfPlanePoint<T>,
    opts: &SolverOptions<T>,
) -> Result<Complex<T>> {
    let pair = solve_subordination(mu1, mu2, z, opts).require_converged()?;
    Ok(stieltjes_from_pair(mu1, &pair, z).0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport<T> {
    /// Operator norm of the inverse stability matrix.
    pub gamma: T,
    pub im_omega1: T,
    pub im_omega2: T,
    pub s_stable: bool,
    pub omega1: Complex<T>,
    pub omega2: Complex<T>,
    pub det: Complex<T>,
}

/// Largest singular value of a 2×2 complex matrix `[[a, b], [c, d]]`.
pub fn spectral_norm_2x2<T: Real>(a: Complex<T>, b: Complex<T>, c: Complex<T>, d: Complex<T>) -> T {
    let frob = a.norm_sqr() + b.norm_sqr() + c.norm_sqr() + d.norm_sqr();
    let det = (a * d - b * c).norm();
    let disc = Float::max(frob * frob - T::lit(4.0) * det * det, T::zero());
    Float::sqrt((frob + Float::sqrt(disc)) * T::lit(0.5))
}

/// `Γ = ‖[[-1, F₁'(ω₂) - 1], [F₂'(ω₁) - 1, -1]]⁻¹‖`.
pub fn stability_gamma<T: Real>(
    mu1: &DiscreteMeasure<T>,
    mu2: &DiscreteMeasure<T>,
    omega1: Complex<T>,
    omega2: Complex<T>,
) -> Result<StabilityReport<T>> {
    let a = mu1.neg_recip_derivative(omega2) - T::one();
    let b = mu2.neg_recip_derivative(omega1) - T::one();
    let det = Complex::new(T::one(), T::zero()) - a * b;
    if !(det.norm() > T::lit(SINGULAR_DET)) {
        return Err(Error::SingularJacobian { det: det.norm().to_f64_lossy() });
    }
    let inv = det.inv();
    let minus_one = Complex::new(-T::one(), T::zero());
    let gamma = spectral_norm_2x2(minus_one * inv, -a * inv, -b * inv, minus_one * inv);
    Ok(StabilityReport {
        gamma,
        im_omega1: omega1.im,
        im_omega2: omega2.im,
        s_stable: gamma.is_finite(),
        omega1,
        omega2,
        det,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationCheck<T> {
    /// `max_j |ω̃_j - ω_j|`.
    pub lhs: T,
    /// `2 Γ ‖Φ(ω̃)‖₂`.
    pub rhs: T,
    pub holds: bool,
    pub gamma: T,
    /// `min_j Im ω_j`.
    pub k: T,
    /// `max_j Im ω_j`.
    pub big_k: T,
}

/// Checks the local stability bound `|ω̃_j - ω_j| ≤ 2Γ ‖Φ(ω̃)‖₂` for an
/// approximate pair `ω̃`, after verifying the bound's hypotheses: `Im ω̃ > 0`,
/// closeness `δ = max|ω̃ - ω| ≤ 1`, and `k > δ`, `k² > δ K Γ` where
/// `k ≤ Im ω_j ≤ K`.
pub fn perturbation_bound_check<T: Real>(
    mu1: &DiscreteMeasure<T>,
    mu2: &DiscreteMeasure<T>,
    z: HalfPlanePoint<T>,
    tilde: (Complex<T>, Complex<T>),
    opts: &SolverOptions<T>,
) -> Result<PerturbationCheck<T>> {
    let (t1, t2) = tilde;
    if !(t1.im > T::zero() && t2.im > T::zero()) {
        return Err(Error::HypothesisFailed("perturbed pair leaves the upper half-plane".into()));
    }
    let exact = solve_subordination(mu1, mu2, z, opts).require_converged()?;
    let stability = stability_gamma(mu1, mu2, exact.omega1, exact.omega2)?;
    let delta = Float::max((t1 - exact.omega1).norm(), (t2 - exact.omega2).norm());
    let k = Float::min(exact.omega1.im, exact.omega2.im);
    let big_k = Float::max(exact.omega1.im, exact.omega2.im);
    let gamma = stability.gamma;
    if delta > T::one() {
        return Err(Error::HypothesisFailed(format!("closeness δ = {delta} exceeds 1")));
    }
    if !(k > delta && k * k > delta * big_k * gamma) {
        return Err(Error::HypothesisFailed(format!(
            "need k > δ and k² > δKS (k = {k}, K = {big_k}, δ = {delta}, S = {gamma})"
        )));
    }
    let (r1, r2) = phi_residual(mu1, mu2, t1, t2, z);
    let rhs = T::lit(2.0) * gamma * norm2(r1, r2);
    Ok(PerturbationCheck { lhs: delta, rhs, holds: delta <= rhs, gamma, k, big_k })
}

/// Endpoints `ℓ₁ ≤ ℓ₂ ≤ ℓ₃ ≤ ℓ₄` of the bulk of `μ_α ⊞ μ_β` for
/// `μ_α = ξδ₁ + (1-ξ)δ₀`, `μ_β = ζδ_θ + (1-ζ)δ₀`.
///
/// The bulk is `(ℓ₁, ℓ₂) ∪ (ℓ₃, ℓ₄)` when `μ_α ≠ μ_β` and `(ℓ₁, ℓ₄)` when
/// they coincide.
pub fn two_point_endpoints<T: Real>(xi: T, zeta: T, theta: T) -> Result<[T; 4]> {
    let half = T::lit(0.5);
    let finite = xi.is_finite() && zeta.is_finite() && theta.is_finite();
    if !finite || theta == T::zero() {
        return Err(Error::Domain("θ must be finite and non-zero".into()));
    }
    if !(xi > T::zero() && xi <= half && zeta > T::zero() && zeta <= half) {
        return Err(Error::Domain("ξ and ζ must lie in (0, 1/2]".into()));
    }
    if xi > zeta {
        return Err(Error::Domain("ξ ≤ ζ required".into()));
    }
    if theta == -T::one() && xi == half && zeta == half {
        return Err(Error::Domain("(θ, ξ, ζ) = (-1, 1/2, 1/2) is a shift of θ = 1".into()));
    }
    let one = T::one();
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let root = Float::sqrt(four * xi * zeta * (one - xi) * (one - zeta));
    let base = xi + zeta - two * xi * zeta;
    let (r_plus, r_minus) = (base + root, base - root);
    let spread = |r: T| Float::sqrt((one - theta) * (one - theta) + four * theta * r);
    let lower = |r: T| half * (one + theta - spread(r));
    let upper = |r: T| half * (one + theta + spread(r));
    let (lp, lm) = (lower(r_plus), lower(r_minus));
    let (up, um) = (upper(r_plus), upper(r_minus));
    Ok([Float::min(lp, lm), Float::max(lp, lm), Float::min(up, um), Float::max(up, um)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BulkOptions<T> {
    pub density_floor: T,
    pub im_floor: T,
    /// `η` ratio between consecutive continuation rungs.
    pub ladder_factor: T,
    /// Starting height of the continuation ladder.
    pub ladder_top: T,
    pub solver: SolverOptions<T>,
}

impl<T: Real> Default for BulkOptions<T> {
    fn default() -> Self {
        Self {
            density_floor: T::lit(1e-3),
            im_floor: T::lit(1e-3),
            ladder_factor: T::lit(0.25),
            ladder_top: T::one(),
            solver: SolverOptions::default(),
        }
    }
}

/// One evaluated point of a density curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint<T> {
    pub e: T,
    pub eta: T,
    pub m: Complex<T>,
    pub density: T,
    pub omega1: Complex<T>,
    pub omega2: Complex<T>,
    /// `None` where the stability matrix is singular or the solve failed.
    pub gamma: Option<T>,
    pub residual: T,
    pub iterations: usize,
    pub converged: bool,
    pub in_bulk: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BulkScan<T> {
    pub grid: Vec<T>,
    pub density: Vec<T>,
    pub in_bulk: Vec<bool>,
    pub intervals: Vec<(T, T)>,
    pub points: Vec<ScanPoint<T>>,
}

/// Evaluates the convolution density on `n_grid` equally spaced points of
/// `interval` at height `eta_probe` and flags the regular bulk: a point is
/// in the bulk when the density exceeds `density_floor` and both
/// `Im ω_j - η` exceed `im_floor`. Each `E` column is solved by continuation
/// from `ladder_top`; columns run in parallel.
pub fn regular_bulk_scan<T: Real>(
    mu1: &DiscreteMeasure<T>,
    mu2: &DiscreteMeasure<T>,
    interval: (T, T),
    n_grid: usize,
    eta_probe: T,
    opts: &BulkOptions<T>,
) -> Result<BulkScan<T>> {
    let (lo, hi) = interval;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!("empty interval ({lo}, {hi})")));
    }
    if n_grid < 2 {
        return Err(Error::Domain("a scan needs at least two grid points".into()));
    }
    if !(eta_probe > T::zero()) {
        return Err(Error::Domain("probe height must be positive".into()));
    }
    let step = (hi - lo) / T::from_usize_lossy(n_grid - 1);
    let grid: Vec<T> = (0..n_grid)
        .map(|k| if k + 1 == n_grid { hi } else { lo + step * T::from_usize_lossy(k) })
        .collect();
    let ladder = geometric_ladder(Float::max(opts.ladder_top, eta_probe), eta_probe, opts.ladder_factor);

    let points: Vec<ScanPoint<T>> = grid
        .par_iter()
        .map(|&e| scan_point(mu1, mu2, e, &ladder, opts))
        .collect::<Result<_>>()?;

    let density = points.iter().map(|p| p.density).collect();
    let in_bulk: Vec<bool> = points.iter().map(|p| p.in_bulk).collect();
    let intervals = flagged_runs(&grid, &in_bulk);
    Ok(BulkScan { grid, density, in_bulk, intervals, points })
}

fn scan_point<T: Real>(
    mu1: &DiscreteMeasure<T>,
    mu2: &DiscreteMeasure<T>,
    e: T,
    ladder: &[T],
    opts: &BulkOptions<T>,
) -> Result<ScanPoint<T>> {
    let column = solve_column(mu1, mu2, e, ladder, &opts.solver)?;
    let pair = *column.last().expect("non-empty ladder");
    let eta = *ladder.last().unwrap();
    let z = cplx(e, eta);
    let m = stieltjes_from_pair(mu1, &pair, z).0;
    let density = density_from_stieltjes(m);
    let gamma = if pair.converged {
        stability_gamma(mu1, mu2, pair.omega1, pair.omega2).ok().map(|s| s.gamma)
    } else {
        None
    };
    if !pair.converged {
        log::warn!("subordination not converged at E = {e}, eta = {eta} (residual {})", pair.residual_norm);
    }
    let gap = Float::min(pair.omega1.im, pair.omega2.im) - eta;
    let in_bulk = pair.converged && density > opts.density_floor && gap > opts.im_floor;
    Ok(ScanPoint {
        e,
        eta,
        m,
        density,
        omega1: pair.omega1,
        omega2: pair.omega2,
        gamma,
        residual: pair.residual_norm,
        iterations: pair.iterations,
        converged: pair.converged,
        in_bulk,
    })
}

fn flagged_runs<T: Real>(grid: &[T], flags: &[bool]) -> Vec<(T, T)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (k, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push((grid[s], grid[k - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((grid[s], grid[grid.len() - 1]));
    }
    out
}

impl<T: Real> BulkScan<T> {
    /// Trapezoid integral of the sampled density.
    pub fn integrated_density(&self) -> T {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .fold(T::zero(), |acc, (x, f)| acc + (x[1] - x[0]) * (f[0] + f[1]) * T::lit(0.5))
    }

    /// Integrated density plus the atomic mass of the convolution.
    pub fn total_mass(&self, mu1: &DiscreteMeasure<T>, mu2: &DiscreteMeasure<T>) -> T {
        convolution_atoms(mu1, mu2).iter().fold(self.integrated_density(), |acc, &(_, w)| acc + w)
    }

    /// Writes the curve as CSV with columns
    /// `E, eta, Re m, Im m, density, Re omega1, Im omega1, Re omega2, Im omega2, gamma, in_bulk`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "E", "eta", "Re m", "Im m", "density", "Re omega1", "Im omega1", "Re omega2", "Im omega2", "gamma",
            "in_bulk",
        ])?;
        for p in &self.points {
            let f = |x: T| format!("{:e}", x.to_f64_lossy());
            w.write_record([
                f(p.e),
                f(p.eta),
                f(p.m.re),
                f(p.m.im),
                f(p.density),
                f(p.omega1.re),
                f(p.omega1.im),
                f(p.omega2.re),
                f(p.omega2.im),
                p.gamma.map(f).unwrap_or_else(|| "nan".into()),
                (p.in_bulk as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    type C = Complex<f64>;

    fn half01() -> DiscreteMeasure<f64> {
        DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.5)]).unwrap()
    }

    fn pt(re: f64, im: f64) -> HalfPlanePoint<f64> {
        HalfPlanePoint::new(re, im).unwrap()
    }

    fn arcsine(x: f64) -> f64 {
        1.0 / (std::f64::consts::PI * (x * (2.0 - x)).sqrt())
    }

    #[test]
    fn residual_vanishes_for_point_masses_at_zero() {
        let d0 = DiscreteMeasure::point_mass(0.0);
        let z = C::new(0.3, 0.8);
        let (r1, r2) = phi_residual(&d0, &d0, z, z, z);
        assert!(r1.norm() < 1e-15 && r2.norm() < 1e-15);
    }

    #[test]
    fn point_mass_reduction() {
        let b = 0.7;
        let mu1 = DiscreteMeasure::point_mass(b);
        let mu2 = DiscreteMeasure::new([(-1.0, 0.2), (0.5, 0.5), (2.0, 0.3)]).unwrap();
        let z = pt(0.4, 0.3);
        let pair = solve_subordination(&mu1, &mu2, z, &SolverOptions::default());
        assert!(pair.converged);
        let zc = z.to_complex();
        assert_abs_diff_eq!((pair.omega1 - (zc - b)).norm(), 0.0, epsilon = 1e-12);
        let expect2 = b + mu2.neg_recip(zc - b);
        assert_abs_diff_eq!((pair.omega2 - expect2).norm(), 0.0, epsilon = 1e-11);
        // residual component 1 is zero iff ω₁ = z - b
        let (r1, _) = phi_residual(&mu1, &mu2, zc - b, pair.omega2, zc);
        assert_abs_diff_eq!(r1.norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_pair_is_exchange_symmetric() {
        let mu = half01();
        let z = pt(1.0, 0.01);
        let opts = SolverOptions::default();
        let pair = solve_subordination(&mu, &mu, z, &opts);
        assert!(pair.converged);
        assert_abs_diff_eq!((pair.omega1 - pair.omega2).norm(), 0.0, epsilon = 1e-9);
        // closed form of the symmetric root: ω = (z + sqrt(z² - 2z)) / 2 on the upper branch
        let zc = z.to_complex();
        let s = (zc * zc - 2.0 * zc).sqrt();
        let cand = [(zc + s) / 2.0, (zc - s) / 2.0];
        let exact = if cand[0].im > cand[1].im { cand[0] } else { cand[1] };
        assert_abs_diff_eq!((pair.omega1 - exact).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn arcsine_density_from_self_convolution() {
        let mu = half01();
        let opts = BulkOptions::default();
        let scan = regular_bulk_scan(&mu, &mu, (0.1, 1.9), 37, 1e-6, &opts).unwrap();
        for p in &scan.points {
            assert!(p.converged);
            assert!((p.density - arcsine(p.e)).abs() < 1e-4, "E = {} density {} vs {}", p.e, p.density, arcsine(p.e));
        }
    }

    #[test]
    fn shift_identity_and_delta_zero() {
        let mu2 = DiscreteMeasure::new([(-0.3, 0.25), (0.1, 0.5), (1.2, 0.25)]).unwrap();
        let opts = SolverOptions::default();
        let z = pt(0.2, 0.05);
        let m = free_convolution_stieltjes(&DiscreteMeasure::point_mass(0.0), &mu2, z, &opts).unwrap();
        assert_abs_diff_eq!((m - mu2.stieltjes(z)).norm(), 0.0, epsilon = 1e-11);
        let b = -1.5;
        let m = free_convolution_stieltjes(&DiscreteMeasure::point_mass(b), &mu2, z, &opts).unwrap();
        assert_abs_diff_eq!((m - mu2.stieltjes(z.to_complex() - b)).norm(), 0.0, epsilon = 1e-11);
    }

    #[test]
    fn arcsine_stieltjes_near_center() {
        let mu = half01();
        let opts = BulkOptions::default();
        let scan = regular_bulk_scan(&mu, &mu, (0.999, 1.001), 3, 1e-7, &opts).unwrap();
        let center = scan.points[1];
        assert_abs_diff_eq!(center.m.im, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn two_evaluations_of_m_agree() {
        let mu1 = DiscreteMeasure::new([(-1.0, 0.3), (0.0, 0.3), (1.5, 0.4)]).unwrap();
        let mu2 = DiscreteMeasure::new([(0.0, 0.6), (1.0, 0.4)]).unwrap();
        let opts = SolverOptions::default();
        for (e, eta) in [(0.0, 0.5), (0.7, 0.05), (1.8, 0.001), (-2.0, 0.2)] {
            let z = pt(e, eta);
            let pair = solve_subordination(&mu1, &mu2, z, &opts);
            assert!(pair.converged);
            let (a, b) = stieltjes_from_pair(&mu1, &pair, z);
            assert!((a - b).norm() <= 10.0 * opts.tol);
        }
    }

    #[test]
    fn gamma_of_point_masses_is_one() {
        let a = DiscreteMeasure::point_mass(0.4);
        let b = DiscreteMeasure::point_mass(-2.0);
        let s = stability_gamma(&a, &b, C::new(0.1, 0.3), C::new(-0.5, 2.0)).unwrap();
        assert_abs_diff_eq!(s.gamma, 1.0, epsilon = 1e-10);
        assert!(s.s_stable);
    }

    #[test]
    fn gamma_matches_svd_of_explicit_inverse() {
        let mu = half01();
        let pair = solve_subordination(&mu, &mu, pt(1.0, 0.5), &SolverOptions::default());
        let s = stability_gamma(&mu, &mu, pair.omega1, pair.omega2).unwrap();
        let a = mu.neg_recip_derivative(pair.omega2) - 1.0;
        let b = mu.neg_recip_derivative(pair.omega1) - 1.0;
        let m = nalgebra::Matrix2::new(C::new(-1.0, 0.0), a, b, C::new(-1.0, 0.0));
        let inv = m.try_inverse().unwrap();
        let sv = inv.svd(false, false).singular_values;
        assert_abs_diff_eq!(s.gamma, sv.max(), epsilon = 1e-10 * sv.max());
    }

    #[test]
    fn gamma_grows_towards_the_unstable_center() {
        let mu = half01();
        let opts = SolverOptions::default();
        let etas = geometric_ladder(0.5, 1e-4, 0.5);
        let column = solve_column(&mu, &mu, 1.0, &etas, &opts).unwrap();
        let gammas: Vec<f64> = column
            .iter()
            .map(|p| stability_gamma(&mu, &mu, p.omega1, p.omega2).unwrap().gamma)
            .collect();
        for w in gammas.windows(2) {
            assert!(w[1] > w[0], "{gammas:?}");
        }
        assert!(gammas.last().unwrap() > &1e3);
    }

    #[test]
    fn singular_jacobian_is_reported() {
        let mu = half01();
        // at ω = (1 + i)/2 the derivative F'(ω) vanishes, so det = 1 - 1 = 0
        let w = C::new(0.5, 0.5);
        assert!(matches!(stability_gamma(&mu, &mu, w, w), Err(Error::SingularJacobian { .. })));
    }

    #[test]
    fn perturbation_bound_examples() {
        let mu = half01();
        let opts = SolverOptions::default();
        let z = pt(0.5, 0.1);
        let exact = solve_subordination(&mu, &mu, z, &opts);
        let c = perturbation_bound_check(&mu, &mu, z, (exact.omega1, exact.omega2), &opts).unwrap();
        assert!(c.holds);
        assert_eq!(c.lhs, 0.0);
        assert!(c.rhs < 1e-13);

        let d = C::new(1e-4, 1e-4);
        let c = perturbation_bound_check(&mu, &mu, z, (exact.omega1 + d, exact.omega2 + d), &opts).unwrap();
        assert!(c.holds, "{c:?}");

        let bad = C::new(0.0, -10.0);
        assert!(matches!(
            perturbation_bound_check(&mu, &mu, z, (exact.omega1 + bad, exact.omega2), &opts),
            Err(Error::HypothesisFailed(_))
        ));
        let far = C::new(3.0, 0.0);
        assert!(matches!(
            perturbation_bound_check(&mu, &mu, z, (exact.omega1 + far, exact.omega2), &opts),
            Err(Error::HypothesisFailed(_))
        ));
    }

    #[test]
    fn endpoint_examples() {
        assert_eq!(two_point_endpoints(0.5, 0.5, 1.0).unwrap(), [0.0, 1.0, 1.0, 2.0]);
        assert_eq!(two_point_endpoints(0.5, 0.5, 3.0).unwrap(), [0.0, 1.0, 3.0, 4.0]);
        let l = two_point_endpoints(0.2, 0.35, -2.5).unwrap();
        assert!(l[0] <= l[1] && l[1] <= l[2] && l[2] <= l[3]);
    }

    #[test]
    fn endpoint_domain_errors() {
        for (xi, zeta, theta) in [(0.5, 0.5, 0.0), (0.0, 0.5, 1.0), (0.6, 0.5, 1.0), (0.4, 0.3, 1.0), (0.5, 0.5, -1.0)] {
            assert!(matches!(two_point_endpoints(xi, zeta, theta), Err(Error::Domain(_))), "{xi} {zeta} {theta}");
        }
    }

    #[test]
    fn point_mass_convolution_has_empty_bulk() {
        let mu1 = DiscreteMeasure::point_mass(0.3);
        let mu2 = DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let scan = regular_bulk_scan(&mu1, &mu2, (-1.0, 2.0), 61, 1e-5, &BulkOptions::default()).unwrap();
        assert!(scan.intervals.is_empty(), "{:?}", scan.intervals);
    }

    #[test]
    fn bulk_intervals_of_two_point_pairs() {
        let opts = BulkOptions::default();
        let mu = half01();
        let scan = regular_bulk_scan(&mu, &mu, (-0.5, 2.5), 301, 1e-5, &opts).unwrap();
        assert_eq!(scan.intervals.len(), 1, "{:?}", scan.intervals);
        let (lo, hi) = scan.intervals[0];
        let h = 0.01;
        assert!((lo - 0.0).abs() <= h && (hi - 2.0).abs() <= h, "{lo} {hi}");

        let mu2 = DiscreteMeasure::new([(0.0, 0.5), (3.0, 0.5)]).unwrap();
        let scan = regular_bulk_scan(&mu, &mu2, (-0.5, 4.5), 501, 1e-5, &opts).unwrap();
        let l = two_point_endpoints(0.5, 0.5, 3.0).unwrap();
        assert_eq!(scan.intervals.len(), 2, "{:?}", scan.intervals);
        let h = 0.011;
        assert!((scan.intervals[0].0 - l[0]).abs() <= h && (scan.intervals[0].1 - l[1]).abs() <= h);
        assert!((scan.intervals[1].0 - l[2]).abs() <= h && (scan.intervals[1].1 - l[3]).abs() <= h);
    }

    #[test]
    fn warm_start_needs_fewer_iterations() {
        let mu = half01();
        let opts = SolverOptions::default();
        let eta = 1e-3;
        let coarse = solve_subordination(&mu, &mu, pt(0.6, eta), &opts);
        let cold = solve_subordination(&mu, &mu, pt(0.6, eta / 2.0), &opts);
        let warm = solve_subordination_from(&mu, &mu, pt(0.6, eta / 2.0), &opts, (coarse.omega1, coarse.omega2));
        assert!(warm.converged && cold.converged);
        assert!(warm.iterations < cold.iterations, "warm {} cold {}", warm.iterations, cold.iterations);
    }

    #[test]
    fn regime_classification() {
        let p = DiscreteMeasure::point_mass(0.0);
        let two = half01();
        let three = DiscreteMeasure::new([(0.0, 0.2), (1.0, 0.3), (2.0, 0.5)]).unwrap();
        assert_eq!(regime(&p, &three), Regime::PointMassShift);
        assert_eq!(regime(&two, &two), Regime::TwoPointPair);
        assert_eq!(regime(&two, &three), Regime::Generic);
    }

    #[test]
    fn scan_rejects_bad_arguments() {
        let mu = half01();
        let o = BulkOptions::default();
        assert!(regular_bulk_scan(&mu, &mu, (1.0, 1.0), 10, 1e-3, &o).is_err());
        assert!(regular_bulk_scan(&mu, &mu, (0.0, 1.0), 1, 1e-3, &o).is_err());
        assert!(regular_bulk_scan(&mu, &mu, (0.0, 1.0), 10, 0.0, &o).is_err());
    }

    #[test]
    fn single_precision_solver() {
        let mu = DiscreteMeasure::<f32>::new([(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let opts = SolverOptions::<f32> { tol: 1e-5, ..Default::default() };
        let z = HalfPlanePoint::new(0.5f32, 0.05).unwrap();
        let m = free_convolution_stieltjes(&mu, &mu, z, &opts).unwrap();
        let reference = free_convolution_stieltjes(&half01(), &half01(), pt(0.5, 0.05), &SolverOptions::default())
            .unwrap();
        assert!((m.im as f64 - reference.im).abs() < 1e-4);
    }
}
