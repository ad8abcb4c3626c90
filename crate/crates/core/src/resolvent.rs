//! The ensemble `H = A + U B U*` with diagonal `A`, `B` and Haar `U`, its
//! resolvent `G(z) = (H - z)⁻¹`, and the approximate subordination
//! functions
//!
//! ```text
//! ω_A^c = z - tr(A G) / m_H,    ω_B^c = z - tr(B̃ G) / m_H,    B̃ = U B U*,
//! ```
//!
//! where `tr` is the normalized trace and `m_H = tr G`.
//!
//! A snapshot is computed either from a direct inverse of `H - z` or, when a
//! sample is probed at many points, from a cached eigendecomposition.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::haar::{sample_haar, Field, HaarMatrix};
use crate::measure::{DiscreteMeasure, HalfPlanePoint};
use crate::rng::{stream_rng, Stream};
use crate::scalar::{real, LinalgReal};

/// Largest `N` for which the off-diagonal maximum scans every pair.
pub const FULL_SCAN_LIMIT: usize = 512;
/// Pairs sampled per row index above [`FULL_SCAN_LIMIT`].
pub const PAIRS_PER_ROW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleConfig<T> {
    pub n: usize,
    /// Diagonal of `A` (after centering, if requested).
    pub a: Vec<T>,
    /// Diagonal of `B` (after centering, if requested).
    pub b: Vec<T>,
    pub field: Field,
    pub center: bool,
    /// Means subtracted from the input `a` and `b` (zero without centering).
    pub shift_a: T,
    pub shift_b: T,
}

impl<T: LinalgReal> EnsembleConfig<T> {
    pub fn new(a: Vec<T>, b: Vec<T>, field: Field, center: bool) -> Result<Self> {
        let n = a.len();
        if n < 2 {
            return Err(Error::Dimension("ensemble size must be at least 2".into()));
        }
        if b.len() != n {
            return Err(Error::Dimension(format!("a has {n} entries but b has {}", b.len())));
        }
        if a.iter().chain(&b).any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite diagonal entry".into()));
        }
        let mean = |v: &[T]| v.iter().fold(T::zero(), |s, &x| s + x) / T::from_usize_lossy(v.len());
        let (shift_a, shift_b) = if center { (mean(&a), mean(&b)) } else { (T::zero(), T::zero()) };
        let a = a.into_iter().map(|x| x - shift_a).collect();
        let b = b.into_iter().map(|x| x - shift_b).collect();
        Ok(Self { n, a, b, field, center, shift_a, shift_b })
    }

    /// Diagonals set to the `(i - 1/2)/N` quantiles of the given measures.
    pub fn from_measures(
        mu_a: &DiscreteMeasure<T>,
        mu_b: &DiscreteMeasure<T>,
        n: usize,
        field: Field,
        center: bool,
    ) -> Result<Self> {
        Self::new(mu_a.quantile_discretization(n), mu_b.quantile_discretization(n), field, center)
    }

    /// Empirical spectral measure `μ_A` of `A`.
    pub fn measure_a(&self) -> Result<DiscreteMeasure<T>> {
        DiscreteMeasure::empirical(&self.a)
    }

    /// Empirical spectral measure `μ_B` of `B`.
    pub fn measure_b(&self) -> Result<DiscreteMeasure<T>> {
        DiscreteMeasure::empirical(&self.b)
    }
}

/// Eigendecomposition of `H` with the per-sample products the spectral
/// snapshot path needs.
#[derive(Debug, Clone)]
pub struct SpectralCache<T: LinalgReal> {
    /// Ascending.
    pub eigenvalues: Vec<T>,
    /// Unit eigenvectors as columns, in eigenvalue order.
    pub eigenvectors: DMatrix<Complex<T>>,
    /// `|V_ik|²`.
    weights: DMatrix<T>,
    /// `(B̃V)_ik conj(V_ik)`, computed on first use.
    b_weights: OnceLock<DMatrix<Complex<T>>>,
    /// `Vᵀ`, so that rows of `V` are contiguous.
    rows: DMatrix<Complex<T>>,
}

impl<T: LinalgReal> SpectralCache<T> {
    fn b_weights(&self, b_tilde: &DMatrix<Complex<T>>) -> &DMatrix<Complex<T>> {
        self.b_weights.get_or_init(|| {
            let bv = b_tilde * &self.eigenvectors;
            bv.zip_map(&self.eigenvectors, |x, v| x * v.conj())
        })
    }
}

/// One realization of the model.
#[derive(Debug)]
pub struct EnsembleSample<T: LinalgReal> {
    pub config: EnsembleConfig<T>,
    pub seed: u64,
    pub u: HaarMatrix<T>,
    /// `U B U*`.
    pub b_tilde: DMatrix<Complex<T>>,
    /// `A + U B U*`.
    pub h: DMatrix<Complex<T>>,
    /// Index pairs for the off-diagonal maximum; `None` means all pairs.
    pub offdiag_pairs: Option<Vec<(usize, usize)>>,
    spectral: OnceLock<SpectralCache<T>>,
}

fn symmetrize<T: LinalgReal>(m: &mut DMatrix<Complex<T>>) {
    let half = T::lit(0.5);
    let n = m.nrows();
    for r in 0..n {
        m[(r, r)].im = T::zero();
        for c in r + 1..n {
            let v = (m[(r, c)] + m[(c, r)].conj()) * half;
            m[(r, c)] = v;
            m[(c, r)] = v.conj();
        }
    }
}

/// Builds `H = A + U B U*` with `U` sampled from `seed`, symmetrized to
/// remove rounding asymmetry.
pub fn build_ensemble<T: LinalgReal>(config: &EnsembleConfig<T>, seed: u64) -> Result<EnsembleSample<T>> {
    let n = config.n;
    if config.a.len() != n || config.b.len() != n {
        return Err(Error::Dimension(format!(
            "diagonals of length {} and {} for N = {n}",
            config.a.len(),
            config.b.len()
        )));
    }
    let u = sample_haar::<T>(n, config.field, seed)?;
    let mut ub = u.entries.clone();
    for (j, mut col) in ub.column_iter_mut().enumerate() {
        col *= real(config.b[j]);
    }
    let mut b_tilde = ub * u.entries.adjoint();
    symmetrize(&mut b_tilde);
    let mut h = b_tilde.clone();
    for i in 0..n {
        h[(i, i)] += real(config.a[i]);
    }
    let offdiag_pairs = (n > FULL_SCAN_LIMIT).then(|| {
        let mut rng = stream_rng(seed, Stream::OffDiagonalPairs);
        (0..PAIRS_PER_ROW * n)
            .map(|_| {
                let i = rng.random_range(0..n);
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect()
    });
    Ok(EnsembleSample {
        config: config.clone(),
        seed,
        u,
        b_tilde,
        h,
        offdiag_pairs,
        spectral: OnceLock::new(),
    })
}

/// `H - z` and its inverse.
fn direct_resolvent<T: LinalgReal>(h: &DMatrix<Complex<T>>, z: Complex<T>) -> Result<DMatrix<Complex<T>>> {
    let mut m = h.clone();
    for i in 0..m.nrows() {
        m[(i, i)] -= z;
    }
    m.lu().try_inverse().ok_or(Error::SolveFailure)
}

impl<T: LinalgReal> EnsembleSample<T> {
    pub fn dim(&self) -> usize {
        self.config.n
    }

    /// Eigendecomposition of `H`, computed on first use.
    pub fn spectral(&self) -> Result<&SpectralCache<T>> {
        if let Some(c) = self.spectral.get() {
            return Ok(c);
        }
        let cache = self.compute_spectral()?;
        let _ = self.spectral.set(cache);
        Ok(self.spectral.get().expect("cache just set"))
    }

    pub fn has_spectral_cache(&self) -> bool {
        self.spectral.get().is_some()
    }

    fn compute_spectral(&self) -> Result<SpectralCache<T>> {
        let n = self.dim();
        let eig = self.h.clone().try_symmetric_eigen(T::epsilon(), 0).ok_or(Error::ConvergenceFailure)?;
        if eig.eigenvalues.iter().any(|x| !x.is_finite()) {
            return Err(Error::ConvergenceFailure);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).expect("finite eigenvalues"));
        let eigenvalues: Vec<T> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let eigenvectors = DMatrix::from_fn(n, n, |i, k| eig.eigenvectors[(i, order[k])]);
        let weights = eigenvectors.map(|v| v.norm_sqr());
        let rows = eigenvectors.transpose();
        Ok(SpectralCache { eigenvalues, eigenvectors, weights, b_weights: OnceLock::new(), rows })
    }

    /// `𝓗 = U* A U + B`, unitarily equivalent to `H`.
    pub fn conjugate_model(&self) -> DMatrix<Complex<T>> {
        let u = &self.u.entries;
        let mut au = u.clone();
        for (i, mut row) in au.row_iter_mut().enumerate() {
            row *= real(self.config.a[i]);
        }
        let mut m = u.adjoint() * au;
        for i in 0..self.dim() {
            m[(i, i)] += real(self.config.b[i]);
        }
        symmetrize(&mut m);
        m
    }

    /// `‖(H - z) G(z) - I‖_max` with `G` from a direct inverse.
    pub fn resolvent_identity_residual(&self, z: HalfPlanePoint<T>) -> Result<T> {
        let zc = z.to_complex();
        let g = direct_resolvent(&self.h, zc)?;
        let mut hz = self.h.clone();
        for i in 0..self.dim() {
            hz[(i, i)] -= zc;
        }
        Ok(crate::haar::identity_defect(&(hz * g)))
    }

    /// The full resolvent matrix at `z` (direct inverse).
    pub fn resolvent(&self, z: Complex<T>) -> Result<DMatrix<Complex<T>>> {
        direct_resolvent(&self.h, z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventSnapshot<T> {
    pub z: Complex<T>,
    pub g_diag: Vec<Complex<T>>,
    /// `max |G_ij|` over `i ≠ j` (all pairs, or the sample's pair subset).
    pub max_offdiag: T,
    pub m_h: Complex<T>,
    pub omega_a_c: Complex<T>,
    pub omega_b_c: Complex<T>,
    /// `|1/m_H - (z - ω_A^c - ω_B^c)|`.
    pub sum_rule_residual: T,
    /// `max_i |(a_i - z) G_ii + (B̃G)_ii - 1|`.
    pub green_identity_residual: T,
    /// `max_i |G_ii - 1/(a_i - ω)|` for the supplied reference `ω`.
    pub diag_deviation: Option<T>,
}

fn assemble<T: LinalgReal>(
    sample: &EnsembleSample<T>,
    z: Complex<T>,
    g_diag: Vec<Complex<T>>,
    bg_diag: &[Complex<T>],
    max_offdiag: T,
    omega_ref: Option<Complex<T>>,
) -> ResolventSnapshot<T> {
    let a = &sample.config.a;
    let nf = T::from_usize_lossy(sample.dim());
    let one = Complex::new(T::one(), T::zero());
    let sum = |it: &mut dyn Iterator<Item = Complex<T>>| it.fold(Complex::new(T::zero(), T::zero()), |s, x| s + x);
    let m_h = sum(&mut g_diag.iter().copied()) / nf;
    let tr_ag = sum(&mut g_diag.iter().zip(a).map(|(g, &ai)| *g * ai)) / nf;
    let tr_bg = sum(&mut bg_diag.iter().copied()) / nf;
    let omega_a_c = z - tr_ag / m_h;
    let omega_b_c = z - tr_bg / m_h;
    let sum_rule_residual = (one / m_h - (z - omega_a_c - omega_b_c)).norm();
    let green_identity_residual = g_diag
        .iter()
        .zip(bg_diag)
        .zip(a)
        .fold(T::zero(), |acc, ((g, bg), &ai)| Float::max(acc, ((real(ai) - z) * *g + *bg - one).norm()));
    let diag_deviation = omega_ref.map(|w| {
        g_diag
            .iter()
            .zip(a)
            .fold(T::zero(), |acc, (g, &ai)| Float::max(acc, (*g - (real(ai) - w).inv()).norm()))
    });
    ResolventSnapshot {
        z,
        g_diag,
        max_offdiag,
        m_h,
        omega_a_c,
        omega_b_c,
        sum_rule_residual,
        green_identity_residual,
        diag_deviation,
    }
}

fn snapshot_direct<T: LinalgReal>(
    sample: &EnsembleSample<T>,
    z: Complex<T>,
    omega_ref: Option<Complex<T>>,
) -> Result<ResolventSnapshot<T>> {
    let n = sample.dim();
    let g = direct_resolvent(&sample.h, z)?;
    let g_diag: Vec<Complex<T>> = (0..n).map(|i| g[(i, i)]).collect();
    let bg_diag: Vec<Complex<T>> = (0..n).map(|i| sample.b_tilde.row(i).transpose().dot(&g.column(i))).collect();
    let max_offdiag = match &sample.offdiag_pairs {
        Some(pairs) => pairs.iter().fold(T::zero(), |acc, &(i, j)| Float::max(acc, g[(i, j)].norm())),
        None => {
            let mut worst = T::zero();
            for j in 0..n {
                for i in 0..n {
                    if i != j {
                        worst = Float::max(worst, g[(i, j)].norm());
                    }
                }
            }
            worst
        }
    };
    Ok(assemble(sample, z, g_diag, &bg_diag, max_offdiag, omega_ref))
}

fn snapshot_spectral<T: LinalgReal>(
    sample: &EnsembleSample<T>,
    cache: &SpectralCache<T>,
    z: Complex<T>,
    omega_ref: Option<Complex<T>>,
) -> ResolventSnapshot<T> {
    let n = sample.dim();
    let r: DVector<Complex<T>> = DVector::from_iterator(n, cache.eigenvalues.iter().map(|&l| (real(l) - z).inv()));
    let mut g_diag = vec![Complex::new(T::zero(), T::zero()); n];
    for (k, col) in cache.weights.column_iter().enumerate() {
        let rk = r[k];
        for (g, &w) in g_diag.iter_mut().zip(col.iter()) {
            *g += rk * w;
        }
    }
    let bg = cache.b_weights(&sample.b_tilde) * &r;
    // X = V diag(r); G_ij = Σ_k X_ik conj(V_jk), with rows stored as columns of Vᵀ
    let mut x = cache.rows.clone();
    for mut col in x.column_iter_mut() {
        col.component_mul_assign(&r);
    }
    let entry = |i: usize, j: usize| -> Complex<T> {
        let xi = x.column(i);
        let vj = cache.rows.column(j);
        xi.iter().zip(vj.iter()).fold(Complex::new(T::zero(), T::zero()), |s, (a, b)| s + *a * b.conj())
    };
    let max_offdiag = match &sample.offdiag_pairs {
        Some(pairs) => pairs.iter().fold(T::zero(), |acc, &(i, j)| Float::max(acc, entry(i, j).norm())),
        None => {
            let g = x.transpose() * cache.eigenvectors.adjoint();
            let mut worst = T::zero();
            for j in 0..n {
                for i in 0..n {
                    if i != j {
                        worst = Float::max(worst, g[(i, j)].norm());
                    }
                }
            }
            worst
        }
    };
    assemble(sample, z, g_diag, bg.as_slice(), max_offdiag, omega_ref)
}

/// Resolvent diagnostics at `z`. Uses the eigendecomposition if the sample
/// already has one, a direct inverse otherwise.
pub fn resolvent_snapshot<T: LinalgReal>(
    sample: &EnsembleSample<T>,
    z: HalfPlanePoint<T>,
    omega_ref: Option<Complex<T>>,
) -> Result<ResolventSnapshot<T>> {
    match sample.spectral.get() {
        Some(cache) => Ok(snapshot_spectral(sample, cache, z.to_complex(), omega_ref)),
        None => snapshot_direct(sample, z.to_complex(), omega_ref),
    }
}

/// Snapshots at many points. Diagonalizes once when the number of points
/// reaches `N/10`; otherwise inverts `H - z` per point.
pub fn resolvent_snapshots<T: LinalgReal>(
    sample: &EnsembleSample<T>,
    points: &[(HalfPlanePoint<T>, Option<Complex<T>>)],
) -> Result<Vec<ResolventSnapshot<T>>> {
    if points.len() * 10 >= sample.dim() {
        sample.spectral()?;
    }
    points.iter().map(|&(z, w)| resolvent_snapshot(sample, z, w)).collect()
}

/// Eigenvalues (ascending) and unit eigenvectors (columns) of `H`.
pub fn eigen_decompose<T: LinalgReal>(sample: &EnsembleSample<T>) -> Result<(Vec<T>, DMatrix<Complex<T>>)> {
    let c = sample.spectral()?;
    Ok((c.eigenvalues.clone(), c.eigenvectors.clone()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankOneCheck<T> {
    /// `|tr Q (H + R - z)⁻¹ - tr Q (H - z)⁻¹|`.
    pub lhs: T,
    /// `rank(R) ‖Q‖ / (N η)`.
    pub rhs: T,
    pub holds: bool,
    pub rank: usize,
}

/// Numerical rank and spectral norm from singular values.
fn rank_and_norm<T: LinalgReal>(m: &DMatrix<Complex<T>>) -> (usize, T) {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().fold(T::zero(), |a, &s| Float::max(a, s));
    if top == T::zero() {
        return (0, T::zero());
    }
    let cut = top * T::tol(1e-10, 64.0) * T::from_usize_lossy(m.nrows());
    (sv.iter().filter(|&&s| s > cut).count(), top)
}

/// Checks `|tr Q(H+R-z)⁻¹ - tr Q(H-z)⁻¹| ≤ rank(R)‖Q‖/(Nη)` for a Hermitian
/// finite-rank `R`.
pub fn rank_one_check<T: LinalgReal>(
    sample: &EnsembleSample<T>,
    q: &DMatrix<Complex<T>>,
    r: &DMatrix<Complex<T>>,
    z: HalfPlanePoint<T>,
) -> Result<RankOneCheck<T>> {
    let n = sample.dim();
    if q.shape() != (n, n) || r.shape() != (n, n) {
        return Err(Error::Dimension(format!("Q and R must be {n}x{n}")));
    }
    let zc = z.to_complex();
    let g0 = direct_resolvent(&sample.h, zc)?;
    let g1 = direct_resolvent(&(&sample.h + r), zc)?;
    let diff = g1 - g0;
    // tr(QD) = Σ_ij Q_ij D_ji
    let mut acc = Complex::new(T::zero(), T::zero());
    for i in 0..n {
        for j in 0..n {
            acc += q[(i, j)] * diff[(j, i)];
        }
    }
    let nf = T::from_usize_lossy(n);
    let lhs = (acc / nf).norm();
    let (rank, _) = rank_and_norm(r);
    let (_, q_norm) = rank_and_norm(q);
    let rhs = T::from_usize_lossy(rank) * q_norm / (nf * z.im());
    Ok(RankOneCheck { lhs, rhs, holds: lhs <= rhs * (T::one() + T::lit(1e-8)), rank })
}

/// Atoms of a measure given inline in an ensemble spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlineMeasure {
    pub locations: Vec<f64>,
    pub weights: Vec<f64>,
}

impl InlineMeasure {
    pub fn to_measure(&self) -> Result<DiscreteMeasure<f64>> {
        if self.locations.len() != self.weights.len() {
            return Err(Error::InvalidMeasure("locations and weights differ in length".into()));
        }
        DiscreteMeasure::new(self.locations.iter().copied().zip(self.weights.iter().copied()))
    }
}

/// How one diagonal of an ensemble spec is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiagonalSpec {
    List(Vec<f64>),
    TwoPoint { two_point: InlineMeasure },
    QuantileOf { quantile_of: PathBuf },
}

impl DiagonalSpec {
    /// The `N` diagonal entries; relative paths resolve against `base`.
    pub fn resolve(&self, n: usize, base: &Path) -> Result<Vec<f64>> {
        match self {
            DiagonalSpec::List(v) => {
                if v.len() != n {
                    return Err(Error::Dimension(format!("explicit diagonal has {} entries, expected {n}", v.len())));
                }
                Ok(v.clone())
            }
            DiagonalSpec::TwoPoint { two_point } => {
                if two_point.locations.len() != 2 {
                    return Err(Error::InvalidMeasure("two_point needs exactly two locations".into()));
                }
                Ok(two_point.to_measure()?.quantile_discretization(n))
            }
            DiagonalSpec::QuantileOf { quantile_of } => {
                let path = if quantile_of.is_absolute() { quantile_of.clone() } else { base.join(quantile_of) };
                Ok(DiscreteMeasure::<f64>::read_file(path)?.quantile_discretization(n))
            }
        }
    }
}

fn default_field() -> Field {
    Field::Unitary
}

/// JSON description of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    #[serde(rename = "N", alias = "n")]
    pub n: usize,
    pub a_spec: DiagonalSpec,
    pub b_spec: DiagonalSpec,
    #[serde(default = "default_field")]
    pub field: Field,
    #[serde(default)]
    pub center: bool,
    #[serde(default)]
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn to_config(&self, base: &Path) -> Result<EnsembleConfig<f64>> {
        EnsembleConfig::new(self.a_spec.resolve(self.n, base)?, self.b_spec.resolve(self.n, base)?, self.field, self.center)
    }
}
