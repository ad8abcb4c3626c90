//! Atomic probability measures on the real line and their analytic
//! transforms on the upper half-plane.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cplx, Real};

/// Atoms closer than this are merged by the constructor.
pub const MERGE_TOLERANCE: f64 = 1e-12;
/// Weight sums within this distance of one are renormalized; others rejected.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;
/// Bisection tolerance of [`levy_distance`].
pub const LEVY_TOLERANCE: f64 = 1e-10;

/// A point `E + iη` with `η > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlanePoint<T> {
    re: T,
    im: T,
}

impl<T: Real> HalfPlanePoint<T> {
    pub fn new(re: T, im: T) -> Result<Self> {
        if !re.is_finite() || !im.is_finite() || im <= T::zero() {
            return Err(Error::NotInUpperHalfPlane(im.to_f64_lossy()));
        }
        Ok(Self { re, im })
    }

    pub fn re(&self) -> T {
        self.re
    }

    pub fn im(&self) -> T {
        self.im
    }

    pub fn to_complex(self) -> Complex<T> {
        cplx(self.re, self.im)
    }
}

impl<T: Real> TryFrom<Complex<T>> for HalfPlanePoint<T> {
    type Error = Error;

    fn try_from(z: Complex<T>) -> Result<Self> {
        Self::new(z.re, z.im)
    }
}

impl<T: Real> From<HalfPlanePoint<T>> for Complex<T> {
    fn from(z: HalfPlanePoint<T>) -> Self {
        z.to_complex()
    }
}

/// A finitely supported probability measure `Σ_k w_k δ_{x_k}`.
///
/// Locations are strictly increasing, weights are positive and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscreteMeasure<T> {
    locations: Vec<T>,
    weights: Vec<T>,
    #[serde(skip)]
    cumulative: Vec<T>,
}

impl<T: Real> DiscreteMeasure<T> {
    /// Builds a measure from `(location, weight)` pairs.
    ///
    /// Atoms are sorted, atoms closer than [`MERGE_TOLERANCE`] are merged and
    /// a weight sum off by at most [`WEIGHT_TOLERANCE`] is renormalized.
    pub fn new<I>(atoms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (T, T)>,
    {
        let mut atoms: Vec<(T, T)> = atoms.into_iter().collect();
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("a measure needs at least one atom".into()));
        }
        for &(x, w) in &atoms {
            if !x.is_finite() || !w.is_finite() {
                return Err(Error::InvalidMeasure(format!("non-finite atom ({x}, {w})")));
            }
            if w <= T::zero() || w > T::one() + T::lit(WEIGHT_TOLERANCE) {
                return Err(Error::InvalidMeasure(format!("weight {w} outside (0, 1]")));
            }
        }
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite locations"));

        let merge = T::tol(MERGE_TOLERANCE, 2.0);
        let mut locations: Vec<T> = Vec::with_capacity(atoms.len());
        let mut weights: Vec<T> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            match locations.last() {
                Some(&prev) if x - prev < merge => {
                    *weights.last_mut().unwrap() = *weights.last().unwrap() + w;
                }
                _ => {
                    locations.push(x);
                    weights.push(w);
                }
            }
        }

        let total = weights.iter().fold(T::zero(), |acc, &w| acc + w);
        let slack = T::tol(WEIGHT_TOLERANCE, 64.0 * weights.len() as f64);
        if Float::abs(total - T::one()) > slack {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, expected 1")));
        }
        for w in &mut weights {
            *w = *w / total;
        }
        Ok(Self::from_parts(locations, weights))
    }

    fn from_parts(locations: Vec<T>, weights: Vec<T>) -> Self {
        let cumulative = weights
            .iter()
            .scan(T::zero(), |acc, &w| {
                *acc = *acc + w;
                Some(*acc)
            })
            .collect();
        Self { locations, weights, cumulative }
    }

    pub fn point_mass(x: T) -> Self {
        Self::from_parts(vec![x], vec![T::one()])
    }

    /// The empirical measure `(1/N) Σ δ_{x_i}` of a list of values.
    pub fn empirical(values: &[T]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidMeasure("empirical measure of an empty list".into()));
        }
        let w = T::one() / T::from_usize_lossy(values.len());
        Self::new(values.iter().map(|&x| (x, w)))
    }

    pub fn locations(&self) -> &[T] {
        &self.locations
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn atoms(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.locations.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn is_point_mass(&self) -> bool {
        self.locations.len() == 1
    }

    pub fn support(&self) -> (T, T) {
        (self.locations[0], *self.locations.last().unwrap())
    }

    pub fn mean(&self) -> T {
        self.atoms().fold(T::zero(), |acc, (x, w)| acc + x * w)
    }

    pub fn shifted(&self, by: T) -> Self {
        Self::from_parts(self.locations.iter().map(|&x| x + by).collect(), self.weights.clone())
    }

    /// Largest atom weight.
    pub fn max_weight(&self) -> T {
        self.weights.iter().copied().fold(T::zero(), Float::max)
    }

    /// `μ((-∞, x])`.
    pub fn cdf(&self, x: T) -> T {
        let k = self.locations.partition_point(|&l| l <= x);
        if k == 0 { T::zero() } else { self.cumulative[k - 1] }
    }

    /// `μ((-∞, x))`.
    pub fn cdf_left(&self, x: T) -> T {
        let k = self.locations.partition_point(|&l| l < x);
        if k == 0 { T::zero() } else { self.cumulative[k - 1] }
    }

    /// Generalized inverse CDF `inf{x : F(x) ≥ p}` for `p ∈ (0, 1]`.
    pub fn quantile(&self, p: T) -> T {
        let mut acc = T::zero();
        for (x, w) in self.atoms() {
            acc = acc + w;
            if acc >= p {
                return x;
            }
        }
        *self.locations.last().unwrap()
    }

    /// The `n` quantiles at levels `(i - 1/2)/n`, `i = 1..=n`, in increasing
    /// order. Used to turn a limiting measure into matrix diagonals.
    pub fn quantile_discretization(&self, n: usize) -> Vec<T> {
        let nf = T::from_usize_lossy(n);
        let half = T::lit(0.5);
        let mut out = Vec::with_capacity(n);
        let mut k = 0usize;
        let mut acc = self.weights[0];
        for i in 1..=n {
            let p = (T::from_usize_lossy(i) - half) / nf;
            while acc < p && k + 1 < self.len() {
                k += 1;
                acc = acc + self.weights[k];
            }
            out.push(self.locations[k]);
        }
        out
    }

    /// Stieltjes transform `m(z) = Σ w_k / (x_k - z)`; `z` must lie in the
    /// upper half-plane.
    pub fn stieltjes(&self, z: impl Into<Complex<T>>) -> Complex<T> {
        let z = z.into();
        self.atoms().fold(Complex::new(T::zero(), T::zero()), |acc, (x, w)| {
            acc + (cplx(x, T::zero()) - z).inv() * w
        })
    }

    /// `m'(z) = Σ w_k / (x_k - z)^2`.
    pub fn stieltjes_derivative(&self, z: impl Into<Complex<T>>) -> Complex<T> {
        let z = z.into();
        self.atoms().fold(Complex::new(T::zero(), T::zero()), |acc, (x, w)| {
            let r = (cplx(x, T::zero()) - z).inv();
            acc + r * r * w
        })
    }

    /// Negative reciprocal Stieltjes transform `F(z) = -1/m(z)`.
    pub fn neg_recip(&self, z: impl Into<Complex<T>>) -> Complex<T> {
        -self.stieltjes(z).inv()
    }

    /// `F'(w) = m'(w) / m(w)^2`, evaluated in closed form.
    pub fn neg_recip_derivative(&self, w: impl Into<Complex<T>>) -> Complex<T> {
        let w = w.into();
        let (m, dm) = self.stieltjes_with_derivative(w);
        dm / (m * m)
    }

    /// `F(w)` and `F'(w)` from one pass over the atoms.
    pub fn neg_recip_with_derivative(&self, w: Complex<T>) -> (Complex<T>, Complex<T>) {
        let (m, dm) = self.stieltjes_with_derivative(w);
        (-m.inv(), dm / (m * m))
    }

    fn stieltjes_with_derivative(&self, z: Complex<T>) -> (Complex<T>, Complex<T>) {
        let zero = Complex::new(T::zero(), T::zero());
        self.atoms().fold((zero, zero), |(m, dm), (x, w)| {
            let r = (cplx(x, T::zero()) - z).inv();
            (m + r * w, dm + r * r * w)
        })
    }

    /// Weight of the atom at `x`, or zero.
    pub fn mass_at(&self, x: T) -> T {
        let tol = T::tol(MERGE_TOLERANCE, 2.0);
        let k = self.locations.partition_point(|&l| l < x - tol);
        match self.locations.get(k) {
            Some(&l) if Float::abs(l - x) < tol => self.weights[k],
            _ => T::zero(),
        }
    }

    /// Text form: one `location weight` pair per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (x, w) in self.atoms() {
            let _ = writeln!(out, "{:e} {:e}", x.to_f64_lossy(), w.to_f64_lossy());
        }
        out
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

impl DiscreteMeasure<f64> {
    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        parse_measure(&std::fs::read_to_string(path)?)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for DiscreteMeasure<T> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw<T> {
            locations: Vec<T>,
            weights: Vec<T>,
        }
        let raw = Raw::<T>::deserialize(deserializer)?;
        if raw.locations.len() != raw.weights.len() {
            return Err(serde::de::Error::custom("locations and weights differ in length"));
        }
        DiscreteMeasure::new(raw.locations.into_iter().zip(raw.weights)).map_err(serde::de::Error::custom)
    }
}

/// Parses the measure text format: `location weight` per line, `#` starts a
/// comment, blank lines are ignored, non-finite numbers are rejected.
pub fn parse_measure(text: &str) -> Result<DiscreteMeasure<f64>> {
    let mut atoms = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected `location weight`, got {content:?}") });
        }
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("not a number: {s:?}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("non-finite value {s:?}") });
            }
            Ok(v)
        };
        atoms.push((parse(fields[0])?, parse(fields[1])?));
    }
    DiscreteMeasure::new(atoms)
}

/// Smoothed density `Im m / π` recovered from a Stieltjes value taken just
/// above the real axis.
pub fn density_from_stieltjes<T: Real>(m_value: Complex<T>) -> T {
    m_value.im / T::PI()
}

/// Atoms of `μ₁ ⊞ μ₂`: every `a + b` with `μ₁({a}) + μ₂({b}) > 1`, carrying
/// mass `μ₁({a}) + μ₂({b}) - 1`. Sorted by location.
pub fn convolution_atoms<T: Real>(mu1: &DiscreteMeasure<T>, mu2: &DiscreteMeasure<T>) -> Vec<(T, T)> {
    // a pair can only qualify if each weight exceeds 1 - (max weight of the other)
    let floor1 = T::one() - mu2.max_weight();
    let floor2 = T::one() - mu1.max_weight();
    let mut out = Vec::new();
    for (a, wa) in mu1.atoms().filter(|&(_, w)| w > floor1) {
        for (b, wb) in mu2.atoms().filter(|&(_, w)| w > floor2) {
            let mass = wa + wb - T::one();
            if mass > T::zero() {
                out.push((a + b, mass));
            }
        }
    }
    out.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite"));
    out
}

/// `sup_x P(x) - Q(x + ε)`, including left limits, exact for atomic
/// measures. The tails contribute zero.
fn shifted_cdf_gap<T: Real>(p: &DiscreteMeasure<T>, q: &DiscreteMeasure<T>, eps: T) -> T {
    let mut best = T::zero();
    for &x in p.locations() {
        best = Float::max(best, p.cdf(x) - q.cdf(x + eps));
    }
    for &y in q.locations() {
        best = Float::max(best, p.cdf_left(y - eps) - q.cdf_left(y));
    }
    best
}

fn levy_envelope_holds<T: Real>(mu: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>, eps: T) -> bool {
    shifted_cdf_gap(nu, mu, eps) <= eps && shifted_cdf_gap(mu, nu, eps) <= eps
}

/// Lévy distance `inf{ε > 0 : F(x-ε) - ε ≤ G(x) ≤ F(x+ε) + ε ∀x}` by
/// bisection on `ε`, each step an exact comparison of the two step CDFs at
/// the jump points shifted by `±ε`.
pub fn levy_distance<T: Real>(mu: &DiscreteMeasure<T>, nu: &DiscreteMeasure<T>) -> T {
    if levy_envelope_holds(mu, nu, T::zero()) {
        return T::zero();
    }
    let tol = T::tol(LEVY_TOLERANCE, 4.0);
    let (mut lo, mut hi) = (T::zero(), T::one());
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = (lo + hi) * T::lit(0.5);
        if levy_envelope_holds(mu, nu, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_point() -> DiscreteMeasure<f64> {
        DiscreteMeasure::new([(-1.0, 0.5), (1.0, 0.5)]).unwrap()
    }

    fn i() -> Complex<f64> {
        Complex::new(0.0, 1.0)
    }

    #[test]
    fn stieltjes_examples() {
        let m = DiscreteMeasure::point_mass(0.0).stieltjes(i());
        assert_abs_diff_eq!(m.re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.im, 1.0, epsilon = 1e-15);

        let m = two_point().stieltjes(i());
        assert_abs_diff_eq!(m.re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.im, 0.5, epsilon = 1e-15);

        let z = Complex::new(0.3, 0.7);
        let m = DiscreteMeasure::point_mass(2.5).stieltjes(z);
        let expect = (Complex::new(2.5, 0.0) - z).inv();
        assert_abs_diff_eq!((m - expect).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn neg_recip_examples() {
        let z = Complex::new(-0.4, 0.2);
        let f = DiscreteMeasure::point_mass(1.5).neg_recip(z);
        assert_abs_diff_eq!((f - (z - 1.5)).norm(), 0.0, epsilon = 1e-14);

        let f = two_point().neg_recip(i());
        assert_abs_diff_eq!((f - Complex::new(0.0, 2.0)).norm(), 0.0, epsilon = 1e-14);

        let eta = 1e8;
        let ratio = two_point().neg_recip(Complex::new(0.0, eta)) / Complex::new(0.0, eta);
        assert_abs_diff_eq!((ratio - 1.0).norm(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn point_mass_derivative_is_one() {
        let d = DiscreteMeasure::point_mass(-3.0).neg_recip_derivative(Complex::new(0.2, 0.01));
        assert_abs_diff_eq!((d - 1.0).norm(), 0.0, epsilon = 1e-10);
    }

    fn fd_derivative(mu: &DiscreteMeasure<f64>, w: Complex<f64>) -> Complex<f64> {
        let h = 1e-6;
        (mu.neg_recip(w + h) - mu.neg_recip(w - h)) / (2.0 * h)
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mu = two_point();
        let w = i();
        assert!((mu.neg_recip_derivative(w) - fd_derivative(&mu, w)).norm() < 1e-8);

        let mu = DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.5)]).unwrap();
        let w = Complex::new(0.5, 1.0);
        assert!((mu.neg_recip_derivative(w) - fd_derivative(&mu, w)).norm() < 1e-8);
    }

    #[test]
    fn constructor_merges_sorts_and_renormalizes() {
        let mu = DiscreteMeasure::new([(1.0, 0.25), (0.0, 0.5), (1.0 + 1e-14, 0.25 + 5e-10)]).unwrap();
        assert_eq!(mu.locations(), &[0.0, 1.0]);
        assert_abs_diff_eq!(mu.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(mu.weights()[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(DiscreteMeasure::<f64>::new([]).is_err());
        assert!(DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.4)]).is_err());
        assert!(DiscreteMeasure::new([(f64::NAN, 1.0)]).is_err());
        assert!(DiscreteMeasure::new([(0.0, -0.5), (1.0, 1.5)]).is_err());
        assert!(DiscreteMeasure::new([(0.0, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn half_plane_point_requires_positive_imaginary_part() {
        assert!(HalfPlanePoint::new(0.0, 0.0).is_err());
        assert!(HalfPlanePoint::new(0.0, -1.0).is_err());
        assert!(HalfPlanePoint::new(f64::INFINITY, 1.0).is_err());
        assert!(HalfPlanePoint::new(0.0, 1e-300).is_ok());
    }

    #[test]
    fn cdf_and_quantiles() {
        let mu = DiscreteMeasure::new([(0.0, 0.3), (1.0, 0.7)]).unwrap();
        assert_abs_diff_eq!(mu.cdf(0.0), 0.3);
        assert_abs_diff_eq!(mu.cdf_left(0.0), 0.0);
        assert_abs_diff_eq!(mu.cdf(0.99), 0.3);
        assert_eq!(mu.quantile(0.3), 0.0);
        assert_eq!(mu.quantile(0.31), 1.0);
        let q = mu.quantile_discretization(10);
        assert_eq!(q.iter().filter(|&&x| x == 0.0).count(), 3);
        assert_eq!(q.len(), 10);
    }

    #[test]
    fn levy_examples() {
        let mu = two_point();
        assert_eq!(levy_distance(&mu, &mu), 0.0);
        for t in [0.05, 0.3, 0.77, 1.0] {
            let d = levy_distance(&DiscreteMeasure::point_mass(0.0), &DiscreteMeasure::point_mass(t));
            assert_abs_diff_eq!(d, t, epsilon = 2e-10);
        }
        // beyond unit separation the CDF slack saturates
        let d = levy_distance(&DiscreteMeasure::point_mass(0.0), &DiscreteMeasure::point_mass(3.0));
        assert_abs_diff_eq!(d, 1.0, epsilon = 2e-10);
    }

    /// Brute force: scan ε on a fine grid and test the envelope inequality on
    /// a dense x-grid (plus the jump points from both sides).
    fn levy_brute_force(mu: &DiscreteMeasure<f64>, nu: &DiscreteMeasure<f64>, step: f64) -> f64 {
        let (lo, hi) = (
            mu.support().0.min(nu.support().0) - 2.0,
            mu.support().1.max(nu.support().1) + 2.0,
        );
        let mut xs: Vec<f64> = (0..=4000).map(|k| lo + (hi - lo) * k as f64 / 4000.0).collect();
        for &x in mu.locations().iter().chain(nu.locations()) {
            xs.extend([x - 1e-9, x, x + 1e-9]);
        }
        let mut eps = 0.0;
        while eps <= 1.0 {
            let ok = xs.iter().all(|&x| {
                let g = nu.cdf(x);
                mu.cdf(x - eps) - eps <= g + 1e-12 && g <= mu.cdf(x + eps) + eps + 1e-12
            });
            if ok {
                return eps;
            }
            eps += step;
        }
        1.0
    }

    #[test]
    fn levy_matches_brute_force_grid() {
        let cases = [
            (
                DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.5)]).unwrap(),
                DiscreteMeasure::new([(0.1, 0.4), (0.9, 0.6)]).unwrap(),
            ),
            (
                DiscreteMeasure::new([(-1.0, 0.2), (0.0, 0.3), (2.0, 0.5)]).unwrap(),
                DiscreteMeasure::new([(-0.5, 0.6), (1.5, 0.4)]).unwrap(),
            ),
            (DiscreteMeasure::point_mass(0.0), DiscreteMeasure::point_mass(0.35)),
        ];
        for (mu, nu) in &cases {
            let fast = levy_distance(mu, nu);
            let brute = levy_brute_force(mu, nu, 1e-4);
            assert!((fast - brute).abs() <= 1.1e-4, "fast {fast} brute {brute}");
        }
    }

    #[test]
    fn convolution_atom_examples() {
        let a = convolution_atoms(&DiscreteMeasure::point_mass(1.0), &DiscreteMeasure::point_mass(2.0));
        assert_eq!(a, vec![(3.0, 1.0)]);

        let half = DiscreteMeasure::new([(0.0, 0.5), (1.0, 0.5)]).unwrap();
        assert!(convolution_atoms(&half, &half).is_empty());

        let mu1 = DiscreteMeasure::new([(0.0, 0.8), (1.0, 0.2)]).unwrap();
        let mu2 = DiscreteMeasure::new([(0.0, 0.7), (2.0, 0.3)]).unwrap();
        let a = convolution_atoms(&mu1, &mu2);
        // (0, 0) gives mass 0.5 at 0; (0, 2) also clears the threshold: 0.8 + 0.3 > 1
        assert_eq!(a.len(), 2);
        assert_abs_diff_eq!(a[0].0, 0.0);
        assert_abs_diff_eq!(a[0].1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1].0, 2.0);
        assert_abs_diff_eq!(a[1].1, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn density_examples() {
        assert_abs_diff_eq!(density_from_stieltjes(Complex::new(0.0, 1.0)), 1.0 / std::f64::consts::PI);
        assert_eq!(density_from_stieltjes(Complex::new(2.0, 0.0)), 0.0);
        assert_abs_diff_eq!(density_from_stieltjes(Complex::new(1.0, 0.5)), 0.5 / std::f64::consts::PI);
    }

    #[test]
    fn parse_measure_file() {
        let text = "# two point\n0 0.5\n\n1.0 0.5 # trailing comment\n";
        let mu = parse_measure(text).unwrap();
        assert_eq!(mu.locations(), &[0.0, 1.0]);

        assert!(matches!(parse_measure("0 inf\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_measure("0 0.5\nNaN 0.5\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_measure("0 0.5 7\n"), Err(Error::Parse { .. })));
        assert!(parse_measure("# empty\n").is_err());

        let round = parse_measure(&mu.to_text()).unwrap();
        assert_eq!(round, mu);
    }

    #[test]
    fn single_precision_transforms() {
        let mu = DiscreteMeasure::<f32>::new([(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let m = mu.stieltjes(Complex::new(0.0f32, 1.0));
        assert!((m.im - 0.5).abs() < 1e-6);
        assert!(levy_distance(&mu, &mu.shifted(0.25)) - 0.25 < 1e-5);
    }
}
