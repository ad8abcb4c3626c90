//! Haar-distributed unitary and orthogonal matrices and the partial
//! randomness decomposition `U = -e^{iθ} R U⟨i⟩`.
//!
//! Sampling uses the QR factorization of a Ginibre matrix with the columns
//! of `Q` rotated by the phases (signs, in the real case) of `diag(R)`;
//! without that normalization the law of `Q` depends on the QR convention.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scalar::{real, LinalgReal};

/// `|(v_i)_i|` at or below which the phase `θ_i` is treated as undefined.
pub const DEGENERATE_MODULUS: f64 = 1e-14;

const MAGIC: &[u8; 4] = b"HAAR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Unitary,
    Orthogonal,
}

impl Field {
    pub fn tag(self) -> u8 {
        match self {
            Field::Unitary => 0,
            Field::Orthogonal => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Field::Unitary),
            1 => Ok(Field::Orthogonal),
            t => Err(Error::Format(format!("unknown field tag {t}"))),
        }
    }
}

impl std::str::FromStr for Field {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unitary" => Ok(Field::Unitary),
            "orthogonal" => Ok(Field::Orthogonal),
            other => Err(Error::Format(format!("field must be unitary or orthogonal, got {other:?}"))),
        }
    }
}

/// A sampled Haar matrix. Orthogonal samples are stored as complex matrices
/// with vanishing imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct HaarMatrix<T: LinalgReal> {
    pub entries: DMatrix<Complex<T>>,
    pub field: Field,
    pub seed: u64,
}

fn normal<T: LinalgReal, R: Rng>(rng: &mut R) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

fn unit_phase<T: LinalgReal>(c: Complex<T>) -> Complex<T> {
    let r = c.norm();
    if r > T::zero() {
        c / r
    } else {
        Complex::new(T::one(), T::zero())
    }
}

/// Samples `U` of size `n` from the Haar measure on `U(n)` or `O(n)`.
/// Bit-identical for identical `(n, field, seed)`.
pub fn sample_haar<T: LinalgReal>(n: usize, field: Field, seed: u64) -> Result<HaarMatrix<T>> {
    if n < 1 {
        return Err(Error::Dimension("Haar matrix size must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, Stream::Haar);
    let entries = match field {
        Field::Unitary => {
            let scale = T::lit(std::f64::consts::FRAC_1_SQRT_2);
            let g = DMatrix::<Complex<T>>::from_fn(n, n, |_, _| {
                let re: T = normal(&mut rng);
                let im: T = normal(&mut rng);
                Complex::new(re * scale, im * scale)
            });
            let qr = g.qr();
            let r = qr.r();
            let mut q = qr.q();
            for (j, mut col) in q.column_iter_mut().enumerate() {
                col *= unit_phase(r[(j, j)]);
            }
            q
        }
        Field::Orthogonal => {
            let g = DMatrix::<T>::from_fn(n, n, |_, _| normal(&mut rng));
            let qr = g.qr();
            let r = qr.r();
            let mut q = qr.q();
            for (j, mut col) in q.column_iter_mut().enumerate() {
                if r[(j, j)] < T::zero() {
                    col.neg_mut();
                }
            }
            q.map(real)
        }
    };
    Ok(HaarMatrix { entries, field, seed })
}

impl<T: LinalgReal> HaarMatrix<T> {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// `‖U*U - I‖_max`.
    pub fn unitarity_defect(&self) -> T {
        let g = self.entries.adjoint() * &self.entries;
        max_abs_minus_identity(&g)
    }

    /// Partial randomness decomposition around column `i` (0-based).
    pub fn partial_decompose(&self, i: usize) -> Result<PartialDecomposition<T>> {
        partial_decompose(&self.entries, self.field, i)
    }

    /// Writes the binary dump: magic `HAAR`, `N` (u64), field tag (u8),
    /// seed (u64), then row-major entries as `f64`, real and imaginary parts
    /// interleaved for unitary matrices and real parts only for orthogonal
    /// ones. All integers and floats little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dim();
        w.write_all(MAGIC)?;
        w.write_all(&(n as u64).to_le_bytes())?;
        w.write_all(&[self.field.tag()])?;
        w.write_all(&self.seed.to_le_bytes())?;
        for r in 0..n {
            for c in 0..n {
                let v = self.entries[(r, c)];
                w.write_all(&v.re.to_f64_lossy().to_le_bytes())?;
                if self.field == Field::Unitary {
                    w.write_all(&v.im.to_f64_lossy().to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a HAAR dump".into()));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let n = usize::try_from(u64::from_le_bytes(u64buf))
            .map_err(|_| Error::Format("matrix size overflows usize".into()))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let field = Field::from_tag(tag[0])?;
        r.read_exact(&mut u64buf)?;
        let seed = u64::from_le_bytes(u64buf);
        let mut next = || -> Result<T> {
            r.read_exact(&mut u64buf)?;
            Ok(T::lit(f64::from_le_bytes(u64buf)))
        };
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            let re = next()?;
            let im = if field == Field::Unitary { next()? } else { T::zero() };
            data.push(Complex::new(re, im));
        }
        Ok(Self { entries: DMatrix::from_row_slice(n, n, &data), field, seed })
    }
}

fn max_abs_minus_identity<T: LinalgReal>(m: &DMatrix<Complex<T>>) -> T {
    let mut worst = T::zero();
    for ((r, c), v) in m.iter().enumerate().map(|(k, v)| ((k % m.nrows(), k / m.nrows()), v)) {
        let target = if r == c { T::one() } else { T::zero() };
        worst = Float::max(worst, (*v - Complex::new(target, T::zero())).norm());
    }
    worst
}

/// Factors of `U = -e^{iθ} R U⟨i⟩` with `R = I - r r*` a Householder
/// reflection sending `e^{-iθ} U e_i` to `-e_i`, so that `U⟨i⟩ e_i = e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDecomposition<T: LinalgReal> {
    pub index: usize,
    /// Argument of `(v_i)_i` in `[0, 2π)`; `0` or `π` in the real case.
    pub theta: T,
    pub field: Field,
    /// The `i`-th column of `U`.
    pub v: DVector<Complex<T>>,
    /// `√2 (e_i + e^{-iθ} v) / ‖e_i + e^{-iθ} v‖`, so `‖r‖² = 2`.
    pub r: DVector<Complex<T>>,
    pub minor_factor: DMatrix<Complex<T>>,
}

pub fn partial_decompose<T: LinalgReal>(
    u: &DMatrix<Complex<T>>,
    field: Field,
    i: usize,
) -> Result<PartialDecomposition<T>> {
    let n = u.nrows();
    if i >= n {
        return Err(Error::Dimension(format!("column index {i} out of range for N = {n}")));
    }
    let v: DVector<Complex<T>> = u.column(i).into_owned();
    let vii = v[i];
    let modulus = vii.norm();
    if !(modulus > T::lit(DEGENERATE_MODULUS)) {
        return Err(Error::DegenerateColumn { index: i, modulus: modulus.to_f64_lossy() });
    }
    let two_pi = T::lit(2.0) * T::PI();
    let theta = match field {
        Field::Unitary => {
            let t = Float::atan2(vii.im, vii.re);
            if t < T::zero() { t + two_pi } else { t }
        }
        Field::Orthogonal => {
            if vii.re > T::zero() { T::zero() } else { T::PI() }
        }
    };
    let phase = phase_of(theta, field);
    let mut w = v.map(|x| x * phase.conj());
    w[i] += Complex::new(T::one(), T::zero());
    let scale = Float::sqrt(T::lit(2.0)) / w.norm();
    let r = w * Complex::new(scale, T::zero());
    let ru = reflect(&r, u);
    let minor_factor = ru * (-phase.conj());
    Ok(PartialDecomposition { index: i, theta, field, v, r, minor_factor })
}

fn phase_of<T: LinalgReal>(theta: T, field: Field) -> Complex<T> {
    match field {
        Field::Unitary => Complex::new(Float::cos(theta), Float::sin(theta)),
        Field::Orthogonal => Complex::new(if theta == T::zero() { T::one() } else { -T::one() }, T::zero()),
    }
}

/// `(I - r r*) M` in `O(N²)`.
fn reflect<T: LinalgReal>(r: &DVector<Complex<T>>, m: &DMatrix<Complex<T>>) -> DMatrix<Complex<T>> {
    let rm = r.adjoint() * m;
    m - r * rm
}

impl<T: LinalgReal> PartialDecomposition<T> {
    /// `e^{iθ}`, equal to the sign `±1` in the real case.
    pub fn phase(&self) -> Complex<T> {
        phase_of(self.theta, self.field)
    }

    /// The reflection `R = I - r r*` as a dense matrix.
    pub fn householder(&self) -> DMatrix<Complex<T>> {
        let n = self.r.len();
        DMatrix::identity(n, n) - &self.r * self.r.adjoint()
    }

    /// `-e^{iθ} R U⟨i⟩`.
    pub fn reconstruct(&self) -> DMatrix<Complex<T>> {
        reflect(&self.r, &self.minor_factor) * (-self.phase())
    }
}

/// Vector of i.i.d. centered Gaussians with `E|g_k|² = variance`: complex
/// entries (real and imaginary parts each of variance `variance/2`) for the
/// unitary field, real entries otherwise.
pub fn gaussian_vector<T: LinalgReal>(n: usize, field: Field, variance: T, seed: u64) -> Result<DVector<Complex<T>>> {
    if !(variance > T::zero()) {
        return Err(Error::Domain("variance must be positive".into()));
    }
    let mut rng = stream_rng(seed, Stream::Gaussian);
    Ok(match field {
        Field::Unitary => {
            let s = Float::sqrt(variance * T::lit(0.5));
            DVector::from_fn(n, |_, _| {
                let re: T = normal(&mut rng);
                let im: T = normal(&mut rng);
                Complex::new(re * s, im * s)
            })
        }
        Field::Orthogonal => {
            let s = Float::sqrt(variance);
            DVector::from_fn(n, |_, _| real(normal::<T, _>(&mut rng) * s))
        }
    })
}

/// `‖M - I‖_max`.
pub fn identity_defect<T: LinalgReal>(m: &DMatrix<Complex<T>>) -> T {
    max_abs_minus_identity(m)
}

/// `max |a_jk - b_jk|`.
pub fn max_entry_difference<T: LinalgReal>(a: &DMatrix<Complex<T>>, b: &DMatrix<Complex<T>>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (x, y)| Float::max(acc, (*x - *y).norm()))
}
