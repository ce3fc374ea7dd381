//! Small dense complex linear-algebra helpers and block containers.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<Complex64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn zeros(r: usize, cols: usize) -> CMat {
    CMat::zeros(r, cols)
}

pub fn eye(d: usize) -> CMat {
    CMat::identity(d, d)
}

pub fn scalar_eye(d: usize, z: C64) -> CMat {
    CMat::from_diagonal_element(d, d, z)
}

/// Generalized binomial coefficient C(n, k) for any integer `n`, using the
/// falling-factorial extension n(n-1)...(n-k+1)/k!. Zero for k < 0.
pub fn binom(n: i64, k: i64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    if n >= 0 && k > n {
        return 0.0;
    }
    let mut out = 1.0f64;
    for i in 0..k {
        out *= (n - i) as f64;
        out /= (i + 1) as f64;
    }
    out
}

/// Integer power that accepts negative exponents.
pub fn cpow(z: C64, e: i64) -> C64 {
    if e >= 0 {
        z.powu(e as u32)
    } else {
        z.inv().powu((-e) as u32)
    }
}

/// Spectral (operator) norm.
pub fn op_norm(m: &CMat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].norm();
    }
    singular_values(m).map_or(f64::NAN, |sv| sv.iter().cloned().fold(0.0, f64::max))
}

pub fn min_singular(m: &CMat) -> f64 {
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].norm();
    }
    singular_values(m).map_or(f64::NAN, |sv| sv.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Singular values of `m` rescaled to unit max entry, so tiny matrices do not
/// underflow inside the rotations. `None` for non-finite input or no convergence.
fn singular_values(m: &CMat) -> Option<nalgebra::DVector<f64>> {
    if m.iter().any(|z| !z.is_finite()) {
        return None;
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Some(nalgebra::DVector::zeros(m.nrows().min(m.ncols())));
    }
    let unit = m.map(|z| z / scale);
    nalgebra::SVD::try_new(unit, false, false, f64::EPSILON, 10_000).map(|s| s.singular_values * scale)
}

pub fn fro(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Inverse of a square matrix, rejecting numerically singular input.
pub fn inverse(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    if n == 1 {
        let z = m[(0, 0)];
        if z.norm() == 0.0 || !z.is_finite() {
            return Err(Error::NumericallySingular);
        }
        return Ok(CMat::from_element(1, 1, z.inv()));
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::NumericallySingular);
    }
    let inv = m
        .clone()
        .try_inverse()
        .ok_or(Error::NumericallySingular)?;
    if inv.iter().any(|z| !z.is_finite()) {
        return Err(Error::NumericallySingular);
    }
    let iscale = inv.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale * iscale > 1e15 {
        return Err(Error::NumericallySingular);
    }
    Ok(inv)
}

/// Solve `m x = rhs` by LU with partial pivoting.
pub fn solve(m: &CMat, rhs: &CMat) -> Result<CMat> {
    let lu = m.clone().lu();
    let x = lu.solve(rhs).ok_or(Error::NumericallySingular)?;
    if x.iter().any(|z| !z.is_finite()) {
        return Err(Error::NumericallySingular);
    }
    Ok(x)
}

/// Winding number of a closed sampled curve around the origin.
pub fn winding_number(samples: &[C64]) -> i64 {
    let n = samples.len();
    let mut total = 0.0;
    for k in 0..n {
        let a = samples[k];
        let b = samples[(k + 1) % n];
        total += (b / a).arg();
    }
    (total / (2.0 * std::f64::consts::PI)).round() as i64
}

/// Dense (d n) x (d n) matrix addressed by 1-based block indices.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub n: usize,
    pub d: usize,
    pub data: CMat,
    pub hermitian: bool,
}

impl BlockMatrix {
    pub fn zeros(n: usize, d: usize) -> Self {
        BlockMatrix {
            n,
            d,
            data: CMat::zeros(n * d, n * d),
            hermitian: false,
        }
    }

    pub fn from_fn(n: usize, d: usize, mut f: impl FnMut(usize, usize) -> CMat) -> Self {
        let mut out = Self::zeros(n, d);
        for s in 1..=n {
            for t in 1..=n {
                out.set_block(s, t, &f(s, t));
            }
        }
        out
    }

    pub fn from_dense(n: usize, d: usize, data: CMat) -> Result<Self> {
        if data.nrows() != n * d || data.ncols() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "expected {0}x{0}, got {1}x{2}",
                n * d,
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(BlockMatrix {
            n,
            d,
            data,
            hermitian: false,
        })
    }

    pub fn block(&self, s: usize, t: usize) -> CMat {
        let d = self.d;
        self.data
            .view(((s - 1) * d, (t - 1) * d), (d, d))
            .into_owned()
    }

    pub fn set_block(&mut self, s: usize, t: usize, b: &CMat) {
        let d = self.d;
        self.data
            .view_mut(((s - 1) * d, (t - 1) * d), (d, d))
            .copy_from(b);
    }

    /// Largest deviation from block self-adjointness.
    pub fn hermitian_defect(&self) -> f64 {
        max_abs_diff(&self.data, &self.data.adjoint())
    }

    pub fn mul_vector(&self, v: &BlockVector) -> BlockVector {
        BlockVector::from_dense(self.n, self.d, &(&self.data * v.to_dense()))
    }
}

/// Length-n column of blocks, each d x r (r = d in the square case).
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    pub n: usize,
    pub d: usize,
    pub blocks: Vec<CMat>,
}

impl BlockVector {
    pub fn new(d: usize, blocks: Vec<CMat>) -> Result<Self> {
        let cols = blocks.first().map(|b| b.ncols()).unwrap_or(d);
        for (k, b) in blocks.iter().enumerate() {
            if b.nrows() != d || b.ncols() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "block {} has shape {}x{}, expected {}x{}",
                    k + 1,
                    b.nrows(),
                    b.ncols(),
                    d,
                    cols
                )));
            }
        }
        Ok(BlockVector {
            n: blocks.len(),
            d,
            blocks,
        })
    }

    pub fn zeros(n: usize, d: usize, cols: usize) -> Self {
        BlockVector {
            n,
            d,
            blocks: vec![CMat::zeros(d, cols); n],
        }
    }

    /// Identity in the first block, zero elsewhere.
    pub fn unit(n: usize, d: usize) -> Self {
        let mut v = Self::zeros(n, d, d);
        if n > 0 {
            v.blocks[0] = eye(d);
        }
        v
    }

    pub fn cols(&self) -> usize {
        self.blocks.first().map(|b| b.ncols()).unwrap_or(self.d)
    }

    /// 1-based block access.
    pub fn get(&self, s: usize) -> &CMat {
        &self.blocks[s - 1]
    }

    pub fn to_dense(&self) -> CMat {
        let cols = self.cols();
        let mut out = CMat::zeros(self.n * self.d, cols);
        for (k, b) in self.blocks.iter().enumerate() {
            out.view_mut((k * self.d, 0), (self.d, cols)).copy_from(b);
        }
        out
    }

    pub fn from_dense(n: usize, d: usize, m: &CMat) -> Self {
        let cols = m.ncols();
        let blocks = (0..n)
            .map(|k| m.view((k * d, 0), (d, cols)).into_owned())
            .collect();
        BlockVector { n, d, blocks }
    }

    pub fn fro(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn sub(&self, other: &BlockVector) -> BlockVector {
        BlockVector {
            n: self.n,
            d: self.d,
            blocks: self
                .blocks
                .iter()
                .zip(&other.blocks)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Relative Frobenius distance to `other`.
    pub fn rel_diff(&self, other: &BlockVector) -> f64 {
        let den = other.fro().max(f64::MIN_POSITIVE);
        self.sub(other).fro() / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials_cover_negative_arguments() {
        assert_eq!(binom(5, 2), 10.0);
        assert_eq!(binom(0, 0), 1.0);
        assert_eq!(binom(2, 3), 0.0);
        assert_eq!(binom(-1, 3), -1.0);
        assert_eq!(binom(-3, 2), 6.0);
        assert_eq!(binom(4, -1), 0.0);
    }

    #[test]
    fn negative_powers() {
        let z = c(0.5, 0.0);
        assert!((cpow(z, -3) - c(8.0, 0.0)).norm() < 1e-15);
        assert_eq!(cpow(z, 0), ONE);
    }

    #[test]
    fn winding_of_unit_circle() {
        let pts: Vec<C64> = (0..64)
            .map(|k| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / 64.0))
            .collect();
        assert_eq!(winding_number(&pts), 1);
        let shifted: Vec<C64> = pts.iter().map(|z| z + c(3.0, 0.0)).collect();
        assert_eq!(winding_number(&shifted), 0);
    }

    #[test]
    fn block_round_trip() {
        let bm = BlockMatrix::from_fn(3, 2, |s, t| scalar_eye(2, c(s as f64, t as f64)));
        assert_eq!(bm.block(2, 3), scalar_eye(2, c(2.0, 3.0)));
        let v = BlockVector::unit(3, 2);
        let back = BlockVector::from_dense(3, 2, &v.to_dense());
        assert_eq!(back, v);
    }

    #[test]
    fn singular_inverse_is_rejected() {
        let m = CMat::from_element(2, 2, ONE);
        assert_eq!(inverse(&m), Err(Error::NumericallySingular));
    }
}
