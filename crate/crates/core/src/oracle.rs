//! Reference computations: dense Toeplitz assembly and LU, block Levinson,
//! and the solution of the infinite system.

use serde::Serialize;

use crate::coefficients::CoefficientTables;
use crate::error::{Error, Result};
use crate::fast_solver::{self, FastOptions};
use crate::linalg::{self, BlockMatrix, BlockVector, CMat, C64};

pub const DEFAULT_DENSE_CAP: usize = 2048;

/// Largest `n` accepted by the dense paths (`TPZ_DENSE_CAP` overrides).
pub fn dense_cap() -> usize {
    std::env::var("TPZ_DENSE_CAP")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_DENSE_CAP)
}

fn check_cap(n: usize) -> Result<()> {
    let cap = dense_cap();
    if n > cap {
        return Err(Error::DomainViolation(format!("n = {n} exceeds the dense cap {cap}")));
    }
    Ok(())
}

/// `T_n(w)` with `(s, t)` block `gamma(s - t)`.
pub fn dense_toeplitz(tables: &CoefficientTables, n: usize) -> Result<BlockMatrix> {
    if n == 0 {
        return Err(Error::DomainViolation("n must be at least 1".into()));
    }
    let g = tables.gamma_range(n - 1);
    let d = tables.spec().d;
    let mut m = BlockMatrix::from_fn(n, d, |s, t| {
        if s >= t {
            g[s - t].clone()
        } else {
            g[t - s].adjoint()
        }
    });
    m.hermitian = true;
    Ok(m)
}

/// True when the Cholesky factorization of `T_n(w)` succeeds.
pub fn is_positive_definite(m: &BlockMatrix) -> bool {
    m.data.clone().cholesky().is_some()
}

pub fn dense_solve(tables: &CoefficientTables, y: &BlockVector) -> Result<BlockVector> {
    check_cap(y.n)?;
    let t = dense_toeplitz(tables, y.n)?;
    let x = linalg::solve(&t.data, &y.to_dense())?;
    Ok(BlockVector::from_dense(y.n, y.d, &x))
}

pub fn dense_inverse(tables: &CoefficientTables, n: usize) -> Result<BlockMatrix> {
    check_cap(n)?;
    let t = dense_toeplitz(tables, n)?;
    let inv = linalg::inverse(&t.data)?;
    let mut out = BlockMatrix::from_dense(n, t.d, inv)?;
    out.hermitian = true;
    Ok(out)
}

/// `||T_n Z - Y||_F / ||Y||_F` with the dense matrix.
pub fn dense_residual(tables: &CoefficientTables, z: &BlockVector, y: &BlockVector) -> Result<f64> {
    check_cap(y.n)?;
    let t = dense_toeplitz(tables, y.n)?;
    let r = &t.data * z.to_dense() - y.to_dense();
    Ok(linalg::fro(&r) / y.fro().max(f64::MIN_POSITIVE))
}

/// Block Levinson recursion in `O(n^2)` block operations.
pub fn levinson_solve(tables: &CoefficientTables, y: &BlockVector) -> Result<BlockVector> {
    let n = y.n;
    let d = y.d;
    if n == 0 {
        return Err(Error::DomainViolation("n must be at least 1".into()));
    }
    let g = tables.gamma_range(n - 1);
    // R_k = gamma(k), R_{-k} = gamma(k)^*
    let r = |k: i64| -> CMat {
        if k >= 0 {
            g[k as usize].clone()
        } else {
            g[(-k) as usize].adjoint()
        }
    };
    let r0_inv = linalg::inverse(&g[0]).map_err(|_| Error::RecursionBreakdown(1))?;
    let mut f = vec![r0_inv.clone()];
    let mut b = vec![r0_inv.clone()];
    let mut x = vec![&r0_inv * y.get(1)];
    let eye = linalg::eye(d);
    for k in 1..n {
        let mut ef = CMat::zeros(d, d);
        let mut eb = CMat::zeros(d, d);
        for j in 0..k {
            ef += r((k - j) as i64) * &f[j];
            eb += r(-(j as i64) - 1) * &b[j];
        }
        let alpha = linalg::inverse(&(&eye - &eb * &ef)).map_err(|_| Error::RecursionBreakdown(k + 1))?;
        let delta = linalg::inverse(&(&eye - &ef * &eb)).map_err(|_| Error::RecursionBreakdown(k + 1))?;
        let fa = -(&ef * &alpha);
        let bd = -(&eb * &delta);
        let mut nf = Vec::with_capacity(k + 1);
        let mut nb = Vec::with_capacity(k + 1);
        for j in 0..=k {
            let fj = if j < k { Some(&f[j]) } else { None };
            let bj = if j > 0 { Some(&b[j - 1]) } else { None };
            let mut vf = CMat::zeros(d, d);
            let mut vb = CMat::zeros(d, d);
            if let Some(fj) = fj {
                vf += fj * &alpha;
                vb += fj * &bd;
            }
            if let Some(bj) = bj {
                vf += bj * &fa;
                vb += bj * &delta;
            }
            nf.push(vf);
            nb.push(vb);
        }
        f = nf;
        b = nb;
        let mut e = CMat::zeros(d, y.cols());
        for (j, xj) in x.iter().enumerate() {
            e += r((k - j) as i64) * xj;
        }
        let gap = y.get(k + 1) - e;
        x.push(CMat::zeros(d, y.cols()));
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += &b[j] * &gap;
        }
    }
    BlockVector::new(d, x)
}

/// Right-hand side of the infinite system.
#[derive(Debug, Clone)]
pub enum RhsSequence {
    /// `y_1 .. y_m`, zero afterwards.
    Finite(Vec<CMat>),
    /// `y_k = ratio^{k-1} first`.
    Geometric { first: CMat, ratio: C64 },
}

impl RhsSequence {
    pub fn get(&self, k: usize) -> CMat {
        match self {
            RhsSequence::Finite(v) => v.get(k - 1).cloned().unwrap_or_else(|| {
                let f = &v[0];
                CMat::zeros(f.nrows(), f.ncols())
            }),
            RhsSequence::Geometric { first, ratio } => first * linalg::cpow(*ratio, k as i64 - 1),
        }
    }

    /// First `n` blocks.
    pub fn truncate(&self, n: usize) -> Result<BlockVector> {
        let first = self.get(1);
        BlockVector::new(first.nrows(), (1..=n).map(|k| self.get(k)).collect())
    }

    pub fn describe(&self) -> String {
        match self {
            RhsSequence::Finite(v) => format!("finite support of length {}", v.len()),
            RhsSequence::Geometric { ratio, .. } => format!("geometric with ratio {ratio}"),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            RhsSequence::Finite(v) if v.is_empty() => {
                Err(Error::DomainViolation("empty right-hand side".into()))
            }
            RhsSequence::Geometric { ratio, .. } if ratio.norm() >= 1.0 => {
                Err(Error::NonSummableRHS(ratio.norm()))
            }
            _ => Ok(()),
        }
    }
}

/// `z_s = sum_t sum_{l <= s ^ t} a~*_{s-l} a~_{t-l} y_t` for `s = 1..horizon`.
pub fn infinite_solution(
    tables: &CoefficientTables,
    rhs: &RhsSequence,
    horizon: usize,
) -> Result<Vec<CMat>> {
    rhs.check()?;
    let at = tables.a_tilde_range(horizon.max(1));
    // u_l = sum_{t >= l} a~_{t-l} y_t
    let u: Vec<CMat> = match rhs {
        RhsSequence::Finite(v) => (1..=horizon)
            .map(|l| {
                let mut acc = CMat::zeros(v[0].nrows(), v[0].ncols());
                for t in l..=v.len() {
                    acc += tables.a_tilde(t - l) * &v[t - 1];
                }
                acc
            })
            .collect(),
        RhsSequence::Geometric { first, ratio } => {
            let q = ratio.norm();
            let sup = tables.a_sup();
            let mut sum = CMat::zeros(first.nrows(), first.nrows());
            let mut k = 0usize;
            let mut pw = C64::new(1.0, 0.0);
            loop {
                sum += tables.a_tilde(k) * pw;
                k += 1;
                pw *= ratio;
                if q == 0.0 || sup * q.powi(k as i32) / (1.0 - q) <= 1e-17 * (1.0 + linalg::op_norm(&sum)) {
                    break;
                }
            }
            let base = &sum * first;
            (1..=horizon)
                .map(|l| &base * linalg::cpow(*ratio, l as i64 - 1))
                .collect()
        }
    };
    Ok((1..=horizon)
        .map(|s| {
            let mut acc = CMat::zeros(u[0].nrows(), u[0].ncols());
            for l in 1..=s {
                acc += at[s - l].adjoint() * &u[l - 1];
            }
            acc
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub ns: Vec<usize>,
    /// `sum_{k<=n} ||z_{n,k} - z_k||` per `n`.
    pub deltas: Vec<f64>,
    pub y_decay: String,
}

/// Finite solutions against the infinite one for each `n` in `ns`.
pub fn convergence_experiment(
    tables: &CoefficientTables,
    rhs: &RhsSequence,
    ns: &[usize],
) -> Result<ConvergenceReport> {
    rhs.check()?;
    let nmax = ns.iter().copied().max().unwrap_or(0);
    let zinf = infinite_solution(tables, rhs, nmax)?;
    let solver = fast_solver::FastSolver::new(tables)?;
    let opts = FastOptions {
        dense_fallback: true,
        ..Default::default()
    };
    let mut deltas = Vec::with_capacity(ns.len());
    for &n in ns {
        let y = rhs.truncate(n)?;
        let z = solver.solve(&y, &opts)?.z;
        deltas.push(
            z.blocks
                .iter()
                .zip(&zinf)
                .map(|(a, b)| linalg::op_norm(&(a - b)))
                .sum(),
        );
    }
    Ok(ConvergenceReport {
        ns: ns.to_vec(),
        deltas,
        y_decay: rhs.describe(),
    })
}
