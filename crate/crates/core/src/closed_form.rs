//! Closed-form inverse of `T_n(w)` for rational symbols.
//!
//! All pole-indexed matrices (`Lambda`, `Pi_n`, `Xi_n`, `Phi_n`) are scalar
//! `M x M` matrices tensored with `I_d`; only `Theta` and the residue stacks
//! carry genuine `d x d` blocks.
//!
//! For large `n` the factors `Pi_n ~ p^n` and `w_n ~ p^{-n}` under- and
//! overflow. [`SolveVectors`] therefore works with `D_m = diag(p_mu^m I)`
//! pulled out of every factor: `ell_s r_t` is unchanged, but each stored
//! vector stays of polynomial size in `n`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::coefficients::CoefficientTables;
use crate::error::{Error, Result};
use crate::linalg::{self, binom, cpow, BlockMatrix, CMat, C64, ONE};
use crate::series_inverse::{first_term_gram, GramVariant};
use crate::symbol::RationalSymbolSpec;

pub type SMat = DMatrix<C64>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaOptions {
    pub nodes: usize,
    /// Contour radius used for every pole instead of the automatic choice.
    pub radius: Option<f64>,
    /// Automatic radii below this value are refused.
    pub min_radius: f64,
    pub convergence_tol: f64,
}

impl Default for ThetaOptions {
    fn default() -> Self {
        ThetaOptions {
            nodes: 512,
            radius: None,
            min_radius: 1e-6,
            convergence_tol: 1e-9,
        }
    }
}

/// Automatic contour radius around pole `mu`.
pub fn contour_radius(spec: &RationalSymbolSpec, mu: usize) -> f64 {
    let p = spec.poles[mu];
    let mut dist = (1.0 - p.norm()).min(p.norm());
    for (nu, q) in spec.poles.iter().enumerate() {
        if nu != mu {
            dist = dist.min((p - q).norm());
        }
    }
    0.25 * dist
}

fn theta_at(spec: &RationalSymbolSpec, mu: usize, radius: f64, nodes: usize) -> Result<Vec<CMat>> {
    let p = spec.poles[mu];
    let m = spec.mults[mu];
    let d = spec.d;
    let mut out = vec![CMat::zeros(d, d); m];
    for k in 0..nodes {
        let e = C64::from_polar(radius, 2.0 * PI * k as f64 / nodes as f64);
        let z = p + e;
        let f = spec.eval_h_sharp(z)? * spec.eval_h_dagger_inv(z)?;
        let mut ej = e;
        for th in out.iter_mut() {
            *th += &f * ej;
            ej *= e;
        }
    }
    let w = C64::new(-1.0 / nodes as f64, 0.0);
    Ok(out.into_iter().map(|t| t * w).collect())
}

/// `theta_{mu,j}`: minus the `(z - p_mu)^{-j}` Laurent coefficient of
/// `h_sharp(z) h^dagger(z)^{-1}`, by trapezoid quadrature on a small circle.
pub fn compute_theta(spec: &RationalSymbolSpec, opts: ThetaOptions) -> Result<Vec<Vec<CMat>>> {
    let mut all = Vec::with_capacity(spec.k());
    for mu in 0..spec.k() {
        let r = match opts.radius {
            Some(r) => r,
            None => {
                let r = contour_radius(spec, mu);
                if r < opts.min_radius {
                    return Err(Error::ContourTooTight(r));
                }
                r
            }
        };
        let coarse = theta_at(spec, mu, r, opts.nodes)?;
        let fine = theta_at(spec, mu, r, 2 * opts.nodes)?;
        let scale = fine.iter().map(linalg::op_norm).fold(1.0, f64::max);
        let dev = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| linalg::op_norm(&(a - b)))
            .fold(0.0, f64::max);
        if dev > opts.convergence_tol * scale {
            return Err(Error::QuadratureNotConverged(dev));
        }
        all.push(fine);
    }
    Ok(all)
}

/// `A (x) I_d`.
pub fn kron_eye(s: &SMat, d: usize) -> CMat {
    let mut out = CMat::zeros(s.nrows() * d, s.ncols() * d);
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            let v = s[(i, j)];
            if v != C64::new(0.0, 0.0) {
                for k in 0..d {
                    out[(i * d + k, j * d + k)] = v;
                }
            }
        }
    }
    out
}

/// `(S (x) I_d) X` for a stacked `X` with `d`-row blocks.
pub fn apply_scalar(s: &SMat, x: &CMat, d: usize) -> CMat {
    let cols = x.ncols();
    let mut out = CMat::zeros(s.nrows() * d, cols);
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            let v = s[(i, j)];
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            for r in 0..d {
                for cc in 0..cols {
                    out[(i * d + r, cc)] += v * x[(j * d + r, cc)];
                }
            }
        }
    }
    out
}

/// Multiply row block `i` of a stacked matrix by `f[i]`.
pub fn scale_rows(x: &CMat, f: &[C64], d: usize) -> CMat {
    let mut out = x.clone();
    for (i, v) in f.iter().enumerate() {
        for r in 0..d {
            for cc in 0..x.ncols() {
                out[(i * d + r, cc)] *= v;
            }
        }
    }
    out
}

/// Multiply column block `i` by `f[i]`.
pub fn scale_cols(x: &CMat, f: &[C64], d: usize) -> CMat {
    let mut out = x.clone();
    for (i, v) in f.iter().enumerate() {
        for cc in 0..d {
            for r in 0..x.nrows() {
                out[(r, i * d + cc)] *= v;
            }
        }
    }
    out
}

/// Which formula of the closed-form inverse produced a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// `t <= n - m0`, tilde Gram plus `(l~_t r~_s)^*`.
    TildeColumn,
    /// `s <= n - m0`, tilde Gram plus `l~_s r~_t`.
    TildeRow,
    /// `t >= m0 + 1`, plain Gram plus `(l_t r_s)^*`.
    PlainColumn,
    /// `s >= m0 + 1`, plain Gram plus `l_s r_t`.
    PlainRow,
}

impl Region {
    pub fn applies(self, n: usize, m0: usize, s: usize, t: usize) -> bool {
        match self {
            Region::TildeColumn => t + m0 <= n,
            Region::TildeRow => s + m0 <= n,
            Region::PlainColumn => t > m0,
            Region::PlainRow => s > m0,
        }
    }

    pub const ALL: [Region; 4] = [
        Region::TildeColumn,
        Region::TildeRow,
        Region::PlainColumn,
        Region::PlainRow,
    ];

    /// Preferred region: the row formulas first.
    pub fn pick(n: usize, m0: usize, s: usize, t: usize) -> Result<Region> {
        for r in [
            Region::TildeRow,
            Region::PlainRow,
            Region::TildeColumn,
            Region::PlainColumn,
        ] {
            if r.applies(n, m0, s, t) {
                return Ok(r);
            }
        }
        Err(Error::RegionUncovered(s, t))
    }
}

/// The `dM x dM` machinery attached to a rational symbol with `K >= 1`.
#[derive(Debug, Clone)]
pub struct ClosedFormKit {
    pub spec: RationalSymbolSpec,
    pub d: usize,
    /// Total multiplicity `M`.
    pub m: usize,
    /// `(mu, i)` for every pole-index slot, `i` 1-based.
    pub slots: Vec<(usize, usize)>,
    pub theta: Vec<Vec<CMat>>,
    /// `Theta`, block diagonal with Hankel blocks.
    pub theta_mat: CMat,
    pub lambda_s: SMat,
    pub lambda: CMat,
    pub rho_stack: CMat,
    pub rho_tilde_stack: CMat,
}

impl ClosedFormKit {
    pub fn new(spec: &RationalSymbolSpec) -> Result<Self> {
        if spec.k() == 0 {
            return Err(Error::NotApplicable("closed-form kit needs K >= 1".into()));
        }
        let theta = compute_theta(spec, ThetaOptions::default())?;
        Self::with_theta(spec, theta)
    }

    /// Reuse the pole data already held by coefficient tables.
    pub fn from_tables(tables: &CoefficientTables) -> Result<Self> {
        let spec = tables.spec();
        if spec.k() == 0 {
            return Err(Error::NotApplicable("closed-form kit needs K >= 1".into()));
        }
        Self::with_theta(spec, tables.theta()?.clone())
    }

    pub fn with_theta(spec: &RationalSymbolSpec, theta: Vec<Vec<CMat>>) -> Result<Self> {
        if spec.k() == 0 {
            return Err(Error::NotApplicable("closed-form kit needs K >= 1".into()));
        }
        let d = spec.d;
        let mut slots = Vec::new();
        for (mu, &mm) in spec.mults.iter().enumerate() {
            for i in 1..=mm {
                slots.push((mu, i));
            }
        }
        let m = slots.len();
        let mut theta_mat = CMat::zeros(d * m, d * m);
        let mut off = 0;
        for (mu, &mm) in spec.mults.iter().enumerate() {
            for i in 1..=mm {
                for j in 1..=mm {
                    if i + j - 1 <= mm {
                        theta_mat
                            .view_mut(((off + i - 1) * d, (off + j - 1) * d), (d, d))
                            .copy_from(&theta[mu][i + j - 2]);
                    }
                }
            }
            off += mm;
        }
        let mut rho_stack = CMat::zeros(d * m, d);
        let mut rho_tilde_stack = CMat::zeros(d * m, d);
        for (k, &(mu, i)) in slots.iter().enumerate() {
            rho_stack
                .view_mut((k * d, 0), (d, d))
                .copy_from(&spec.rho[mu][i - 1]);
            rho_tilde_stack
                .view_mut((k * d, 0), (d, d))
                .copy_from(&spec.sharp.rho[mu][i - 1].adjoint());
        }
        let mut kit = ClosedFormKit {
            spec: spec.clone(),
            d,
            m,
            slots,
            theta,
            theta_mat,
            lambda_s: SMat::zeros(m, m),
            lambda: CMat::zeros(0, 0),
            rho_stack,
            rho_tilde_stack,
        };
        kit.lambda_s = kit.lambda_scalar();
        kit.lambda = kron_eye(&kit.lambda_s, d);
        Ok(kit)
    }

    fn pole(&self, k: usize) -> C64 {
        self.spec.poles[self.slots[k].0]
    }

    fn lambda_scalar(&self) -> SMat {
        SMat::from_fn(self.m, self.m, |a, b| {
            let (mu, i) = self.slots[a];
            let (nu, j) = self.slots[b];
            let pm = self.spec.poles[mu];
            let pn = self.spec.poles[nu].conj();
            let den = ONE - pm * pn;
            let (i, j) = (i as i64, j as i64);
            let mut acc = C64::new(0.0, 0.0);
            for r in 0..j {
                acc += cpow(pm, j - r - 1) * cpow(pn, i - r - 1) / cpow(den, i + j - r - 1)
                    * (binom(i - 1, r) * binom(i + j - r - 2, i - 1));
            }
            acc
        })
    }

    /// `p_{mu,i}(k) = C(k, i-1) p_mu^{k-i+1}` as a scalar vector over slots.
    pub fn pvec_scalar(&self, k: i64) -> Vec<C64> {
        self.slots
            .iter()
            .map(|&(mu, i)| {
                let i = i as i64;
                cpow(self.spec.poles[mu], k - i + 1) * binom(k, i - 1)
            })
            .collect()
    }

    /// `p_k` stacked as a `dM x d` matrix.
    pub fn pvec(&self, k: i64) -> CMat {
        stack_scalars(&self.pvec_scalar(k), self.d)
    }

    /// `D_k p_{k'} ` computed without forming `p^k` and `p^{-k}` separately:
    /// entries `C(k', i-1) p^{k + k' - i + 1}`.
    pub fn pvec_shifted_scalar(&self, shift: i64, k: i64) -> Vec<C64> {
        self.slots
            .iter()
            .map(|&(mu, i)| {
                let i = i as i64;
                cpow(self.spec.poles[mu], shift + k - i + 1) * binom(k, i - 1)
            })
            .collect()
    }

    /// `diag(p_mu^k)` over slots.
    pub fn dscal(&self, k: i64) -> Vec<C64> {
        (0..self.m).map(|a| cpow(self.pole(a), k)).collect()
    }

    pub fn pi_scalar(&self, n: i64) -> SMat {
        SMat::from_fn(self.m, self.m, |a, b| {
            let (mu, i) = self.slots[a];
            let (nu, j) = self.slots[b];
            if mu != nu || j < i {
                return C64::new(0.0, 0.0);
            }
            let idx = (j - i + 1) as i64;
            cpow(self.spec.poles[mu], n - idx + 1) * binom(n, idx - 1)
        })
    }

    /// `D_n^{-1} Pi_n`: entries `C(n, k-1) p^{-k+1}`.
    pub fn pi_unscaled_scalar(&self, n: i64) -> SMat {
        SMat::from_fn(self.m, self.m, |a, b| {
            let (mu, i) = self.slots[a];
            let (nu, j) = self.slots[b];
            if mu != nu || j < i {
                return C64::new(0.0, 0.0);
            }
            let idx = (j - i + 1) as i64;
            cpow(self.spec.poles[mu], -idx + 1) * binom(n, idx - 1)
        })
    }

    pub fn pi(&self, n: i64) -> CMat {
        kron_eye(&self.pi_scalar(n), self.d)
    }

    pub fn xi_scalar(&self, n: i64) -> SMat {
        SMat::from_fn(self.m, self.m, |a, b| {
            let (mu, i) = self.slots[a];
            let (nu, j) = self.slots[b];
            let pm = self.spec.poles[mu];
            let pn = self.spec.poles[nu].conj();
            let den = ONE - pm * pn;
            let (i, j) = (i as i64, j as i64);
            let mut acc = C64::new(0.0, 0.0);
            for r in 0..j {
                acc += cpow(pm, j - r - 1) * cpow(pn, n + i + j - r - 2)
                    / cpow(den, i + j - r - 1)
                    * (binom(n + i + j - 2, r) * binom(i + j - r - 2, i - 1));
            }
            acc
        })
    }

    pub fn xi(&self, n: i64) -> CMat {
        kron_eye(&self.xi_scalar(n), self.d)
    }

    /// `D_shift Phi_n`; `shift = 0` gives `Phi_n` itself.
    pub fn phi_scalar_shifted(&self, n: i64, shift: i64) -> SMat {
        SMat::from_fn(self.m, self.m, |a, b| {
            let (mu, i) = self.slots[a];
            let (nu, j) = self.slots[b];
            let pm = self.spec.poles[mu];
            let pn = self.spec.poles[nu].conj();
            let den = ONE - pm * pn;
            let (i, j) = (i as i64, j as i64);
            let mut acc = C64::new(0.0, 0.0);
            for q in 0..i {
                for r in 0..j {
                    let coef = binom(j - 1, r) * binom(r + q, q) * binom(r - n, i - q - 1);
                    if coef == 0.0 {
                        continue;
                    }
                    acc += cpow(pm, r + q + 1 - i - n + shift) * cpow(pn, r + q)
                        / cpow(den, r + q + 1)
                        * coef;
                }
            }
            acc
        })
    }

    pub fn phi_scalar(&self, n: i64) -> SMat {
        self.phi_scalar_shifted(n, 0)
    }

    pub fn phi(&self, n: i64) -> CMat {
        kron_eye(&self.phi_scalar(n), self.d)
    }

    /// `(G_n, G~_n) = (Pi_n Theta Lambda, (Pi_n Theta)^* Lambda^T)`.
    pub fn build_g(&self, n: i64) -> (CMat, CMat) {
        let pt = self.pi(n) * &self.theta_mat;
        let g = &pt * &self.lambda;
        let gt = pt.adjoint() * self.lambda.transpose();
        (g, gt)
    }

    /// `beta^*_{n+k+l+1} = p_l^T Pi_n Theta p_k`, requires `n + k + l >= m0`.
    pub fn closed_beta_adjoint(&self, n: i64, k: i64, l: i64) -> Result<CMat> {
        if n + k + l < self.spec.m0 as i64 {
            return Err(Error::DomainViolation(format!(
                "n + k + l = {} is below m0 = {}",
                n + k + l,
                self.spec.m0
            )));
        }
        let pl = self.pvec(l);
        Ok(pl.transpose() * self.pi(n) * &self.theta_mat * self.pvec(k))
    }

    /// `beta_{n+k+l+1} = p_k^* (Pi_n Theta)^* conj(p_l)`.
    pub fn closed_beta(&self, n: i64, k: i64, l: i64) -> Result<CMat> {
        if n + k + l < self.spec.m0 as i64 {
            return Err(Error::DomainViolation(format!(
                "n + k + l = {} is below m0 = {}",
                n + k + l,
                self.spec.m0
            )));
        }
        let pt = self.pi(n) * &self.theta_mat;
        Ok(self.pvec(k).adjoint() * pt.adjoint() * self.pvec(l).map(|z| z.conj()))
    }

    fn rho0_at(&self, l: usize, tilde: bool) -> CMat {
        let s = &self.spec;
        match (l, tilde) {
            (0, false) => s.rho00.clone(),
            (0, true) => s.sharp.rho00.adjoint(),
            (l, false) => s.rho0[l - 1].clone(),
            (l, true) => s.sharp.rho0[l - 1].adjoint(),
        }
    }

    /// `v_n = sum_l p_l a_{n+l}` (or `v~_n`) in closed form, `n >= 1`.
    pub fn v(&self, n: usize, tilde: bool) -> CMat {
        let d = self.d;
        let xi = self.xi_scalar(n as i64);
        let (xi, stack) = if tilde {
            (xi.map(|z| z.conj()), &self.rho_tilde_stack)
        } else {
            (xi, &self.rho_stack)
        };
        let mut out = apply_scalar(&xi, stack, d);
        let m0 = self.spec.m0;
        if n <= m0 {
            for l in 0..=(m0 - n) {
                let mut p = self.pvec_scalar(l as i64);
                if tilde {
                    p.iter_mut().for_each(|z| *z = z.conj());
                }
                out += stack_scalars(&p, d) * self.rho0_at(n + l, tilde);
            }
        }
        out
    }

    /// `D_shift w_n` (or the conjugate-pole analogue `conj(D_shift) w~_n`).
    pub fn w_shifted(&self, n: i64, shift: i64, tilde: bool) -> CMat {
        let d = self.d;
        let phi = self.phi_scalar_shifted(n, shift);
        let (phi, stack) = if tilde {
            (phi.map(|z| z.conj()), &self.rho_tilde_stack)
        } else {
            (phi, &self.rho_stack)
        };
        let mut out = apply_scalar(&phi, stack, d);
        for l in 0..=self.spec.m0 {
            let mut p = self.pvec_shifted_scalar(shift, l as i64 - n);
            if tilde {
                p.iter_mut().for_each(|z| *z = z.conj());
            }
            out += stack_scalars(&p, d) * self.rho0_at(l, tilde);
        }
        out
    }

    /// `w_n = sum_l p_{l-n} a_l` (or `w~_n`) in closed form.
    pub fn w(&self, n: i64, tilde: bool) -> CMat {
        self.w_shifted(n, 0, tilde)
    }

    /// `b^k_{n,u,l}` from the pole data, `m0 + 1 <= u <= n`.
    pub fn b_closed(&self, n: usize, u: usize, level: usize, l: usize) -> Result<CMat> {
        if u <= self.spec.m0 || u > n || level == 0 {
            return Err(Error::DomainViolation(format!(
                "closed b needs m0 < u <= n and level >= 1 (u = {u}, n = {n})"
            )));
        }
        let (g, gt) = self.build_g(n as i64);
        let pt = self.pi(n as i64) * &self.theta_mat;
        let k = level.div_ceil(2);
        let mut pw = linalg::eye(self.d * self.m);
        let prod = &gt * &g;
        for _ in 1..k {
            pw = &pw * &prod;
        }
        let left = self.pvec(u as i64 - n as i64 - 1).adjoint() * pw;
        let out = if level % 2 == 1 {
            left * pt.adjoint() * self.pvec(l as i64).map(|z| z.conj())
        } else {
            left * gt * pt * self.pvec(l as i64)
        };
        Ok(out)
    }

    /// `b~^k_{n,u,l}` from the pole data, `1 <= u <= n - m0`.
    pub fn b_tilde_closed(&self, n: usize, u: usize, level: usize, l: usize) -> Result<CMat> {
        if u == 0 || u + self.spec.m0 > n || level == 0 {
            return Err(Error::DomainViolation(format!(
                "closed b~ needs 1 <= u <= n - m0 and level >= 1 (u = {u}, n = {n})"
            )));
        }
        let (g, gt) = self.build_g(n as i64);
        let pt = self.pi(n as i64) * &self.theta_mat;
        let k = level.div_ceil(2);
        let mut pw = linalg::eye(self.d * self.m);
        let prod = &g * &gt;
        for _ in 1..k {
            pw = &pw * &prod;
        }
        let left = self.pvec(-(u as i64)).transpose() * pw;
        let out = if level % 2 == 1 {
            left * pt * self.pvec(l as i64)
        } else {
            left * g * pt.adjoint() * self.pvec(l as i64).map(|z| z.conj())
        };
        Ok(out)
    }

    pub fn solve_vectors(&self, n: usize) -> Result<SolveVectors> {
        SolveVectors::new(self, n)
    }
}

/// Closed form of `sum_{l>=0} C(n+l, i) C(j+l, j) x^{n+l-i} y^l` for `|x|, |y| < 1`.
pub fn binomial_power_sum(n: i64, i: i64, j: i64, x: C64, y: C64) -> C64 {
    let den = ONE - x * y;
    let mut acc = C64::new(0.0, 0.0);
    for q in 0..=i {
        for r in 0..=j {
            let coef = binom(j, r) * binom(r + q, q) * binom(n + r, i - q);
            if coef != 0.0 {
                acc += cpow(x, n + r + q - i) * cpow(y, r + q) / cpow(den, r + q + 1) * coef;
            }
        }
    }
    acc
}

pub fn stack_scalars(p: &[C64], d: usize) -> CMat {
    let mut out = CMat::zeros(p.len() * d, d);
    for (i, v) in p.iter().enumerate() {
        for k in 0..d {
            out[(i * d + k, k)] = *v;
        }
    }
    out
}

/// Spectral radius by repeated squaring (Gelfand's formula, Frobenius norm).
pub fn spectral_radius(a: &CMat) -> f64 {
    let mut b = a.clone();
    let mut log_acc = 0.0;
    let mut k = 1.0;
    for _ in 0..12 {
        let nb = linalg::fro(&b);
        if nb == 0.0 {
            return 0.0;
        }
        if !nb.is_finite() {
            return f64::NAN;
        }
        if nb < 1e-250 {
            return (log_acc + nb.ln() / k).exp();
        }
        b /= C64::new(nb, 0.0);
        log_acc += nb.ln() / k;
        b = &b * &b;
        k *= 2.0;
    }
    let nb = linalg::fro(&b);
    if nb == 0.0 {
        return 0.0;
    }
    (log_acc + nb.ln() / k).exp()
}

/// Per-`n` vectors of the closed-form inverse, kept in the rescaled gauge.
///
/// With `D = diag(p_mu^n)`, the stored quantities relate to the textbook ones by
/// `ell_s = ell'_s conj(D)^{-1}`, `r_s = conj(D) r'_s`, `ell~_s = ell~'_s D^{-1}`
/// and `r~_s = D r~'_s`.
#[derive(Debug, Clone)]
pub struct SolveVectors {
    pub n: usize,
    pub d: usize,
    pub mdim: usize,
    pub spectral_radius: f64,
    pub spectral_radius_tilde: f64,
    kit: ClosedFormKit,
    dn: Vec<C64>,
    resolvent: CMat,
    resolvent_tilde: CMat,
    r_from_vt: CMat,
    r_from_v: CMat,
    rt_from_v: CMat,
    rt_from_vt: CMat,
}

impl SolveVectors {
    pub fn new(kit: &ClosedFormKit, n: usize) -> Result<Self> {
        let m0 = kit.spec.m0;
        if n < m0 + 1 {
            return Err(Error::DomainViolation(format!("n = {n} must be at least m0 + 1")));
        }
        let d = kit.d;
        let ni = n as i64;
        let dn = kit.dscal(ni);
        let dn_conj: Vec<C64> = dn.iter().map(|z| z.conj()).collect();
        let pp = kron_eye(&kit.pi_unscaled_scalar(ni), d) * &kit.theta_mat;
        let ppa = pp.adjoint();
        let lam = &kit.lambda;
        let lam_t = lam.transpose();
        let lt_dn_pp = scale_cols(&lam_t, &dn, d) * &pp;
        let ghat = &ppa * &lt_dn_pp * scale_cols(lam, &dn_conj, d);
        let lam_ppa = lam * &ppa;
        let gcheck = &pp * &lam_ppa * scale_rows(&scale_cols(&lam_t, &dn, d), &dn_conj, d);
        let eye = linalg::eye(d * kit.m);
        let sr = spectral_radius(&ghat);
        let srt = spectral_radius(&gcheck);
        if !(sr < 1.0 && srt < 1.0) {
            return Err(Error::ResolventSingular);
        }
        let resolvent = linalg::inverse(&(&eye - &ghat)).map_err(|_| Error::ResolventSingular)?;
        let resolvent_tilde =
            linalg::inverse(&(&eye - &gcheck)).map_err(|_| Error::ResolventSingular)?;
        let r_from_v = &ppa * &lt_dn_pp;
        let rt_from_vt = &pp * scale_cols(&lam_ppa, &dn_conj, d);
        Ok(SolveVectors {
            n,
            d,
            mdim: d * kit.m,
            spectral_radius: sr,
            spectral_radius_tilde: srt,
            kit: kit.clone(),
            dn,
            resolvent,
            resolvent_tilde,
            r_from_vt: ppa,
            r_from_v,
            rt_from_v: pp,
            rt_from_vt,
        })
    }

    pub fn kit(&self) -> &ClosedFormKit {
        &self.kit
    }

    fn check(&self, s: usize) -> Result<()> {
        if s == 0 || s > self.n {
            return Err(Error::DomainViolation(format!("index {s} outside 1..{}", self.n)));
        }
        Ok(())
    }

    /// `ell'_s` (`d x dM`).
    pub fn ell_scaled(&self, s: usize) -> Result<CMat> {
        self.check(s)?;
        let m = (self.n + 1 - s) as i64;
        let dw = self.kit.w_shifted(m, m, false) - scale_rows(&self.kit.v(m as usize, false), &self.kit.dscal(m), self.d);
        let x = scale_rows(&dw, &self.kit.dscal(s as i64 - 1), self.d);
        Ok(x.adjoint() * &self.resolvent)
    }

    /// `r'_t` (`dM x d`).
    pub fn r_scaled(&self, t: usize) -> Result<CMat> {
        self.check(t)?;
        let vt = self.kit.v(t, true);
        let v = self.kit.v(self.n + 1 - t, false);
        Ok(&self.r_from_vt * vt + &self.r_from_v * v)
    }

    /// `ell~'_s` (`d x dM`).
    pub fn ell_tilde_scaled(&self, s: usize) -> Result<CMat> {
        self.check(s)?;
        let si = s as i64;
        let ds_conj: Vec<C64> = self.kit.dscal(si).iter().map(|z| z.conj()).collect();
        let dw = self.kit.w_shifted(si, si, true) - scale_rows(&self.kit.v(s, true), &ds_conj, self.d);
        let rest: Vec<C64> = self.kit.dscal((self.n - s) as i64).iter().map(|z| z.conj()).collect();
        let x = scale_rows(&dw, &rest, self.d);
        Ok(x.adjoint() * &self.resolvent_tilde)
    }

    /// `r~'_t` (`dM x d`).
    pub fn r_tilde_scaled(&self, t: usize) -> Result<CMat> {
        self.check(t)?;
        let v = self.kit.v(self.n + 1 - t, false);
        let vt = self.kit.v(t, true);
        Ok(&self.rt_from_v * v + &self.rt_from_vt * vt)
    }

    /// `ell_{n,s}` in the original gauge; overflows for large `n`.
    pub fn ell(&self, s: usize) -> Result<CMat> {
        let inv: Vec<C64> = self.dn.iter().map(|z| z.conj().inv()).collect();
        Ok(scale_cols(&self.ell_scaled(s)?, &inv, self.d))
    }

    pub fn r(&self, t: usize) -> Result<CMat> {
        let f: Vec<C64> = self.dn.iter().map(|z| z.conj()).collect();
        Ok(scale_rows(&self.r_scaled(t)?, &f, self.d))
    }

    pub fn ell_tilde(&self, s: usize) -> Result<CMat> {
        let inv: Vec<C64> = self.dn.iter().map(|z| z.inv()).collect();
        Ok(scale_cols(&self.ell_tilde_scaled(s)?, &inv, self.d))
    }

    pub fn r_tilde(&self, t: usize) -> Result<CMat> {
        Ok(scale_rows(&self.r_tilde_scaled(t)?, &self.dn, self.d))
    }

    /// Low-rank correction of block `(s, t)` for the given region.
    pub fn correction(&self, region: Region, s: usize, t: usize) -> Result<CMat> {
        Ok(match region {
            Region::TildeRow => self.ell_tilde_scaled(s)? * self.r_tilde_scaled(t)?,
            Region::TildeColumn => (self.ell_tilde_scaled(t)? * self.r_tilde_scaled(s)?).adjoint(),
            Region::PlainRow => self.ell_scaled(s)? * self.r_scaled(t)?,
            Region::PlainColumn => (self.ell_scaled(t)? * self.r_scaled(s)?).adjoint(),
        })
    }
}

fn check_block(n: usize, s: usize, t: usize) -> Result<()> {
    if s == 0 || t == 0 || s > n || t > n {
        return Err(Error::DomainViolation(format!("block ({s}, {t}) outside 1..{n}")));
    }
    Ok(())
}

/// Block of `T_n(w)^{-1}` for `K = 0` using the given region.
pub fn inverse_block_ar_region(
    tables: &CoefficientTables,
    n: usize,
    s: usize,
    t: usize,
    region: Region,
) -> Result<CMat> {
    check_block(n, s, t)?;
    let m0 = tables.spec().m0;
    if n < m0 + 1 {
        return Err(Error::DomainViolation(format!("n = {n} must be at least m0 + 1")));
    }
    if !region.applies(n, m0, s, t) {
        return Err(Error::RegionUncovered(s, t));
    }
    Ok(match region {
        Region::TildeColumn | Region::TildeRow => {
            first_term_gram(tables, n, s, t, GramVariant::Tilde)
        }
        Region::PlainColumn | Region::PlainRow => {
            first_term_gram(tables, n, s, t, GramVariant::Plain)
        }
    })
}

/// Block `(s, t)` of `T_n(w)^{-1}` for an AR symbol (`K = 0`).
pub fn inverse_block_ar(tables: &CoefficientTables, n: usize, s: usize, t: usize) -> Result<CMat> {
    if tables.spec().k() != 0 {
        return Err(Error::NotApplicable("AR formulas need K = 0".into()));
    }
    let region = Region::pick(n, tables.spec().m0, s, t)?;
    inverse_block_ar_region(tables, n, s, t, region)
}

/// Block `(s, t)` of `T_n(w)^{-1}` for `K >= 1` using the given region.
pub fn inverse_block_arma_region(
    tables: &CoefficientTables,
    sv: &SolveVectors,
    s: usize,
    t: usize,
    region: Region,
) -> Result<CMat> {
    let n = sv.n;
    check_block(n, s, t)?;
    if !region.applies(n, tables.spec().m0, s, t) {
        return Err(Error::RegionUncovered(s, t));
    }
    let gram = match region {
        Region::TildeColumn | Region::TildeRow => first_term_gram(tables, n, s, t, GramVariant::Tilde),
        Region::PlainColumn | Region::PlainRow => first_term_gram(tables, n, s, t, GramVariant::Plain),
    };
    Ok(gram + sv.correction(region, s, t)?)
}

/// Block `(s, t)` of `T_n(w)^{-1}` for `K >= 1`.
pub fn inverse_block_arma(
    tables: &CoefficientTables,
    sv: &SolveVectors,
    s: usize,
    t: usize,
) -> Result<CMat> {
    let region = Region::pick(sv.n, tables.spec().m0, s, t)?;
    inverse_block_arma_region(tables, sv, s, t, region)
}

/// Outcome of a full closed-form assembly.
#[derive(Debug, Clone)]
pub struct ClosedInverse {
    pub matrix: BlockMatrix,
    /// Largest disagreement between overlapping regional formulas.
    pub overlap_defect: f64,
}

/// Assemble the whole inverse, computing every applicable region per block.
pub fn inverse_closed(tables: &CoefficientTables, n: usize) -> Result<ClosedInverse> {
    let spec = tables.spec();
    let (d, m0) = (spec.d, spec.m0);
    if n < m0 + 1 {
        return Err(Error::DomainViolation(format!("n = {n} must be at least m0 + 1")));
    }
    let at = tables.a_tilde_range(n);
    let a = tables.a_range(n);
    // Gram sums by their diagonal recurrences
    let mut gt = vec![CMat::zeros(d, d); (n + 1) * (n + 1)];
    for s in 1..=n {
        for t in 1..=n {
            gt[s * (n + 1) + t] =
                &gt[(s - 1) * (n + 1) + t - 1] + at[s - 1].adjoint() * &at[t - 1];
        }
    }
    let mut gp = vec![CMat::zeros(d, d); (n + 2) * (n + 2)];
    for s in (1..=n).rev() {
        for t in (1..=n).rev() {
            gp[s * (n + 2) + t] =
                &gp[(s + 1) * (n + 2) + t + 1] + a[n - s].adjoint() * &a[n - t];
        }
    }
    let sv = if spec.k() > 0 {
        Some(ClosedFormKit::from_tables(tables)?.solve_vectors(n)?)
    } else {
        None
    };
    let (mut ell, mut r, mut ellt, mut rt) = (vec![], vec![], vec![], vec![]);
    if let Some(sv) = &sv {
        for s in 1..=n {
            ell.push(sv.ell_scaled(s)?);
            r.push(sv.r_scaled(s)?);
            ellt.push(sv.ell_tilde_scaled(s)?);
            rt.push(sv.r_tilde_scaled(s)?);
        }
    }
    let mut out = BlockMatrix::zeros(n, d);
    let mut defect: f64 = 0.0;
    for s in 1..=n {
        for t in 1..=n {
            let mut vals = Vec::new();
            for region in [
                Region::TildeRow,
                Region::PlainRow,
                Region::TildeColumn,
                Region::PlainColumn,
            ] {
                if !region.applies(n, m0, s, t) {
                    continue;
                }
                let mut v = match region {
                    Region::TildeColumn | Region::TildeRow => gt[s * (n + 1) + t].clone(),
                    _ => gp[s * (n + 2) + t].clone(),
                };
                if sv.is_some() {
                    v += match region {
                        Region::TildeRow => &ellt[s - 1] * &rt[t - 1],
                        Region::TildeColumn => (&ellt[t - 1] * &rt[s - 1]).adjoint(),
                        Region::PlainRow => &ell[s - 1] * &r[t - 1],
                        Region::PlainColumn => (&ell[t - 1] * &r[s - 1]).adjoint(),
                    };
                }
                vals.push(v);
            }
            let first = vals.first().ok_or(Error::RegionUncovered(s, t))?.clone();
            for v in &vals[1..] {
                defect = defect.max(linalg::max_abs_diff(&first, v));
            }
            out.set_block(s, t, &first);
        }
    }
    out.hermitian = true;
    Ok(ClosedInverse {
        matrix: out,
        overlap_defect: defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, max_abs_diff};
    use crate::oracle;
    use crate::test_fixtures::*;

    fn s11(m: &CMat) -> C64 {
        m[(0, 0)]
    }

    #[test]
    fn example_theta_lambda_and_vectors() {
        let spec = single_pole_symbol();
        let kit = ClosedFormKit::new(&spec).unwrap();
        assert!((s11(&kit.theta[0][0]) - c(-0.375, 0.0)).norm() < 1e-12);
        assert!((s11(&kit.lambda) - c(4.0 / 3.0, 0.0)).norm() < 1e-14);
        let sv = kit.solve_vectors(2).unwrap();
        let p: f64 = 0.5;
        let pref = 1.0 / (p * p * (1.0 - p.powi(6)));
        let l1 = pref * (1.0 + p * p);
        let l2 = pref * p;
        assert!((s11(&sv.ell(1).unwrap()) - l1).norm() < 1e-10);
        assert!((s11(&sv.ell(2).unwrap()) - l2).norm() < 1e-10);
        let rp = -p * p * p * (1.0 - p * p);
        assert!((s11(&sv.r(1).unwrap()) - rp * p * (1.0 + p * p)).norm() < 1e-10);
        assert!((s11(&sv.r(2).unwrap()) - rp * p * p).norm() < 1e-10);
        assert!((s11(&sv.ell_tilde(1).unwrap()) - l2).norm() < 1e-10);
        assert!((s11(&sv.ell_tilde(2).unwrap()) - l1).norm() < 1e-10);
        assert!((s11(&sv.r_tilde(1).unwrap()) - rp * p * p).norm() < 1e-10);
        assert!(sv.spectral_radius < 1.0);
    }

    #[test]
    fn example_one_theta_formula() {
        // all multiplicities one, m0 = 0: theta = p h_sharp(p) rho^*
        let spec = random_spec(2, 2, &[1, 1], 0, 21);
        let kit = ClosedFormKit::new(&spec).unwrap();
        for mu in 0..2 {
            let p = spec.poles[mu];
            let want = spec.eval_h_sharp(p).unwrap() * spec.rho[mu][0].adjoint() * p;
            assert!(max_abs_diff(&kit.theta[mu][0], &want) < 1e-10);
        }
    }

    #[test]
    fn theta_with_multiplicity_two_matches_finite_differences() {
        let spec = random_spec(1, 1, &[2], 0, 4);
        let kit = ClosedFormKit::new(&spec).unwrap();
        let p = spec.poles[0];
        // g(z) = (z - p)^2 f(z); theta_2 = -g(p), theta_1 = -g'(p)
        let g = |z: C64| -> C64 {
            let f = spec.eval_h_sharp(z).unwrap() * spec.eval_h_dagger_inv(z).unwrap();
            f[(0, 0)] * (z - p) * (z - p)
        };
        let h = 1e-3;
        let pts: Vec<C64> = (0..8)
            .map(|k| g(p + C64::from_polar(h, 2.0 * PI * k as f64 / 8.0)))
            .collect();
        let g0: C64 = pts.iter().sum::<C64>() / 8.0;
        let g1: C64 = pts
            .iter()
            .enumerate()
            .map(|(k, v)| v * C64::from_polar(1.0 / h, -2.0 * PI * k as f64 / 8.0))
            .sum::<C64>()
            / 8.0;
        assert!((kit.theta[0][1][(0, 0)] + g0).norm() < 1e-7);
        assert!((kit.theta[0][0][(0, 0)] + g1).norm() < 1e-7);
    }

    #[test]
    fn lambda_matches_series() {
        let spec = random_spec(1, 2, &[2, 1], 1, 8);
        let kit = ClosedFormKit::new(&spec).unwrap();
        let mut acc = SMat::zeros(kit.m, kit.m);
        for l in 0..2000 {
            let p = SMat::from_vec(kit.m, 1, kit.pvec_scalar(l));
            acc += &p * p.adjoint();
        }
        assert!(max_abs_diff(&acc, &kit.lambda_s) < 1e-12);
    }

    #[test]
    fn pi_and_pvec_structure() {
        let spec = random_spec(2, 2, &[2, 2], 0, 3);
        let kit = ClosedFormKit::new(&spec).unwrap();
        let p0 = kit.pvec_scalar(0);
        assert_eq!(p0, vec![ONE, C64::new(0.0, 0.0), ONE, C64::new(0.0, 0.0)]);
        let pi = kit.pi_scalar(5);
        assert_eq!(pi[(1, 0)], C64::new(0.0, 0.0));
        assert!((pi[(0, 0)] - spec.poles[0].powu(5)).norm() < 1e-15);
        assert_eq!(pi[(0, 2)], C64::new(0.0, 0.0));
    }

    #[test]
    fn v_and_w_match_definitions() {
        let spec = random_spec(2, 2, &[2, 1], 2, 6);
        let t = CoefficientTables::new(&spec).unwrap();
        let kit = ClosedFormKit::from_tables(&t).unwrap();
        let lmax = 400;
        let a = t.a_range(lmax + 10);
        let at = t.a_tilde_range(lmax + 10);
        for n in 1..6usize {
            let mut v = CMat::zeros(kit.d * kit.m, 2);
            let mut vt = v.clone();
            for l in 0..lmax {
                v += kit.pvec(l as i64) * &a[n + l];
                vt += kit.pvec(l as i64).map(|z| z.conj()) * &at[n + l];
            }
            assert!(max_abs_diff(&v, &kit.v(n, false)) < 1e-11);
            assert!(max_abs_diff(&vt, &kit.v(n, true)) < 1e-11);
        }
        for n in -3i64..5 {
            let mut w = CMat::zeros(kit.d * kit.m, 2);
            let mut wt = w.clone();
            for l in 0..lmax {
                w += kit.pvec(l as i64 - n) * &a[l];
                wt += kit.pvec(l as i64 - n).map(|z| z.conj()) * &at[l];
            }
            let scale = 1.0 + linalg::fro(&w);
            assert!(max_abs_diff(&w, &kit.w(n, false)) < 1e-10 * scale);
            assert!(max_abs_diff(&wt, &kit.w(n, true)) < 1e-10 * scale);
        }
    }

    #[test]
    fn closed_beta_domain() {
        let spec = random_spec(1, 1, &[1], 2, 1);
        let kit = ClosedFormKit::new(&spec).unwrap();
        assert!(matches!(kit.closed_beta(0, 0, 1), Err(Error::DomainViolation(_))));
        assert!(kit.closed_beta(0, 1, 1).is_ok());
        let id = RationalSymbolSpec::identity(2);
        assert!(matches!(ClosedFormKit::new(&id), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn closed_beta_matches_tables() {
        let spec = single_pole_symbol();
        let t = CoefficientTables::new(&spec).unwrap();
        let kit = ClosedFormKit::from_tables(&t).unwrap();
        for k in 1..=12i64 {
            let b = kit.closed_beta(k - 1, 0, 0).unwrap();
            assert!(max_abs_diff(&b, &t.beta(k).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn g_decays_with_n() {
        let kit = ClosedFormKit::new(&single_pole_symbol()).unwrap();
        let (g, _) = kit.build_g(60);
        assert!(linalg::op_norm(&g) < 1e-10);
        let (g2, gt2) = kit.build_g(2);
        assert!(spectral_radius(&(&g2 * &gt2)) < 1.0);
    }

    #[test]
    fn example_inverse_and_rank_corrections() {
        let t = CoefficientTables::new(&single_pole_symbol()).unwrap();
        let inv = inverse_closed(&t, 2).unwrap();
        let want = [[1.25, 0.5], [0.5, 1.25]];
        for s in 0..2 {
            for u in 0..2 {
                let v = inv.matrix.data[(s, u)];
                assert!((v - c(want[s][u] / 1.3125, 0.0)).norm() < 1e-10);
            }
        }
        assert!(inv.overlap_defect < 1e-11);
    }

    #[test]
    fn ar_inverse_matches_dense() {
        // h^{-1}(z) = 1 - 0.9 z
        let spec = RationalSymbolSpec::new(
            1,
            CMat::from_element(1, 1, c(-1.0, 0.0)),
            vec![CMat::from_element(1, 1, c(0.9, 0.0))],
            vec![],
            vec![],
            None,
        )
        .unwrap();
        let t = CoefficientTables::new(&spec).unwrap();
        let dense = oracle::dense_inverse(&t, 8).unwrap();
        for s in 1..=8 {
            for u in 1..=8 {
                let b = inverse_block_ar(&t, 8, s, u).unwrap();
                assert!(max_abs_diff(&b, &dense.block(s, u)) < 1e-10);
            }
        }
    }

    #[test]
    fn arma_inverse_matches_dense_with_overlaps() {
        let spec = random_spec(2, 2, &[1, 2], 1, 12);
        let t = CoefficientTables::new(&spec).unwrap();
        let n = 9;
        let dense = oracle::dense_inverse(&t, n).unwrap();
        let inv = inverse_closed(&t, n).unwrap();
        let scale = linalg::op_norm(&dense.data);
        assert!(max_abs_diff(&inv.matrix.data, &dense.data) < 1e-8 * scale);
        assert!(inv.overlap_defect < 1e-11 * scale);
        let kit = ClosedFormKit::from_tables(&t).unwrap();
        let sv = kit.solve_vectors(n).unwrap();
        for s in 1..=n {
            for u in 1..=n {
                let b = inverse_block_arma(&t, &sv, s, u).unwrap();
                let bt = inverse_block_arma(&t, &sv, u, s).unwrap();
                assert!(max_abs_diff(&b, &bt.adjoint()) < 1e-11 * scale);
            }
        }
    }

    #[test]
    fn uncovered_region_is_reported() {
        // n = m0 + 1 = 3 leaves (s, t) = (2, 2) outside every region
        let spec = random_spec(1, 1, &[1], 2, 2);
        let t = CoefficientTables::new(&spec).unwrap();
        let kit = ClosedFormKit::from_tables(&t).unwrap();
        let sv = kit.solve_vectors(3).unwrap();
        assert_eq!(
            inverse_block_arma(&t, &sv, 2, 2).unwrap_err(),
            Error::RegionUncovered(2, 2)
        );
    }

    #[test]
    fn scaled_gauge_is_finite_for_large_n() {
        let spec = random_spec(2, 2, &[2, 1], 1, 30);
        let kit = ClosedFormKit::new(&spec).unwrap();
        let sv = kit.solve_vectors(4000).unwrap();
        for s in [1, 2, 1999, 3998, 4000] {
            assert!(sv.ell_scaled(s).unwrap().iter().all(|z| z.is_finite()));
            assert!(sv.ell_tilde_scaled(s).unwrap().iter().all(|z| z.is_finite()));
            assert!(sv.r_scaled(s).unwrap().iter().all(|z| z.is_finite()));
            assert!(sv.r_tilde_scaled(s).unwrap().iter().all(|z| z.is_finite()));
        }
    }
}
