//! General explicit inverse of `T_n(w)` through the alternating `b` / `b~`
//! sequences, with certified truncation under `F(n+1) < 1`.

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::SymbolTables;
use crate::error::{Error, Result};
use crate::linalg::{self, BlockMatrix, CMat};

/// Relative accuracy of the inner infinite sums of the recursion.
pub const RECURSION_EPS: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramVariant {
    /// `sum_{l=1}^{s^t} a~*_{s-l} a~_{t-l}`
    Tilde,
    /// `sum_{l=s v t}^{n} a*_{l-s} a_{l-t}`
    Plain,
}

/// Leading Gram term of either inverse formula.
pub fn first_term_gram<T: SymbolTables + ?Sized>(
    tables: &T,
    n: usize,
    s: usize,
    t: usize,
    variant: GramVariant,
) -> CMat {
    let d = tables.dim();
    let mut out = CMat::zeros(d, d);
    match variant {
        GramVariant::Tilde => {
            for l in 1..=s.min(t) {
                out += tables.a_tilde(s - l).adjoint() * tables.a_tilde(t - l);
            }
        }
        GramVariant::Plain => {
            for l in s.max(t)..=n {
                out += tables.a(l - s).adjoint() * tables.a(l - t);
            }
        }
    }
    out
}

/// `beta_1 .. beta_kmax` together with their adjoints.
#[derive(Debug, Clone)]
pub struct BetaTable {
    beta: Vec<CMat>,
    adj: Vec<CMat>,
}

impl BetaTable {
    pub fn new<T: SymbolTables + ?Sized>(tables: &T, kmax: usize) -> Result<Self> {
        let beta: Vec<CMat> = (1..=kmax)
            .into_par_iter()
            .map(|k| tables.beta(k as i64))
            .collect::<Result<_>>()?;
        let adj = beta.iter().map(|b| b.adjoint()).collect();
        Ok(BetaTable { beta, adj })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn get(&self, k: usize, adjoint: bool) -> &CMat {
        if adjoint {
            &self.adj[k - 1]
        } else {
            &self.beta[k - 1]
        }
    }
}

/// One level of the `b` (plain) or `b~` (tilde) recursion, truncated to
/// `coeffs.len()` terms.
#[derive(Debug, Clone)]
pub struct BRecursionState {
    pub n: usize,
    pub u: usize,
    pub tilde: bool,
    /// Level `k >= 1`; odd and even levels alternate the multiplier.
    pub depth: usize,
    pub coeffs: Vec<CMat>,
    /// `sum_l ||b^k_l||` over the stored terms.
    pub l1: f64,
}

impl BRecursionState {
    /// Level one: `beta_{u+l}` (plain) or `beta*_{n+1-u+l}` (tilde).
    pub fn first(n: usize, u: usize, tilde: bool, len: usize, beta: &BetaTable) -> Result<Self> {
        if u == 0 || u > n {
            return Err(Error::DomainViolation(format!("u = {u} outside 1..{n}")));
        }
        if beta.len() < n + 2 * len {
            return Err(Error::DomainViolation("beta table too short".into()));
        }
        let coeffs: Vec<CMat> = (0..len)
            .map(|l| {
                if tilde {
                    beta.get(n + 1 - u + l, true).clone()
                } else {
                    beta.get(u + l, false).clone()
                }
            })
            .collect();
        let l1 = coeffs.iter().map(linalg::op_norm).sum();
        Ok(BRecursionState {
            n,
            u,
            tilde,
            depth: 1,
            coeffs,
            l1,
        })
    }

    pub fn is_odd(&self) -> bool {
        self.depth % 2 == 1
    }
}

/// Advance one level: `b^{k+1}_l = sum_m b^k_m beta^{(*)}_{n+1+m+l}`.
pub fn b_recursion_step(state: &BRecursionState, beta: &BetaTable) -> BRecursionState {
    let len = state.coeffs.len();
    let n = state.n;
    // tilde: odd -> beta, even -> beta*; plain is the reverse
    let adjoint = state.tilde != state.is_odd();
    let d = state.coeffs.first().map(|c| c.nrows()).unwrap_or(0);
    let mut out = vec![CMat::zeros(d, d); len];
    for (m, bm) in state.coeffs.iter().enumerate() {
        if bm.iter().all(|z| z.norm() == 0.0) {
            continue;
        }
        for (l, o) in out.iter_mut().enumerate() {
            *o += bm * beta.get(n + 1 + m + l, adjoint);
        }
    }
    let l1 = out.iter().map(linalg::op_norm).sum();
    BRecursionState {
        n,
        u: state.u,
        tilde: state.tilde,
        depth: state.depth + 1,
        coeffs: out,
        l1,
    }
}

/// Levels `1..=levels` of the `b` or `b~` sequence, each truncated to `len` terms.
pub fn b_sequences<T: SymbolTables + ?Sized>(
    tables: &T,
    n: usize,
    u: usize,
    tilde: bool,
    levels: usize,
    len: usize,
) -> Result<Vec<Vec<CMat>>> {
    let beta = BetaTable::new(tables, n + 2 * len)?;
    let mut st = BRecursionState::first(n, u, tilde, len, &beta)?;
    let mut out = vec![st.coeffs.clone()];
    for _ in 1..levels {
        st = b_recursion_step(&st, &beta);
        out.push(st.coeffs.clone());
    }
    Ok(out)
}

/// Which of the two equivalent formulas assembles the blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SeriesVariant {
    /// Tilde Gram sum corrected by the `b~` sequences.
    Tilde,
    /// Plain Gram sum corrected by the `b` sequences.
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesOptions {
    pub tol: f64,
    /// Maximum recursion level.
    pub depth_cap: usize,
    /// Run without error control when `F(n+1) >= 1` or the tables carry no
    /// tail bounds.
    pub allow_uncertified: bool,
    /// Sequence length used in uncertified mode.
    pub uncertified_len: usize,
}

impl Default for SeriesOptions {
    fn default() -> Self {
        SeriesOptions {
            tol: 1e-12,
            depth_cap: 64,
            allow_uncertified: false,
            uncertified_len: 256,
        }
    }
}

/// Truncation parameters chosen for a given `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truncation {
    /// Number of recursion levels summed.
    pub levels: usize,
    /// Terms kept in each `b` sequence.
    pub len: usize,
    /// `F(n+1)`.
    pub contraction: f64,
    pub certified: bool,
    /// Bound on the neglected remainder of each block (infinite if uncertified).
    pub remainder_bound: f64,
}

fn choose_truncation<T: SymbolTables + ?Sized>(
    tables: &T,
    n: usize,
    variant: SeriesVariant,
    opts: &SeriesOptions,
) -> Result<Truncation> {
    let q = tables.decay_bound_f(n + 1);
    if !tables.certified() || q >= 1.0 {
        if !opts.allow_uncertified {
            return Err(if q >= 1.0 {
                Error::DivergentRecursion(q)
            } else {
                Error::NotApplicable("tables carry no tail bounds; enable uncertified mode".into())
            });
        }
        return Ok(Truncation {
            levels: opts.depth_cap.max(1),
            len: opts.uncertified_len.max(1),
            contraction: q,
            certified: false,
            remainder_bound: f64::INFINITY,
        });
    }
    let sup = tables.coeff_sup();
    let sum = match variant {
        SeriesVariant::Tilde => tables.a_tilde_l1(),
        SeriesVariant::Plain => tables.a_l1(),
    };
    let f1 = tables.decay_bound_f(1);
    let scale = sup * sum / (1.0 - q);
    let mut pairs = 1;
    let depth_err = |pairs: usize| f1 * q.powi(2 * pairs as i32) * scale;
    while depth_err(pairs) > opts.tol / 2.0 {
        pairs += 1;
        if 2 * pairs > opts.depth_cap {
            return Err(Error::ToleranceUnreachable {
                tol: opts.tol,
                cap: opts.depth_cap,
            });
        }
    }
    let len_err = |len: usize| {
        let f = tables.decay_bound_f(len + 1);
        (4.0 * f * scale / (1.0 - q), f)
    };
    let target_rel = RECURSION_EPS * f1;
    let ok = |len: usize| {
        let (e, f) = len_err(len);
        e <= opts.tol / 2.0 && f <= target_rel.max(f64::MIN_POSITIVE)
    };
    let mut hi = 1usize;
    while !ok(hi) {
        hi *= 2;
        if hi > 1 << 16 {
            return Err(Error::ToleranceUnreachable {
                tol: opts.tol,
                cap: opts.depth_cap,
            });
        }
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if f1 == 0.0 {
        hi = 1;
    }
    Ok(Truncation {
        levels: 2 * pairs,
        len: hi,
        contraction: q,
        certified: true,
        remainder_bound: depth_err(pairs) + len_err(hi).0,
    })
}

/// Precomputed series representation of `T_n(w)^{-1}`.
#[derive(Debug, Clone)]
pub struct SeriesInverse {
    pub n: usize,
    pub d: usize,
    pub variant: SeriesVariant,
    pub truncation: Truncation,
    a: Vec<CMat>,
    at: Vec<CMat>,
    /// `corr[u-1][s-1]`: the braced sum of the formula, summed over levels.
    corr: Vec<Vec<CMat>>,
}

impl SeriesInverse {
    pub fn new<T: SymbolTables + ?Sized>(
        tables: &T,
        n: usize,
        variant: SeriesVariant,
        opts: &SeriesOptions,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::DomainViolation("n must be at least 1".into()));
        }
        if !(opts.tol > 0.0) {
            return Err(Error::DomainViolation("tolerance must be positive".into()));
        }
        let d = tables.dim();
        let tr = choose_truncation(tables, n, variant, opts)?;
        let len = tr.len;
        let a: Vec<CMat> = (0..=n + len).map(|k| tables.a(k)).collect();
        let at: Vec<CMat> = (0..=n + len).map(|k| tables.a_tilde(k)).collect();
        let beta = BetaTable::new(tables, n + 2 * len)?;
        let tilde = variant == SeriesVariant::Tilde;
        let corr: Vec<Vec<CMat>> = (1..=n)
            .into_par_iter()
            .map(|u| -> Result<Vec<CMat>> {
                let mut st = BRecursionState::first(n, u, tilde, len, &beta)?;
                let mut odd = vec![CMat::zeros(d, d); len];
                let mut even = vec![CMat::zeros(d, d); len];
                for level in 1..=tr.levels {
                    if level > 1 {
                        st = b_recursion_step(&st, &beta);
                    }
                    let acc = if st.is_odd() { &mut odd } else { &mut even };
                    for (x, b) in acc.iter_mut().zip(&st.coeffs) {
                        *x += b;
                    }
                    if st.l1 == 0.0 {
                        break;
                    }
                }
                // tilde: odd pairs with a_{n+1-s+l}, even with a~_{s+l}
                let (first, second) = if tilde { (&a, &at) } else { (&at, &a) };
                Ok((1..=n)
                    .map(|s| {
                        let mut x = CMat::zeros(d, d);
                        for l in 0..len {
                            if tilde {
                                x += &odd[l] * &first[n + 1 - s + l] + &even[l] * &second[s + l];
                            } else {
                                x += &odd[l] * &first[s + l] + &even[l] * &second[n + 1 - s + l];
                            }
                        }
                        x
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(SeriesInverse {
            n,
            d,
            variant,
            truncation: tr,
            a,
            at,
            corr,
        })
    }

    fn gram(&self, s: usize, t: usize) -> CMat {
        let mut out = CMat::zeros(self.d, self.d);
        match self.variant {
            SeriesVariant::Tilde => {
                for l in 1..=s.min(t) {
                    out += self.at[s - l].adjoint() * &self.at[t - l];
                }
            }
            SeriesVariant::Plain => {
                for l in s.max(t)..=self.n {
                    out += self.a[l - s].adjoint() * &self.a[l - t];
                }
            }
        }
        out
    }

    /// Block `(s, t)`, 1-based.
    pub fn block(&self, s: usize, t: usize) -> Result<CMat> {
        let n = self.n;
        if s == 0 || t == 0 || s > n || t > n {
            return Err(Error::DomainViolation(format!("block ({s}, {t}) outside 1..{n}")));
        }
        let mut out = self.gram(s, t);
        match self.variant {
            SeriesVariant::Tilde => {
                for u in 1..=t {
                    out += self.corr[u - 1][s - 1].adjoint() * &self.at[t - u];
                }
            }
            SeriesVariant::Plain => {
                for u in t..=n {
                    out += self.corr[u - 1][s - 1].adjoint() * &self.a[u - t];
                }
            }
        }
        Ok(out)
    }

    pub fn assemble(&self) -> BlockMatrix {
        let rows: Vec<Vec<CMat>> = (1..=self.n)
            .into_par_iter()
            .map(|s| (1..=self.n).map(|t| self.block(s, t).expect("in range")).collect())
            .collect();
        let mut m = BlockMatrix::zeros(self.n, self.d);
        for (s, row) in rows.iter().enumerate() {
            for (t, b) in row.iter().enumerate() {
                m.set_block(s + 1, t + 1, b);
            }
        }
        m.hermitian = true;
        m
    }
}

/// Single block of `T_n(w)^{-1}` by the series formula.
pub fn inverse_block_series<T: SymbolTables + ?Sized>(
    tables: &T,
    n: usize,
    s: usize,
    t: usize,
    variant: SeriesVariant,
    opts: &SeriesOptions,
) -> Result<CMat> {
    SeriesInverse::new(tables, n, variant, opts)?.block(s, t)
}

/// Full inverse by the series formula.
pub fn inverse_series<T: SymbolTables + ?Sized>(
    tables: &T,
    n: usize,
    variant: SeriesVariant,
    opts: &SeriesOptions,
) -> Result<(BlockMatrix, Truncation)> {
    let si = SeriesInverse::new(tables, n, variant, opts)?;
    Ok((si.assemble(), si.truncation))
}
