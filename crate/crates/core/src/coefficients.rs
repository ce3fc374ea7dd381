//! Power-series coefficients of the symbol: `a_k`, `a~_k`, `c_k`, `c~_k`, the
//! autocovariances `gamma(k)`, the phase coefficients `beta_k` and the decay
//! bound `F(n)`.
//!
//! `-h(z)^{-1} = sum a_k z^k`, `h(z) = sum c_k z^k`, and the tilde sequences are
//! the same expansions for `h~(z) = h_sharp(conj z)^*`.

use std::f64::consts::PI;
use std::sync::{OnceLock, RwLock};

use crate::closed_form;
use crate::error::{Error, Result};
use crate::linalg::{self, binom, cpow, CMat, C64};
use crate::symbol::RationalSymbolSpec;

/// Relative accuracy targeted by every truncated series.
pub const SERIES_EPS: f64 = 1e-16;

/// Cauchy bound `||c_k|| <= bound * radius^{-k}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchyEnvelope {
    pub radius: f64,
    pub bound: f64,
}

impl CauchyEnvelope {
    pub fn at(&self, k: usize) -> f64 {
        self.bound * self.radius.powi(-(k as i32))
    }

    /// Upper bound for `sum_{j >= k} ||c_j||`.
    pub fn tail(&self, k: usize) -> f64 {
        self.at(k) / (1.0 - 1.0 / self.radius)
    }

    /// Smallest J with `at(J) <= eps`.
    pub fn terms_for(&self, eps: f64) -> usize {
        if self.bound <= eps {
            return 0;
        }
        ((self.bound / eps).ln() / self.radius.ln()).ceil().max(0.0) as usize
    }
}

/// Source of the sequences consumed by the general series inverse.
pub trait SymbolTables: Sync {
    fn dim(&self) -> usize;
    fn a(&self, k: usize) -> CMat;
    fn a_tilde(&self, k: usize) -> CMat;
    /// `beta_k` for `k >= 1`.
    fn beta(&self, k: i64) -> Result<CMat>;
    /// Upper bound for `F(n)`.
    fn decay_bound_f(&self, n: usize) -> f64;
    /// Upper bound for `sup_k max(||a_k||, ||a~_k||)`.
    fn coeff_sup(&self) -> f64;
    /// Upper bound for `sum_k ||a~_k||`.
    fn a_tilde_l1(&self) -> f64;
    /// Upper bound for `sum_k ||a_k||`.
    fn a_l1(&self) -> f64;
    /// False when the tables carry no certified tail information.
    fn certified(&self) -> bool {
        true
    }
}

/// Lazily extended coefficient tables for a rational symbol. Extensions are
/// guarded by locks, so a shared instance is safe to read from many threads.
pub struct CoefficientTables {
    spec: RationalSymbolSpec,
    a0_inv: CMat,
    at0_inv: CMat,
    a: RwLock<Vec<CMat>>,
    at: RwLock<Vec<CMat>>,
    c: RwLock<Vec<CMat>>,
    ct: RwLock<Vec<CMat>>,
    c_env: CauchyEnvelope,
    ct_env: CauchyEnvelope,
    quad_grid: usize,
    phase_samples: OnceLock<Result<Vec<CMat>>>,
    theta: OnceLock<Result<Vec<Vec<CMat>>>>,
    sup: OnceLock<f64>,
    ct_l1: OnceLock<f64>,
}

impl std::fmt::Debug for CoefficientTables {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientTables")
            .field("d", &self.spec.d)
            .field("c_env", &self.c_env)
            .field("ct_env", &self.ct_env)
            .finish()
    }
}

impl CoefficientTables {
    pub fn new(spec: &RationalSymbolSpec) -> Result<Self> {
        let a0 = a_closed(spec, 0, false);
        let at0 = a_closed(spec, 0, true);
        let a0_inv = linalg::inverse(&a0).map_err(|_| Error::SingularLeadingCoefficient)?;
        let at0_inv = linalg::inverse(&at0).map_err(|_| Error::SingularLeadingCoefficient)?;
        let c_env = cauchy_envelope(spec, false)?;
        let ct_env = cauchy_envelope(spec, true)?;
        Ok(CoefficientTables {
            spec: spec.clone(),
            a0_inv,
            at0_inv,
            a: RwLock::new(Vec::new()),
            at: RwLock::new(Vec::new()),
            c: RwLock::new(Vec::new()),
            ct: RwLock::new(Vec::new()),
            c_env,
            ct_env,
            quad_grid: 8192,
            phase_samples: OnceLock::new(),
            theta: OnceLock::new(),
            sup: OnceLock::new(),
            ct_l1: OnceLock::new(),
        })
    }

    /// Override the grid used by the quadrature paths (default 8192).
    pub fn with_quadrature_grid(mut self, grid: usize) -> Self {
        self.quad_grid = grid.max(16);
        self.phase_samples = OnceLock::new();
        self
    }

    pub fn spec(&self) -> &RationalSymbolSpec {
        &self.spec
    }

    pub fn decay_rate(&self) -> f64 {
        self.spec.decay_rate()
    }

    pub fn c_envelope(&self) -> CauchyEnvelope {
        self.c_env
    }

    pub fn c_tilde_envelope(&self) -> CauchyEnvelope {
        self.ct_env
    }

    fn extend_a(&self, cache: &RwLock<Vec<CMat>>, n: usize, tilde: bool) {
        if cache.read().expect("lock").len() > n {
            return;
        }
        let mut w = cache.write().expect("lock");
        while w.len() <= n {
            let k = w.len();
            w.push(a_closed(&self.spec, k, tilde));
        }
    }

    pub fn a(&self, n: usize) -> CMat {
        self.extend_a(&self.a, n, false);
        self.a.read().expect("lock")[n].clone()
    }

    pub fn a_tilde(&self, n: usize) -> CMat {
        self.extend_a(&self.at, n, true);
        self.at.read().expect("lock")[n].clone()
    }

    /// `a_0 .. a_n` as a vector.
    pub fn a_range(&self, n: usize) -> Vec<CMat> {
        self.extend_a(&self.a, n, false);
        self.a.read().expect("lock")[..=n].to_vec()
    }

    pub fn a_tilde_range(&self, n: usize) -> Vec<CMat> {
        self.extend_a(&self.at, n, true);
        self.at.read().expect("lock")[..=n].to_vec()
    }

    fn extend_c(&self, n: usize, tilde: bool) {
        let (cache, acache, inv) = if tilde {
            (&self.ct, &self.at, &self.at0_inv)
        } else {
            (&self.c, &self.a, &self.a0_inv)
        };
        if cache.read().expect("lock").len() > n {
            return;
        }
        self.extend_a(acache, n, tilde);
        let a = acache.read().expect("lock");
        let mut w = cache.write().expect("lock");
        // a-coefficients vanish beyond m0 when there are no poles
        let band = if self.spec.k() == 0 { self.spec.m0 } else { usize::MAX };
        while w.len() <= n {
            let k = w.len();
            if k == 0 {
                w.push(-inv.clone());
                continue;
            }
            let d = self.spec.d;
            let mut acc = CMat::zeros(d, d);
            let lo = k.saturating_sub(band);
            for j in lo..k {
                acc += &w[j] * &a[k - j];
            }
            w.push(-(acc * inv));
        }
    }

    pub fn c(&self, n: usize) -> CMat {
        self.extend_c(n, false);
        self.c.read().expect("lock")[n].clone()
    }

    pub fn c_tilde(&self, n: usize) -> CMat {
        self.extend_c(n, true);
        self.ct.read().expect("lock")[n].clone()
    }

    pub fn c_range(&self, n: usize) -> Vec<CMat> {
        self.extend_c(n, false);
        self.c.read().expect("lock")[..=n].to_vec()
    }

    pub fn c_tilde_range(&self, n: usize) -> Vec<CMat> {
        self.extend_c(n, true);
        self.ct.read().expect("lock")[..=n].to_vec()
    }

    /// Number of terms kept in `gamma(k) = sum_j c_{k+j} c_j^*`.
    fn gamma_terms(&self) -> usize {
        let e = self.c_env;
        let scale = linalg::op_norm(&self.c(0)).powi(2).max(f64::MIN_POSITIVE);
        // tail <= bound^2 R^{-2(J+1)} / (1 - R^{-2})
        let sq = CauchyEnvelope {
            radius: e.radius * e.radius,
            bound: e.bound * e.bound / (1.0 - e.radius.powi(-2)),
        };
        sq.terms_for(SERIES_EPS * scale) + 1
    }

    /// Autocovariance `gamma(k)`; negative lags are exact adjoints.
    pub fn gamma(&self, k: i64) -> CMat {
        let kk = k.unsigned_abs() as usize;
        let j = self.gamma_terms();
        self.extend_c(kk + j, false);
        let c = self.c.read().expect("lock");
        let d = self.spec.d;
        let mut g = CMat::zeros(d, d);
        for i in 0..=j {
            g += &c[kk + i] * c[i].adjoint();
        }
        if k < 0 {
            g.adjoint()
        } else {
            g
        }
    }

    /// `gamma(0) .. gamma(kmax)`.
    pub fn gamma_range(&self, kmax: usize) -> Vec<CMat> {
        let j = self.gamma_terms();
        self.extend_c(kmax + j, false);
        let c = self.c.read().expect("lock");
        let d = self.spec.d;
        (0..=kmax)
            .map(|k| {
                let mut g = CMat::zeros(d, d);
                for i in 0..=j {
                    g += &c[k + i] * c[i].adjoint();
                }
                g
            })
            .collect()
    }

    /// The same autocovariance through `gamma(n) = sum_k c~_k c~_{n+k}^*`.
    pub fn gamma_from_tilde(&self, k: i64) -> CMat {
        let e = self.ct_env;
        let sq = CauchyEnvelope {
            radius: e.radius * e.radius,
            bound: e.bound * e.bound / (1.0 - e.radius.powi(-2)),
        };
        let scale = linalg::op_norm(&self.c_tilde(0)).powi(2).max(f64::MIN_POSITIVE);
        let j = sq.terms_for(SERIES_EPS * scale) + 1;
        let kk = k.unsigned_abs() as usize;
        let ct = self.c_tilde_range(kk + j);
        let d = self.spec.d;
        let mut g = CMat::zeros(d, d);
        for i in 0..=j {
            g += &ct[i] * ct[kk + i].adjoint();
        }
        if k < 0 {
            g.adjoint()
        } else {
            g
        }
    }

    /// Upper bound for `sup_k ||a_k||` over both sequences.
    pub fn a_sup(&self) -> f64 {
        *self.sup.get_or_init(|| self.compute_a_sup())
    }

    fn compute_a_sup(&self) -> f64 {
        let s = &self.spec;
        let r = s.decay_rate();
        let mm = s.max_mult().max(1) as f64;
        let n = s.m0 + 1 + if r > 0.0 { (mm * r / (1.0 - r)).ceil() as usize } else { 0 } + 8;
        let mut best: f64 = 0.0;
        for k in 0..n {
            best = best
                .max(linalg::op_norm(&self.a(k)))
                .max(linalg::op_norm(&self.a_tilde(k)));
        }
        best.max(a_envelope(s, n, false)).max(a_envelope(s, n, true))
    }

    /// Upper bound for `sum_{l >= n} ||a_l||` (or the tilde sequence).
    pub fn a_tail_norm(&self, n: usize, tilde: bool) -> f64 {
        let s = &self.spec;
        let stop = n.max(s.m0 + 1) + 48;
        let mut acc = 0.0;
        for l in n..stop {
            let m = if tilde { self.a_tilde(l) } else { self.a(l) };
            acc += linalg::op_norm(&m);
        }
        acc + a_envelope_tail(s, stop, tilde)
    }

    /// Upper bound for `sum_j ||c~_j||`.
    pub fn c_tilde_l1(&self) -> f64 {
        *self.ct_l1.get_or_init(|| self.compute_c_tilde_l1())
    }

    fn compute_c_tilde_l1(&self) -> f64 {
        let e = self.ct_env;
        let j = e.terms_for(SERIES_EPS) + 1;
        let ct = self.c_tilde_range(j);
        ct.iter().map(linalg::op_norm).sum::<f64>() + e.tail(j + 1)
    }

    /// Certified upper bound for `F(n) = (sum ||c~_j||) sum_{l >= n} ||a_l||`.
    pub fn decay_bound_f(&self, n: usize) -> f64 {
        self.c_tilde_l1() * self.a_tail_norm(n, false)
    }

    /// `beta_k` by the convolution `sum_j a_{j+k} c~_j`, valid for `k >= 0`.
    pub fn beta_series(&self, k: usize) -> CMat {
        let e = self.ct_env;
        let sup = self.a_sup().max(f64::MIN_POSITIVE);
        let scale = sup * linalg::op_norm(&self.c_tilde(0));
        let mut j = 0;
        while sup * e.tail(j + 1) > SERIES_EPS * scale.max(f64::MIN_POSITIVE) && j < 100_000 {
            j += 1;
        }
        let ct = self.c_tilde_range(j);
        let a = self.a_range(j + k);
        let d = self.spec.d;
        let mut out = CMat::zeros(d, d);
        for i in 0..=j {
            out += &a[i + k] * &ct[i];
        }
        out
    }

    fn phase_samples(&self) -> Result<&Vec<CMat>> {
        self.phase_samples
            .get_or_init(|| {
                let n = self.quad_grid;
                (0..n)
                    .map(|j| {
                        let z = C64::from_polar(1.0, 2.0 * PI * j as f64 / n as f64);
                        let hi = self.spec.eval_h_inv(z)?;
                        let hs = self.spec.eval_h_sharp(z)?;
                        Ok(hi * hs.adjoint())
                    })
                    .collect()
            })
            .as_ref()
            .map_err(|e| e.clone())
    }

    /// `beta_k` by trapezoid quadrature of the phase function, any integer k.
    pub fn beta_quadrature(&self, k: i64) -> Result<CMat> {
        let samples = self.phase_samples()?;
        let n = samples.len();
        let d = self.spec.d;
        let mut out = CMat::zeros(d, d);
        for (j, s) in samples.iter().enumerate() {
            let ph = C64::from_polar(1.0, -2.0 * PI * ((k * j as i64).rem_euclid(n as i64)) as f64 / n as f64);
            out += s * ph;
        }
        Ok(out * C64::new(-1.0 / n as f64, 0.0))
    }

    /// Laurent data of `h_sharp h^dagger^{-1}` at each pole; computed once.
    pub fn theta(&self) -> Result<&Vec<Vec<CMat>>> {
        self.theta
            .get_or_init(|| closed_form::compute_theta(&self.spec, closed_form::ThetaOptions::default()))
            .as_ref()
            .map_err(|e| e.clone())
    }

    /// `beta_k` from the pole data, valid for `k >= m0 + 1`.
    pub fn beta_closed(&self, k: i64) -> Result<CMat> {
        let s = &self.spec;
        if k < s.m0 as i64 + 1 {
            return Err(Error::DomainViolation(format!(
                "closed-form beta needs k >= m0 + 1 = {}, got {k}",
                s.m0 + 1
            )));
        }
        let d = s.d;
        if s.k() == 0 {
            return Ok(CMat::zeros(d, d));
        }
        let theta = self.theta()?;
        let mut adj = CMat::zeros(d, d);
        for (mu, p) in s.poles.iter().enumerate() {
            for (i, th) in theta[mu].iter().enumerate() {
                let i1 = i as i64 + 1;
                let coef = cpow(*p, k - i1) * binom(k - 1, i1 - 1);
                adj += th * coef;
            }
        }
        Ok(adj.adjoint())
    }

    /// `beta_k`: closed form for `k > m0`, series for `0 <= k <= m0`,
    /// quadrature for negative `k`.
    pub fn beta(&self, k: i64) -> Result<CMat> {
        if k > self.spec.m0 as i64 {
            self.beta_closed(k)
        } else if k >= 0 {
            Ok(self.beta_series(k as usize))
        } else {
            self.beta_quadrature(k)
        }
    }
}

impl SymbolTables for CoefficientTables {
    fn dim(&self) -> usize {
        self.spec.d
    }
    fn a(&self, k: usize) -> CMat {
        CoefficientTables::a(self, k)
    }
    fn a_tilde(&self, k: usize) -> CMat {
        CoefficientTables::a_tilde(self, k)
    }
    fn beta(&self, k: i64) -> Result<CMat> {
        CoefficientTables::beta(self, k)
    }
    fn decay_bound_f(&self, n: usize) -> f64 {
        CoefficientTables::decay_bound_f(self, n)
    }
    fn coeff_sup(&self) -> f64 {
        self.a_sup()
    }
    fn a_tilde_l1(&self) -> f64 {
        self.a_tail_norm(0, true)
    }
    fn a_l1(&self) -> f64 {
        self.a_tail_norm(0, false)
    }
}

/// User-supplied finite tables for symbols outside the rational family.
/// Entries past the supplied lengths are taken as zero; `f_bound[n]` is used
/// as `F(n)` and the last entry is repeated.
#[derive(Debug, Clone)]
pub struct RawTables {
    pub d: usize,
    pub a: Vec<CMat>,
    pub a_tilde: Vec<CMat>,
    /// beta[k-1] holds beta_k.
    pub beta: Vec<CMat>,
    pub f_bound: Vec<f64>,
    pub certified: bool,
}

impl SymbolTables for RawTables {
    fn dim(&self) -> usize {
        self.d
    }
    fn a(&self, k: usize) -> CMat {
        self.a.get(k).cloned().unwrap_or_else(|| CMat::zeros(self.d, self.d))
    }
    fn a_tilde(&self, k: usize) -> CMat {
        self.a_tilde
            .get(k)
            .cloned()
            .unwrap_or_else(|| CMat::zeros(self.d, self.d))
    }
    fn beta(&self, k: i64) -> Result<CMat> {
        if k < 1 {
            return Err(Error::DomainViolation(format!("raw beta table starts at 1, got {k}")));
        }
        Ok(self
            .beta
            .get(k as usize - 1)
            .cloned()
            .unwrap_or_else(|| CMat::zeros(self.d, self.d)))
    }
    fn decay_bound_f(&self, n: usize) -> f64 {
        match self.f_bound.get(n) {
            Some(v) => *v,
            None => self.f_bound.last().cloned().unwrap_or(0.0),
        }
    }
    fn coeff_sup(&self) -> f64 {
        self.a
            .iter()
            .chain(&self.a_tilde)
            .map(linalg::op_norm)
            .fold(0.0, f64::max)
    }
    fn a_tilde_l1(&self) -> f64 {
        self.a_tilde.iter().map(linalg::op_norm).sum()
    }
    fn a_l1(&self) -> f64 {
        self.a.iter().map(linalg::op_norm).sum()
    }
    fn certified(&self) -> bool {
        self.certified
    }
}

/// `a_n` (or `a~_n`) from the partial fractions.
pub fn a_closed(spec: &RationalSymbolSpec, n: usize, tilde: bool) -> CMat {
    let d = spec.d;
    let mut out = if n == 0 {
        if tilde {
            spec.rho_tilde00()
        } else {
            spec.rho00.clone()
        }
    } else if n <= spec.m0 {
        if tilde {
            spec.sharp.rho0[n - 1].adjoint()
        } else {
            spec.rho0[n - 1].clone()
        }
    } else {
        CMat::zeros(d, d)
    };
    for (mu, p) in spec.poles.iter().enumerate() {
        let base = if tilde { *p } else { p.conj() };
        let pn = base.powu(n as u32);
        if pn == C64::new(0.0, 0.0) {
            continue;
        }
        for j in 1..=spec.mults[mu] {
            let coef = pn * binom((n + j - 1) as i64, (j - 1) as i64);
            if tilde {
                out += spec.sharp.rho[mu][j - 1].adjoint() * coef;
            } else {
                out += &spec.rho[mu][j - 1] * coef;
            }
        }
    }
    out
}

fn residue_norms(spec: &RationalSymbolSpec, tilde: bool) -> Vec<Vec<f64>> {
    let src = if tilde { &spec.sharp.rho } else { &spec.rho };
    src.iter()
        .map(|r| r.iter().map(linalg::op_norm).collect())
        .collect()
}

/// Envelope value at index `k > m0`.
fn a_envelope(spec: &RationalSymbolSpec, k: usize, tilde: bool) -> f64 {
    let norms = residue_norms(spec, tilde);
    let mut acc = 0.0;
    for (mu, p) in spec.poles.iter().enumerate() {
        let r = p.norm();
        for (j, nr) in norms[mu].iter().enumerate() {
            acc += nr * binom((k + j) as i64, j as i64) * r.powi(k as i32);
        }
    }
    acc
}

/// Upper bound for `sum_{l >= n} C(l+j-1, j-1) r^l`.
pub fn binomial_geometric_tail(n: usize, j: usize, r: f64) -> f64 {
    if r == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let term = |l: usize| binom((l + j - 1) as i64, (j - 1) as i64) * r.powi(l as i32);
    let mut l = n;
    let mut acc = 0.0;
    loop {
        let t = term(l);
        let ratio = r * (l + j) as f64 / (l + 1) as f64;
        if ratio < 1.0 && (l >= n + 64 || t <= 1e-18 * acc) {
            return acc + t / (1.0 - ratio);
        }
        acc += t;
        l += 1;
    }
}

fn a_envelope_tail(spec: &RationalSymbolSpec, n: usize, tilde: bool) -> f64 {
    let norms = residue_norms(spec, tilde);
    let mut acc = 0.0;
    for (mu, p) in spec.poles.iter().enumerate() {
        for (j, nr) in norms[mu].iter().enumerate() {
            acc += nr * binomial_geometric_tail(n, j + 1, p.norm());
        }
    }
    acc
}

/// Pick a Cauchy envelope for the Taylor coefficients of `h` (or `h~`).
fn cauchy_envelope(spec: &RationalSymbolSpec, tilde: bool) -> Result<CauchyEnvelope> {
    let r_max = if spec.k() == 0 { 4.0 } else { 1.0 / spec.decay_rate() };
    let grid = 1024;
    let mut best: Option<(usize, CauchyEnvelope)> = None;
    for f in [0.9, 0.75, 0.5, 0.3, 0.15, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001] {
        let radius = 1.0 + (r_max - 1.0) * f;
        let mut dets = Vec::with_capacity(grid);
        let mut hmax: f64 = 0.0;
        let mut ok = true;
        for k in 0..grid {
            let z = C64::from_polar(radius, 2.0 * PI * k as f64 / grid as f64);
            let inv = if tilde {
                spec.eval_h_sharp_inv(z)
            } else {
                spec.eval_h_inv(z)
            };
            let inv = match inv {
                Ok(m) => m,
                Err(_) => {
                    ok = false;
                    break;
                }
            };
            dets.push(inv.determinant());
            match linalg::inverse(&inv) {
                Ok(h) => hmax = hmax.max(linalg::op_norm(&h)),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok || linalg::winding_number(&dets) != 0 || !hmax.is_finite() {
            continue;
        }
        let env = CauchyEnvelope {
            radius,
            bound: 1.1 * hmax,
        };
        let scale = hmax.max(f64::MIN_POSITIVE);
        let terms = env.terms_for(SERIES_EPS * scale);
        if best.map(|(t, _)| terms < t).unwrap_or(true) {
            best = Some((terms, env));
        }
    }
    best.map(|(_, e)| e).ok_or_else(|| {
        Error::OuternessCheckFailed("no admissible radius for the Taylor tail of h".into())
    })
}
