//! Rational ARMA symbols described by the partial fractions of `h(z)^{-1}`.
//!
//! ```text
//! h(z)^{-1} = -rho00 - sum_mu sum_j (1 - conj(p_mu) z)^{-j} rho[mu][j] - sum_j z^j rho0[j]
//! ```
//!
//! The sharp factor `h_sharp` has the same shape with its own coefficients and
//! satisfies `h h^* = h_sharp^* h_sharp` on the unit circle.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, c, eye, CMat, C64, ONE, ZERO};

const POLE_EPS: f64 = 1e-13;

/// Coefficients of `h_sharp(z)^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpCoeffs {
    pub rho00: CMat,
    pub rho0: Vec<CMat>,
    pub rho: Vec<Vec<CMat>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RationalSymbolSpec {
    pub d: usize,
    pub m0: usize,
    pub rho00: CMat,
    /// rho0[j-1] multiplies z^j, j = 1..m0.
    pub rho0: Vec<CMat>,
    pub poles: Vec<C64>,
    pub mults: Vec<usize>,
    /// rho[mu][j-1] multiplies (1 - conj(p_mu) z)^{-j}.
    pub rho: Vec<Vec<CMat>>,
    pub sharp: SharpCoeffs,
    /// True when the sharp coefficients were supplied rather than copied.
    pub sharp_explicit: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub winding_h: i64,
    pub winding_h_sharp: i64,
    pub min_abs_det_on_circle: f64,
    pub factorization_defect: Option<f64>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Which of the two partial-fraction expansions to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Plain,
    Sharp,
}

impl RationalSymbolSpec {
    /// Build a spec. `sharp = None` is only allowed for `d = 1`, where the sharp
    /// factor equals `h`.
    pub fn new(
        d: usize,
        rho00: CMat,
        rho0: Vec<CMat>,
        poles: Vec<C64>,
        rho: Vec<Vec<CMat>>,
        sharp: Option<SharpCoeffs>,
    ) -> Result<Self> {
        let m0 = rho0.len();
        let mults = rho.iter().map(|r| r.len()).collect();
        let explicit = sharp.is_some();
        let sharp = match sharp {
            Some(s) => s,
            None if d == 1 => SharpCoeffs {
                rho00: rho00.clone(),
                rho0: rho0.clone(),
                rho: rho.clone(),
            },
            None => return Err(Error::MissingSharp),
        };
        let spec = RationalSymbolSpec {
            d,
            m0,
            rho00,
            rho0,
            poles,
            mults,
            rho,
            sharp,
            sharp_explicit: explicit,
        };
        spec.check_structure()?;
        Ok(spec)
    }

    /// Constant symbol `h = I_d`.
    pub fn identity(d: usize) -> Self {
        RationalSymbolSpec {
            d,
            m0: 0,
            rho00: -eye(d),
            rho0: vec![],
            poles: vec![],
            mults: vec![],
            rho: vec![],
            sharp: SharpCoeffs {
                rho00: -eye(d),
                rho0: vec![],
                rho: vec![],
            },
            sharp_explicit: false,
        }
    }

    pub fn k(&self) -> usize {
        self.poles.len()
    }

    /// Sum of the pole multiplicities.
    pub fn total_mult(&self) -> usize {
        self.mults.iter().sum()
    }

    pub fn max_mult(&self) -> usize {
        self.mults.iter().cloned().max().unwrap_or(0)
    }

    pub fn decay_rate(&self) -> f64 {
        self.poles.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Structural consistency of list lengths and matrix shapes.
    pub fn check_structure(&self) -> Result<()> {
        let d = self.d;
        if d == 0 {
            return Err(Error::MalformedSpec("d must be positive".into()));
        }
        let sq = |m: &CMat, what: &str| -> Result<()> {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::MalformedSpec(format!(
                    "{what} is {}x{}, expected {d}x{d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        sq(&self.rho00, "rho00")?;
        if self.rho0.len() != self.m0 {
            return Err(Error::MalformedSpec("rho0 length differs from m0".into()));
        }
        for m in &self.rho0 {
            sq(m, "rho0 entry")?;
        }
        if self.rho.len() != self.poles.len() || self.mults.len() != self.poles.len() {
            return Err(Error::MalformedSpec(
                "poles, mults and rho must have K entries".into(),
            ));
        }
        for (mu, r) in self.rho.iter().enumerate() {
            if r.len() != self.mults[mu] || r.is_empty() {
                return Err(Error::MalformedSpec(format!(
                    "rho[{mu}] must have mults[{mu}] >= 1 entries"
                )));
            }
            for m in r {
                sq(m, "rho entry")?;
            }
        }
        let s = &self.sharp;
        sq(&s.rho00, "sharp rho00")
            .map_err(|e| Error::SharpShapeMismatch(e.to_string()))?;
        if s.rho0.len() != self.m0 {
            return Err(Error::SharpShapeMismatch("sharp rho0 length differs from m0".into()));
        }
        if s.rho.len() != self.poles.len()
            || s.rho.iter().zip(&self.mults).any(|(r, &m)| r.len() != m)
        {
            return Err(Error::SharpShapeMismatch(
                "sharp rho multiplicities differ".into(),
            ));
        }
        for m in s.rho0.iter().chain(s.rho.iter().flatten()) {
            sq(m, "sharp entry").map_err(|e| Error::SharpShapeMismatch(e.to_string()))?;
        }
        Ok(())
    }

    /// Residues of `h_tilde^{-1}`: adjoints of the sharp residues.
    pub fn rho_tilde(&self) -> Vec<Vec<CMat>> {
        self.sharp
            .rho
            .iter()
            .map(|r| r.iter().map(|m| m.adjoint()).collect())
            .collect()
    }

    pub fn rho_tilde00(&self) -> CMat {
        self.sharp.rho00.adjoint()
    }

    pub fn rho_tilde0(&self) -> Vec<CMat> {
        self.sharp.rho0.iter().map(|m| m.adjoint()).collect()
    }

    /// Spec of the time-reversed symbol `w(e^{-i theta})`.
    pub fn reversed(&self) -> Self {
        let sharp = SharpCoeffs {
            rho00: self.rho00.adjoint(),
            rho0: self.rho0.iter().map(|m| m.adjoint()).collect(),
            rho: self
                .rho
                .iter()
                .map(|r| r.iter().map(|m| m.adjoint()).collect())
                .collect(),
        };
        RationalSymbolSpec {
            d: self.d,
            m0: self.m0,
            rho00: self.rho_tilde00(),
            rho0: self.rho_tilde0(),
            poles: self.poles.iter().map(|p| p.conj()).collect(),
            mults: self.mults.clone(),
            rho: self.rho_tilde(),
            sharp,
            sharp_explicit: true,
        }
    }

    fn coeffs(&self, side: Side) -> (&CMat, &Vec<CMat>, &Vec<Vec<CMat>>) {
        match side {
            Side::Plain => (&self.rho00, &self.rho0, &self.rho),
            Side::Sharp => (&self.sharp.rho00, &self.sharp.rho0, &self.sharp.rho),
        }
    }

    fn eval_inv(&self, side: Side, z: C64) -> Result<CMat> {
        let (r00, r0, r) = self.coeffs(side);
        let mut out = -r00.clone();
        for (mu, p) in self.poles.iter().enumerate() {
            let base = ONE - p.conj() * z;
            if base.norm() < POLE_EPS {
                return Err(Error::EvaluationAtPole);
            }
            let inv = base.inv();
            let mut f = inv;
            for rj in &r[mu] {
                out -= rj * f;
                f *= inv;
            }
        }
        let mut zj = z;
        for rj in r0 {
            out -= rj * zj;
            zj *= z;
        }
        Ok(out)
    }

    pub fn eval_h_inv(&self, z: C64) -> Result<CMat> {
        self.eval_inv(Side::Plain, z)
    }

    pub fn eval_h_sharp_inv(&self, z: C64) -> Result<CMat> {
        self.eval_inv(Side::Sharp, z)
    }

    pub fn eval_h(&self, z: C64) -> Result<CMat> {
        invert_value(&self.eval_h_inv(z)?)
    }

    pub fn eval_h_sharp(&self, z: C64) -> Result<CMat> {
        invert_value(&self.eval_h_sharp_inv(z)?)
    }

    /// `h^dagger(z)^{-1} = (h(1/conj z)^{-1})^*`, evaluated from the partial
    /// fractions without inverting anything.
    pub fn eval_h_dagger_inv(&self, z: C64) -> Result<CMat> {
        if z.norm() < POLE_EPS {
            if self.m0 > 0 {
                return Err(Error::EvaluationAtPole);
            }
            return Ok(-self.rho00.adjoint());
        }
        let mut out = -self.rho00.adjoint();
        for (mu, p) in self.poles.iter().enumerate() {
            let den = z - p;
            if den.norm() < POLE_EPS * z.norm().max(1.0) {
                return Err(Error::EvaluationAtPole);
            }
            let ratio = z / den;
            let mut f = ratio;
            for rj in &self.rho[mu] {
                out -= rj.adjoint() * f;
                f *= ratio;
            }
        }
        let zi = z.inv();
        let mut f = zi;
        for rj in &self.rho0 {
            out -= rj.adjoint() * f;
            f *= zi;
        }
        Ok(out)
    }

    /// `w(e^{i theta}) = h h^*`.
    pub fn eval_w(&self, theta: f64) -> Result<CMat> {
        let h = self.eval_h(C64::from_polar(1.0, theta))?;
        let w = &h * h.adjoint();
        Ok((&w + w.adjoint()) * c(0.5, 0.0))
    }

    /// Full validation; any failed check is returned as the matching error.
    pub fn validate(&self) -> Result<ValidationReport> {
        let (report, err) = self.validate_report();
        match err {
            Some(e) => Err(e),
            None => Ok(report),
        }
    }

    /// Run every check and collect pass/fail results plus the first failure.
    pub fn validate_report(&self) -> (ValidationReport, Option<Error>) {
        let mut checks = Vec::new();
        let mut first: Option<Error> = None;
        let mut record = |name: &'static str, res: std::result::Result<String, Error>| {
            match res {
                Ok(detail) => checks.push(Check {
                    name,
                    passed: true,
                    detail,
                }),
                Err(e) => {
                    checks.push(Check {
                        name,
                        passed: false,
                        detail: e.to_string(),
                    });
                    if first.is_none() {
                        first = Some(e);
                    }
                }
            }
        };

        let structure = self.check_structure();
        let structure_ok = structure.is_ok();
        record("structure", structure.map(|_| "ok".into()));

        let domain = (|| {
            for (i, p) in self.poles.iter().enumerate() {
                let m = p.norm();
                if m == 0.0 || m >= 1.0 || !m.is_finite() {
                    return Err(Error::PoleOutOfDomain {
                        index: i,
                        modulus: m,
                    });
                }
            }
            Ok(format!("{} poles inside the punctured disk", self.k()))
        })();
        let domain_ok = domain.is_ok();
        record("pole_domain", domain);

        record(
            "distinct_poles",
            (|| {
                for i in 0..self.k() {
                    for j in i + 1..self.k() {
                        if (self.poles[i] - self.poles[j]).norm() < 1e-12 {
                            return Err(Error::DuplicatePoles(i, j));
                        }
                    }
                }
                Ok("ok".into())
            })(),
        );

        if structure_ok {
            record(
                "leading_residues",
                (|| {
                    for (side, sharp) in [(Side::Plain, false), (Side::Sharp, true)] {
                        let (r00, r0, r) = self.coeffs(side);
                        let scale = std::iter::once(r00)
                            .chain(r0.iter())
                            .chain(r.iter().flatten())
                            .map(linalg::fro)
                            .fold(0.0, f64::max)
                            .max(f64::MIN_POSITIVE);
                        for (mu, rr) in r.iter().enumerate() {
                            if linalg::fro(rr.last().expect("nonempty")) <= 1e-14 * scale {
                                return Err(Error::ZeroLeadingResidue { index: mu + 1, sharp });
                            }
                        }
                        if let Some(last) = r0.last() {
                            if linalg::fro(last) <= 1e-14 * scale {
                                return Err(Error::ZeroLeadingResidue { index: 0, sharp });
                            }
                        }
                    }
                    Ok("ok".into())
                })(),
            );
        }

        let mut winding_h = 0;
        let mut winding_s = 0;
        let mut min_det = f64::INFINITY;
        let mut defect = None;
        if structure_ok && domain_ok {
            let grid = 4096;
            let outer = (|| {
                for (side, slot) in [(Side::Plain, 0), (Side::Sharp, 1)] {
                    let mut dets = Vec::with_capacity(grid);
                    let mut scale: f64 = 0.0;
                    for k in 0..grid {
                        let z = C64::from_polar(1.0, 2.0 * PI * k as f64 / grid as f64);
                        let m = self.eval_inv(side, z)?;
                        scale = scale.max(linalg::op_norm(&m));
                        dets.push(m.determinant());
                    }
                    let md = dets.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
                    min_det = min_det.min(md);
                    let wn = linalg::winding_number(&dets);
                    if slot == 0 {
                        winding_h = wn;
                    } else {
                        winding_s = wn;
                    }
                    let which = if slot == 0 { "h" } else { "h_sharp" };
                    if md <= 1e-12 * scale.powi(self.d as i32) {
                        return Err(Error::OuternessCheckFailed(format!(
                            "det {which}^-1 nearly vanishes on the unit circle"
                        )));
                    }
                    if wn != 0 {
                        return Err(Error::OuternessCheckFailed(format!(
                            "det {which}^-1 winds {wn} times around 0"
                        )));
                    }
                    for r in [0.0, 0.3, 0.6, 0.9] {
                        for k in 0..8 {
                            let z = C64::from_polar(r, 2.0 * PI * k as f64 / 8.0 + 0.1);
                            let m = self.eval_inv(side, z)?;
                            if linalg::min_singular(&m) <= 1e-12 * scale {
                                return Err(Error::OuternessCheckFailed(format!(
                                    "{which}^-1 singular near z = {z}"
                                )));
                            }
                        }
                    }
                }
                Ok(format!("winding 0 for h and h_sharp, min |det| {min_det:.3e}"))
            })();
            let outer_ok = outer.is_ok();
            record("outerness", outer);

            if outer_ok && (self.d >= 2 || self.sharp_explicit) {
                let res = self.factorization_defect(512);
                match res {
                    Ok((dev, wmax)) => {
                        defect = Some(dev);
                        if dev <= 1e-8 * wmax.max(1.0) {
                            record("factorization", Ok(format!("max deviation {dev:.3e}")));
                        } else {
                            record("factorization", Err(Error::FactorizationMismatch(dev)));
                        }
                    }
                    Err(e) => record("factorization", Err(e)),
                }
            }
        }

        (
            ValidationReport {
                checks,
                winding_h,
                winding_h_sharp: winding_s,
                min_abs_det_on_circle: min_det,
                factorization_defect: defect,
            },
            first,
        )
    }

    /// Max of `|| h h^* - h_sharp^* h_sharp ||` on a uniform grid, and the max of `||w||`.
    pub fn factorization_defect(&self, grid: usize) -> Result<(f64, f64)> {
        let mut dev: f64 = 0.0;
        let mut wmax: f64 = 0.0;
        for k in 0..grid {
            let z = C64::from_polar(1.0, 2.0 * PI * k as f64 / grid as f64);
            let h = self.eval_h(z)?;
            let hs = self.eval_h_sharp(z)?;
            let w1 = &h * h.adjoint();
            let w2 = hs.adjoint() * &hs;
            dev = dev.max(linalg::op_norm(&(&w1 - &w2)));
            wmax = wmax.max(linalg::op_norm(&w1));
        }
        Ok((dev, wmax))
    }
}

fn invert_value(m: &CMat) -> Result<CMat> {
    let inv = linalg::inverse(m).map_err(|_| Error::SingularHInverse)?;
    if inv.iter().any(|z| !z.is_finite()) || m.iter().all(|z| *z == ZERO) {
        return Err(Error::SingularHInverse);
    }
    Ok(inv)
}
