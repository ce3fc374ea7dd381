//! Symbols shared by unit, integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use toeplitz_arma::coefficients::CoefficientTables;
use toeplitz_arma::linalg::{self, binom, cpow, BlockVector, CMat, C64};
use toeplitz_arma::oracle;
use toeplitz_arma::symbol::{RationalSymbolSpec, SharpCoeffs};

/// `h(z) = -(1 - conj(p) z) / rho` with `p = 0.5`, `rho = 1`.
pub fn single_pole_symbol() -> RationalSymbolSpec {
    single_pole_symbol_with(C64::new(0.5, 0.0), C64::new(1.0, 0.0))
}

pub fn single_pole_symbol_with(p: C64, rho: C64) -> RationalSymbolSpec {
    RationalSymbolSpec::new(
        1,
        CMat::zeros(1, 1),
        vec![],
        vec![p],
        vec![vec![CMat::from_element(1, 1, rho)]],
        None,
    )
    .expect("example symbol is valid")
}

fn rand_c(rng: &mut ChaCha8Rng, scale: f64) -> C64 {
    C64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale))
}

fn rand_mat(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> CMat {
    CMat::from_fn(d, d, |_, _| rand_c(rng, scale))
}

fn draw_poles(rng: &mut ChaCha8Rng, k: usize) -> Vec<C64> {
    let mut poles: Vec<C64> = Vec::new();
    while poles.len() < k {
        let r = rng.gen_range(0.2..0.6);
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = C64::from_polar(r, phi);
        if poles.iter().all(|q| (q - p).norm() > 0.15) {
            poles.push(p);
        }
    }
    poles
}

/// Unsharp partial fractions with a dominant constant term, so that
/// `det h^{-1}` has no zeros on the closed disk.
fn draw_plain(
    rng: &mut ChaCha8Rng,
    d: usize,
    k: usize,
    mults: &[usize],
    m0: usize,
) -> (CMat, Vec<CMat>, Vec<C64>, Vec<Vec<CMat>>) {
    let poles = draw_poles(rng, k);
    let rho: Vec<Vec<CMat>> = (0..k)
        .map(|mu| (0..mults[mu]).map(|_| rand_mat(rng, d, 0.5)).collect())
        .collect();
    let rho0: Vec<CMat> = (0..m0).map(|_| rand_mat(rng, d, 0.4)).collect();
    let mut mass = 0.0;
    for (mu, r) in rho.iter().enumerate() {
        for (j, m) in r.iter().enumerate() {
            mass += linalg::op_norm(m) / (1.0 - poles[mu].norm()).powi(j as i32 + 1);
        }
    }
    mass += rho0.iter().map(linalg::op_norm).sum::<f64>();
    let lead = 1.3 * mass + 0.4;
    let rho00 = -(linalg::eye(d) * C64::new(lead, 0.0) + rand_mat(rng, d, 0.05));
    (rho00, rho0, poles, rho)
}

/// Sharp factor recovered from the first block column of a large inverse:
/// `(T_N^{-1})^{s,1} ~ a~*_{s-1} a~_0`.
fn complete_sharp(plain: &RationalSymbolSpec) -> Option<RationalSymbolSpec> {
    let d = plain.d;
    let m0 = plain.m0;
    let tables = CoefficientTables::new(plain).ok()?;
    let big = 160;
    let x = oracle::dense_solve(&tables, &BlockVector::unit(big, d)).ok()?;
    let x1 = x.blocks[0].clone();
    let x1 = (&x1 + x1.adjoint()) * C64::new(0.5, 0.0);
    let chol = x1.cholesky()?;
    let at0 = chol.l().adjoint();
    let at0_inv_adj = linalg::inverse(&at0).ok()?.adjoint();
    let nk = m0 + 1 + 2 * plain.total_mult() + 2;
    let at: Vec<CMat> = (0..nk)
        .map(|k| if k == 0 { at0.clone() } else { &at0_inv_adj * x.blocks[k].adjoint() })
        .collect();
    // least squares for the pole residues from a~_k, k > m0
    let mdim = plain.total_mult();
    let rows = nk - (m0 + 1);
    let mut design = DMatrix::<C64>::zeros(rows, mdim);
    let mut slots = Vec::new();
    for (mu, &m) in plain.mults.iter().enumerate() {
        for j in 1..=m {
            slots.push((mu, j));
        }
    }
    for (r, k) in ((m0 + 1)..nk).enumerate() {
        for (c, &(mu, j)) in slots.iter().enumerate() {
            design[(r, c)] = cpow(plain.poles[mu], k as i64) * binom(k as i64 + j as i64 - 1, j as i64 - 1);
        }
    }
    let mut rho_t: Vec<Vec<CMat>> = plain.mults.iter().map(|&m| vec![CMat::zeros(d, d); m]).collect();
    let svd = (mdim > 0).then(|| design.svd(true, true));
    for a in 0..d {
        for b in 0..d {
            let Some(svd) = svd.as_ref() else { break };
            let rhs = DMatrix::<C64>::from_fn(rows, 1, |r, _| at[m0 + 1 + r][(a, b)]);
            let sol = svd.solve(&rhs, 1e-14).ok()?;
            for (c, &(mu, j)) in slots.iter().enumerate() {
                rho_t[mu][j - 1][(a, b)] = sol[(c, 0)];
            }
        }
    }
    let pole_part = |k: usize| -> CMat {
        let mut acc = CMat::zeros(d, d);
        for &(mu, j) in &slots {
            acc += &rho_t[mu][j - 1] * (cpow(plain.poles[mu], k as i64) * binom(k as i64 + j as i64 - 1, j as i64 - 1));
        }
        acc
    };
    let rho_t00 = &at[0] - pole_part(0);
    let rho_t0: Vec<CMat> = (1..=m0).map(|k| &at[k] - pole_part(k)).collect();
    let sharp = SharpCoeffs {
        rho00: rho_t00.adjoint(),
        rho0: rho_t0.iter().map(|m| m.adjoint()).collect(),
        rho: rho_t.iter().map(|g| g.iter().map(|m| m.adjoint()).collect()).collect(),
    };
    let spec = RationalSymbolSpec::new(
        d,
        plain.rho00.clone(),
        plain.rho0.clone(),
        plain.poles.clone(),
        plain.rho.clone(),
        Some(sharp),
    )
    .ok()?;
    let (dev, wmax) = spec.factorization_defect(512).ok()?;
    if dev > 1e-10 * wmax.max(1.0) {
        return None;
    }
    Some(spec)
}

/// Seeded random valid symbol with `K` poles of the given multiplicities and
/// polynomial degree `m0`, restricted to `F(9) < 0.5`.
pub fn random_spec(d: usize, k: usize, mults: &[usize], m0: usize, seed: u64) -> RationalSymbolSpec {
    assert_eq!(mults.len(), k, "one multiplicity per pole");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0xabcdef);
    for _ in 0..64 {
        let (rho00, rho0, poles, rho) = draw_plain(&mut rng, d, k, mults, m0);
        let placeholder = SharpCoeffs {
            rho00: rho00.clone(),
            rho0: rho0.clone(),
            rho: rho.clone(),
        };
        let plain = match RationalSymbolSpec::new(d, rho00, rho0, poles, rho, Some(placeholder)) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let spec = if d == 1 {
            let mut s = plain;
            s.sharp_explicit = false;
            s
        } else {
            match complete_sharp(&plain) {
                Some(s) => s,
                None => continue,
            }
        };
        if spec.validate().is_err() {
            continue;
        }
        let t = match CoefficientTables::new(&spec) {
            Ok(t) => t,
            Err(_) => continue,
        };
        if t.decay_bound_f(9) >= 0.5 {
            continue;
        }
        return spec;
    }
    panic!("no valid symbol found for d={d} K={k} mults={mults:?} m0={m0} seed={seed}");
}

/// Parameters of one randomized sweep entry.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub d: usize,
    pub k: usize,
    pub mults: Vec<usize>,
    pub m0: usize,
    pub seed: u64,
}

impl SweepEntry {
    pub fn spec(&self) -> RationalSymbolSpec {
        random_spec(self.d, self.k, &self.mults, self.m0, self.seed)
    }

    pub fn label(&self) -> String {
        format!("d={} K={} m={:?} m0={} seed={}", self.d, self.k, self.mults, self.m0, self.seed)
    }
}

/// Twenty symbols covering `d in {1,2,3}`, `K in {0,1,2}`, multiplicities
/// `{1,2}` and `m0 in {0,1,2}`.
pub fn sweep() -> Vec<SweepEntry> {
    let table: [(usize, &[usize], usize); 20] = [
        (1, &[], 1),
        (1, &[1], 0),
        (1, &[2], 1),
        (1, &[1, 1], 2),
        (1, &[1, 2], 0),
        (1, &[2, 2], 1),
        (1, &[], 2),
        (2, &[], 1),
        (2, &[1], 0),
        (2, &[2], 2),
        (2, &[1, 1], 1),
        (2, &[1, 2], 0),
        (2, &[2, 1], 2),
        (2, &[1], 1),
        (3, &[], 2),
        (3, &[1], 1),
        (3, &[2], 0),
        (3, &[1, 1], 0),
        (3, &[1, 2], 2),
        (3, &[2], 1),
    ];
    table
        .iter()
        .enumerate()
        .map(|(i, (d, m, m0))| SweepEntry {
            d: *d,
            k: m.len(),
            mults: m.to_vec(),
            m0: *m0,
            seed: 1000 + i as u64,
        })
        .collect()
}

/// Seeded random block vector.
pub fn random_block_vector(n: usize, d: usize, cols: usize, seed: u64) -> BlockVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BlockVector {
        n,
        d,
        blocks: (0..n).map(|_| CMat::from_fn(d, cols, |_, _| rand_c(&mut rng, 1.0))).collect(),
    }
}
