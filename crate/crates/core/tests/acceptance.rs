//! End-to-end acceptance checks. One PASS/FAIL line per criterion.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{single_pole_symbol, single_pole_symbol_with, random_block_vector, random_spec, sweep};
use toeplitz_arma::bench::time_fast;
use toeplitz_arma::closed_form::{
    binomial_power_sum, inverse_block_ar_region, inverse_block_arma_region, inverse_closed,
    ClosedFormKit, Region, SolveVectors,
};
use toeplitz_arma::coefficients::CoefficientTables;
use toeplitz_arma::fast_solver::{self, FastOptions};
use toeplitz_arma::linalg::{max_abs_diff, BlockMatrix, CMat, C64};
use toeplitz_arma::oracle::{self, RhsSequence};
use toeplitz_arma::series_inverse::{b_sequences, inverse_series, SeriesOptions, SeriesVariant};
use toeplitz_arma::symbol::RationalSymbolSpec;

type Outcome = Result<String, String>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn worst(acc: &mut f64, v: f64) {
    if v.is_nan() || v > *acc {
        *acc = v;
    }
}

/// Generalized binomial `C(top, k)` by the falling factorial.
fn gbinom(top: i64, k: i64) -> f64 {
    if k < 0 {
        return 0.0;
    }
    let mut out = 1.0;
    for t in 0..k {
        out *= (top - t) as f64 / (t + 1) as f64;
    }
    out
}

fn ipow(x: C64, e: i64) -> C64 {
    if e >= 0 {
        x.powu(e as u32)
    } else {
        x.inv().powu((-e) as u32)
    }
}

fn check_example(p: C64, rho: C64) -> std::result::Result<f64, String> {
    let spec = single_pole_symbol_with(p, rho);
    let t = CoefficientTables::new(&spec).map_err(|e| e.to_string())?;
    let ap = p.norm_sqr();
    let r2 = rho.norm_sqr();
    let pc = p.conj();
    let m2 = |a: C64, b: C64, cc: C64, d: C64| CMat::from_row_slice(2, 2, &[a, b, cc, d]);
    let t_want = m2(c(1.0 + ap, 0.0), -p, -pc, c(1.0 + ap, 0.0)) / c(r2, 0.0);
    let inv_want = m2(c(1.0 + ap, 0.0), p, pc, c(1.0 + ap, 0.0)) * c(r2 / (1.0 + ap + ap * ap), 0.0);
    let mut err: f64 = 0.0;
    worst(&mut err, max_abs_diff(&oracle::dense_toeplitz(&t, 2).map_err(|e| e.to_string())?.data, &t_want));
    let mut paths: Vec<BlockMatrix> = vec![
        oracle::dense_inverse(&t, 2).map_err(|e| e.to_string())?,
        inverse_closed(&t, 2).map_err(|e| e.to_string())?.matrix,
    ];
    for v in [SeriesVariant::Tilde, SeriesVariant::Plain] {
        paths.push(inverse_series(&t, 2, v, &SeriesOptions::default()).map_err(|e| e.to_string())?.0);
    }
    for m in &paths {
        worst(&mut err, max_abs_diff(&m.data, &inv_want));
    }
    let kit = ClosedFormKit::from_tables(&t).map_err(|e| e.to_string())?;
    let sv = kit.solve_vectors(2).map_err(|e| e.to_string())?;
    let get = |f: &dyn Fn(usize) -> toeplitz_arma::Result<CMat>, s| f(s).map(|m| m[(0, 0)]).map_err(|e| e.to_string());
    let ell = [get(&|s| sv.ell(s), 1)?, get(&|s| sv.ell(s), 2)?];
    let r = [get(&|s| sv.r(s), 1)?, get(&|s| sv.r(s), 2)?];
    let ell_t = [get(&|s| sv.ell_tilde(s), 1)?, get(&|s| sv.ell_tilde(s), 2)?];
    let r_t = [get(&|s| sv.r_tilde(s), 1)?, get(&|s| sv.r_tilde(s), 2)?];
    let lpref = rho.conj() / (pc * pc * (1.0 - ap.powi(3)));
    let ell_want = [lpref * (1.0 + ap), lpref * pc];
    let rpref = -rho * pc * ap * (1.0 - ap);
    let r_want = [rpref * pc * (1.0 + ap), rpref * ap];
    for k in 0..2 {
        worst(&mut err, (ell[k] - ell_want[k]).norm());
        worst(&mut err, (r[k] - r_want[k]).norm());
        worst(&mut err, (ell_t[k] - ell_want[1 - k].conj()).norm());
        worst(&mut err, (r_t[k] - r_want[1 - k].conj()).norm());
    }
    let a_t = m2(c(1.0, 0.0), p, c(0.0, 0.0), c(1.0, 0.0)) * rho.conj();
    let a = m2(c(1.0, 0.0), c(0.0, 0.0), pc, c(1.0, 0.0)) * rho;
    let col = |v: [C64; 2]| CMat::from_row_slice(2, 1, &v);
    let row = |v: [C64; 2]| CMat::from_row_slice(1, 2, &v);
    let via_tilde = a_t.adjoint() * &a_t + col(ell_t) * row(r_t);
    let via_plain = a.adjoint() * &a + col(ell) * row(r);
    worst(&mut err, max_abs_diff(&via_tilde, &inv_want));
    worst(&mut err, max_abs_diff(&via_plain, &inv_want));
    Ok(err)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let golden = check_example(c(0.5, 0.0), c(1.0, 0.0))?;
    let complex = check_example(c(0.4, 0.3), c(0.8, -0.5))?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("max err {golden:.2e} (p=0.5), {complex:.2e} (complex p, rho), {secs:.3}s");
    if golden <= 1e-10 && complex <= 1e-10 && secs < 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut solve_err: f64 = 0.0;
    let mut inv_err: f64 = 0.0;
    let mut failures = Vec::new();
    for (idx, e) in sweep().iter().enumerate() {
        let spec = e.spec();
        let t = CoefficientTables::new(&spec).map_err(|x| format!("{}: {x}", e.label()))?;
        for n in [8usize, 32, 128] {
            let y = random_block_vector(n, e.d, e.d, 31 * idx as u64 + n as u64);
            let run = || -> toeplitz_arma::Result<(f64, f64)> {
                let fast = fast_solver::solve(&t, &y, &FastOptions::default())?.z;
                let lev = oracle::levinson_solve(&t, &y)?;
                let dense = oracle::dense_solve(&t, &y)?;
                let s = fast.rel_diff(&dense).max(lev.rel_diff(&dense)).max(fast.rel_diff(&lev));
                let mut i: f64 = 0.0;
                if n <= 32 {
                    let dinv = oracle::dense_inverse(&t, n)?;
                    worst(&mut i, max_abs_diff(&inverse_closed(&t, n)?.matrix.data, &dinv.data));
                    for v in [SeriesVariant::Tilde, SeriesVariant::Plain] {
                        let (m, _) = inverse_series(&t, n, v, &SeriesOptions::default())?;
                        worst(&mut i, max_abs_diff(&m.data, &dinv.data));
                    }
                }
                Ok((s, i))
            };
            match run() {
                Ok((s, i)) => {
                    worst(&mut solve_err, s);
                    worst(&mut inv_err, i);
                    if s > 1e-8 || i > 1e-7 {
                        failures.push(format!("{} n={n}", e.label()));
                    }
                }
                Err(x) => failures.push(format!("{} n={n}: {x}", e.label())),
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "20 specs x 3 sizes, worst solve rel diff {solve_err:.2e}, worst inverse diff {inv_err:.2e}, {secs:.1}s"
    );
    if failures.is_empty() && secs < 300.0 {
        Ok(detail)
    } else {
        Err(format!("{detail}; failing: {}", failures.join("; ")))
    }
}

fn criterion_3() -> Outcome {
    let mut err: f64 = 0.0;
    for e in sweep() {
        let spec = e.spec();
        let t = CoefficientTables::new(&spec).map_err(|x| x.to_string())?;
        for k in spec.m0 + 1..=spec.m0 + 20 {
            let closed = t.beta_closed(k as i64).map_err(|x| x.to_string())?;
            let series = t.beta_series(k);
            let quad = t.beta_quadrature(k as i64).map_err(|x| x.to_string())?;
            worst(&mut err, max_abs_diff(&closed, &series));
            worst(&mut err, max_abs_diff(&closed, &quad));
            worst(&mut err, max_abs_diff(&series, &quad));
        }
    }
    let detail = format!("20 specs, k = m0+1..m0+20, worst pairwise diff {err:.2e}");
    if err <= 1e-8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4() -> Outcome {
    const LEN: usize = 120;
    const CHECKED: usize = 8;
    let mut err: f64 = 0.0;
    let mut count = 0usize;
    for e in sweep() {
        let spec = e.spec();
        let t = CoefficientTables::new(&spec).map_err(|x| x.to_string())?;
        let kit = if spec.k() > 0 {
            Some(ClosedFormKit::from_tables(&t).map_err(|x| x.to_string())?)
        } else {
            None
        };
        let zero = CMat::zeros(spec.d, spec.d);
        for n in spec.m0 + 1..=12 {
            for (tilde, us) in [(false, spec.m0 + 1..=n), (true, 1..=n - spec.m0)] {
                for u in us {
                    let seqs = b_sequences(&t, n, u, tilde, 4, LEN).map_err(|x| x.to_string())?;
                    for (lvl, seq) in seqs.iter().enumerate() {
                        for (l, got) in seq.iter().take(CHECKED).enumerate() {
                            let want = match &kit {
                                Some(k) if tilde => k.b_tilde_closed(n, u, lvl + 1, l),
                                Some(k) => k.b_closed(n, u, lvl + 1, l),
                                None => Ok(zero.clone()),
                            }
                            .map_err(|x| x.to_string())?;
                            worst(&mut err, max_abs_diff(got, &want));
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    let detail = format!("{count} coefficients, depth <= 4, n <= 12, worst diff {err:.2e}");
    if err <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn direct_sum(n: i64, i: i64, j: i64, x: C64, y: C64) -> C64 {
    let mut acc = c(0.0, 0.0);
    for l in 0..10_000i64 {
        acc += ipow(x, n + l - i) * ipow(y, l) * (gbinom(n + l, i) * gbinom(j + l, j));
    }
    acc
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut err: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(-6i64..=12);
        let i = rng.gen_range(0i64..=3);
        let j = rng.gen_range(0i64..=3);
        let x = C64::from_polar(rng.gen_range(0.3..0.9), rng.gen_range(0.0..std::f64::consts::TAU));
        let y = C64::from_polar(rng.gen_range(0.0..0.9), rng.gen_range(0.0..std::f64::consts::TAU));
        let direct = direct_sum(n, i, j, x, y);
        let closed = binomial_power_sum(n, i, j, x, y);
        worst(&mut err, (direct - closed).norm() / direct.norm().max(1.0));
    }
    let mut phi_err: f64 = 0.0;
    for e in sweep().into_iter().filter(|e| e.k > 0) {
        let spec = e.spec();
        let kit = ClosedFormKit::new(&spec).map_err(|x| x.to_string())?;
        let mut slots = Vec::new();
        for (mu, &m) in spec.mults.iter().enumerate() {
            for i in 1..=m as i64 {
                slots.push((mu, i));
            }
        }
        for n in [-2i64, 0, 1, 3, 7] {
            let phi = kit.phi_scalar(n);
            for (a, &(mu, i)) in slots.iter().enumerate() {
                for (b, &(nu, j)) in slots.iter().enumerate() {
                    let want = direct_sum(-n, i - 1, j - 1, spec.poles[mu], spec.poles[nu].conj());
                    worst(&mut phi_err, (phi[(a, b)] - want).norm() / want.norm().max(1.0));
                }
            }
        }
    }
    let detail = format!("100 random identities worst {err:.2e}; Phi entries worst {phi_err:.2e}");
    if err <= 1e-9 && phi_err <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let specs: Vec<(&str, RationalSymbolSpec)> = vec![
        ("d=1 K=1", single_pole_symbol()),
        ("d=2 K=2", random_spec(2, 2, &[1, 2], 1, 61)),
        ("d=3 K=1", random_spec(3, 1, &[2], 2, 62)),
    ];
    let ns = [8usize, 16, 32, 64, 128];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, spec) in specs {
        let t = CoefficientTables::new(&spec).map_err(|x| x.to_string())?;
        let rhs = RhsSequence::Geometric {
            first: CMat::identity(spec.d, spec.d),
            ratio: c(0.5, 0.0),
        };
        let rep = oracle::convergence_experiment(&t, &rhs, &ns).map_err(|x| x.to_string())?;
        let ratio = rep.deltas[ns.len() - 1] / rep.deltas[0];
        ok &= ratio <= 1e-3;
        parts.push(format!("{name} ratio {ratio:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{}, {secs:.2}s", parts.join(", "));
    if ok && secs < 60.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_7() -> Outcome {
    let spec = random_spec(2, 2, &[1, 2], 1, 71);
    let t = CoefficientTables::new(&spec).map_err(|x| x.to_string())?;
    // warm-up
    time_fast(&t, 1 << 12, 2, 3).map_err(|x| x.to_string())?;
    let sizes = [1usize << 14, 1 << 15, 1 << 16, 1 << 17];
    let mut times = Vec::new();
    for &n in &sizes {
        times.push(time_fast(&t, n, 5, 7).map_err(|x| x.to_string())?);
    }
    let ratios: Vec<f64> = times.windows(2).map(|w| w[1] / w[0]).collect();
    let detail = format!(
        "medians {} s; t(2n)/t(n) for n = 2^14, 2^15, 2^16: {}",
        times.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", "),
        ratios.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
    );
    if ratios.iter().all(|&r| r <= 2.6) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn regional_blocks(
    t: &CoefficientTables,
    sv: Option<&SolveVectors>,
    n: usize,
    s: usize,
    u: usize,
) -> toeplitz_arma::Result<Vec<CMat>> {
    let m0 = t.spec().m0;
    let mut out = Vec::new();
    for r in Region::ALL {
        if !r.applies(n, m0, s, u) {
            continue;
        }
        out.push(match sv {
            Some(sv) => inverse_block_arma_region(t, sv, s, u, r)?,
            None => inverse_block_ar_region(t, n, s, u, r)?,
        });
    }
    Ok(out)
}

fn criterion_8() -> Outcome {
    let mut overlap: f64 = 0.0;
    let mut adjoint: f64 = 0.0;
    let mut fast_overlap: f64 = 0.0;
    let mut fast_ok = true;
    for e in sweep() {
        let spec = e.spec();
        let t = CoefficientTables::new(&spec).map_err(|x| x.to_string())?;
        let kit = if spec.k() > 0 {
            Some(ClosedFormKit::from_tables(&t).map_err(|x| x.to_string())?)
        } else {
            None
        };
        for n in [8usize, 32] {
            let sv = match &kit {
                Some(k) => Some(k.solve_vectors(n).map_err(|x| x.to_string())?),
                None => None,
            };
            let mut blocks: Vec<Vec<Vec<CMat>>> = Vec::with_capacity(n);
            let mut scale: f64 = 1.0;
            for s in 1..=n {
                let mut row = Vec::with_capacity(n);
                for u in 1..=n {
                    let vals = regional_blocks(&t, sv.as_ref(), n, s, u).map_err(|x| x.to_string())?;
                    for v in &vals {
                        scale = scale.max(v.amax_norm());
                    }
                    row.push(vals);
                }
                blocks.push(row);
            }
            for s in 0..n {
                for u in 0..n {
                    let here = &blocks[s][u];
                    for v in &here[1..] {
                        worst(&mut overlap, max_abs_diff(v, &here[0]) / scale);
                    }
                    for v in here {
                        for w in &blocks[u][s] {
                            worst(&mut adjoint, max_abs_diff(v, &w.adjoint()) / scale);
                        }
                    }
                }
            }
        }
        let y = random_block_vector(128, spec.d, spec.d, e.seed);
        let rep = fast_solver::solve(&t, &y, &FastOptions::default()).map_err(|x| x.to_string())?;
        worst(&mut fast_overlap, rep.overlap_defect);
        fast_ok &= rep.overlap_ok;
    }
    let detail = format!(
        "regional overlap {overlap:.2e}, self-adjointness {adjoint:.2e} (relative, tol 1e-11); fast solver overlap {fast_overlap:.2e} (tol 1e-9)"
    );
    if overlap <= 1e-11 && adjoint <= 1e-11 && fast_ok && fast_overlap <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

trait AmaxNorm {
    fn amax_norm(&self) -> f64;
}

impl AmaxNorm for CMat {
    fn amax_norm(&self) -> f64 {
        self.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("example golden values", criterion_1),
        ("oracle equivalence sweep", criterion_2),
        ("beta three-way agreement", criterion_3),
        ("b closed form vs recursion", criterion_4),
        ("binomial series identities", criterion_5),
        ("strong convergence", criterion_6),
        ("linear-time scaling", criterion_7),
        ("self-adjointness and overlaps", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("criterion {}: PASS  {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {d}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
