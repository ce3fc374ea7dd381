//! Wall-clock comparison of the solvers.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coefficients::CoefficientTables;
use crate::error::{Error, Result};
use crate::fast_solver::{self, FastOptions, FastSolver};
use crate::linalg::{BlockVector, CMat, C64};
use crate::oracle;

/// Algorithms exposed on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Series,
    Closed,
    Fast,
    Dense,
    Levinson,
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "series" => Method::Series,
            "closed" => Method::Closed,
            "fast" => Method::Fast,
            "dense" => Method::Dense,
            "levinson" => Method::Levinson,
            other => return Err(format!("unknown method '{other}'")),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Series => "series",
            Method::Closed => "closed",
            Method::Fast => "fast",
            Method::Dense => "dense",
            Method::Levinson => "levinson",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub m0: usize,
    /// `None` when the method was skipped at this size.
    pub median_seconds: Option<f64>,
    pub residual: Option<f64>,
}

/// Seeded random right-hand side with `d x d` blocks.
pub fn random_rhs(n: usize, d: usize, seed: u64) -> BlockVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    BlockVector {
        n,
        d,
        blocks: (0..n)
            .map(|_| CMat::from_fn(d, d, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
            .collect(),
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Median wall-clock of `reps` fast solves at size `n`.
pub fn time_fast(tables: &CoefficientTables, n: usize, reps: usize, seed: u64) -> Result<f64> {
    let solver = FastSolver::new(tables)?;
    let y = random_rhs(n, tables.spec().d, seed);
    let opts = FastOptions::default();
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let t0 = Instant::now();
        solver.solve(&y, &opts)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    Ok(median(&mut times))
}

/// Run every method at every size; `reps` timings per cell.
pub fn bench(
    tables: &CoefficientTables,
    ns: &[usize],
    methods: &[Method],
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let spec = tables.spec();
    let mut rows = Vec::new();
    for &n in ns {
        let y = random_rhs(n, spec.d, seed);
        for &method in methods {
            let row = |median_seconds, residual| BenchRow {
                method,
                n,
                d: spec.d,
                k: spec.k(),
                m0: spec.m0,
                median_seconds,
                residual,
            };
            let skip = match method {
                Method::Dense => n > oracle::dense_cap(),
                Method::Fast => n < 2 * spec.m0 + 1,
                Method::Series | Method::Closed => {
                    return Err(Error::NotApplicable(format!(
                        "method {method} computes inverses and is not benchmarked"
                    )))
                }
                Method::Levinson => false,
            };
            if skip {
                rows.push(row(None, None));
                continue;
            }
            let mut times = Vec::with_capacity(reps);
            let mut z = None;
            let solver = if method == Method::Fast { Some(FastSolver::new(tables)?) } else { None };
            for _ in 0..reps.max(1) {
                let t0 = Instant::now();
                let out = match method {
                    Method::Fast => solver.as_ref().expect("built").solve(&y, &FastOptions::default())?.z,
                    Method::Dense => oracle::dense_solve(tables, &y)?,
                    _ => oracle::levinson_solve(tables, &y)?,
                };
                times.push(t0.elapsed().as_secs_f64());
                z = Some(out);
            }
            let z = z.expect("at least one run");
            let residual = if method == Method::Dense {
                oracle::dense_residual(tables, &z, &y)?
            } else {
                fast_solver::banded_residual(tables, &z, &y).0
            };
            rows.push(row(Some(median(&mut times)), Some(residual)));
        }
    }
    Ok(rows)
}

/// CSV with columns `method,n,d,K,m0,median_seconds,residual`; skipped cells
/// carry `skipped`.
pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "n", "d", "K", "m0", "median_seconds", "residual"])?;
    for r in rows {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_else(|| "skipped".into());
        out.write_record([
            r.method.to_string(),
            r.n.to_string(),
            r.d.to_string(),
            r.k.to_string(),
            r.m0.to_string(),
            fmt(r.median_seconds),
            fmt(r.residual),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// CSV with columns `n,delta`.
pub fn write_convergence_csv<W: Write>(w: W, rep: &oracle::ConvergenceReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "delta"])?;
    for (n, d) in rep.ns.iter().zip(&rep.deltas) {
        out.write_record([n.to_string(), format!("{d:e}")])?;
    }
    out.flush()?;
    Ok(())
}
