//! Command-line front end of the `tpz` binary.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::bench::{self, Method};
use crate::closed_form::{self, ClosedFormKit};
use crate::coefficients::CoefficientTables;
use crate::error::{Error, Result};
use crate::fast_solver::{FastOptions, FastSolver};
use crate::io::{self, Format};
use crate::linalg::{self, BlockMatrix, BlockVector, CMat, C64};
use crate::oracle::{self, RhsSequence};
use crate::series_inverse::{self, SeriesOptions, SeriesVariant};

#[derive(Debug, Parser)]
#[command(name = "tpz", version, about = "Block Toeplitz systems with rational symbols")]
pub struct Cli {
    /// Worker threads for independent block evaluations.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a symbol spec and print the validation report.
    Validate(SpecArg),
    /// Print coefficient sequences as JSON.
    Coeffs(CoeffsArgs),
    /// Compute the full inverse of T_n(w).
    Invert(InvertArgs),
    /// Solve T_n(w) Z = Y.
    Solve(SolveArgs),
    /// Dump the closed-form kit for a given n.
    Kit(KitArgs),
    /// Finite against infinite solutions for a geometric right-hand side.
    Converge(ConvergeArgs),
    /// Time the solvers.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SpecArg {
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CoeffKind {
    A,
    ATilde,
    C,
    CTilde,
    Gamma,
    Beta,
}

#[derive(Debug, Args)]
pub struct CoeffsArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Number of terms.
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "a")]
    pub kind: CoeffKind,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Tilde,
    Plain,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VerifyArg {
    Dense,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value = "closed")]
    pub method: Method,
    #[arg(long, default_value_t = 1e-12)]
    pub tol: f64,
    #[arg(long, value_enum, default_value = "tilde")]
    pub variant: VariantArg,
    /// Series mode without error control when the recursion does not contract.
    #[arg(long)]
    pub uncertified: bool,
    /// `.bin` writes the binary dump, anything else CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub verify_against: Option<VerifyArg>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Expected system size; defaults to the length of Y.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long, default_value = "fast")]
    pub method: Method,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub verify_against: Option<VerifyArg>,
    /// Report the residual of the computed solution.
    #[arg(long)]
    pub residual: bool,
    /// Fall back to dense LU when n < 2 m0 + 1.
    #[arg(long)]
    pub dense_fallback: bool,
    #[arg(long, default_value_t = 0x5eed)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct KitArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub n: usize,
    /// Override the contour radius used for the Laurent data.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, default_value_t = 512)]
    pub nodes: usize,
}

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
    pub ns: Vec<usize>,
    /// `y_k = ratio^{k-1} I`.
    #[arg(long, default_value_t = 0.5)]
    pub ratio: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "256,1024,4096")]
    pub ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "fast,levinson,dense")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(Error::Io(msg)) if msg.contains("Broken pipe") => 0,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            e.exit_code()
        }
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn load(spec: &Path) -> Result<CoefficientTables> {
    let spec = io::read_spec(spec)?;
    spec.validate()?;
    CoefficientTables::new(&spec)
}

fn mat_json(m: &CMat) -> serde_json::Value {
    json!((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        // a second initialisation in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Validate(a) => {
            let spec = io::read_spec(&a.spec)?;
            let (report, err) = spec.validate_report();
            print_json(&report)?;
            match err {
                Some(e) => Err(e),
                None => Ok(()),
            }
        }
        Command::Coeffs(a) => {
            let t = load(&a.spec)?;
            let vals: Vec<CMat> = match a.kind {
                CoeffKind::A => (0..a.n).map(|k| t.a(k)).collect(),
                CoeffKind::ATilde => (0..a.n).map(|k| t.a_tilde(k)).collect(),
                CoeffKind::C => (0..a.n).map(|k| t.c(k)).collect(),
                CoeffKind::CTilde => (0..a.n).map(|k| t.c_tilde(k)).collect(),
                CoeffKind::Gamma => (0..a.n).map(|k| t.gamma(k as i64)).collect(),
                CoeffKind::Beta => (1..=a.n).map(|k| t.beta(k as i64)).collect::<Result<_>>()?,
            };
            let first = if matches!(a.kind, CoeffKind::Beta) { 1 } else { 0 };
            let doc = json!({
                "kind": format!("{:?}", a.kind),
                "first_index": first,
                "values": vals.iter().map(mat_json).collect::<Vec<_>>(),
            });
            let mut w = output(a.out.as_deref())?;
            writeln!(w, "{}", serde_json::to_string_pretty(&doc)?)?;
            Ok(())
        }
        Command::Invert(a) => {
            let t = load(&a.spec)?;
            if !(a.tol > 0.0) {
                return Err(Error::DomainViolation("tolerance must be positive".into()));
            }
            if a.n == 0 {
                return Err(Error::DomainViolation("n must be at least 1".into()));
            }
            let m = invert(&t, a)?;
            if let Some(VerifyArg::Dense) = a.verify_against {
                let dense = oracle::dense_inverse(&t, a.n)?;
                let dev = linalg::max_abs_diff(&m.data, &dense.data);
                eprintln!("{}", json!({ "verify": "dense", "max_abs_diff": dev }));
            }
            match &a.out {
                Some(p) => io::write_matrix(p, &m, Format::from_path(p)),
                None => io::write_matrix_csv(std::io::stdout().lock(), &m),
            }
        }
        Command::Solve(a) => {
            let t = load(&a.spec)?;
            let y = io::read_vector(&a.y)?;
            if y.d != t.spec().d {
                return Err(Error::DimensionMismatch(format!(
                    "Y has block rows {}, spec has d = {}",
                    y.d,
                    t.spec().d
                )));
            }
            if let Some(n) = a.n {
                if n != y.n {
                    return Err(Error::DimensionMismatch(format!("--n {n} but Y has {} blocks", y.n)));
                }
            }
            let (z, report) = match a.method {
                Method::Fast => {
                    let opts = FastOptions {
                        compute_residual: a.residual,
                        dense_fallback: a.dense_fallback,
                        seed: a.seed,
                        ..Default::default()
                    };
                    let r = FastSolver::new(&t)?.solve(&y, &opts)?;
                    let rep = serde_json::to_value(&r)?;
                    (r.z, rep)
                }
                Method::Dense => {
                    let z = oracle::dense_solve(&t, &y)?;
                    let res = if a.residual { Some(oracle::dense_residual(&t, &z, &y)?) } else { None };
                    (z, json!({ "method": "dense", "n": y.n, "residual": res }))
                }
                Method::Levinson => {
                    let z = oracle::levinson_solve(&t, &y)?;
                    let res = if a.residual { Some(oracle::dense_residual(&t, &z, &y)?) } else { None };
                    (z, json!({ "method": "levinson", "n": y.n, "residual": res }))
                }
                m => return Err(Error::NotApplicable(format!("solve does not support method {m}"))),
            };
            eprintln!("{report}");
            if let Some(VerifyArg::Dense) = a.verify_against {
                let dense = oracle::dense_solve(&t, &y)?;
                eprintln!("{}", json!({ "verify": "dense", "relative_diff": z.rel_diff(&dense) }));
            }
            match &a.out {
                Some(p) => io::write_vector(p, &z, Format::from_path(p)),
                None => io::write_vector_csv(std::io::stdout().lock(), &z),
            }
        }
        Command::Kit(a) => {
            let spec = io::read_spec(&a.spec)?;
            spec.validate()?;
            let theta = closed_form::compute_theta(
                &spec,
                closed_form::ThetaOptions {
                    nodes: a.nodes,
                    radius: a.radius,
                    ..Default::default()
                },
            )?;
            let kit = ClosedFormKit::with_theta(&spec, theta)?;
            let (g, gt) = kit.build_g(a.n as i64);
            let sv = kit.solve_vectors(a.n)?;
            let doc = json!({
                "n": a.n,
                "M": kit.m,
                "lambda": mat_json(&kit.lambda),
                "theta": mat_json(&kit.theta_mat),
                "g_norm": linalg::op_norm(&g),
                "g_tilde_norm": linalg::op_norm(&gt),
                "spectral_radius": sv.spectral_radius,
                "spectral_radius_tilde": sv.spectral_radius_tilde,
            });
            print_json(&doc)?;
            Ok(())
        }
        Command::Converge(a) => {
            let t = load(&a.spec)?;
            let rhs = RhsSequence::Geometric {
                first: linalg::eye(t.spec().d),
                ratio: C64::new(a.ratio, 0.0),
            };
            let rep = oracle::convergence_experiment(&t, &rhs, &a.ns)?;
            bench::write_convergence_csv(output(a.out.as_deref())?, &rep)
        }
        Command::Bench(a) => {
            let t = load(&a.spec)?;
            let rows = bench::bench(&t, &a.ns, &a.methods, a.reps, a.seed)?;
            bench::write_bench_csv(output(a.out.as_deref())?, &rows)
        }
    }
}

fn invert(t: &CoefficientTables, a: &InvertArgs) -> Result<BlockMatrix> {
    match a.method {
        Method::Dense => oracle::dense_inverse(t, a.n),
        Method::Closed => Ok(closed_form::inverse_closed(t, a.n)?.matrix),
        Method::Series => {
            let variant = match a.variant {
                VariantArg::Tilde => SeriesVariant::Tilde,
                VariantArg::Plain => SeriesVariant::Plain,
            };
            let opts = SeriesOptions {
                tol: a.tol,
                allow_uncertified: a.uncertified,
                ..Default::default()
            };
            let (m, tr) = series_inverse::inverse_series(t, a.n, variant, &opts)?;
            eprintln!("{}", serde_json::to_string(&tr)?);
            Ok(m)
        }
        Method::Fast | Method::Levinson => {
            // columns of the inverse from unit right-hand sides
            let d = t.spec().d;
            let solver = FastSolver::new(t)?;
            let mut m = BlockMatrix::zeros(a.n, d);
            for col in 1..=a.n {
                let mut e = BlockVector::zeros(a.n, d, d);
                e.blocks[col - 1] = linalg::eye(d);
                let z = if a.method == Method::Fast {
                    solver.solve(&e, &FastOptions::default())?.z
                } else {
                    oracle::levinson_solve(t, &e)?
                };
                for s in 1..=a.n {
                    m.set_block(s, col, z.get(s));
                }
            }
            m.hermitian = true;
            Ok(m)
        }
    }
}
