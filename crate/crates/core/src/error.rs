use thiserror::Error;

/// Every failure mode surfaced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("poles {0} and {1} coincide")]
    DuplicatePoles(usize, usize),
    #[error("pole {index} has modulus {modulus}, expected 0 < |p| < 1")]
    PoleOutOfDomain { index: usize, modulus: f64 },
    #[error("leading residue of pole {index} is zero{}", if *.sharp { " (sharp factor)" } else { "" })]
    ZeroLeadingResidue { index: usize, sharp: bool },
    #[error("sharp coefficients do not match the unsharp shape: {0}")]
    SharpShapeMismatch(String),
    #[error("outerness check failed: {0}")]
    OuternessCheckFailed(String),
    #[error("sharp coefficients are required when d >= 2")]
    MissingSharp,
    #[error("h h* and h# h#* disagree on the circle (max deviation {0:e})")]
    FactorizationMismatch(f64),
    #[error("malformed spec: {0}")]
    MalformedSpec(String),
    #[error("evaluation point coincides with a pole")]
    EvaluationAtPole,
    #[error("h^-1(z) is singular at the evaluation point")]
    SingularHInverse,
    #[error("leading coefficient a_0 is singular")]
    SingularLeadingCoefficient,
    #[error("b-recursion does not contract: F(n+1) = {0}")]
    DivergentRecursion(f64),
    #[error("tolerance {tol:e} unreachable within depth cap {cap}")]
    ToleranceUnreachable { tol: f64, cap: usize },
    #[error("contour radius {0:e} is too small")]
    ContourTooTight(f64),
    #[error("contour quadrature did not converge (deviation {0:e})")]
    QuadratureNotConverged(f64),
    #[error("resolvent I - G~G is numerically singular")]
    ResolventSingular,
    #[error("index out of range: {0}")]
    DomainViolation(String),
    #[error("no closed-form region covers block ({0}, {1})")]
    RegionUncovered(usize, usize),
    #[error("n = {n} is smaller than 2 m0 + 1 = {need}")]
    RegionGap { n: usize, need: usize },
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error("matrix is numerically singular")]
    NumericallySingular,
    #[error("Levinson recursion broke down at step {0}")]
    RecursionBreakdown(usize),
    #[error("right-hand side is not summable (ratio modulus {0})")]
    NonSummableRHS(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Stable machine name of the variant.
    pub fn kind(&self) -> &'static str {
        use Error::*;
        match self {
            DuplicatePoles(..) => "DuplicatePoles",
            PoleOutOfDomain { .. } => "PoleOutOfDomain",
            ZeroLeadingResidue { .. } => "ZeroLeadingResidue",
            SharpShapeMismatch(_) => "SharpShapeMismatch",
            OuternessCheckFailed(_) => "OuternessCheckFailed",
            MissingSharp => "MissingSharp",
            FactorizationMismatch(_) => "FactorizationMismatch",
            MalformedSpec(_) => "MalformedSpec",
            EvaluationAtPole => "EvaluationAtPole",
            SingularHInverse => "SingularHInverse",
            SingularLeadingCoefficient => "SingularLeadingCoefficient",
            DivergentRecursion(_) => "DivergentRecursion",
            ToleranceUnreachable { .. } => "ToleranceUnreachable",
            ContourTooTight(_) => "ContourTooTight",
            QuadratureNotConverged(_) => "QuadratureNotConverged",
            ResolventSingular => "ResolventSingular",
            DomainViolation(_) => "DomainViolation",
            RegionUncovered(..) => "RegionUncovered",
            RegionGap { .. } => "RegionGap",
            NotApplicable(_) => "NotApplicable",
            NumericallySingular => "NumericallySingular",
            RecursionBreakdown(_) => "RecursionBreakdown",
            NonSummableRHS(_) => "NonSummableRHS",
            DimensionMismatch(_) => "DimensionMismatch",
            Io(_) => "Io",
            Parse(_) => "Parse",
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            DuplicatePoles(..)
            | PoleOutOfDomain { .. }
            | ZeroLeadingResidue { .. }
            | SharpShapeMismatch(_)
            | OuternessCheckFailed(_)
            | MissingSharp
            | FactorizationMismatch(_)
            | MalformedSpec(_)
            | Io(_)
            | Parse(_)
            | DimensionMismatch(_) => 3,
            _ => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
