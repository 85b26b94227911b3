use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("numeric range exceeded: {0}")]
    NumericRange(String),
    #[error("matrix is not Hermitian (defect {defect:.3e}, tolerance {tol:.3e})")]
    NotHermitian { defect: f64, tol: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:.3e})")]
    NotPsd { eigenvalue: f64 },
    #[error("columns are rank deficient: numerical rank {rank} of {cols}")]
    RankDeficient { rank: usize, cols: usize },
    #[error("point |z| = {radius:.4} outside chart radius {r_max:.4}")]
    Domain { radius: f64, r_max: f64 },
    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),
    #[error("grid does not resolve the identity: residual {residual:.3e} > gate {gate:.3e}")]
    UnresolvedGrid { residual: f64, gate: f64 },
    #[error("state is not a density operator: {0}")]
    State(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("cutoff {cutoff:.4e} falls inside a cluster; nearby eigenvalues {nearby:?}")]
    AmbiguousCutoff { cutoff: f64, nearby: Vec<f64> },
    #[error("spectral gap {gap:.4e} is below 10x the discretization error {disc_error:.4e}")]
    UnreliableGap { gap: f64, disc_error: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("vector is not in the kernel: defect {0:.3e}")]
    NotInKernel(f64),
    #[error("Monte Carlo refused: {0}")]
    McRefused(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, BsError>;

impl From<std::io::Error> for BsError {
    fn from(e: std::io::Error) -> Self {
        BsError::Io(e.to_string())
    }
}

impl From<csv::Error> for BsError {
    fn from(e: csv::Error) -> Self {
        BsError::Io(e.to_string())
    }
}
