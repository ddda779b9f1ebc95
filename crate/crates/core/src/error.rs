use thiserror::Error;

/// Errors raised by plan construction and evaluation.
///
/// Everything here is a violated precondition or a structurally broken input.
/// Slow or failed Sinkhorn convergence is deliberately *not* an error: it is
/// reported through [`crate::scaling::SinkhornResult::converged`] so that
/// infeasible marginal patterns can be diagnosed from the residual.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("matrix entry ({row}, {col}) is {value}, expected a finite nonnegative number")]
    InvalidEntry { row: usize, col: usize, value: f64 },

    #[error("row {0} has no positive entry")]
    ZeroRow(usize),

    #[error("column {0} has no positive entry")]
    ZeroCol(usize),

    #[error("matrix dimensions {left_rows}x{left_cols} and {right_rows}x{right_cols} do not agree")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("vector length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("marginal entry {index} is {value}, expected a finite nonnegative number")]
    InvalidMarginalEntry { index: usize, value: f64 },

    #[error("marginal entry {index} must be strictly positive for Sinkhorn scaling")]
    NonPositiveMarginal { index: usize },

    #[error("marginal masses differ: row mass {row_mass} vs column mass {col_mass} (relative gap {gap:.3e} > 1e-9)")]
    MassMismatch {
        row_mass: f64,
        col_mass: f64,
        gap: f64,
    },

    #[error("{0} must be strictly positive, got {1}")]
    NonPositiveParameter(&'static str, f64),

    #[error("expected a {expected} plan, got a {got} plan")]
    PlanKindMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error("matrix must be square for diagonal analysis, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("exhaustive diagonal enumeration is limited to n <= 8, got n = {0}")]
    ExhaustiveTooLarge(usize),

    #[error("diagonal product for the reference permutation is zero")]
    ZeroDiagonalProduct,

    #[error("permutation {0:?} is not a permutation of 0..{1}")]
    BadPermutation(Vec<usize>, usize),

    #[error(
        "the dual linear system is singular; the pattern is degenerate \
         (gradients require a strictly positive plan on a connected pattern)"
    )]
    SingularSystem,

    #[error("gradients require the base plan to be converged (residual {0:.3e})")]
    UnconvergedPlan(f64),

    #[error("entry ({0}, {1}) is zero; matrix gradients only exist on the positive pattern")]
    ZeroPatternEntry(usize, usize),

    #[error("perturbation fraction {0} must select at least one entry and lie in (0, 1]")]
    BadPerturbationFraction(f64),

    #[error("study config: {0}")]
    BadStudyConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
