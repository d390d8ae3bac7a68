use thiserror::Error;

/// Which standing assumption on the problem data was violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Assumption {
    /// Pointing set interiors must be pairwise disjoint.
    DisjointInteriors,
    /// Facet matrices must have full row rank and the terminal cost gradient must be nonzero.
    FullRankAndNontrivialCost,
    /// Input norm bounds must satisfy `0 < rho1 < rho2`.
    DistinctNormBounds,
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Assumption::DisjointInteriors => write!(f, "pointing set interiors overlap"),
            Assumption::FullRankAndNontrivialCost => {
                write!(f, "facet matrix rank deficient or terminal cost gradient zero")
            }
            Assumption::DistinctNormBounds => write!(f, "input norm bounds are not 0 < rho1 < rho2"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("assumption violated ({assumption}): {detail}")]
    Assumption {
        assumption: Assumption,
        detail: String,
    },

    #[error("conic solver failed: {0}")]
    Solver(String),

    #[error("search bracket: {0}")]
    Bracket(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
