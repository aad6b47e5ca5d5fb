use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("psi derivative is singular at z = {z}")]
    SingularDerivative { z: f64 },

    #[error("series did not converge within {terms} terms")]
    Convergence { terms: usize },

    #[error("sample lengths or grids do not match: {0}")]
    GridMismatch(String),

    #[error("Picard iteration did not converge in {max_iter} iterations (last sup change {last_diff:e})")]
    NoConvergence { max_iter: usize, last_diff: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("divergent series: W1(1+W2)*gamma = {product} >= 1")]
    DivergentSeries { product: f64 },

    #[error("evaluation failed at node {node} (z = {z}): {source}")]
    NodeEval {
        node: usize,
        z: f64,
        #[source]
        source: ExprError,
    },

    #[error(transparent)]
    Expr(#[from] ExprError),
}
