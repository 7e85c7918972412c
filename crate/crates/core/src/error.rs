use std::fmt;
use std::path::PathBuf;

/// One precise complaint about a scenario: where, and which rule failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub rule: String,
}

impl Diagnostic {
    pub fn new(path: impl Into<String>, rule: impl Into<String>) -> Self {
        Self { path: path.into(), rule: rule.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.rule)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: String,
        found: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A weight matrix fails the semi-definiteness or definiteness the
    /// decomposition needs. `t` is 1-based.
    #[error("{matrix} not {requirement} at t={t} (smallest eigenvalue {min_eigenvalue:.3e})")]
    Convexity {
        matrix: String,
        requirement: &'static str,
        t: usize,
        min_eigenvalue: f64,
    },

    #[error("{what} is ill-conditioned at t={t} (condition number {condition:.3e})")]
    IllConditioned { what: String, t: usize, condition: f64 },

    #[error("bound construction: {0}")]
    BoundConstruction(String),

    /// The fixed initial state of a receding-horizon window already lies
    /// outside its box, so no input can repair stage zero.
    #[error("window start state outside its box at t={t} (violation {violation:.3e}); constraint drift")]
    RootOutsideBox { t: usize, violation: f64 },

    #[error("QP infeasible at t={t}: {context}")]
    Infeasible { t: usize, context: String },

    #[error("QP did not converge at t={t}: {context} (primal {primal:.3e}, dual {dual:.3e})")]
    NotConverged {
        t: usize,
        context: String,
        primal: f64,
        dual: f64,
    },

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("{}", join_diagnostics(.0))]
    Validation(Vec<Diagnostic>),

    #[error("refusing to overwrite {0} (pass --force)")]
    WouldOverwrite(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn join_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl fmt::Display, found: impl fmt::Display) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors that stem from the input rather than from running it.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. }
                | Error::InvalidInput(_)
                | Error::Convexity { .. }
                | Error::BoundConstruction(_)
                | Error::Parse(_)
                | Error::Validation(_)
                | Error::WouldOverwrite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
