use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("{0} payoffs have no recombining state space; use path-tree mode")]
    NotReducible(&'static str),

    #[error("path tree with n = {n} exceeds the bound n <= {max}")]
    Budget { n: usize, max: usize },

    #[error("initial capital {capital} is below the option value {value}")]
    InsufficientCapital { capital: f64, value: f64 },

    #[error("at least one stopping-time candidate is required")]
    NoCandidates,

    #[error("rate fit needs at least two (n, error) pairs with positive errors: {0}")]
    RateFit(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
