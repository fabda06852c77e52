use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point {x} lies outside the domain [{lo}, {hi}]")]
    Domain { x: f64, lo: f64, hi: f64 },

    #[error("orbit meets a critical point numerically at step {step}")]
    CriticalHit { step: usize },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid gamma series: {0}")]
    InvalidSeries(String),

    #[error("window too short: need at least {needed} entries, got {got}")]
    WindowTooShort { needed: usize, got: usize },

    #[error("sequence spans less than two log units; no rate can be inferred")]
    DegenerateSequence,

    #[error("bracket does not enclose the target combinatorics: {0}")]
    Bracket(String),

    #[error("no threshold index in the window satisfies the geometric bound")]
    NoThreshold,

    #[error("no valid critical neighbourhood after {halvings} halvings: {reason}")]
    NoValidDelta { halvings: usize, reason: String },

    #[error("outside-neighbourhood expansion rate {lambda} is not positive")]
    NonHyperbolicSample { lambda: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no preimage depth t0 <= {depth} covers the large-scale net")]
    NoT0 { depth: usize },

    #[error("map is renormalizable with period {period}")]
    Renormalizable { period: usize },

    #[error("censored mass correction {correction} exceeds 5% of tower mass {total}")]
    KacDivergence { correction: f64, total: f64 },

    #[error("independent density estimates disagree: L1 distance {l1}")]
    NonConvergence { l1: f64 },

    #[error("correlation curve reaches the noise floor by n = {n}")]
    AllCensored { n: usize },

    #[error("asymptotic variance estimate {sigma} is below the coboundary screen")]
    CoboundarySuspected { sigma: f64 },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// The dynamical hypothesis a run aborted on, if this error is one.
    pub fn violated_hypothesis(&self) -> Option<&'static str> {
        match self {
            Error::NoValidDelta { .. } => Some(
                "summability / bounded backward contraction: no critical neighbourhood satisfies the selection inequality",
            ),
            Error::NonHyperbolicSample { .. } => {
                Some("no stable or neutral periodic orbit: orbits outside the critical neighbourhood do not expand")
            }
            Error::Renormalizable { .. } => Some("non-renormalizable on the support of the measure"),
            Error::NoT0 { .. } => Some("density of critical preimages in the support"),
            Error::KacDivergence { .. } => Some("summable return times (Kac normalization)"),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
