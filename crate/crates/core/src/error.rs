use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("resource error: {0}")]
    Resource(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("solver diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("frequency {0} GHz is not monitored")]
    NotMonitored(f64),

    #[error("inconsistent runs: {0}")]
    InconsistentRuns(String),

    #[error("frequency {freq_ghz} GHz lies outside the source spectrum [{lo_ghz:.1}, {hi_ghz:.1}] GHz")]
    Bandwidth { freq_ghz: f64, lo_ghz: f64, hi_ghz: f64 },

    #[error("no resonance dip below {threshold_db} dB for port {port} in [{lo_ghz}, {hi_ghz}] GHz")]
    FlatSpectrum {
        port: u32,
        lo_ghz: f64,
        hi_ghz: f64,
        threshold_db: f64,
    },

    #[error("no candidate length produced a resonance")]
    NoResonance,

    #[error("field library fingerprint mismatch: library {library}, expected {expected}")]
    FingerprintMismatch { library: String, expected: String },

    #[error("port {0} is not available")]
    MissingPort(u32),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("region does not overlap the observation plane")]
    EmptyRegion,

    #[error("field has zero total energy")]
    ZeroField,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
