use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Summed per-step detection probability exceeded one; the grid spacing is too coarse.
    #[error("step-size error at step {step} (t = {time:.6}): summed detection probability {total:.6} > 1")]
    StepSize { step: u64, time: f64, total: f64 },

    /// More detections fell inside one memory window than the engine is allowed to track.
    #[error("window overflow at t = {time:.6}: {in_window} detections inside one memory window")]
    WindowOverflow { time: f64, in_window: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical faults raised while stepping a trajectory (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::StepSize { .. } | Error::WindowOverflow { .. })
    }
}
