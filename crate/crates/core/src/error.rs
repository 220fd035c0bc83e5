use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty autocalibration region in frame {frame}")]
    EmptyAutocalibration { frame: usize },

    /// Pixels are reported as `(x, y_line, frame)`, truncated to the first few.
    #[error("zero coil sensitivity at {count} pixel(s), first: {pixels:?}")]
    ZeroSensitivity {
        count: usize,
        pixels: Vec<(usize, usize, usize)>,
    },

    #[error("sensitivities are not normalized (max deviation {deviation:.3e})")]
    NotNormalized { deviation: f64 },

    #[error("line budget {budget} is smaller than the {forced} forced lines in frame {frame}")]
    BudgetTooSmall {
        budget: usize,
        forced: usize,
        frame: usize,
    },

    #[error("kt scheme is phase-specific only")]
    KtUnified,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("frame of {0}x{1} is smaller than the SSIM window")]
    FrameTooSmall(usize, usize),

    #[error("sequence has {0} frame(s); 3D SSIM needs at least 3")]
    TooFewFrames(usize),

    #[error("zero ground truth")]
    ZeroGroundTruth,

    #[error("zero data range; pass an explicit range")]
    ZeroDataRange,

    #[error("container: {0}")]
    Container(String),

    #[error("config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
