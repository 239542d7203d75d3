//! Crate-wide error type.
//!
//! One enum covers the whole pipeline so callers (in particular the CLI)
//! can map failures to exit codes: data problems versus numerical
//! breakdowns.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("frame index {index} is missing from the sequence in {dir}")]
    FrameGap { dir: PathBuf, index: usize },

    #[error("need at least 2 frames, found {found} in {dir}")]
    TooFewFrames { dir: PathBuf, found: usize },

    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        index: usize,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },

    #[error("visibility masks missing for frames {missing:?}")]
    MissingMasks { missing: Vec<usize> },

    #[error("annotation masks not found in {dir}")]
    MissingAnnotations { dir: PathBuf },

    #[error("series of length {len} is too short for beta={beta}: pattern would be empty")]
    EmptyPattern { len: usize, beta: usize },

    #[error("pattern lengths differ: {a} vs {b}")]
    PatternLengthMismatch { a: usize, b: usize },

    #[error("region is fully occluded: no visible samples")]
    FullyOccluded,

    #[error("histogram has zero norm")]
    ZeroNormHistogram,

    #[error("pattern has an empty short-scale block")]
    EmptyRichnessBlock,

    #[error("hierarchy level {percent} outside [0, 100]")]
    LevelOutOfRange { percent: f64 },

    #[error("video {w}x{h}x{n} is too small for one descriptor window {need}")]
    VideoTooSmall { w: u32, h: u32, n: usize, need: String },

    #[error("k-means needs {k} distinct descriptors, found {distinct}")]
    TooFewDescriptors { k: usize, distinct: usize },

    #[error("training set must contain both classes")]
    SingleClassTraining,

    #[error("training set needs at least 2 samples, found {found}")]
    TooFewSamples { found: usize },

    #[error("feature vector has {got} entries, model expects {want}")]
    FeatureDimMismatch { got: usize, want: usize },

    #[error("model file {path} has incompatible version/layout: {detail}")]
    ModelFormat { path: PathBuf, detail: String },

    #[error("series of length {len} is too short for a spectrum (need at least 2 samples)")]
    DftTooShort { len: usize },

    #[error("series of length {len} too short: interval needs more than {tau} spectrum bins")]
    IntervalTooShort { len: usize, tau: usize },

    #[error(
        "invisible component of {size} entries around (x={x}, y={y}, frame={frame}) \
         has no visible neighbor to inpaint from"
    )]
    IsolatedInvisible {
        x: u32,
        y: u32,
        frame: usize,
        size: usize,
    },

    #[error("homography needs at least 4 correspondences, got {got}")]
    TooFewCorrespondences { got: usize },

    #[error("degenerate point configuration: homography system is rank deficient")]
    DegenerateHomography,

    #[error("gamma {gamma} outside [0, 1]")]
    GammaOutOfRange { gamma: f64 },

    #[error("matrix contains non-finite entries")]
    NonFiniteInput,

    #[error("config error: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("stage {stage} failed: {source} (hint: {hint})")]
    Stage {
        stage: &'static str,
        hint: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for numerical/solver breakdowns (CLI exit code 3); everything
    /// else is treated as a data or usage problem (exit code 2).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_numerical(),
            _ => matches!(
                self,
                Error::NonFiniteInput
                    | Error::DegenerateHomography
                    | Error::IsolatedInvisible { .. }
                    | Error::ZeroNormHistogram
            ),
        }
    }

    /// Tag an error with the pipeline stage it happened in and a
    /// remediation hint.
    pub fn in_stage(self, stage: &'static str, hint: &str) -> Error {
        Error::Stage {
            stage,
            hint: hint.to_string(),
            source: Box::new(self),
        }
    }

    /// The stage tag, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
