//! Rendering: occlusion inpainting, jitter stabilization, low-rank
//! appearance regularization, and final loop compositing.
//!
//! The per-segment order is inpaint → stabilize → regularize; the
//! composited output plays display regions as a forward-backward
//! (ping-pong) loop of length 2·(N−1) while repetitive pixels tile their
//! best interval from the untouched source frames, everything else frozen
//! to the reference frame.

mod compose;
mod homography;
mod inpaint;
mod rpca;
mod track;

pub use compose::{feather_alpha, ping_pong_index, render_loop, RenderReport};
pub use homography::{apply_homography, fit_homography, stabilize, StabilizeReport};
pub use inpaint::inpaint;
pub use rpca::{
    adaptive_lambda, regularize_segment, rpca_apg, soft_threshold, svt, RpcaResult,
    SegmentRegularization,
};
pub use track::{
    filter_tracks, load_tracks, save_tracks, track_features, FeatureTrack,
};
