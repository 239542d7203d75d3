//! End-to-end orchestration: segmentation → display classification →
//! repetitive detection → per-segment rendering (inpaint → stabilize →
//! regularize) → loop compositing, with a manifest recording every
//! decision along the way.

use std::path::Path;

use crate::classifier::{select_display_regions, DisplaySelection, ForestModel, Hog3dCodebook};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::manifest::{
    DisplayRegionRecord, DroppedComponent, Manifest, RepetitiveRecord, RleMask,
    MANIFEST_FILENAME, MANIFEST_VERSION,
};
use crate::render::{
    filter_tracks, inpaint, regularize_segment, render_loop, stabilize, track_features,
};
use crate::repetitive::{repetitive_mask, RepetitiveField};
use crate::segmentation::segment;
use crate::video::{write_frames, FrameSequence, VisibilityVolume};

/// Filename pattern of both input and output frames.
pub const FRAME_PATTERN: &str = "frame_%06d.png";

/// Orchestrator switches (the configuration proper lives in
/// [`PipelineConfig`]).
#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineOptions {
    /// Skip segmentation + classification (no display regions).
    pub no_display: bool,
    /// Skip the repetitive-pixel detector.
    pub no_repetitive: bool,
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    /// The composited loop (2·(N−1) frames).
    pub frames: FrameSequence,
    pub manifest: Manifest,
    /// Per-segment convergence traces, one line per iteration.
    pub diagnostics: String,
}

fn best_masked_interval(field: &RepetitiveField) -> Option<(usize, usize)> {
    let mut best: Option<(f64, (usize, usize))> = None;
    for y in 0..field.height() {
        for x in 0..field.width() {
            if !field.in_mask(x, y) {
                continue;
            }
            let score = field.score(x, y);
            if best.map_or(true, |(s, _)| score > s) {
                best = Some((score, field.best_interval(x, y)));
            }
        }
    }
    best.map(|(_, interval)| interval)
}

/// Run every stage on an in-memory video. Model and codebook are loaded
/// lazily inside the classify stage so `no_display` runs need neither.
pub fn run_pipeline(
    video: &FrameSequence,
    visibility: &VisibilityVolume,
    model_path: Option<&Path>,
    codebook_path: Option<&Path>,
    config: &PipelineConfig,
    options: &PipelineOptions,
) -> Result<PipelineArtifacts> {
    config.validate()?;
    let (width, height) = (video.width(), video.height());

    // Display regions: segment the video, classify every region at the
    // configured hierarchy levels, filter the component union.
    let selection: Option<DisplaySelection> = if options.no_display {
        None
    } else {
        let model_path = model_path.ok_or_else(|| {
            Error::Config("no model file given".into())
                .in_stage("classify", "pass --model or skip with --no-display")
        })?;
        let codebook_path = codebook_path.ok_or_else(|| {
            Error::Config("no codebook file given".into())
                .in_stage("classify", "pass --codebook or skip with --no-display")
        })?;
        let model = ForestModel::load(model_path)
            .map_err(|e| e.in_stage("classify", "train one with the train-forest subcommand"))?;
        let codebook = Hog3dCodebook::load(codebook_path).map_err(|e| {
            e.in_stage("classify", "train one with the train-codebook subcommand")
        })?;
        let hierarchy = segment(video, visibility, &config.segment_params())
            .map_err(|e| e.in_stage("segment", "check frame count versus the descriptor gaps"))?;
        Some(
            select_display_regions(
                video,
                visibility,
                &hierarchy,
                &model,
                &codebook,
                &config.display_params(),
            )
            .map_err(|e| e.in_stage("classify", "check model/codebook dimensions"))?,
        )
    };

    let field: Option<RepetitiveField> = if options.no_repetitive {
        None
    } else {
        Some(repetitive_mask(video, visibility, &config.repetitive_params()))
    };

    // Per-segment rendering: inpaint occlusions, stabilize residual
    // jitter, regularize appearance with RPCA.
    let mut display_videos: Vec<(Vec<(u32, u32)>, FrameSequence)> = Vec::new();
    let mut display_records: Vec<DisplayRegionRecord> = Vec::new();
    let mut diagnostics = String::new();
    if let Some(selection) = &selection {
        for (id, pixels) in selection.components.iter().enumerate() {
            let hint = "inspect the per-stage artifacts via the segment/render subcommands";
            let inpainted = inpaint(video, visibility, pixels)
                .map_err(|e| e.in_stage("render", hint))?;
            let tracks = filter_tracks(track_features(&inpainted, pixels));
            let (stabilized, stab_report) =
                stabilize(&inpainted, &tracks).map_err(|e| e.in_stage("render", hint))?;
            let (regularized, reg) =
                regularize_segment(&stabilized, pixels, config.lambda_base, config.lambda_slope)
                    .map_err(|e| e.in_stage("render", hint))?;
            for (ch, trace) in reg.traces.iter().enumerate() {
                for (k, (objective, residual)) in trace.iter().enumerate() {
                    diagnostics.push_str(&format!(
                        "segment {id} channel {ch} iteration {} objective {objective:e} \
                         residual {residual:e}\n",
                        k + 1
                    ));
                }
            }
            display_records.push(DisplayRegionRecord {
                id,
                pixel_count: pixels.len(),
                gamma: reg.gamma,
                lambda: reg.lambda,
                stabilizer_fallback_frames: stab_report.fallback_frames.len(),
                rpca_iterations: reg.iterations,
                mask: RleMask::from_pixels(pixels, width, height),
            });
            display_videos.push((pixels.clone(), regularized));
        }
    }

    let (frames, report) = render_loop(video, &display_videos, field.as_ref())
        .map_err(|e| e.in_stage("render", "inputs shorter than 2 frames cannot loop"))?;

    let repetitive = field.as_ref().and_then(|f| {
        best_masked_interval(f).map(|interval| RepetitiveRecord {
            pixel_count: f.mask_pixel_count(),
            interval,
            mask: RleMask::from_mask(&(0..height)
                .flat_map(|y| (0..width).map(move |x| f.in_mask(x, y)))
                .collect::<Vec<bool>>()),
        })
    });

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        width,
        height,
        n_frames: video.len(),
        reference_index: video.reference_index(),
        loop_length: report.loop_length,
        static_output: report.static_output,
        display_regions: display_records,
        dropped_components: selection
            .map(|s| {
                s.dropped
                    .into_iter()
                    .map(|(pixel_count, reason)| DroppedComponent { pixel_count, reason })
                    .collect()
            })
            .unwrap_or_default(),
        repetitive,
        config: config.clone(),
    };

    Ok(PipelineArtifacts {
        frames,
        manifest,
        diagnostics,
    })
}

/// Write the loop frames plus the manifest into `directory`.
pub fn write_output(artifacts: &PipelineArtifacts, directory: &Path) -> Result<()> {
    write_frames(artifacts.frames.frames(), directory, FRAME_PATTERN)?;
    artifacts.manifest.save(&directory.join(MANIFEST_FILENAME))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn constant_video(w: u32, h: u32, n: usize) -> FrameSequence {
        FrameSequence::from_frames(vec![RgbImage::from_pixel(w, h, Rgb([90, 90, 90])); n])
            .unwrap()
    }

    #[test]
    fn static_input_gives_a_frozen_loop_and_an_empty_manifest() {
        let video = constant_video(24, 20, 11);
        let vis = VisibilityVolume::all_visible(24, 20, 11);
        let artifacts = run_pipeline(
            &video,
            &vis,
            None,
            None,
            &PipelineConfig::default(),
            &PipelineOptions { no_display: true, no_repetitive: false },
        )
        .unwrap();

        assert!(artifacts.manifest.static_output);
        assert_eq!(artifacts.manifest.animated_region_count(), 0);
        assert_eq!(artifacts.manifest.loop_length, 20);
        assert_eq!(artifacts.frames.len(), 20);
        for k in 0..20 {
            assert_eq!(artifacts.frames.frame(k), video.reference_frame());
        }
        assert!(artifacts.diagnostics.is_empty());

        let dir = tempfile::tempdir().unwrap();
        write_output(&artifacts, dir.path()).unwrap();
        assert_eq!(
            (0..20).filter(|k| dir.path().join(format!("frame_{k:06}.png")).is_file()).count(),
            20,
            "loop of length 20 writes 20 numbered frames"
        );
        let back = Manifest::load(&dir.path().join(MANIFEST_FILENAME)).unwrap();
        assert_eq!(back, artifacts.manifest);
    }

    #[test]
    fn blinking_square_yields_one_repetitive_record() {
        let (w, h, n) = (16u32, 16u32, 64usize);
        let frames: Vec<RgbImage> = (0..n)
            .map(|f| {
                RgbImage::from_fn(w, h, |x, y| {
                    let in_square = (4..12).contains(&x) && (4..12).contains(&y);
                    if in_square && (f / 4) % 2 == 0 {
                        Rgb([250, 250, 250])
                    } else if in_square {
                        Rgb([140, 140, 140])
                    } else {
                        Rgb([60, 60, 60])
                    }
                })
            })
            .collect();
        let video = FrameSequence::from_frames(frames).unwrap();
        let vis = VisibilityVolume::all_visible(w, h, n);
        let artifacts = run_pipeline(
            &video,
            &vis,
            None,
            None,
            &PipelineConfig::default(),
            &PipelineOptions { no_display: true, no_repetitive: false },
        )
        .unwrap();

        let rep = artifacts.manifest.repetitive.as_ref().expect("square must animate");
        assert_eq!(rep.pixel_count, 64, "exactly the 8x8 square");
        assert_eq!(rep.mask.pixel_count(), 64);
        assert!(!artifacts.manifest.static_output);
        assert_eq!(artifacts.manifest.display_regions.len(), 0);
        // The square actually flickers in the loop.
        let series: Vec<[u8; 3]> = (0..artifacts.frames.len())
            .map(|k| artifacts.frames.pixel(k, 8, 8))
            .collect();
        assert!(series.iter().any(|&px| px != series[0]));
    }

    #[test]
    fn missing_model_fails_in_the_classify_stage() {
        let video = constant_video(16, 16, 10);
        let vis = VisibilityVolume::all_visible(16, 16, 10);
        let err = run_pipeline(
            &video,
            &vis,
            None,
            None,
            &PipelineConfig::default(),
            &PipelineOptions { no_display: false, no_repetitive: true },
        )
        .unwrap_err();
        assert_eq!(err.stage(), Some("classify"));
        assert!(err.to_string().contains("--no-display"), "{err}");
    }
}
