//! `cinemagraph` — turn a spatially pre-aligned video into an endlessly
//! looping cinemagraph, end to end or one stage at a time.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use cinemagraph_core::classifier::{
    extract_features, hog3d_descriptors, label_segments, train_codebook, train_forest,
    GridAssignments, Hog3dCodebook, BOW_DIM,
};
use cinemagraph_core::config::PipelineConfig;
use cinemagraph_core::error::{Error, Result};
use cinemagraph_core::manifest::{
    DisplayRegionRecord, Manifest, RleMask, MANIFEST_FILENAME, MANIFEST_VERSION,
};
use cinemagraph_core::pipeline::{run_pipeline, write_output, PipelineOptions, FRAME_PATTERN};
use cinemagraph_core::render::{
    filter_tracks, inpaint, load_tracks, regularize_segment, render_loop, stabilize,
    track_features,
};
use cinemagraph_core::repetitive::{repetitive_mask, score_heatmap};
use cinemagraph_core::segmentation::{label_map_image, segment};
use cinemagraph_core::video::{
    load_annotations, load_sequence, load_visibility, write_frames, FrameSequence,
    VisibilityVolume,
};

#[derive(Debug, Parser)]
#[command(name = "cinemagraph", version, about)]
struct Cli {
    /// Worker-thread budget for all parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every stage end to end; write the loop frames and manifest.
    Pipeline(PipelineArgs),
    /// Segment the video and report (or export) the hierarchy levels.
    Segment(SegmentArgs),
    /// Score every pixel for repetitive flashing.
    DetectRepetitive(DetectRepetitiveArgs),
    /// Run inpaint → stabilize → regularize → loop on one region.
    Render(RenderArgs),
    /// Cluster HoG3D descriptors into the bag-of-words codebook.
    TrainCodebook(TrainCodebookArgs),
    /// Train the display-region random forest.
    TrainForest(TrainForestArgs),
}

#[derive(Debug, Args)]
struct IoArgs {
    /// Directory of input frames (`frame_%06d.png`, plus optional
    /// `vis_%06d.png` visibility masks).
    #[arg(long)]
    input: PathBuf,
    /// Output directory (or file, for the train-* subcommands).
    #[arg(long)]
    output: PathBuf,
    /// `key=value` configuration file overlaying the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override for every seeded stage.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Trained forest (JSON) for display-region classification.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Trained HoG3D codebook (JSON).
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Override the reference frame (default: the middle frame).
    #[arg(long)]
    reference_index: Option<usize>,
    /// Skip display-region classification.
    #[arg(long)]
    no_display: bool,
    /// Skip the repetitive-pixel detector.
    #[arg(long)]
    no_repetitive: bool,
    /// Override the repetitive interval-endpoint stride.
    #[arg(long)]
    stride: Option<usize>,
    /// Write per-segment convergence traces to diagnostics.txt.
    #[arg(long)]
    export_diagnostics: bool,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long)]
    reference_index: Option<usize>,
    /// Export one 16-bit label map per configured hierarchy level.
    #[arg(long)]
    export_levels: bool,
}

#[derive(Debug, Args)]
struct DetectRepetitiveArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Override the interval-endpoint stride (1 = exhaustive).
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[command(flatten)]
    io: IoArgs,
    #[arg(long)]
    reference_index: Option<usize>,
    /// Gray PNG marking the region to animate (nonzero = in region);
    /// default: the whole frame.
    #[arg(long)]
    region: Option<PathBuf>,
    /// Feature tracks from a file instead of the built-in tracker.
    #[arg(long)]
    tracks: Option<PathBuf>,
    #[arg(long)]
    export_diagnostics: bool,
}

#[derive(Debug, Args)]
struct TrainCodebookArgs {
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Debug, Args)]
struct TrainForestArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Trained HoG3D codebook (JSON), required to build features.
    #[arg(long)]
    codebook: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = i32::from(e.use_stderr());
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot size the thread pool: {e}");
            std::process::exit(2);
        }
    }
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_numerical() { 3 } else { 2 });
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Segment(args) => cmd_segment(args),
        Command::DetectRepetitive(args) => cmd_detect_repetitive(args),
        Command::Render(args) => cmd_render(args),
        Command::TrainCodebook(args) => cmd_train_codebook(args),
        Command::TrainForest(args) => cmd_train_forest(args),
    }
}

/// Defaults overlaid by the config file, overlaid by flags.
fn effective_config(io: &IoArgs, stride: Option<usize>) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::default();
    if let Some(path) = &io.config {
        config.apply_file(path)?;
    }
    if let Some(seed) = io.seed {
        config.seed = seed;
    }
    if let Some(stride) = stride {
        config.crep_stride = stride;
    }
    config.validate()?;
    Ok(config)
}

/// Load the frames and, when `vis_*.png` masks are present, the
/// visibility volume.
fn load_input(
    input: &Path,
    reference_index: Option<usize>,
) -> Result<(FrameSequence, VisibilityVolume)> {
    let mut sequence = load_sequence(input, FRAME_PATTERN)?;
    if let Some(r) = reference_index {
        sequence.set_reference_index(r)?;
    }
    let has_masks = std::fs::read_dir(input)
        .map_err(|source| Error::Io {
            path: input.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .any(|e| {
            e.file_name()
                .to_str()
                .is_some_and(|n| n.starts_with("vis_") && n.ends_with(".png"))
        });
    let visibility = load_visibility(has_masks.then_some(input), &sequence)?;
    Ok((sequence, visibility))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn save_image<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_pipeline(args: PipelineArgs) -> Result<()> {
    let config = effective_config(&args.io, args.stride)?;
    let (video, visibility) = load_input(&args.io.input, args.reference_index)?;
    let artifacts = run_pipeline(
        &video,
        &visibility,
        args.model.as_deref(),
        args.codebook.as_deref(),
        &config,
        &PipelineOptions {
            no_display: args.no_display,
            no_repetitive: args.no_repetitive,
        },
    )?;
    write_output(&artifacts, &args.io.output)?;
    if args.export_diagnostics {
        write_text(&args.io.output.join("diagnostics.txt"), &artifacts.diagnostics)?;
    }
    let m = &artifacts.manifest;
    if m.static_output {
        eprintln!("warning: nothing animates; the loop is the reference frame repeated");
    }
    println!(
        "wrote {} loop frames, {} display region(s), {} repetitive pixel(s)",
        m.loop_length,
        m.display_regions.len(),
        m.repetitive.as_ref().map_or(0, |r| r.pixel_count),
    );
    Ok(())
}

fn cmd_segment(args: SegmentArgs) -> Result<()> {
    let config = effective_config(&args.io, None)?;
    let (video, visibility) = load_input(&args.io.input, args.reference_index)?;
    let hierarchy = segment(&video, &visibility, &config.segment_params())
        .map_err(|e| e.in_stage("segment", "check frame count versus the descriptor gaps"))?;
    create_dir(&args.io.output)?;

    let mut summary = String::new();
    for level in hierarchy.regions_at(&config.levels)? {
        summary.push_str(&format!(
            "level {} regions {}\n",
            level.percent,
            level.regions.len()
        ));
        if args.export_levels {
            let img = label_map_image(&level.label_map)?;
            save_image(&img, &args.io.output.join(format!("level_{}.png", level.percent)))?;
        }
    }
    write_text(&args.io.output.join("levels.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_detect_repetitive(args: DetectRepetitiveArgs) -> Result<()> {
    let config = effective_config(&args.io, args.stride)?;
    let (video, visibility) = load_input(&args.io.input, None)?;
    let field = repetitive_mask(&video, &visibility, &config.repetitive_params());
    create_dir(&args.io.output)?;

    // One line per pixel: x y score i j masked. Scores print in Rust's
    // shortest round-trip form, so parsing them back is bit-exact.
    let mut table = String::new();
    for y in 0..field.height() {
        for x in 0..field.width() {
            let (i, j) = field.best_interval(x, y);
            table.push_str(&format!(
                "{x} {y} {} {i} {j} {}\n",
                field.score(x, y),
                u8::from(field.in_mask(x, y))
            ));
        }
    }
    write_text(&args.io.output.join("scores.tsv"), &table)?;
    save_image(&score_heatmap(&field), &args.io.output.join("heatmap.png"))?;
    let mask = image::GrayImage::from_fn(field.width(), field.height(), |x, y| {
        image::Luma([255 * u8::from(field.in_mask(x, y))])
    });
    save_image(&mask, &args.io.output.join("mask.png"))?;
    println!(
        "{} of {} pixels pass the animation gates",
        field.mask_pixel_count(),
        (field.width() * field.height()) as usize
    );
    Ok(())
}

fn region_from_mask(path: &Path, width: u32, height: u32) -> Result<Vec<(u32, u32)>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    if img.dimensions() != (width, height) {
        return Err(Error::DimensionMismatch {
            index: 0,
            got_w: img.width(),
            got_h: img.height(),
            want_w: width,
            want_h: height,
        });
    }
    Ok((0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .filter(|&(x, y)| img.get_pixel(x, y).0[0] != 0)
        .collect())
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let config = effective_config(&args.io, None)?;
    let (video, visibility) = load_input(&args.io.input, args.reference_index)?;
    let (width, height) = (video.width(), video.height());
    let pixels = match &args.region {
        Some(path) => region_from_mask(path, width, height)?,
        None => (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .collect(),
    };
    if pixels.is_empty() {
        return Err(Error::Config("region mask has no set pixels".into())
            .in_stage("render", "check the --region image"));
    }

    let hint = "inspect the inputs; each sub-stage can be tested in isolation";
    let inpainted =
        inpaint(&video, &visibility, &pixels).map_err(|e| e.in_stage("render", hint))?;
    let tracks = match &args.tracks {
        Some(path) => load_tracks(path)?,
        None => track_features(&inpainted, &pixels),
    };
    let tracks = filter_tracks(tracks);
    let (stabilized, stab_report) =
        stabilize(&inpainted, &tracks).map_err(|e| e.in_stage("render", hint))?;
    let (regularized, reg) =
        regularize_segment(&stabilized, &pixels, config.lambda_base, config.lambda_slope)
            .map_err(|e| e.in_stage("render", hint))?;
    let (frames, report) = render_loop(&video, &[(pixels.clone(), regularized)], None)
        .map_err(|e| e.in_stage("render", hint))?;

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        width,
        height,
        n_frames: video.len(),
        reference_index: video.reference_index(),
        loop_length: report.loop_length,
        static_output: report.static_output,
        display_regions: vec![DisplayRegionRecord {
            id: 0,
            pixel_count: pixels.len(),
            gamma: reg.gamma,
            lambda: reg.lambda,
            stabilizer_fallback_frames: stab_report.fallback_frames.len(),
            rpca_iterations: reg.iterations,
            mask: RleMask::from_pixels(&pixels, width, height),
        }],
        dropped_components: vec![],
        repetitive: None,
        config,
    };
    write_frames(frames.frames(), &args.io.output, FRAME_PATTERN)?;
    manifest.save(&args.io.output.join(MANIFEST_FILENAME))?;
    if args.export_diagnostics {
        let mut diagnostics = String::new();
        for (ch, trace) in reg.traces.iter().enumerate() {
            for (k, (objective, residual)) in trace.iter().enumerate() {
                diagnostics.push_str(&format!(
                    "segment 0 channel {ch} iteration {} objective {objective:e} \
                     residual {residual:e}\n",
                    k + 1
                ));
            }
        }
        write_text(&args.io.output.join("diagnostics.txt"), &diagnostics)?;
    }
    println!(
        "wrote {} loop frames (λ = {}, γ = {})",
        report.loop_length, manifest.display_regions[0].lambda, manifest.display_regions[0].gamma
    );
    Ok(())
}

/// Training inputs: either one frame directory, or a directory whose
/// subdirectories are frame directories (sorted by name).
fn training_videos(input: &Path) -> Result<Vec<PathBuf>> {
    let has_frames = |dir: &Path| {
        std::fs::read_dir(dir).ok().is_some_and(|entries| {
            entries.filter_map(|e| e.ok()).any(|e| {
                e.file_name()
                    .to_str()
                    .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".png"))
            })
        })
    };
    if has_frames(input) {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|source| Error::Io {
            path: input.to_path_buf(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && has_frames(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Config(format!(
            "no frame directories under {}",
            input.display()
        )));
    }
    Ok(dirs)
}

fn cmd_train_codebook(args: TrainCodebookArgs) -> Result<()> {
    let config = effective_config(&args.io, None)?;
    let mut descriptors = Vec::new();
    for dir in training_videos(&args.io.input)? {
        let (video, _) = load_input(&dir, None)?;
        let params = config.display_params();
        let grid = hog3d_descriptors(&video, params.grid_stride_xy, params.grid_stride_t)?;
        descriptors.extend(grid.into_iter().map(|d| d.vector));
    }
    let codebook = train_codebook(&descriptors, BOW_DIM, config.seed)?;
    codebook.save(&args.io.output)?;
    println!(
        "clustered {} descriptors into {} words",
        descriptors.len(),
        BOW_DIM
    );
    Ok(())
}

fn cmd_train_forest(args: TrainForestArgs) -> Result<()> {
    let config = effective_config(&args.io, None)?;
    let codebook = Hog3dCodebook::load(&args.codebook)?;
    let params = config.display_params();

    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<bool> = Vec::new();
    for dir in training_videos(&args.io.input)? {
        let (video, visibility) = load_input(&dir, None)?;
        let annotations = load_annotations(&dir, &video)?;
        let hierarchy = segment(&video, &visibility, &config.segment_params())
            .map_err(|e| e.in_stage("segment", "check frame count versus the descriptor gaps"))?;
        let assignments = GridAssignments::compute(
            &video,
            &codebook,
            params.grid_stride_xy,
            params.grid_stride_t,
        )?;
        for level in hierarchy.regions_at(&config.levels)? {
            let level_labels =
                label_segments(&level.regions, &annotations, video.reference_index());
            for (pixels, label) in level.regions.iter().zip(level_labels) {
                let bow = assignments.bow_counts(pixels);
                features.push(extract_features(pixels, &video, &visibility, &bow)?);
                labels.push(label);
            }
        }
    }
    let model = train_forest(&features, &labels, config.n_trees, config.max_depth, config.seed)?;
    model.save(&args.io.output)?;
    println!(
        "trained {} trees on {} samples ({} positive)",
        config.n_trees,
        labels.len(),
        labels.iter().filter(|&&l| l).count()
    );
    Ok(())
}
