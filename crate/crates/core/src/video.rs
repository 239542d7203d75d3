//! Frame-sequence and visibility-volume I/O.
//!
//! Frames are lossless 8-bit RGB PNGs named by a zero-padded pattern such
//! as `frame_%06d.png`. Visibility and annotation masks are single-channel
//! PNGs with the same index as their frame (`0` = invisible / background,
//! nonzero = visible / display).

use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

/// A filename pattern with a single zero-padded integer placeholder,
/// e.g. `frame_%06d.png`.
#[derive(Debug, Clone)]
pub struct FilePattern {
    prefix: String,
    width: usize,
    suffix: String,
}

impl FilePattern {
    pub fn parse(pattern: &str) -> Result<Self> {
        let start = pattern.find("%0").ok_or_else(|| {
            Error::Config(format!("pattern {pattern:?} lacks a %0Nd placeholder"))
        })?;
        let rest = &pattern[start + 2..];
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        let width: usize = digits
            .parse()
            .map_err(|_| Error::Config(format!("pattern {pattern:?}: bad pad width")))?;
        if !rest[digits.len()..].starts_with('d') {
            return Err(Error::Config(format!(
                "pattern {pattern:?}: placeholder must end in 'd'"
            )));
        }
        Ok(Self {
            prefix: pattern[..start].to_string(),
            width,
            suffix: rest[digits.len() + 1..].to_string(),
        })
    }

    pub fn format(&self, index: usize) -> String {
        format!(
            "{}{:0width$}{}",
            self.prefix,
            index,
            self.suffix,
            width = self.width
        )
    }

    /// The index encoded in `name`, if the name matches this pattern.
    pub fn match_index(&self, name: &str) -> Option<usize> {
        let middle = name
            .strip_prefix(&self.prefix)?
            .strip_suffix(&self.suffix)?;
        if middle.len() < self.width || !middle.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        middle.parse().ok()
    }
}

/// N spatially aligned color frames plus a designated reference frame.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<RgbImage>,
    reference_index: usize,
    /// Frames per second; metadata only, never used by the algorithms.
    pub frame_rate: Option<f64>,
    /// Index of the first frame file on disk (usually 0); mask files are
    /// expected to use the same numbering.
    first_file_index: usize,
}

impl FrameSequence {
    /// Wrap in-memory frames. The reference defaults to `floor(N/2)`.
    pub fn from_frames(frames: Vec<RgbImage>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::TooFewFrames {
                dir: PathBuf::from("<memory>"),
                found: frames.len(),
            });
        }
        let (w, h) = frames[0].dimensions();
        for (i, f) in frames.iter().enumerate() {
            if f.dimensions() != (w, h) {
                return Err(Error::DimensionMismatch {
                    index: i,
                    got_w: f.width(),
                    got_h: f.height(),
                    want_w: w,
                    want_h: h,
                });
            }
        }
        let reference_index = frames.len() / 2;
        Ok(Self {
            frames,
            reference_index,
            frame_rate: None,
            first_file_index: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.frames[0].width()
    }

    pub fn height(&self) -> u32 {
        self.frames[0].height()
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn set_reference_index(&mut self, index: usize) -> Result<()> {
        if index >= self.frames.len() {
            return Err(Error::Config(format!(
                "reference index {index} outside [0, {})",
                self.frames.len()
            )));
        }
        self.reference_index = index;
        Ok(())
    }

    pub fn frame(&self, f: usize) -> &RgbImage {
        &self.frames[f]
    }

    pub fn frames(&self) -> &[RgbImage] {
        &self.frames
    }

    pub fn reference_frame(&self) -> &RgbImage {
        &self.frames[self.reference_index]
    }

    pub fn pixel(&self, f: usize, x: u32, y: u32) -> [u8; 3] {
        self.frames[f].get_pixel(x, y).0
    }

    /// Per-frame color of one pixel, in frame order.
    pub fn series(&self, x: u32, y: u32) -> Vec<[u8; 3]> {
        self.frames.iter().map(|f| f.get_pixel(x, y).0).collect()
    }
}

/// H×W×N visibility bits; `true` = the pixel is visible in that frame.
#[derive(Debug, Clone)]
pub struct VisibilityVolume {
    width: u32,
    height: u32,
    n_frames: usize,
    bits: Vec<bool>,
}

impl VisibilityVolume {
    pub fn all_visible(width: u32, height: u32, n_frames: usize) -> Self {
        Self {
            width,
            height,
            n_frames,
            bits: vec![true; width as usize * height as usize * n_frames],
        }
    }

    fn idx(&self, f: usize, x: u32, y: u32) -> usize {
        (f * self.height as usize + y as usize) * self.width as usize + x as usize
    }

    pub fn is_visible(&self, f: usize, x: u32, y: u32) -> bool {
        self.bits[self.idx(f, x, y)]
    }

    pub fn set(&mut self, f: usize, x: u32, y: u32, visible: bool) {
        let i = self.idx(f, x, y);
        self.bits[i] = visible;
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    /// Visibility bits of one pixel across all frames.
    pub fn series(&self, x: u32, y: u32) -> Vec<bool> {
        (0..self.n_frames)
            .map(|f| self.is_visible(f, x, y))
            .collect()
    }
}

/// Replace invisible entries of a per-pixel color series with the nearest
/// visible temporal neighbor (ties go to the earlier frame). A series with
/// no visible entry at all becomes all black.
pub fn fill_invisible(series: &[[u8; 3]], visible: &[bool]) -> Vec<[u8; 3]> {
    debug_assert_eq!(series.len(), visible.len());
    if visible.iter().all(|&v| v) {
        return series.to_vec();
    }
    if !visible.iter().any(|&v| v) {
        return vec![[0, 0, 0]; series.len()];
    }
    let n = series.len();
    series
        .iter()
        .enumerate()
        .map(|(f, &c)| {
            if visible[f] {
                return c;
            }
            let mut best = None;
            for d in 1..n {
                let earlier = f.checked_sub(d).filter(|&g| visible[g]);
                let later = f
                    .checked_add(d)
                    .filter(|&g| g < n && visible[g]);
                if let Some(g) = earlier.or(later) {
                    best = Some(g);
                    break;
                }
            }
            series[best.expect("at least one visible entry")]
        })
        .collect()
}

fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_luma8())
}

/// Load an ordered, gap-free frame sequence from `directory`.
///
/// The reference index defaults to `floor(N/2)` — the middle frame.
pub fn load_sequence(directory: &Path, filename_pattern: &str) -> Result<FrameSequence> {
    let pattern = FilePattern::parse(filename_pattern)?;
    let entries = std::fs::read_dir(directory).map_err(|source| Error::Io {
        path: directory.to_path_buf(),
        source,
    })?;

    let mut indices: Vec<usize> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io {
            path: directory.to_path_buf(),
            source,
        })?;
        if let Some(name) = entry.file_name().to_str() {
            if let Some(idx) = pattern.match_index(name) {
                indices.push(idx);
            }
        }
    }
    indices.sort_unstable();

    if indices.len() < 2 {
        return Err(Error::TooFewFrames {
            dir: directory.to_path_buf(),
            found: indices.len(),
        });
    }
    let first = indices[0];
    for (k, &idx) in indices.iter().enumerate() {
        if idx != first + k {
            return Err(Error::FrameGap {
                dir: directory.to_path_buf(),
                index: first + k,
            });
        }
    }

    let mut frames = Vec::with_capacity(indices.len());
    for &idx in &indices {
        frames.push(read_rgb(&directory.join(pattern.format(idx)))?);
    }
    let (w, h) = frames[0].dimensions();
    for (k, f) in frames.iter().enumerate() {
        if f.dimensions() != (w, h) {
            return Err(Error::DimensionMismatch {
                index: first + k,
                got_w: f.width(),
                got_h: f.height(),
                want_w: w,
                want_h: h,
            });
        }
    }

    let reference_index = frames.len() / 2;
    Ok(FrameSequence {
        frames,
        reference_index,
        frame_rate: None,
        first_file_index: first,
    })
}

fn load_mask_volume(
    directory: &Path,
    filename_pattern: &str,
    sequence: &FrameSequence,
) -> Result<VisibilityVolume> {
    let pattern = FilePattern::parse(filename_pattern)?;
    let n = sequence.len();
    let first = sequence.first_file_index;

    let missing: Vec<usize> = (0..n)
        .filter(|f| !directory.join(pattern.format(first + f)).is_file())
        .collect();
    if missing.len() == n {
        return Err(Error::MissingAnnotations {
            dir: directory.to_path_buf(),
        });
    }
    if !missing.is_empty() {
        return Err(Error::MissingMasks { missing });
    }

    let mut volume =
        VisibilityVolume::all_visible(sequence.width(), sequence.height(), n);
    for f in 0..n {
        let mask = read_gray(&directory.join(pattern.format(first + f)))?;
        if mask.dimensions() != (sequence.width(), sequence.height()) {
            return Err(Error::DimensionMismatch {
                index: first + f,
                got_w: mask.width(),
                got_h: mask.height(),
                want_w: sequence.width(),
                want_h: sequence.height(),
            });
        }
        for y in 0..sequence.height() {
            for x in 0..sequence.width() {
                volume.set(f, x, y, mask.get_pixel(x, y).0[0] != 0);
            }
        }
    }
    Ok(volume)
}

/// Load per-frame visibility masks (`vis_%06d.png`, 0 = invisible). When
/// `directory` is `None` every pixel is visible.
pub fn load_visibility(
    directory: Option<&Path>,
    sequence: &FrameSequence,
) -> Result<VisibilityVolume> {
    match directory {
        None => Ok(VisibilityVolume::all_visible(
            sequence.width(),
            sequence.height(),
            sequence.len(),
        )),
        Some(dir) => match load_mask_volume(dir, "vis_%06d.png", sequence) {
            Err(Error::MissingAnnotations { .. }) => Err(Error::MissingMasks {
                missing: (0..sequence.len()).collect(),
            }),
            other => other,
        },
    }
}

/// Load per-frame display annotations (`ann_%06d.png`, nonzero = display
/// pixel). Used only when training the classifier.
pub fn load_annotations(directory: &Path, sequence: &FrameSequence) -> Result<VisibilityVolume> {
    load_mask_volume(directory, "ann_%06d.png", sequence)
}

/// Write frames as numbered PNGs under `directory`, creating it if needed.
pub fn write_frames(
    frames: &[RgbImage],
    directory: &Path,
    filename_pattern: &str,
) -> Result<()> {
    let pattern = FilePattern::parse(filename_pattern)?;
    std::fs::create_dir_all(directory).map_err(|source| Error::Io {
        path: directory.to_path_buf(),
        source,
    })?;
    for (i, frame) in frames.iter().enumerate() {
        let path = directory.join(pattern.format(i));
        frame.save(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
    }
    Ok(())
}
