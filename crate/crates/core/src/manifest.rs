//! The pipeline manifest: a JSON record of every decision the run made —
//! which pixels animate and why, per-segment γ/λ, repetitive intervals,
//! dropped components, and the effective configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::DropReason;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};

/// Run-length encoding of a raster mask: `(start, len)` runs of set
/// pixels over raster indices, in increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub runs: Vec<(u32, u32)>,
}

impl RleMask {
    pub fn from_mask(mask: &[bool]) -> Self {
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &on) in mask.iter().enumerate() {
            match (on, start) {
                (true, None) => start = Some(i as u32),
                (false, Some(s)) => {
                    runs.push((s, i as u32 - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, mask.len() as u32 - s));
        }
        Self { runs }
    }

    pub fn from_pixels(pixels: &[(u32, u32)], width: u32, height: u32) -> Self {
        let mut mask = vec![false; (width * height) as usize];
        for &(x, y) in pixels {
            mask[(y * width + x) as usize] = true;
        }
        Self::from_mask(&mask)
    }

    pub fn to_mask(&self, len: usize) -> Vec<bool> {
        let mut mask = vec![false; len];
        for &(start, run) in &self.runs {
            for i in start..start + run {
                mask[i as usize] = true;
            }
        }
        mask
    }

    pub fn pixel_count(&self) -> usize {
        self.runs.iter().map(|&(_, len)| len as usize).sum()
    }
}

/// One display region that made it into the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayRegionRecord {
    pub id: usize,
    pub pixel_count: usize,
    /// Fraction of set bits in the region's temporal pattern.
    pub gamma: f64,
    /// RPCA weight chosen from γ.
    pub lambda: f64,
    /// Frames the stabilizer left untouched for lack of tracks.
    pub stabilizer_fallback_frames: usize,
    /// APG iterations per color channel.
    pub rpca_iterations: [usize; 3],
    pub mask: RleMask,
}

/// The repetitive-pixel portion of the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitiveRecord {
    pub pixel_count: usize,
    /// Best interval of the highest-scoring masked pixel.
    pub interval: (usize, usize),
    pub mask: RleMask,
}

/// A component the display filter discarded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedComponent {
    pub pixel_count: usize,
    pub reason: DropReason,
}

/// Everything a run decided, written next to the output frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub width: u32,
    pub height: u32,
    pub n_frames: usize,
    pub reference_index: usize,
    pub loop_length: usize,
    /// True when nothing animates and the loop is the reference frame
    /// repeated.
    pub static_output: bool,
    pub display_regions: Vec<DisplayRegionRecord>,
    pub dropped_components: Vec<DroppedComponent>,
    pub repetitive: Option<RepetitiveRecord>,
    /// The effective configuration (defaults, overlaid by the config
    /// file, overlaid by command-line flags).
    pub config: PipelineConfig,
}

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILENAME: &str = "cinemagraph.json";

impl Manifest {
    pub fn animated_region_count(&self) -> usize {
        self.display_regions.len() + usize::from(self.repetitive.is_some())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rle_round_trips_and_counts() {
        let mask = vec![false, true, true, false, true, false, false, true];
        let rle = RleMask::from_mask(&mask);
        assert_eq!(rle.runs, vec![(1, 2), (4, 1), (7, 1)]);
        assert_eq!(rle.pixel_count(), 4);
        assert_eq!(rle.to_mask(8), mask);

        assert_eq!(RleMask::from_mask(&[false; 5]).runs, vec![]);
        assert_eq!(RleMask::from_mask(&[true; 5]).runs, vec![(0, 5)]);
        let px = RleMask::from_pixels(&[(1, 0), (2, 0), (0, 1)], 3, 2);
        assert_eq!(px.runs, vec![(1, 3)]);
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            width: 64,
            height: 48,
            n_frames: 30,
            reference_index: 15,
            loop_length: 58,
            static_output: false,
            display_regions: vec![DisplayRegionRecord {
                id: 0,
                pixel_count: 3,
                gamma: 0.4,
                lambda: 0.011,
                stabilizer_fallback_frames: 2,
                rpca_iterations: [199, 180, 500],
                mask: RleMask {
                    runs: vec![(10, 2), (74, 1)],
                },
            }],
            dropped_components: vec![DroppedComponent {
                pixel_count: 49,
                reason: DropReason::TooSmall,
            }],
            repetitive: Some(RepetitiveRecord {
                pixel_count: 5,
                interval: (3, 27),
                mask: RleMask { runs: vec![(100, 5)] },
            }),
            config: PipelineConfig::default(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILENAME);
        manifest.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(back.animated_region_count(), 2);

        let err = Manifest::load(&dir.path().join("missing.json")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        std::fs::write(dir.path().join("bad.json"), "{").unwrap();
        let err = Manifest::load(&dir.path().join("bad.json")).unwrap_err();
        assert!(matches!(err, Error::Manifest(_)));
    }

    #[test]
    fn zero_animated_regions_serializes_cleanly() {
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            width: 8,
            height: 8,
            n_frames: 10,
            reference_index: 5,
            loop_length: 18,
            static_output: true,
            display_regions: vec![],
            dropped_components: vec![],
            repetitive: None,
            config: PipelineConfig::default(),
        };
        assert_eq!(manifest.animated_region_count(), 0);
        let text = serde_json::to_string(&manifest).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, manifest);
    }
}
