//! Pipeline configuration: every tunable of every stage in one flat
//! struct, loadable from a `key=value` text file so experiment records
//! stay diff-able. Precedence is defaults < config file < command-line
//! flags (the caller applies flag overrides after [`PipelineConfig::apply_file`]).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::DisplayParams;
use crate::error::{Error, Result};
use crate::repetitive::RepetitiveParams;
use crate::segmentation::SegmentParams;

/// All stage tunables with their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Temporal-pattern color-jump threshold (strict `>`).
    pub theta: f64,
    /// Δ₁ sampling stride.
    pub alpha1: usize,
    /// Δ₁ comparison gap.
    pub beta1: usize,
    /// Δ₂ sampling stride (its gap is always ⌊N/2⌋).
    pub alpha2: usize,
    /// Initial merge-distance epoch.
    pub init_threshold: f64,
    /// Epoch growth factor.
    pub growth: f64,
    /// Weight of the appearance distance in D = D_T + w·D_A.
    pub appearance_weight: f64,
    /// Hierarchy levels (percent of merges applied) classified for display
    /// regions.
    pub levels: Vec<f64>,
    /// DFT bin separating the low and high frequency bands.
    pub tau: usize,
    /// Repetitive-animation score gate (strict `>`).
    pub crep_gate: f64,
    /// Repetitive-animation 80th-percentile luma gate (strict `>`).
    pub luma_gate: u8,
    /// Interval-endpoint stride of the repetitive search.
    pub crep_stride: usize,
    /// Display components smaller than this many pixels are dropped.
    pub min_segment_px: usize,
    /// Display components covering more than this frame fraction are
    /// dropped.
    pub max_segment_frac: f64,
    /// Random-forest size.
    pub n_trees: usize,
    /// Random-forest depth cap.
    pub max_depth: usize,
    /// Base of the adaptive RPCA weight λ = base + slope·γ.
    pub lambda_base: f64,
    /// Slope of the adaptive RPCA weight.
    pub lambda_slope: f64,
    /// Seed for every seeded stage (forest, codebook).
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            theta: 100.0,
            alpha1: 4,
            beta1: 4,
            alpha2: 2,
            init_threshold: 0.2,
            growth: 1.5,
            appearance_weight: 0.1,
            levels: vec![60.0, 70.0, 80.0],
            tau: 4,
            crep_gate: 2.5,
            luma_gate: 127,
            crep_stride: 8,
            min_segment_px: 50,
            max_segment_frac: 0.30,
            n_trees: 100,
            max_depth: 10,
            lambda_base: 0.005,
            lambda_slope: 0.015,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key:?}")))
}

impl PipelineConfig {
    /// Set one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "theta" => self.theta = parse(key, value)?,
            "alpha1" => self.alpha1 = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "alpha2" => self.alpha2 = parse(key, value)?,
            "init_threshold" => self.init_threshold = parse(key, value)?,
            "growth" => self.growth = parse(key, value)?,
            "appearance_weight" => self.appearance_weight = parse(key, value)?,
            "levels" => {
                self.levels = value
                    .split(',')
                    .map(|v| parse(key, v))
                    .collect::<Result<_>>()?;
            }
            "tau" => self.tau = parse(key, value)?,
            "crep_gate" => self.crep_gate = parse(key, value)?,
            "luma_gate" => self.luma_gate = parse(key, value)?,
            "crep_stride" => self.crep_stride = parse(key, value)?,
            "min_segment_px" => self.min_segment_px = parse(key, value)?,
            "max_segment_frac" => self.max_segment_frac = parse(key, value)?,
            "n_trees" => self.n_trees = parse(key, value)?,
            "max_depth" => self.max_depth = parse(key, value)?,
            "lambda_base" => self.lambda_base = parse(key, value)?,
            "lambda_slope" => self.lambda_slope = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Overlay `key=value` lines from a file. Blank lines and `#` comments
    /// are skipped; unknown keys are an error.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        self.validate()
    }

    /// Range-check every field.
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, what: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(what.to_string()))
            }
        }
        check(self.theta.is_finite() && self.theta > 0.0, "theta must be positive")?;
        check(self.alpha1 >= 1, "alpha1 must be at least 1")?;
        check(self.beta1 >= 1, "beta1 must be at least 1")?;
        check(self.alpha2 >= 1, "alpha2 must be at least 1")?;
        check(
            self.init_threshold.is_finite() && self.init_threshold > 0.0,
            "init_threshold must be positive",
        )?;
        check(self.growth.is_finite() && self.growth > 1.0, "growth must exceed 1")?;
        check(
            self.appearance_weight.is_finite() && self.appearance_weight >= 0.0,
            "appearance_weight must be non-negative",
        )?;
        check(!self.levels.is_empty(), "levels must not be empty")?;
        check(
            self.levels.iter().all(|l| l.is_finite() && (0.0..=100.0).contains(l)),
            "levels must lie in [0, 100]",
        )?;
        check(self.tau >= 1, "tau must be at least 1")?;
        check(
            self.crep_gate.is_finite() && self.crep_gate >= 0.0,
            "crep_gate must be non-negative",
        )?;
        check(self.crep_stride >= 1, "crep_stride must be at least 1")?;
        check(
            self.max_segment_frac.is_finite()
                && self.max_segment_frac > 0.0
                && self.max_segment_frac <= 1.0,
            "max_segment_frac must lie in (0, 1]",
        )?;
        check(self.n_trees >= 1, "n_trees must be at least 1")?;
        check(self.max_depth >= 1, "max_depth must be at least 1")?;
        check(
            self.lambda_base.is_finite() && self.lambda_base > 0.0,
            "lambda_base must be positive",
        )?;
        check(
            self.lambda_slope.is_finite() && self.lambda_slope >= 0.0,
            "lambda_slope must be non-negative",
        )?;
        Ok(())
    }

    pub fn segment_params(&self) -> SegmentParams {
        SegmentParams {
            theta: self.theta,
            alpha1: self.alpha1,
            beta1: self.beta1,
            alpha2: self.alpha2,
            initial_threshold: self.init_threshold,
            growth: self.growth,
            appearance_weight: self.appearance_weight,
        }
    }

    pub fn repetitive_params(&self) -> RepetitiveParams {
        RepetitiveParams {
            stride: self.crep_stride,
            tau: self.tau,
            score_gate: self.crep_gate,
            luma_gate: self.luma_gate,
        }
    }

    pub fn display_params(&self) -> DisplayParams {
        DisplayParams {
            levels: self.levels.clone(),
            min_component_px: self.min_segment_px,
            max_component_frac: self.max_segment_frac,
            grid_stride_xy: 8,
            grid_stride_t: 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_match_the_documented_values() {
        let c = PipelineConfig::default();
        assert_eq!(c.theta, 100.0);
        assert_eq!((c.alpha1, c.beta1, c.alpha2), (4, 4, 2));
        assert_eq!(c.init_threshold, 0.2);
        assert_eq!(c.growth, 1.5);
        assert_eq!(c.appearance_weight, 0.1);
        assert_eq!(c.levels, vec![60.0, 70.0, 80.0]);
        assert_eq!(c.tau, 4);
        assert_eq!(c.crep_gate, 2.5);
        assert_eq!(c.luma_gate, 127);
        assert_eq!(c.crep_stride, 8);
        assert_eq!(c.min_segment_px, 50);
        assert_eq!(c.max_segment_frac, 0.30);
        assert_eq!((c.n_trees, c.max_depth), (100, 10));
        assert_eq!(c.lambda_base, 0.005);
        assert_eq!(c.lambda_slope, 0.015);
        assert_eq!(c.seed, 0);
        c.validate().unwrap();
    }

    #[test]
    fn file_overlays_defaults_and_rejects_unknown_keys() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# experiment 3").unwrap();
        writeln!(file, "theta = 80").unwrap();
        writeln!(file, "levels = 50, 60").unwrap();
        writeln!(file, "seed=42").unwrap();
        file.flush().unwrap();

        let mut config = PipelineConfig::default();
        config.apply_file(file.path()).unwrap();
        assert_eq!(config.theta, 80.0);
        assert_eq!(config.levels, vec![50.0, 60.0]);
        assert_eq!(config.seed, 42);
        assert_eq!(config.growth, 1.5, "untouched keys keep their defaults");

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "thetta = 80").unwrap();
        bad.flush().unwrap();
        let err = PipelineConfig::default().apply_file(bad.path()).unwrap_err();
        assert!(err.to_string().contains("thetta"), "{err}");
    }

    #[test]
    fn malformed_lines_and_ranges_are_rejected() {
        let mut config = PipelineConfig::default();
        assert!(config.set("theta", "fast").is_err());
        config.set("growth", "1.0").unwrap();
        assert!(config.validate().is_err());

        let mut no_eq = tempfile::NamedTempFile::new().unwrap();
        writeln!(no_eq, "theta 80").unwrap();
        no_eq.flush().unwrap();
        let err = PipelineConfig::default().apply_file(no_eq.path()).unwrap_err();
        assert!(err.to_string().contains("key=value"), "{err}");
    }
}
