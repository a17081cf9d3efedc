//! Flags shared by several subcommands.

use std::path::PathBuf;

use clap::Args;
use eoswsi_core::pipeline::PipelineConfig;
use eoswsi_core::segmenter::MaskFileSegmenter;
use eoswsi_core::{OracleSegmenter, Segmenter};

use crate::CliError;

#[derive(Args, Debug, Clone)]
pub struct PipelineArgs {
    /// Patch side in pixels [default: 448]
    #[arg(long)]
    pub patch_size: Option<u32>,
    /// Patches with this background fraction or more are skipped [default: 0.85]
    #[arg(long)]
    pub bg_limit: Option<f64>,
    /// Per-pixel probability cut [default: 0.5]
    #[arg(long)]
    pub prob_threshold: Option<f64>,
    /// Regions at or below this many pixels count as zero [default: 1800]
    #[arg(long)]
    pub min_area: Option<u64>,
    /// Largest region counted as one cell [default: 3000]
    #[arg(long)]
    pub single_max_area: Option<u64>,
    /// Extra area per additional cell [default: 2000]
    #[arg(long)]
    pub increment_area: Option<u64>,
    /// Field area in mm² [default: 0.3]
    #[arg(long = "hpf-area-mm2")]
    pub hpf_area_mm2: Option<f64>,
    /// Pixel pitch in µm, overriding the slide manifest
    #[arg(long)]
    pub mpp: Option<f64>,
    /// Peak count at or above which a slide is active [default: 15]
    #[arg(long)]
    pub threshold: Option<u32>,
    /// Segmentation worker threads [default: 1]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Memory budget, e.g. 512M or 2G [default: 2G]
    #[arg(long, value_parser = parse_bytes)]
    pub memory_budget: Option<u64>,
}

impl PipelineArgs {
    pub fn config(&self) -> Result<PipelineConfig, CliError> {
        let mut c = PipelineConfig::default();
        if let Some(v) = self.patch_size {
            c.tiler.patch_size = v;
        }
        if let Some(v) = self.bg_limit {
            c.tiler.background_fraction_limit = v;
        }
        if let Some(v) = self.prob_threshold {
            c.segmenter.prob_threshold = v;
        }
        if let Some(v) = self.min_area {
            c.counting.min_area_px = v;
        }
        if let Some(v) = self.single_max_area {
            c.counting.single_max_area_px = v;
        }
        if let Some(v) = self.increment_area {
            c.counting.increment_area_px = v;
        }
        if let Some(v) = self.hpf_area_mm2 {
            c.hpf.hpf_area_mm2 = v;
        }
        if let Some(v) = self.threshold {
            c.hpf.activity_threshold = v;
        }
        if let Some(v) = self.workers {
            c.worker_count = v;
        }
        if let Some(v) = self.memory_budget {
            c.memory_budget_bytes = v;
        }
        c.microns_per_pixel = self.mpp;
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

/// Byte count with an optional K, M or G suffix (powers of 1024).
pub fn parse_bytes(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (num, mult) = match s.chars().last().map(|c| c.to_ascii_uppercase()) {
        Some('K') => (&s[..s.len() - 1], 1u64 << 10),
        Some('M') => (&s[..s.len() - 1], 1 << 20),
        Some('G') => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    let n: u64 = num
        .trim()
        .parse()
        .map_err(|_| format!("{s:?} is not a byte count"))?;
    n.checked_mul(mult)
        .ok_or_else(|| format!("{s:?} overflows"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmenterChoice {
    Oracle,
    Masks(PathBuf),
}

impl std::str::FromStr for SegmenterChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "oracle" {
            Ok(SegmenterChoice::Oracle)
        } else if let Some(p) = s.strip_prefix("masks:") {
            if p.is_empty() {
                return Err("masks: needs a path".into());
            }
            Ok(SegmenterChoice::Masks(PathBuf::from(p)))
        } else {
            Err(format!(
                "unknown segmenter {s:?}; use oracle or masks:<path>"
            ))
        }
    }
}

impl SegmenterChoice {
    pub fn build(&self, patch_size: u32) -> Result<Box<dyn Segmenter>, CliError> {
        Ok(match self {
            SegmenterChoice::Oracle => Box::new(OracleSegmenter::new(patch_size)),
            SegmenterChoice::Masks(p) => Box::new(MaskFileSegmenter::open(p, patch_size)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_sizes() {
        assert_eq!(parse_bytes("1024"), Ok(1024));
        assert_eq!(parse_bytes("2G"), Ok(2 << 30));
        assert_eq!(parse_bytes("512m"), Ok(512 << 20));
        assert!(parse_bytes("lots").is_err());
    }

    #[test]
    fn segmenter_choices() {
        assert_eq!("oracle".parse(), Ok(SegmenterChoice::Oracle));
        assert_eq!(
            "masks:/tmp/m".parse(),
            Ok(SegmenterChoice::Masks(PathBuf::from("/tmp/m")))
        );
        assert!("masks:".parse::<SegmenterChoice>().is_err());
        assert!("unet".parse::<SegmenterChoice>().is_err());
    }
}
