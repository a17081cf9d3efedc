//! Whole-slide eosinophil analysis: tile a slide into patches, segment them
//! with a pluggable backend, fuse the masks, count cells per connected
//! region, and find the square field holding the most intact cells.

pub mod counter;
pub mod error;
pub mod metrics;
pub mod pec;
pub mod pipeline;
pub mod segmenter;
pub mod slide;
pub mod synth;
pub mod tiler;

pub use counter::{CountingRule, EosPoint, EosRegion};
pub use error::{Error, Result};
pub use pec::{Activity, HpfConfig, PecResult};
pub use pipeline::{analyze_cohort, analyze_slide, PipelineConfig, SlideAnalysis, SlideReport};
pub use segmenter::{OracleSegmenter, Segmenter, SegmenterConfig};
pub use slide::{ClassMask, EosClass, Rect, RgbRaster, SlideMeta, SlideSource};
pub use tiler::TilerConfig;
