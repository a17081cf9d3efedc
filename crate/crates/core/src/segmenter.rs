//! Patch segmentation contract and the two built-in backends.
//!
//! A backend turns one RGB patch into two independent per-pixel
//! foreground probabilities (intact, not-intact). Thresholding and overlap
//! resolution are backend-independent and live here too.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slide::{
    open_mask, ClassChannels, ClassMask, MaskContainer, Rect, RgbRaster, MANIFEST_FILE,
};

/// Oracle colour for intact eosinophil pixels.
pub const INTACT_RGB: [u8; 3] = [0, 255, 0];
/// Oracle colour for not-intact eosinophil pixels.
pub const NOT_INTACT_RGB: [u8; 3] = [255, 0, 0];

/// Per-pixel foreground probabilities for the two eosinophil classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    width: u32,
    height: u32,
    intact: Vec<f32>,
    not_intact: Vec<f32>,
}

impl ProbMap {
    pub fn new(width: u32, height: u32, intact: Vec<f32>, not_intact: Vec<f32>) -> Result<Self> {
        let n = width as usize * height as usize;
        if intact.len() != n || not_intact.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "probability planes of {} and {} values for {width}x{height}",
                intact.len(),
                not_intact.len()
            )));
        }
        if let Some(bad) = intact
            .iter()
            .chain(&not_intact)
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return Err(Error::InvalidInput(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(ProbMap {
            width,
            height,
            intact,
            not_intact,
        })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        ProbMap {
            width,
            height,
            intact: vec![0.0; n],
            not_intact: vec![0.0; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn intact(&self) -> &[f32] {
        &self.intact
    }

    pub fn not_intact(&self) -> &[f32] {
        &self.not_intact
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPrecedence {
    #[default]
    IntactWins,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    /// Inclusive: a probability equal to the threshold is foreground.
    pub prob_threshold: f64,
    pub overlap_precedence: OverlapPrecedence,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            prob_threshold: 0.5,
            overlap_precedence: OverlapPrecedence::IntactWins,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.prob_threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "prob_threshold {t} outside (0, 1)"
            )));
        }
        Ok(())
    }
}

/// Where a patch came from. `origin` is the slide coordinate of the patch's
/// top-left pixel; padded patches extend past the slide edge.
#[derive(Debug, Clone, Copy)]
pub struct PatchContext<'a> {
    pub slide_id: &'a str,
    pub origin: (u32, u32),
}

/// A patch segmentation backend. Implementations must be deterministic and
/// callable from several threads at once.
pub trait Segmenter: Send + Sync {
    fn name(&self) -> String;

    /// Patch size the backend accepts, as (width, height).
    fn input_size(&self) -> (u32, u32);

    fn segment(&self, patch: &RgbRaster, ctx: PatchContext<'_>) -> Result<ProbMap>;
}

/// Runs `backend` on `patch` after checking the input size, and checks the
/// output matches the patch.
pub fn segment_patch(
    backend: &dyn Segmenter,
    patch: &RgbRaster,
    ctx: PatchContext<'_>,
) -> Result<ProbMap> {
    let (w, h) = backend.input_size();
    if (patch.width(), patch.height()) != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "{} expects {w}x{h} patches, got {}x{}",
            backend.name(),
            patch.width(),
            patch.height()
        )));
    }
    let probs = backend.segment(patch, ctx)?;
    if (probs.width, probs.height) != (w, h) {
        return Err(Error::Backend(format!(
            "{} returned a {}x{} map for a {w}x{h} patch",
            backend.name(),
            probs.width,
            probs.height
        )));
    }
    Ok(probs)
}

/// Each channel bit is set iff its probability is at or above the threshold.
pub fn binarize(p: &ProbMap, cfg: &SegmenterConfig) -> ClassChannels {
    let mut out = ClassChannels::new(p.width, p.height);
    let t = cfg.prob_threshold;
    let w = p.width as usize;
    for (i, (&pi, &pn)) in p.intact.iter().zip(&p.not_intact).enumerate() {
        let (x, y) = ((i % w) as u32, (i / w) as u32);
        if pi as f64 >= t {
            out.intact.set(x, y);
        }
        if pn as f64 >= t {
            out.not_intact.set(x, y);
        }
    }
    out
}

/// Collapses two possibly overlapping channels into one label per pixel.
pub fn resolve_overlap(channels: &ClassChannels, precedence: OverlapPrecedence) -> ClassMask {
    match precedence {
        OverlapPrecedence::IntactWins => channels.to_class_mask(),
    }
}

/// Colour-keyed stand-in for a trained network: pure green is intact,
/// pure red is not-intact, everything else is non-eosinophil.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    patch_size: u32,
}

impl OracleSegmenter {
    pub fn new(patch_size: u32) -> Self {
        OracleSegmenter { patch_size }
    }
}

impl Segmenter for OracleSegmenter {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn input_size(&self) -> (u32, u32) {
        (self.patch_size, self.patch_size)
    }

    fn segment(&self, patch: &RgbRaster, _ctx: PatchContext<'_>) -> Result<ProbMap> {
        let n = patch.width() as usize * patch.height() as usize;
        let mut intact = vec![0.0; n];
        let mut not_intact = vec![0.0; n];
        for (i, px) in patch.pixels().enumerate() {
            if px == INTACT_RGB {
                intact[i] = 1.0;
            } else if px == NOT_INTACT_RGB {
                not_intact[i] = 1.0;
            }
        }
        ProbMap::new(patch.width(), patch.height(), intact, not_intact)
    }
}

/// Serves precomputed masks from label containers.
///
/// `path` is either one mask container (used for every slide) or a
/// directory holding one container per slide id.
pub struct MaskFileSegmenter {
    patch_size: u32,
    root: PathBuf,
    single: Option<Arc<MaskContainer>>,
    per_slide: Mutex<HashMap<String, Arc<MaskContainer>>>,
}

impl MaskFileSegmenter {
    pub fn open(path: &Path, patch_size: u32) -> Result<Self> {
        let single = if path.join(MANIFEST_FILE).is_file() || path.is_file() {
            Some(Arc::new(open_mask(path)?))
        } else if path.is_dir() {
            None
        } else {
            return Err(Error::Backend(format!(
                "mask path {} does not exist",
                path.display()
            )));
        };
        Ok(MaskFileSegmenter {
            patch_size,
            root: path.to_path_buf(),
            single,
            per_slide: Mutex::new(HashMap::new()),
        })
    }

    fn container(&self, slide_id: &str) -> Result<Arc<MaskContainer>> {
        if let Some(c) = &self.single {
            return Ok(c.clone());
        }
        let mut map = self.per_slide.lock().expect("mask map poisoned");
        if let Some(c) = map.get(slide_id) {
            return Ok(c.clone());
        }
        let c =
            Arc::new(open_mask(&self.root.join(slide_id)).map_err(|e| {
                Error::Backend(format!("no mask container for slide {slide_id}: {e}"))
            })?);
        map.insert(slide_id.to_string(), c.clone());
        Ok(c)
    }
}

impl Segmenter for MaskFileSegmenter {
    fn name(&self) -> String {
        format!("masks:{}", self.root.display())
    }

    fn input_size(&self) -> (u32, u32) {
        (self.patch_size, self.patch_size)
    }

    fn segment(&self, patch: &RgbRaster, ctx: PatchContext<'_>) -> Result<ProbMap> {
        let container = self.container(ctx.slide_id)?;
        let bounds = container.meta().bounds();
        let (w, h) = (patch.width(), patch.height());
        let mut probs = ProbMap::zeros(w, h);
        let want = Rect::new(ctx.origin.0, ctx.origin.1, w, h);
        if let Some(part) = want.intersect(&bounds) {
            let labels = container.read_region(part)?;
            for y in 0..part.h {
                for (x, &l) in labels.row(y).iter().enumerate() {
                    let i = (part.y - want.y + y) as usize * w as usize
                        + (part.x - want.x) as usize
                        + x;
                    match l {
                        ClassMask::INTACT => probs.intact[i] = 1.0,
                        ClassMask::NOT_INTACT => probs.not_intact[i] = 1.0,
                        _ => {}
                    }
                }
            }
        }
        Ok(probs)
    }
}
