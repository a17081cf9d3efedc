//! End-to-end slide analysis: tile, filter, segment, fuse, count, search.
//!
//! The slide is read one full-width band per grid row, so only a band of
//! RGB is resident at a time. Fused masks are bit-packed and move to
//! memory-mapped scratch files when they would not fit the budget.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counter::{count_regions, points_from_regions, Connectivity, CountingRule, EosPoint};
use crate::error::{Error, Result};
use crate::pec::{classify, hpf_side_px, peak_window, rank_slides, HpfConfig, PecResult};
use crate::segmenter::{binarize, segment_patch, PatchContext, Segmenter, SegmenterConfig};
use crate::slide::{
    open_slide, write_rgb_png, write_slide, BitMask, ClassChannels, ClassMask, EosClass, LabelGrid,
    Rect, RgbRaster, SlideMeta, SlideSource,
};
use crate::tiler::{fuse_into, is_informative, pad_patch, GridPlan, TilerConfig};

/// Largest side of a single-image overlay.
pub const OVERLAY_MAX_SIDE: u32 = 4096;
pub const OVERLAY_BOX_RGB: [u8; 3] = [255, 0, 0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tiler: TilerConfig,
    pub segmenter: SegmenterConfig,
    pub counting: CountingRule,
    pub hpf: HpfConfig,
    /// Overrides the slide's own pixel pitch when set.
    pub microns_per_pixel: Option<f64>,
    pub worker_count: usize,
    pub memory_budget_bytes: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tiler: TilerConfig::default(),
            segmenter: SegmenterConfig::default(),
            counting: CountingRule::default(),
            hpf: HpfConfig::default(),
            microns_per_pixel: None,
            worker_count: 1,
            memory_budget_bytes: 2 << 30,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.tiler.validate()?;
        self.segmenter.validate()?;
        self.counting.validate()?;
        self.hpf.validate()?;
        if let Some(mpp) = self.microns_per_pixel {
            if !(mpp.is_finite() && mpp > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "microns_per_pixel override must be positive, got {mpp}"
                )));
            }
        }
        if self.worker_count == 0 {
            return Err(Error::InvalidConfig("worker_count must be >= 1".into()));
        }
        if self.memory_budget_bytes == 0 {
            return Err(Error::InvalidConfig(
                "memory_budget_bytes must be > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn microns_per_pixel_for(&self, meta: &SlideMeta) -> f64 {
        self.microns_per_pixel.unwrap_or(meta.microns_per_pixel)
    }

    /// The settings that determine results. Worker count and memory budget
    /// change only how the work is scheduled, so they are left out and
    /// reports stay byte-identical across them.
    pub fn echo(&self, backend: &str, microns_per_pixel: f64) -> ConfigEcho {
        ConfigEcho {
            segmenter_backend: backend.to_string(),
            tiler: self.tiler.clone(),
            segmenter: self.segmenter.clone(),
            counting: self.counting.clone(),
            hpf: self.hpf.clone(),
            microns_per_pixel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub segmenter_backend: String,
    pub tiler: TilerConfig,
    pub segmenter: SegmenterConfig,
    pub counting: CountingRule,
    pub hpf: HpfConfig,
    pub microns_per_pixel: f64,
}

#[derive(Debug, Clone)]
pub struct SlideAnalysis {
    pub pec: PecResult,
    pub hpf_side_px: u32,
    pub microns_per_pixel: f64,
    /// Summed cell counts over all regions of each class.
    pub intact_total: u64,
    pub not_intact_total: u64,
    pub intact_regions: usize,
    pub not_intact_regions: usize,
    pub points: Vec<EosPoint>,
    pub patches_total: usize,
    pub patches_segmented: usize,
    /// Fused, overlap-resolved channels.
    pub mask: ClassChannels,
}

/// Per-slide report as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideReport {
    pub slide_id: String,
    pub peak_count: u64,
    pub hpf_rect: Rect,
    pub label: crate::pec::Activity,
    pub intact_total: u64,
    pub not_intact_total: u64,
    pub hpf_side_px: u32,
    pub patches_total: usize,
    pub patches_segmented: usize,
    pub config_echo: ConfigEcho,
}

impl SlideReport {
    pub fn new(a: &SlideAnalysis, cfg: &PipelineConfig, backend: &str) -> Self {
        SlideReport {
            slide_id: a.pec.slide_id.clone(),
            peak_count: a.pec.peak_count,
            hpf_rect: a.pec.hpf_rect,
            label: a.pec.label,
            intact_total: a.intact_total,
            not_intact_total: a.not_intact_total,
            hpf_side_px: a.hpf_side_px,
            patches_total: a.patches_total,
            patches_segmented: a.patches_segmented,
            config_echo: cfg.echo(backend, a.microns_per_pixel),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn pec(&self) -> PecResult {
        PecResult {
            slide_id: self.slide_id.clone(),
            peak_count: self.peak_count,
            hpf_rect: self.hpf_rect,
            label: self.label,
        }
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {workers} workers: {e}")))
}

/// Segments one clipped patch. `None` means it was filtered as background.
fn patch_channels(
    band: &RgbRaster,
    band_y: u32,
    clip: Rect,
    cfg: &PipelineConfig,
    backend: &dyn Segmenter,
    slide_id: &str,
) -> Result<Option<ClassChannels>> {
    let wrap = |e: Error| Error::Patch {
        slide_id: slide_id.to_string(),
        x: clip.x,
        y: clip.y,
        source: Box::new(e),
    };
    let real = band
        .crop(Rect::new(clip.x, clip.y - band_y, clip.w, clip.h))
        .map_err(wrap)?;
    if !is_informative(&real, &cfg.tiler) {
        return Ok(None);
    }
    let p = cfg.tiler.patch_size;
    let padded = pad_patch(&real, p, p);
    let ctx = PatchContext {
        slide_id,
        origin: (clip.x, clip.y),
    };
    let probs = segment_patch(backend, &padded, ctx).map_err(wrap)?;
    let full = binarize(&probs, &cfg.segmenter);
    if (clip.w, clip.h) == (p, p) {
        return Ok(Some(full));
    }
    let local = Rect::new(0, 0, clip.w, clip.h);
    Ok(Some(ClassChannels {
        intact: full.intact.crop(local).map_err(wrap)?,
        not_intact: full.not_intact.crop(local).map_err(wrap)?,
    }))
}

/// Runs the full pipeline on one slide.
pub fn analyze_slide(
    slide: &dyn SlideSource,
    cfg: &PipelineConfig,
    backend: &dyn Segmenter,
) -> Result<SlideAnalysis> {
    cfg.validate()?;
    let meta = slide.meta().clone();
    let slide_err = |e: Error| Error::Slide {
        slide_id: meta.id.clone(),
        source: Box::new(e),
    };
    meta.validate().map_err(slide_err)?;
    let p = cfg.tiler.patch_size;
    if backend.input_size() != (p, p) {
        let (bw, bh) = backend.input_size();
        return Err(Error::InvalidConfig(format!(
            "backend {} takes {bw}x{bh} patches but patch_size is {p}",
            backend.name()
        )));
    }
    let mpp = cfg.microns_per_pixel_for(&meta);
    let side = hpf_side_px(cfg.hpf.hpf_area_mm2, mpp)?;
    let (w, h) = (meta.width_px, meta.height_px);
    let plan = GridPlan::new(w, h, p);

    let mut fused = if 2 * BitMask::bytes_for(w, h) > cfg.memory_budget_bytes / 4 {
        ClassChannels::new_mapped(w, h).map_err(slide_err)?
    } else {
        ClassChannels::new(w, h)
    };
    let pool = thread_pool(cfg.worker_count)?;
    let mut segmented = 0;
    for &y in &plan.offsets_y {
        let band_h = p.min(h - y);
        let band = slide
            .read_region(Rect::new(0, y, w, band_h))
            .map_err(slide_err)?;
        let patches: Vec<Option<ClassChannels>> = pool.install(|| {
            plan.offsets_x
                .par_iter()
                .map(|&x| {
                    let clip = plan.clipped(x, y, w, h);
                    patch_channels(&band, y, clip, cfg, backend, &meta.id)
                })
                .collect::<Result<_>>()
        })?;
        drop(band);
        for (mask, &x) in patches.iter().zip(&plan.offsets_x) {
            if let Some(m) = mask {
                fuse_into(&mut fused, m, x, y)?;
                segmented += 1;
            }
        }
    }
    fused.resolve_in_place();

    let rule = &cfg.counting;
    let intact = count_regions(&fused.intact, EosClass::Intact, rule, Connectivity::Eight);
    let not_intact = count_regions(
        &fused.not_intact,
        EosClass::NotIntact,
        rule,
        Connectivity::Eight,
    );
    let total = |rs: &[crate::counter::EosRegion]| rs.iter().map(|r| r.eos_count as u64).sum();
    let points = points_from_regions(&intact);
    let (peak, rect) = peak_window(&points, side, w, h);
    Ok(SlideAnalysis {
        pec: PecResult {
            slide_id: meta.id.clone(),
            peak_count: peak,
            hpf_rect: rect,
            label: classify(peak, &cfg.hpf),
        },
        hpf_side_px: side,
        microns_per_pixel: mpp,
        intact_total: total(&intact),
        not_intact_total: total(&not_intact),
        intact_regions: intact.len(),
        not_intact_regions: not_intact.len(),
        points,
        patches_total: plan.len(),
        patches_segmented: segmented,
        mask: fused,
    })
}

/// One cohort member that could not be analyzed.
#[derive(Debug)]
pub struct CohortFailure {
    /// Slide id, or the input path when the slide never opened.
    pub slide: String,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct CohortOutcome {
    pub analyses: Vec<SlideAnalysis>,
    /// Input label of each entry in `analyses`.
    pub inputs: Vec<String>,
    pub ranked: Vec<PecResult>,
    pub failures: Vec<CohortFailure>,
}

/// A cohort input: a label for error reporting and the opened slide.
pub type CohortEntry = (String, Result<Box<dyn SlideSource>>);

/// Opens every path as a tiled slide, keeping open errors for reporting.
pub fn open_cohort(paths: &[PathBuf]) -> Vec<CohortEntry> {
    paths
        .iter()
        .map(|p| {
            let slide = open_slide(p).map(|s| Box::new(s) as Box<dyn SlideSource>);
            (p.display().to_string(), slide)
        })
        .collect()
}

/// Analyzes every slide on its own; one slide failing leaves the rest
/// untouched. Duplicate ids among the opened slides are rejected up front.
pub fn analyze_cohort(
    slides: Vec<CohortEntry>,
    cfg: &PipelineConfig,
    backend: &dyn Segmenter,
) -> Result<CohortOutcome> {
    cfg.validate()?;
    let mut seen = std::collections::HashSet::new();
    for (_, s) in &slides {
        if let Ok(s) = s {
            if !seen.insert(s.meta().id.clone()) {
                return Err(Error::DuplicateSlideId(s.meta().id.clone()));
            }
        }
    }
    let mut out = CohortOutcome::default();
    for (label, slide) in slides {
        match slide.and_then(|s| analyze_slide(s.as_ref(), cfg, backend)) {
            Ok(a) => {
                out.analyses.push(a);
                out.inputs.push(label);
            }
            Err(error) => out.failures.push(CohortFailure {
                slide: label,
                error,
            }),
        }
    }
    out.ranked = rank_slides(out.analyses.iter().map(|a| a.pec.clone()).collect())?;
    Ok(out)
}

/// Power-of-two shrink factor that brings the longer side to at most
/// [`OVERLAY_MAX_SIDE`].
pub fn overlay_scale(width: u32, height: u32) -> u32 {
    let mut f = 1u32;
    while width.max(height).div_ceil(f) > OVERLAY_MAX_SIDE {
        f *= 2;
    }
    f
}

fn tint(px: [u8; 3], label: u8) -> [u8; 3] {
    let half = |a: u8, b: u8| ((a as u16 + b as u16) / 2) as u8;
    match label {
        ClassMask::INTACT => [half(px[0], 0), half(px[1], 255), half(px[2], 0)],
        ClassMask::NOT_INTACT => [half(px[0], 255), half(px[1], 0), half(px[2], 0)],
        _ => px,
    }
}

/// Slide pixels with the mask tinted in: intact half-blended with green,
/// not-intact with red. Optionally outlines one rectangle.
pub struct OverlaySource<'a> {
    slide: &'a dyn SlideSource,
    mask: &'a (dyn LabelGrid + Sync),
    outline: Option<(Rect, u32)>,
}

impl<'a> OverlaySource<'a> {
    pub fn new(slide: &'a dyn SlideSource, mask: &'a (dyn LabelGrid + Sync)) -> Result<Self> {
        let m = slide.meta();
        if (mask.width(), mask.height()) != (m.width_px, m.height_px) {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs slide {}x{}",
                mask.width(),
                mask.height(),
                m.width_px,
                m.height_px
            )));
        }
        Ok(OverlaySource {
            slide,
            mask,
            outline: None,
        })
    }

    /// Outlines `rect` with a border `thickness` pixels wide, drawn inside it.
    pub fn with_outline(mut self, rect: Rect, thickness: u32) -> Self {
        self.outline = Some((rect, thickness.max(1)));
        self
    }
}

fn on_outline(rect: Rect, t: u32, x: u32, y: u32) -> bool {
    if !rect.contains(x, y) {
        return false;
    }
    let (x, y) = (x as u64, y as u64);
    let t = t as u64;
    x < rect.x as u64 + t
        || y < rect.y as u64 + t
        || x + t >= rect.right()
        || y + t >= rect.bottom()
}

impl SlideSource for OverlaySource<'_> {
    fn meta(&self) -> &SlideMeta {
        self.slide.meta()
    }

    fn read_region(&self, rect: Rect) -> Result<RgbRaster> {
        let mut img = self.slide.read_region(rect)?;
        for y in 0..rect.h {
            for x in 0..rect.w {
                let (sx, sy) = (rect.x + x, rect.y + y);
                let mut px = tint(img.pixel(x, y), self.mask.label(sx, sy));
                if let Some((r, t)) = self.outline {
                    if on_outline(r, t, sx, sy) {
                        px = OVERLAY_BOX_RGB;
                    }
                }
                img.set_pixel(x, y, px);
            }
        }
        Ok(img)
    }
}

/// Writes a single PNG overlay, shrunk by [`overlay_scale`] with
/// nearest-pixel sampling, and the winning field outlined in red.
pub fn render_overlay(
    slide: &dyn SlideSource,
    mask: &(dyn LabelGrid + Sync),
    hpf_rect: Rect,
    out_path: &Path,
) -> Result<PathBuf> {
    let src = OverlaySource::new(slide, mask)?;
    let m = slide.meta();
    let f = overlay_scale(m.width_px, m.height_px);
    let (ow, oh) = (m.width_px.div_ceil(f), m.height_px.div_ceil(f));
    let mut out = RgbRaster::filled(ow, oh, [0; 3]);
    // sample rows in bands to keep reads bounded
    let rows_per_band = (256 / f).max(1);
    let mut oy = 0;
    while oy < oh {
        let n = rows_per_band.min(oh - oy);
        let y0 = oy * f;
        let y1 = ((oy + n - 1) * f + 1).min(m.height_px);
        let band = src.read_region(Rect::new(0, y0, m.width_px, y1 - y0))?;
        for j in 0..n {
            for ox in 0..ow {
                out.set_pixel(ox, oy + j, band.pixel(ox * f, j * f));
            }
        }
        oy += n;
    }
    let scaled = Rect::new(
        hpf_rect.x / f,
        hpf_rect.y / f,
        (hpf_rect.w.div_ceil(f)).max(1),
        (hpf_rect.h.div_ceil(f)).max(1),
    );
    let thickness = 3.min(scaled.w).min(scaled.h).max(1);
    for y in 0..oh {
        for x in 0..ow {
            if on_outline(scaled, thickness, x, y) {
                out.set_pixel(x, y, OVERLAY_BOX_RGB);
            }
        }
    }
    write_rgb_png(out_path, &out)?;
    Ok(out_path.to_path_buf())
}

/// Full-resolution overlay written as a tiled RGB container.
pub fn render_overlay_tiled(
    slide: &dyn SlideSource,
    mask: &(dyn LabelGrid + Sync),
    hpf_rect: Rect,
    out_dir: &Path,
) -> Result<PathBuf> {
    let src = OverlaySource::new(slide, mask)?.with_outline(hpf_rect, 8);
    write_slide(&src, out_dir)?;
    Ok(out_dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pec::Activity;
    use crate::segmenter::{OracleSegmenter, ProbMap, INTACT_RGB};
    use crate::slide::read_rgb_png;
    use crate::synth::{generate_slide, BlobSpec, SlideSpec};

    fn cfg(patch: u32) -> PipelineConfig {
        PipelineConfig {
            tiler: TilerConfig {
                patch_size: patch,
                ..TilerConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    fn grid_blobs(n: usize, origin: (f64, f64), step: f64) -> Vec<BlobSpec> {
        (0..n)
            .map(|i| {
                BlobSpec::circle(
                    EosClass::Intact,
                    (
                        origin.0 + step * (i % 5) as f64,
                        origin.1 + step * (i / 5) as f64,
                    ),
                    2050,
                )
            })
            .collect()
    }

    fn small_spec(id: &str) -> SlideSpec {
        let mut s = SlideSpec::new(id, 1200, 1000);
        s.hpf.hpf_area_mm2 = 0.3 / 16.0;
        s.tile_size = 256;
        s
    }

    #[test]
    fn planted_sixteen_is_active() {
        let spec = small_spec("a16");
        let (slide, gt) = generate_slide(4, &spec, &grid_blobs(16, (300.0, 300.0), 90.0)).unwrap();
        let mut c = cfg(128);
        c.hpf = spec.hpf.clone();
        let a = analyze_slide(&slide, &c, &OracleSegmenter::new(128)).unwrap();
        assert_eq!(gt.planted_pec, 16);
        assert_eq!(a.pec.peak_count, 16);
        assert_eq!(a.pec.label, Activity::Active);
        assert_eq!(a.pec.hpf_rect, gt.planted_pec_rect);
        assert_eq!(a.intact_total, 16);
        assert_eq!(a.points.len(), gt.points.len());
        for (p, q) in a.points.iter().zip(&gt.points) {
            assert_eq!((p.x, p.y, p.multiplicity), (q.x, q.y, q.multiplicity));
        }
    }

    #[test]
    fn fourteen_is_inactive() {
        let spec = small_spec("a14");
        let (slide, _) = generate_slide(4, &spec, &grid_blobs(14, (300.0, 300.0), 90.0)).unwrap();
        let mut c = cfg(128);
        c.hpf = spec.hpf.clone();
        let a = analyze_slide(&slide, &c, &OracleSegmenter::new(128)).unwrap();
        assert_eq!((a.pec.peak_count, a.pec.label), (14, Activity::Inactive));
    }

    #[test]
    fn blank_slide_segments_nothing() {
        let meta = SlideMeta {
            id: "blank".into(),
            width_px: 1000,
            height_px: 700,
            microns_per_pixel: 0.2555,
            tile_size: 256,
        };
        let slide = (meta, RgbRaster::filled(1000, 700, [255; 3]));
        let a = analyze_slide(&slide, &cfg(448), &OracleSegmenter::new(448)).unwrap();
        assert_eq!((a.pec.peak_count, a.pec.label), (0, Activity::Inactive));
        assert_eq!(a.patches_segmented, 0);
        assert_eq!(a.patches_total, 6);
    }

    #[test]
    fn workers_do_not_change_reports() {
        let spec = small_spec("w");
        let (slide, _) = generate_slide(8, &spec, &grid_blobs(12, (200.0, 250.0), 95.0)).unwrap();
        let reports: Vec<String> = [1, 2, 8]
            .iter()
            .map(|&n| {
                let mut c = cfg(128);
                c.worker_count = n;
                let a = analyze_slide(&slide, &c, &OracleSegmenter::new(128)).unwrap();
                SlideReport::new(&a, &c, "oracle").to_json()
            })
            .collect();
        assert_eq!(reports[0], reports[1]);
        assert_eq!(reports[0], reports[2]);
    }

    #[test]
    fn mapped_fusion_matches_heap() {
        let spec = small_spec("m");
        let (slide, _) = generate_slide(8, &spec, &grid_blobs(7, (200.0, 250.0), 95.0)).unwrap();
        let heap = analyze_slide(&slide, &cfg(128), &OracleSegmenter::new(128)).unwrap();
        let mut tight = cfg(128);
        tight.memory_budget_bytes = 1024;
        let mapped = analyze_slide(&slide, &tight, &OracleSegmenter::new(128)).unwrap();
        assert!(mapped.mask.intact.is_mapped());
        assert_eq!(heap.mask, mapped.mask);
        assert_eq!(heap.pec, mapped.pec);
    }

    struct Failing;

    impl Segmenter for Failing {
        fn name(&self) -> String {
            "failing".into()
        }
        fn input_size(&self) -> (u32, u32) {
            (64, 64)
        }
        fn segment(&self, _: &RgbRaster, ctx: PatchContext<'_>) -> Result<ProbMap> {
            if ctx.origin.0 > 0 {
                Err(Error::Backend("boom".into()))
            } else {
                Ok(ProbMap::zeros(64, 64))
            }
        }
    }

    #[test]
    fn backend_errors_carry_patch_context() {
        let meta = SlideMeta {
            id: "f".into(),
            width_px: 200,
            height_px: 100,
            microns_per_pixel: 0.2555,
            tile_size: 64,
        };
        let slide = (meta, RgbRaster::filled(200, 100, [120, 60, 90]));
        let err = analyze_slide(&slide, &cfg(64), &Failing).unwrap_err();
        match err {
            Error::Patch { slide_id, x, .. } => assert_eq!((slide_id.as_str(), x > 0), ("f", true)),
            other => panic!("unexpected {other}"),
        }
        assert!(analyze_slide(&slide, &cfg(32), &Failing).is_err());
    }

    #[test]
    fn cohort_ranks_and_isolates() {
        let mk = |id: &str, n: usize| {
            let spec = small_spec(id);
            let (s, _) = generate_slide(1, &spec, &grid_blobs(n, (300.0, 300.0), 90.0)).unwrap();
            (id.to_string(), Ok(Box::new(s) as Box<dyn SlideSource>))
        };
        let mut c = cfg(128);
        c.hpf.hpf_area_mm2 = 0.3 / 16.0;
        let entries = vec![
            mk("A", 20),
            mk("B", 5),
            mk("C", 20),
            (
                "broken".to_string(),
                Err(Error::InvalidInput("corrupt".into())),
            ),
        ];
        let out = analyze_cohort(entries, &c, &OracleSegmenter::new(128)).unwrap();
        let order: Vec<_> = out.ranked.iter().map(|r| r.slide_id.as_str()).collect();
        assert_eq!(order, ["A", "C", "B"]);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.analyses.len(), 3);

        let empty = analyze_cohort(Vec::new(), &c, &OracleSegmenter::new(128)).unwrap();
        assert!(empty.analyses.is_empty() && empty.ranked.is_empty());

        assert!(matches!(
            analyze_cohort(vec![mk("A", 1), mk("A", 2)], &c, &OracleSegmenter::new(128)),
            Err(Error::DuplicateSlideId(_))
        ));
    }

    #[test]
    fn overlay_scale_examples() {
        assert_eq!(overlay_scale(4096, 100), 1);
        assert_eq!(overlay_scale(4097, 100), 2);
        assert_eq!(overlay_scale(16384, 16384), 4);
        assert_eq!(overlay_scale(100_000, 20_000), 32);
        for side in [1u32, 4096, 5000, 8192, 8193, 70_000] {
            let f = overlay_scale(side, 1);
            // ceil(log2(side / 4096)) computed independently
            let want = if side <= 4096 {
                1
            } else {
                1u32 << ((side as f64 / 4096.0).log2().ceil() as u32)
            };
            assert_eq!(f, want, "side {side}");
        }
    }

    #[test]
    fn overlay_of_empty_mask_is_image_plus_box() {
        let spec = SlideSpec::new("o", 300, 200);
        let (slide, _) = generate_slide(2, &spec, &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let hpf = Rect::new(50, 40, 100, 80);
        let path = render_overlay(
            &slide,
            &ClassMask::new(300, 200),
            hpf,
            &dir.path().join("o.png"),
        )
        .unwrap();
        let img = read_rgb_png(&path).unwrap();
        let src = slide.read_region(spec.meta().bounds()).unwrap();
        for y in 0..200 {
            for x in 0..300 {
                if on_outline(hpf, 3, x, y) {
                    assert_eq!(img.pixel(x, y), OVERLAY_BOX_RGB);
                } else {
                    assert_eq!(img.pixel(x, y), src.pixel(x, y), "({x},{y})");
                }
            }
        }
    }

    #[test]
    fn overlay_tints_exactly_the_footprint() {
        let spec = SlideSpec::new("t", 200, 200);
        let blobs = [BlobSpec::circle(EosClass::Intact, (100.0, 100.0), 1500)];
        let (slide, _) = generate_slide(2, &spec, &blobs).unwrap();
        let mask = slide.mask();
        let src = OverlaySource::new(&slide, &mask).unwrap();
        let img = src.read_region(spec.meta().bounds()).unwrap();
        let raw = slide.read_region(spec.meta().bounds()).unwrap();
        for y in 0..200 {
            for x in 0..200 {
                let keyed = raw.pixel(x, y) == INTACT_RGB;
                assert_eq!(keyed, mask.get(x, y) == ClassMask::INTACT);
                if !keyed {
                    assert_eq!(img.pixel(x, y), raw.pixel(x, y));
                } else {
                    assert_eq!(img.pixel(x, y), tint(raw.pixel(x, y), ClassMask::INTACT));
                }
            }
        }
        assert!(OverlaySource::new(&slide, &ClassMask::new(10, 10)).is_err());
    }
}
