//! Synthetic slides with planted elliptical cells, their exact ground
//! truth, and the exhaustive peak-count oracle.
//!
//! Slides are procedural: pixels are computed on demand from the blob list,
//! so a 16K-square slide costs no more memory than a small one.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::counter::{eos_count_of_area, CountingRule, EosPoint, Run};
use crate::error::{Error, Result};
use crate::pec::{classify, hpf_side_px, peak_window, Activity, HpfConfig};
use crate::segmenter::{INTACT_RGB, NOT_INTACT_RGB};
use crate::slide::{
    write_mask_tiles, write_slide, ClassMask, EosClass, Rect, RgbRaster, SlideMeta, SlideSource,
    DEFAULT_MICRONS_PER_PIXEL,
};

/// Mean tissue colour. No channel combination near it reaches the
/// background threshold or collides with the oracle colour key.
pub const TISSUE_RGB: [u8; 3] = [228, 164, 196];
/// Bare glass around the tissue; reads as background.
pub const GLASS_RGB: [u8; 3] = [245, 240, 242];
/// Largest placement count [`brute_force_pec`] will enumerate.
pub const BRUTE_FORCE_GUARD: u64 = 10_000_000;
/// Smallest pixel gap kept between any two planted blobs.
pub const MIN_SEPARATION_PX: u32 = 2;

const TISSUE_JITTER: i32 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub class: EosClass,
    pub center: (f64, f64),
    pub target_area_px: u64,
    /// Major over minor axis, in [0.5, 2].
    pub aspect_ratio: f64,
    /// Radians.
    pub rotation: f64,
}

impl BlobSpec {
    pub fn circle(class: EosClass, center: (f64, f64), target_area_px: u64) -> Self {
        BlobSpec {
            class,
            center,
            target_area_px,
            aspect_ratio: 1.0,
            rotation: 0.0,
        }
    }
}

/// Geometry and calibration of a generated slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideSpec {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub microns_per_pixel: f64,
    pub tile_size: u32,
    /// Width of the glass border around the tissue.
    pub margin_px: u32,
    pub hpf: HpfConfig,
    pub rule: CountingRule,
}

impl SlideSpec {
    pub fn new(id: impl Into<String>, width: u32, height: u32) -> Self {
        SlideSpec {
            id: id.into(),
            width,
            height,
            microns_per_pixel: DEFAULT_MICRONS_PER_PIXEL,
            tile_size: 1024,
            margin_px: 0,
            hpf: HpfConfig::default(),
            rule: CountingRule::default(),
        }
    }

    pub fn meta(&self) -> SlideMeta {
        SlideMeta {
            id: self.id.clone(),
            width_px: self.width,
            height_px: self.height,
            microns_per_pixel: self.microns_per_pixel,
            tile_size: self.tile_size,
        }
    }

    pub fn tissue(&self) -> Rect {
        let m = self.margin_px;
        Rect::new(
            m.min(self.width),
            m.min(self.height),
            self.width.saturating_sub(2 * m),
            self.height.saturating_sub(2 * m),
        )
    }
}

/// A blob as rendered: its exact pixel set and what the counter will see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBlob {
    pub class: EosClass,
    pub area_px: u64,
    pub centroid: (f64, f64),
    pub bbox: Rect,
    pub eos_count: u32,
    #[serde(skip)]
    runs: Vec<Run>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroundTruth {
    pub slide_id: String,
    /// Intact cells, one point per counted blob.
    pub points: Vec<EosPoint>,
    pub planted_pec: u64,
    #[serde(rename = "rect")]
    pub planted_pec_rect: Rect,
    pub label: Activity,
    pub hpf_side_px: u32,
    pub blobs: Vec<PlantedBlob>,
}

/// Procedural slide: glass margin, jittered tissue, colour-keyed blobs.
#[derive(Debug, Clone)]
pub struct SynthSlide {
    meta: SlideMeta,
    seed: u64,
    tissue: Rect,
    blobs: Vec<PlantedBlob>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tissue_px(seed: u64, x: u32, y: u32) -> [u8; 3] {
    let h = splitmix(seed ^ ((y as u64) << 32 | x as u64));
    let span = (2 * TISSUE_JITTER + 1) as u64;
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let j = ((h >> (16 * c)) & 0xffff) % span;
        *o = (TISSUE_RGB[c] as i32 + j as i32 - TISSUE_JITTER) as u8;
    }
    out
}

fn class_rgb(class: EosClass) -> [u8; 3] {
    match class {
        EosClass::Intact => INTACT_RGB,
        EosClass::NotIntact => NOT_INTACT_RGB,
    }
}

impl SynthSlide {
    pub fn blobs(&self) -> &[PlantedBlob] {
        &self.blobs
    }

    pub fn tissue(&self) -> Rect {
        self.tissue
    }

    fn blobs_in(&self, rect: Rect) -> impl Iterator<Item = &PlantedBlob> {
        self.blobs
            .iter()
            .filter(move |b| b.bbox.intersect(&rect).is_some())
    }

    /// Ground-truth labels for `rect`.
    pub fn label_region(&self, rect: Rect) -> Result<ClassMask> {
        rect.check_within(self.meta.width_px, self.meta.height_px)?;
        let mut out = ClassMask::new(rect.w, rect.h);
        for b in self.blobs_in(rect) {
            for r in clip_runs(&b.runs, rect) {
                for x in r.x0..r.x1 {
                    out.set(x - rect.x, r.y - rect.y, b.class.label());
                }
            }
        }
        Ok(out)
    }

    /// Full ground-truth mask. Only sensible for slides that fit in memory;
    /// use [`write_synth_mask`] for large ones.
    pub fn mask(&self) -> ClassMask {
        self.label_region(self.meta.bounds())
            .expect("slide bounds are in range")
    }
}

fn clip_runs(runs: &[Run], rect: Rect) -> impl Iterator<Item = Run> + '_ {
    let (rx1, ry1) = (rect.right() as u32, rect.bottom() as u32);
    runs.iter().filter_map(move |r| {
        if r.y < rect.y || r.y >= ry1 {
            return None;
        }
        let (x0, x1) = (r.x0.max(rect.x), r.x1.min(rx1));
        (x0 < x1).then_some(Run { y: r.y, x0, x1 })
    })
}

impl SlideSource for SynthSlide {
    fn meta(&self) -> &SlideMeta {
        &self.meta
    }

    fn read_region(&self, rect: Rect) -> Result<RgbRaster> {
        rect.check_within(self.meta.width_px, self.meta.height_px)?;
        let mut out = RgbRaster::filled(rect.w, rect.h, GLASS_RGB);
        if let Some(t) = rect.intersect(&self.tissue) {
            for y in t.y..t.y + t.h {
                let row = out.row_mut(y - rect.y);
                for x in t.x..t.x + t.w {
                    let i = 3 * (x - rect.x) as usize;
                    row[i..i + 3].copy_from_slice(&tissue_px(self.seed, x, y));
                }
            }
        }
        for b in self.blobs_in(rect) {
            let rgb = class_rgb(b.class);
            for r in clip_runs(&b.runs, rect) {
                let row = out.row_mut(r.y - rect.y);
                for x in r.x0..r.x1 {
                    let i = 3 * (x - rect.x) as usize;
                    row[i..i + 3].copy_from_slice(&rgb);
                }
            }
        }
        Ok(out)
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    aspect_sqrt: f64,
}

impl Ellipse {
    fn new(spec: &BlobSpec) -> Self {
        Ellipse {
            cx: spec.center.0,
            cy: spec.center.1,
            cos: spec.rotation.cos(),
            sin: spec.rotation.sin(),
            aspect_sqrt: spec.aspect_ratio.sqrt(),
        }
    }

    /// Semi-axes for scale `s`; the ellipse area is pi * s^2.
    fn axes(&self, s: f64) -> (f64, f64) {
        (s * self.aspect_sqrt, s / self.aspect_sqrt)
    }

    fn contains(&self, s: f64, x: f64, y: f64) -> bool {
        let (a, b) = self.axes(s);
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    }

    /// Integer pixels inside the ellipse, as row runs, unclipped.
    fn raster(&self, s: f64) -> Vec<(i64, i64, i64)> {
        let (a, b) = self.axes(s);
        let reach = a.max(b).ceil() as i64 + 1;
        let (cx, cy) = (self.cx.round() as i64, self.cy.round() as i64);
        let mut runs = Vec::new();
        for y in cy - reach..=cy + reach {
            let mut start = None;
            for x in cx - reach..=cx + reach + 1 {
                let inside = x <= cx + reach && self.contains(s, x as f64, y as f64);
                match (inside, start) {
                    (true, None) => start = Some(x),
                    (false, Some(x0)) => {
                        runs.push((y, x0, x));
                        start = None;
                    }
                    _ => {}
                }
            }
        }
        runs
    }
}

fn run_area(runs: &[(i64, i64, i64)]) -> u64 {
    runs.iter().map(|r| (r.2 - r.1) as u64).sum()
}

/// Rasterizes a blob, scaling the ellipse so its pixel count lands as close
/// to the target as integer sampling allows.
fn rasterize(spec: &BlobSpec, width: u32, height: u32, rule: &CountingRule) -> Result<PlantedBlob> {
    if spec.target_area_px == 0 {
        return Err(Error::InvalidInput("blob target area must be > 0".into()));
    }
    if !(0.5..=2.0).contains(&spec.aspect_ratio) {
        return Err(Error::InvalidInput(format!(
            "blob aspect ratio {} outside [0.5, 2]",
            spec.aspect_ratio
        )));
    }
    if !(spec.center.0.is_finite() && spec.center.1.is_finite() && spec.rotation.is_finite()) {
        return Err(Error::InvalidInput("blob geometry must be finite".into()));
    }
    let e = Ellipse::new(spec);
    let target = spec.target_area_px;
    let s0 = (target as f64 / std::f64::consts::PI).sqrt();
    let (mut lo, mut hi) = (0.0, 2.0 * s0 + 2.0);
    let mut best = e.raster(s0);
    for _ in 0..48 {
        let mid = 0.5 * (lo + hi);
        let runs = e.raster(mid);
        let area = run_area(&runs);
        if area.abs_diff(target) < run_area(&best).abs_diff(target) {
            best = runs;
        }
        if area == target {
            break;
        }
        if area < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let area = run_area(&best);
    if area == 0 {
        return Err(Error::InvalidInput(format!(
            "blob at {:?} rasterizes to no pixels",
            spec.center
        )));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    for &(y, a, b) in &best {
        x0 = x0.min(a);
        x1 = x1.max(b);
        y0 = y0.min(y);
        y1 = y1.max(y + 1);
    }
    if x0 < 0 || y0 < 0 || x1 > width as i64 || y1 > height as i64 {
        return Err(Error::InvalidInput(format!(
            "blob at {:?} extends outside the {width}x{height} slide",
            spec.center
        )));
    }
    let runs: Vec<Run> = best
        .iter()
        .map(|&(y, a, b)| Run {
            y: y as u32,
            x0: a as u32,
            x1: b as u32,
        })
        .collect();
    let (mut sx, mut sy) = (0f64, 0f64);
    for r in &runs {
        let n = r.len() as f64;
        sx += (r.x0 as f64 + r.x1 as f64 - 1.0) * n / 2.0;
        sy += r.y as f64 * n;
    }
    Ok(PlantedBlob {
        class: spec.class,
        area_px: area,
        centroid: (sx / area as f64, sy / area as f64),
        bbox: Rect::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32),
        eos_count: match spec.class {
            EosClass::Intact => eos_count_of_area(area, rule),
            EosClass::NotIntact => 0,
        },
        runs,
    })
}

/// True when the two blobs come closer than [`MIN_SEPARATION_PX`] empty
/// pixels, counting diagonal neighbours.
fn too_close(a: &PlantedBlob, b: &PlantedBlob) -> bool {
    let g = MIN_SEPARATION_PX as i64;
    let grown = |r: &Rect| {
        (
            r.x as i64 - g,
            r.y as i64 - g,
            r.right() as i64 + g,
            r.bottom() as i64 + g,
        )
    };
    let (ax0, ay0, ax1, ay1) = grown(&a.bbox);
    if ax1 <= b.bbox.x as i64
        || b.bbox.right() as i64 <= ax0
        || ay1 <= b.bbox.y as i64
        || b.bbox.bottom() as i64 <= ay0
    {
        return false;
    }
    for ra in &a.runs {
        for rb in &b.runs {
            let dy = (ra.y as i64 - rb.y as i64).abs();
            if dy > g {
                continue;
            }
            // gap between [x0, x1) intervals in empty pixels
            let gap = (rb.x0 as i64 - ra.x1 as i64).max(ra.x0 as i64 - rb.x1 as i64);
            if gap < g && dy <= g {
                return true;
            }
        }
    }
    false
}

fn ground_truth(spec: &SlideSpec, blobs: &[PlantedBlob]) -> Result<SynthGroundTruth> {
    let side = hpf_side_px(spec.hpf.hpf_area_mm2, spec.microns_per_pixel)?;
    let points: Vec<EosPoint> = blobs
        .iter()
        .filter(|b| b.class == EosClass::Intact && b.eos_count > 0)
        .map(|b| EosPoint {
            x: b.centroid.0,
            y: b.centroid.1,
            multiplicity: b.eos_count,
        })
        .collect();
    let (planted_pec, rect) = planted_pec(&points, side, spec.width, spec.height);
    Ok(SynthGroundTruth {
        slide_id: spec.id.clone(),
        points,
        planted_pec,
        planted_pec_rect: rect,
        label: classify(planted_pec, &spec.hpf),
        hpf_side_px: side,
        blobs: blobs.to_vec(),
    })
}

/// Exhaustive peak count where the placement space is within
/// [`BRUTE_FORCE_GUARD`], the exact sweep otherwise.
pub fn planted_pec(points: &[EosPoint], side: u32, width: u32, height: u32) -> (u64, Rect) {
    match brute_force_pec(points, side, width, height) {
        Ok(r) => r,
        Err(_) => peak_window(points, side, width, height),
    }
}

/// Renders `blobs` onto a slide described by `spec`. Blobs must lie inside
/// the slide and keep a gap of at least [`MIN_SEPARATION_PX`] from each other.
pub fn generate_slide(
    seed: u64,
    spec: &SlideSpec,
    blobs: &[BlobSpec],
) -> Result<(SynthSlide, SynthGroundTruth)> {
    let meta = spec.meta();
    meta.validate()?;
    spec.hpf.validate()?;
    spec.rule.validate()?;
    let mut planted: Vec<PlantedBlob> = Vec::with_capacity(blobs.len());
    for (i, b) in blobs.iter().enumerate() {
        let blob = rasterize(b, spec.width, spec.height, &spec.rule)?;
        if let Some(j) = planted.iter().position(|p| too_close(p, &blob)) {
            return Err(Error::InvalidInput(format!(
                "blobs {j} and {i} are closer than {MIN_SEPARATION_PX} px"
            )));
        }
        planted.push(blob);
    }
    finish(seed, spec, planted)
}

fn finish(
    seed: u64,
    spec: &SlideSpec,
    blobs: Vec<PlantedBlob>,
) -> Result<(SynthSlide, SynthGroundTruth)> {
    let gt = ground_truth(spec, &blobs)?;
    let slide = SynthSlide {
        meta: spec.meta(),
        seed,
        tissue: spec.tissue(),
        blobs,
    };
    Ok((slide, gt))
}

/// Exhaustive peak count: every integer placement is scored, rows top to
/// bottom and columns left to right, keeping the first strict maximum.
pub fn brute_force_pec(
    points: &[EosPoint],
    side: u32,
    width: u32,
    height: u32,
) -> Result<(u64, Rect)> {
    let side = side.max(1);
    let nx = width.saturating_sub(side) as u64 + 1;
    let ny = height.saturating_sub(side) as u64 + 1;
    let placements = nx * ny;
    if placements > BRUTE_FORCE_GUARD {
        return Err(Error::GuardExceeded {
            placements,
            guard: BRUTE_FORCE_GUARD,
        });
    }
    let (win_w, win_h) = (side.min(width), side.min(height));
    let pts: Vec<(i64, i64, i64)> = points
        .iter()
        .filter(|p| {
            p.multiplicity > 0
                && p.x.is_finite()
                && p.y.is_finite()
                && p.x >= 0.0
                && p.y >= 0.0
                && p.x < width as f64
                && p.y < height as f64
        })
        .map(|p| {
            (
                p.x.floor() as i64,
                p.y.floor() as i64,
                p.multiplicity as i64,
            )
        })
        .collect();
    let side = side as i64;
    let mut best = (0i64, Rect::new(0, 0, win_w, win_h));
    // per-row window sums via a difference array over x placements
    let mut diff = vec![0i64; nx as usize + 1];
    for y in 0..ny as i64 {
        diff.iter_mut().for_each(|d| *d = 0);
        let mut any = false;
        for &(px, py, m) in &pts {
            if py < y || py >= y + side {
                continue;
            }
            let lo = (px - side + 1).max(0);
            let hi = px.min(nx as i64 - 1);
            if lo <= hi {
                diff[lo as usize] += m;
                diff[hi as usize + 1] -= m;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let mut acc = 0;
        for (x, d) in diff.iter().take(nx as usize).enumerate() {
            acc += d;
            if acc > best.0 {
                best = (acc, Rect::new(x as u32, y as u32, win_w, win_h));
            }
        }
    }
    Ok((best.0 as u64, best.1))
}

/// Layout knobs for [`random_cohort_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortParams {
    pub width: u32,
    pub height: u32,
    pub microns_per_pixel: f64,
    pub tile_size: u32,
    pub margin_px: u32,
    /// Blobs stay at least this far inside the tissue edge, so every patch
    /// touching a blob is fully tissue. Set to the analysis patch size.
    pub patch_size: u32,
    pub hpf: HpfConfig,
    pub rule: CountingRule,
    /// Peak counts drawn for active slides, inclusive.
    pub active_range: (u64, u64),
    pub not_intact_distractors: (u32, u32),
    pub debris: (u32, u32),
}

impl Default for CohortParams {
    fn default() -> Self {
        CohortParams {
            width: 4096,
            height: 4096,
            microns_per_pixel: DEFAULT_MICRONS_PER_PIXEL,
            tile_size: 1024,
            margin_px: 128,
            patch_size: 448,
            hpf: HpfConfig::default(),
            rule: CountingRule::default(),
            active_range: (15, 30),
            not_intact_distractors: (5, 20),
            debris: (3, 12),
        }
    }
}

/// Areas chosen well inside their counting bracket, with the cell count each yields.
fn cell_area_for(count: u32, rule: &CountingRule) -> u64 {
    if count <= 1 {
        rule.typical_cell_area_px
    } else {
        rule.single_max_area_px
            + (count as u64 - 1) * rule.increment_area_px
            + rule.increment_area_px / 2
    }
}

struct Placer<'a> {
    rng: ChaCha8Rng,
    p: &'a CohortParams,
    placed: Vec<PlantedBlob>,
}

impl Placer<'_> {
    const ATTEMPTS: u32 = 400;

    /// Places one blob with its centre drawn from `[x0, x1) x [y0, y1)`.
    fn place(&mut self, class: EosClass, area: u64, zone: (u32, u32, u32, u32)) -> Result<()> {
        let (x0, y0, x1, y1) = zone;
        for _ in 0..Self::ATTEMPTS {
            let spec = BlobSpec {
                class,
                center: (
                    self.rng.random_range(x0..x1) as f64,
                    self.rng.random_range(y0..y1) as f64,
                ),
                target_area_px: area,
                aspect_ratio: self.rng.random_range(0.7..1.4),
                rotation: self.rng.random_range(0.0..std::f64::consts::PI),
            };
            let blob = rasterize(&spec, self.p.width, self.p.height, &self.p.rule)?;
            if !self.placed.iter().any(|b| too_close(b, &blob)) {
                self.placed.push(blob);
                return Ok(());
            }
        }
        Err(Error::InvalidInput(format!(
            "could not place a {area} px blob without overlap after {} attempts",
            Self::ATTEMPTS
        )))
    }
}

/// `n_slides` seeded slides, `round(activity_mix * n)` of them active.
pub fn random_cohort(
    seed: u64,
    n_slides: usize,
    activity_mix: f64,
) -> Result<Vec<(SynthSlide, SynthGroundTruth)>> {
    random_cohort_with(seed, n_slides, activity_mix, &CohortParams::default())
}

pub fn random_cohort_with(
    seed: u64,
    n_slides: usize,
    activity_mix: f64,
    params: &CohortParams,
) -> Result<Vec<(SynthSlide, SynthGroundTruth)>> {
    if n_slides == 0 {
        return Err(Error::InvalidInput(
            "cohort needs at least one slide".into(),
        ));
    }
    if !(0.0..=1.0).contains(&activity_mix) {
        return Err(Error::InvalidInput(format!(
            "activity_mix {activity_mix} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_active = (activity_mix * n_slides as f64).round() as usize;
    let mut active: Vec<bool> = (0..n_slides).map(|i| i < n_active).collect();
    active.shuffle(&mut rng);
    let threshold = params.hpf.activity_threshold as u64;
    active
        .iter()
        .enumerate()
        .map(|(i, &is_active)| {
            let pec = if is_active {
                rng.random_range(
                    params.active_range.0.max(threshold)..=params.active_range.1.max(threshold),
                )
            } else {
                rng.random_range(0..threshold)
            };
            let slide_seed = rng.random::<u64>();
            let id = format!("synth-{seed}-{i:04}");
            planted_slide(slide_seed, id, pec, params)
        })
        .collect()
}

/// One slide whose intact cells sum to `pec` inside a single field, with
/// not-intact distractors and sub-threshold debris scattered over the tissue.
pub fn planted_slide(
    seed: u64,
    id: impl Into<String>,
    pec: u64,
    params: &CohortParams,
) -> Result<(SynthSlide, SynthGroundTruth)> {
    let spec = SlideSpec {
        id: id.into(),
        width: params.width,
        height: params.height,
        microns_per_pixel: params.microns_per_pixel,
        tile_size: params.tile_size,
        margin_px: params.margin_px,
        hpf: params.hpf.clone(),
        rule: params.rule.clone(),
    };
    spec.meta().validate()?;
    spec.rule.validate()?;
    let side = hpf_side_px(spec.hpf.hpf_area_mm2, spec.microns_per_pixel)?;
    let tissue = spec.tissue();
    let inset = params.patch_size + 64;
    if tissue.w <= 2 * inset || tissue.h <= 2 * inset {
        return Err(Error::InvalidConfig(format!(
            "tissue {}x{} too small for a {} px blob inset",
            tissue.w, tissue.h, inset
        )));
    }
    let zone = (
        tissue.x + inset,
        tissue.y + inset,
        tissue.x + tissue.w - inset,
        tissue.y + tissue.h - inset,
    );

    let mut placer = Placer {
        rng: ChaCha8Rng::seed_from_u64(seed),
        p: params,
        placed: Vec::new(),
    };

    // the field holding every intact cell
    let cluster = side
        .min(zone.2 - zone.0)
        .min(zone.3 - zone.1)
        .saturating_sub(2 * 64)
        .max(1);
    let cx0 = zone.0 + placer.rng.random_range(0..=zone.2 - zone.0 - cluster);
    let cy0 = zone.1 + placer.rng.random_range(0..=zone.3 - zone.1 - cluster);
    let cluster_zone = (cx0, cy0, cx0 + cluster, cy0 + cluster);
    let mut remaining = pec;
    while remaining > 0 {
        let take = if remaining >= 3 && placer.rng.random_bool(0.15) {
            placer.rng.random_range(2..=3.min(remaining as u32))
        } else {
            1
        };
        placer.place(
            EosClass::Intact,
            cell_area_for(take, &params.rule),
            cluster_zone,
        )?;
        remaining -= take as u64;
    }

    let n_ni = placer
        .rng
        .random_range(params.not_intact_distractors.0..=params.not_intact_distractors.1);
    for _ in 0..n_ni {
        let area = placer.rng.random_range(1200..=4000);
        placer.place(EosClass::NotIntact, area, zone)?;
    }
    let n_debris = placer.rng.random_range(params.debris.0..=params.debris.1);
    let debris_max = params.rule.min_area_px * 95 / 100;
    for _ in 0..n_debris {
        let area = placer.rng.random_range(200..=debris_max.max(201));
        placer.place(EosClass::Intact, area, zone)?;
    }
    let blobs = placer.placed;
    finish(seed, &spec, blobs)
}

/// Writes the slide as an RGB container in `slide_dir` and its labels as a
/// mask container in `mask_dir`, one tile at a time.
pub fn write_synth_slide(slide: &SynthSlide, slide_dir: &Path, mask_dir: &Path) -> Result<()> {
    write_slide(slide, slide_dir)?;
    write_synth_mask(slide, mask_dir)
}

pub fn write_synth_mask(slide: &SynthSlide, mask_dir: &Path) -> Result<()> {
    write_mask_tiles(&slide.meta, mask_dir, |rect| {
        Ok(slide.label_region(rect)?.labels().to_vec())
    })
}

pub fn write_ground_truth(gt: &SynthGroundTruth, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(gt).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counter::{count_regions, Connectivity};
    use crate::tiler::{is_informative, TilerConfig};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn small(id: &str, w: u32, h: u32) -> SlideSpec {
        SlideSpec::new(id, w, h)
    }

    fn pt(x: f64, y: f64) -> EosPoint {
        EosPoint {
            x,
            y,
            multiplicity: 1,
        }
    }

    /// Independent pixel-count oracle for an axis-aligned circle.
    fn disc_pixels(cx: f64, cy: f64, r: f64) -> u64 {
        let reach = r.ceil() as i64 + 1;
        let mut n = 0;
        for y in -reach..=reach {
            for x in -reach..=reach {
                let (dx, dy) = (x as f64 + cx.round() - cx, y as f64 + cy.round() - cy);
                if dx * dx + dy * dy <= r * r {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn zero_blobs_is_empty() {
        let (slide, gt) = generate_slide(1, &small("z", 64, 64), &[]).unwrap();
        assert_eq!(gt.planted_pec, 0);
        assert_eq!(gt.planted_pec_rect, Rect::new(0, 0, 64, 64));
        assert!(slide.mask().labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn single_blob_area_and_centroid() {
        let blob = BlobSpec::circle(EosClass::Intact, (100.0, 200.0), 2050);
        let (slide, gt) = generate_slide(3, &small("one", 300, 300), &[blob]).unwrap();
        let mask = slide.mask();
        let regions = count_regions(
            &mask.channel(EosClass::Intact),
            EosClass::Intact,
            &CountingRule::default(),
            Connectivity::Eight,
        );
        assert_eq!(regions.len(), 1);
        let r = &regions[0];
        assert!((2009..=2091).contains(&r.area_px), "area {}", r.area_px);
        assert!((r.centroid.0 - 100.0).abs() <= 1.0 && (r.centroid.1 - 200.0).abs() <= 1.0);
        assert_eq!(gt.points.len(), 1);
        assert_eq!(gt.points[0].x, r.centroid.0);
        // the chosen scale yields a disc the oracle agrees on
        let radius = (2050.0 / std::f64::consts::PI).sqrt();
        let near = disc_pixels(100.0, 200.0, radius);
        assert!(near.abs_diff(r.area_px) <= 60);
    }

    #[test]
    fn image_and_mask_agree_pixel_exactly() {
        let blobs = [
            BlobSpec::circle(EosClass::Intact, (40.0, 40.0), 900),
            BlobSpec {
                class: EosClass::NotIntact,
                center: (100.0, 70.0),
                target_area_px: 1500,
                aspect_ratio: 1.8,
                rotation: 0.6,
            },
        ];
        let (slide, _) = generate_slide(9, &small("k", 160, 120), &blobs).unwrap();
        let img = slide.read_region(Rect::new(0, 0, 160, 120)).unwrap();
        let mask = slide.mask();
        for y in 0..120 {
            for x in 0..160 {
                let want = match img.pixel(x, y) {
                    INTACT_RGB => 1,
                    NOT_INTACT_RGB => 2,
                    _ => 0,
                };
                assert_eq!(mask.get(x, y), want, "({x},{y})");
            }
        }
    }

    #[test]
    fn regions_are_read_consistently() {
        let blobs = [BlobSpec::circle(EosClass::Intact, (50.0, 50.0), 2000)];
        let mut spec = small("r", 128, 128);
        spec.margin_px = 10;
        let (slide, _) = generate_slide(5, &spec, &blobs).unwrap();
        let full = slide.read_region(Rect::new(0, 0, 128, 128)).unwrap();
        let part = slide.read_region(Rect::new(30, 17, 41, 60)).unwrap();
        assert_eq!(part, full.crop(Rect::new(30, 17, 41, 60)).unwrap());
        assert_eq!(full.pixel(0, 0), GLASS_RGB);
    }

    #[test]
    fn tissue_is_informative_and_glass_is_not() {
        let cfg = TilerConfig::default();
        let mut spec = small("t", 600, 600);
        spec.margin_px = 100;
        let (slide, _) = generate_slide(2, &spec, &[]).unwrap();
        assert!(is_informative(
            &slide.read_region(Rect::new(150, 150, 300, 300)).unwrap(),
            &cfg
        ));
        assert!(!is_informative(
            &slide.read_region(Rect::new(0, 0, 100, 600)).unwrap(),
            &cfg
        ));
    }

    #[test]
    fn rejects_bad_blobs() {
        let spec = small("b", 100, 100);
        let edge = BlobSpec::circle(EosClass::Intact, (5.0, 50.0), 2000);
        assert!(generate_slide(0, &spec, &[edge]).is_err());
        let a = BlobSpec::circle(EosClass::Intact, (30.0, 50.0), 400);
        let b = BlobSpec::circle(EosClass::Intact, (52.0, 50.0), 400);
        assert!(generate_slide(0, &spec, &[a, b]).is_err());
        let mut odd = BlobSpec::circle(EosClass::Intact, (50.0, 50.0), 400);
        odd.aspect_ratio = 3.0;
        assert!(generate_slide(0, &spec, &[odd]).is_err());
    }

    #[test]
    fn sixteen_of_twenty_in_one_field() {
        let mut blobs = Vec::new();
        for i in 0..16 {
            let (gx, gy) = (i % 4, i / 4);
            blobs.push(BlobSpec::circle(
                EosClass::Intact,
                (100.0 + 80.0 * gx as f64, 100.0 + 80.0 * gy as f64),
                2050,
            ));
        }
        for i in 0..4 {
            blobs.push(BlobSpec::circle(
                EosClass::Intact,
                (1000.0 + 300.0 * i as f64, 1500.0),
                2050,
            ));
        }
        let mut spec = small("s", 2400, 1800);
        spec.hpf.hpf_area_mm2 = 0.3 / 16.0;
        let (_, gt) = generate_slide(1, &spec, &blobs).unwrap();
        assert_eq!(gt.hpf_side_px, 536);
        assert_eq!(gt.planted_pec, 16);
        assert_eq!(gt.label, Activity::Active);
    }

    #[test]
    fn brute_force_examples() {
        assert_eq!(
            brute_force_pec(&[], 10, 50, 40).unwrap(),
            (0, Rect::new(0, 0, 10, 10))
        );
        let (c, r) = brute_force_pec(&[pt(25.5, 12.0)], 10, 50, 40).unwrap();
        assert_eq!((c, r), (1, Rect::new(16, 3, 10, 10)));
        assert!(matches!(
            brute_force_pec(&[], 1, 5000, 5000),
            Err(Error::GuardExceeded { .. })
        ));
        // narrower than the field: whole-slide extent
        let (c, r) = brute_force_pec(&[pt(3.0, 3.0), pt(6.0, 30.0)], 20, 8, 40).unwrap();
        assert_eq!((c, r), (1, Rect::new(0, 0, 8, 20)));
    }

    #[test]
    fn brute_force_matches_sweep_on_512() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let pts: Vec<EosPoint> = (0..50)
            .map(|_| pt(rng.random_range(0.0..512.0), rng.random_range(0.0..512.0)))
            .collect();
        assert_eq!(
            brute_force_pec(&pts, 128, 512, 512).unwrap(),
            peak_window(&pts, 128, 512, 512)
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn brute_force_equals_sweep(
            w in 1u32..120, h in 1u32..120, side in 1u32..60,
            raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 1u32..4), 0..25),
        ) {
            let pts: Vec<EosPoint> = raw
                .iter()
                .map(|&(fx, fy, m)| EosPoint { x: fx * w as f64, y: fy * h as f64, multiplicity: m })
                .collect();
            prop_assert_eq!(brute_force_pec(&pts, side, w, h).unwrap(), peak_window(&pts, side, w, h));
        }

        #[test]
        fn rasterized_area_within_two_percent(
            area in 500u64..9000, aspect in 0.5f64..2.0, rot in 0.0f64..6.3,
        ) {
            let spec = BlobSpec {
                class: EosClass::Intact,
                center: (150.0, 150.0),
                target_area_px: area,
                aspect_ratio: aspect,
                rotation: rot,
            };
            let b = rasterize(&spec, 300, 300, &CountingRule::default()).unwrap();
            prop_assert!(b.area_px.abs_diff(area) as f64 <= 0.02 * area as f64);
        }
    }

    fn tiny_params() -> CohortParams {
        CohortParams {
            width: 1600,
            height: 1600,
            margin_px: 64,
            patch_size: 128,
            hpf: HpfConfig {
                hpf_area_mm2: 0.3 / 4.0,
                activity_threshold: 15,
            },
            not_intact_distractors: (2, 4),
            debris: (1, 3),
            ..CohortParams::default()
        }
    }

    #[test]
    fn cohort_labels_follow_mix() {
        let p = tiny_params();
        for (mix, want) in [(0.0, Activity::Inactive), (1.0, Activity::Active)] {
            let cohort = random_cohort_with(11, 10, mix, &p).unwrap();
            assert_eq!(cohort.len(), 10);
            for (_, gt) in &cohort {
                assert_eq!(gt.label, want, "mix {mix}: pec {}", gt.planted_pec);
            }
        }
        assert!(random_cohort_with(1, 0, 0.5, &p).is_err());
        assert!(random_cohort_with(1, 3, 1.5, &p).is_err());
    }

    #[test]
    fn cohort_is_deterministic() {
        let p = tiny_params();
        let a = random_cohort_with(42, 4, 0.5, &p).unwrap();
        let b = random_cohort_with(42, 4, 0.5, &p).unwrap();
        for ((sa, ga), (sb, gb)) in a.iter().zip(&b) {
            assert_eq!(ga, gb);
            let r = Rect::new(300, 300, 200, 200);
            assert_eq!(sa.read_region(r).unwrap(), sb.read_region(r).unwrap());
        }
        let mixed = a
            .iter()
            .filter(|(_, g)| g.label == Activity::Active)
            .count();
        assert_eq!(mixed, 2);
    }

    #[test]
    fn planted_slide_hits_target() {
        let p = tiny_params();
        for pec in [0, 1, 14, 15, 30] {
            let (slide, gt) = planted_slide(pec + 100, "p", pec, &p).unwrap();
            assert_eq!(gt.planted_pec, pec);
            let t = slide.tissue();
            for b in slide.blobs() {
                assert!(
                    b.bbox.x >= t.x + p.patch_size
                        && b.bbox.right() <= t.right() - p.patch_size as u64
                );
            }
        }
    }
}
