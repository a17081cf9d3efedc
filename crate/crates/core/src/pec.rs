//! Peak eosinophil count: the largest intact-cell count any square
//! high-power field can hold when placed anywhere on the slide.
//!
//! A point with centroid `(px, py)` lies in the window at `(x, y)` iff
//! `x <= px < x + side` and `y <= py < y + side`. Placements are integer and
//! clamped to the slide. When the slide is narrower (or shorter) than the
//! field, the single whole-slide extent is used on that axis.

use std::cmp::Reverse;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::counter::EosPoint;
use crate::error::{Error, Result};
use crate::slide::Rect;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpfConfig {
    pub hpf_area_mm2: f64,
    /// Peak counts at or above this are active disease.
    pub activity_threshold: u32,
}

impl Default for HpfConfig {
    fn default() -> Self {
        HpfConfig {
            hpf_area_mm2: 0.3,
            activity_threshold: 15,
        }
    }
}

impl HpfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hpf_area_mm2.is_finite() && self.hpf_area_mm2 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "hpf_area_mm2 must be finite and positive, got {}",
                self.hpf_area_mm2
            )));
        }
        if self.activity_threshold == 0 {
            return Err(Error::InvalidConfig(
                "activity_threshold must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activity {
    Active,
    Inactive,
}

impl Activity {
    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Active => "Active",
            Activity::Inactive => "Inactive",
        }
    }
}

impl std::str::FromStr for Activity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "active" | "1" | "true" => Ok(Activity::Active),
            "inactive" | "0" | "false" => Ok(Activity::Inactive),
            other => Err(Error::InvalidInput(format!(
                "unknown activity label {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PecResult {
    pub slide_id: String,
    pub peak_count: u64,
    pub hpf_rect: Rect,
    pub label: Activity,
}

/// Side in pixels of a square field of `area_mm2` at the given pixel pitch.
pub fn hpf_side_px(area_mm2: f64, microns_per_pixel: f64) -> Result<u32> {
    if !(area_mm2.is_finite() && area_mm2 > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "HPF area {area_mm2} mm² is not positive"
        )));
    }
    if !(microns_per_pixel.is_finite() && microns_per_pixel > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "pixel pitch {microns_per_pixel} µm is not positive"
        )));
    }
    let side_um = (area_mm2 * 1e6).sqrt();
    let px = (side_um / microns_per_pixel).round();
    if px > u32::MAX as f64 {
        return Err(Error::InvalidConfig(format!("HPF side {px} px overflows")));
    }
    Ok((px as u32).max(1))
}

pub fn classify(peak_count: u64, cfg: &HpfConfig) -> Activity {
    if peak_count >= cfg.activity_threshold as u64 {
        Activity::Active
    } else {
        Activity::Inactive
    }
}

/// Descending peak count, ties by ascending slide id.
pub fn rank_slides(mut results: Vec<PecResult>) -> Result<Vec<PecResult>> {
    let mut seen = HashSet::new();
    for r in &results {
        if !seen.insert(r.slide_id.as_str()) {
            return Err(Error::DuplicateSlideId(r.slide_id.clone()));
        }
    }
    results.sort_by(|a, b| {
        (Reverse(a.peak_count), &a.slide_id).cmp(&(Reverse(b.peak_count), &b.slide_id))
    });
    Ok(results)
}

/// Window geometry shared by the exact and approximate searches.
#[derive(Debug, Clone, Copy)]
struct Frame {
    bounds: Rect,
    side: i64,
    min_x: i64,
    min_y: i64,
    max_x: i64,
    max_y: i64,
    win_w: u32,
    win_h: u32,
}

impl Frame {
    fn new(side: u32, bounds: Rect) -> Self {
        let side = side.max(1);
        Frame {
            bounds,
            side: side as i64,
            min_x: bounds.x as i64,
            min_y: bounds.y as i64,
            max_x: bounds.x as i64 + bounds.w.saturating_sub(side) as i64,
            max_y: bounds.y as i64 + bounds.h.saturating_sub(side) as i64,
            win_w: side.min(bounds.w),
            win_h: side.min(bounds.h),
        }
    }

    fn rect(&self, x: i64, y: i64) -> Rect {
        Rect::new(x as u32, y as u32, self.win_w, self.win_h)
    }

    fn origin(&self) -> Rect {
        self.rect(self.min_x, self.min_y)
    }

    /// Closed range of placements along one axis whose window holds `coord`.
    fn span(&self, coord: f64, min: i64, max: i64) -> Option<(i64, i64)> {
        let f = coord.floor() as i64;
        let lo = (f - self.side + 1).max(min);
        let hi = f.min(max);
        (lo <= hi).then_some((lo, hi))
    }

    /// Points with finite coordinates inside the bounds; anything else is dropped.
    fn admits(&self, p: &EosPoint) -> bool {
        let b = &self.bounds;
        p.multiplicity > 0
            && p.x.is_finite()
            && p.y.is_finite()
            && p.x >= b.x as f64
            && p.y >= b.y as f64
            && p.x < b.right() as f64
            && p.y < b.bottom() as f64
    }
}

/// Range-add / max-with-leftmost-argmax segment tree.
struct MaxTree {
    size: usize,
    max: Vec<i64>,
    arg: Vec<u32>,
    lazy: Vec<i64>,
}

impl MaxTree {
    fn new(n: usize) -> Self {
        let size = n.next_power_of_two();
        let mut arg = vec![0u32; 2 * size];
        let mut max = vec![0i64; 2 * size];
        for i in 0..size {
            arg[size + i] = i as u32;
            // padding leaves can never win
            if i >= n {
                max[size + i] = i64::MIN / 4;
            }
        }
        for i in (1..size).rev() {
            let (l, r) = (2 * i, 2 * i + 1);
            if max[l] >= max[r] {
                max[i] = max[l];
                arg[i] = arg[l];
            } else {
                max[i] = max[r];
                arg[i] = arg[r];
            }
        }
        MaxTree {
            size,
            max,
            arg,
            lazy: vec![0; 2 * size],
        }
    }

    fn add(&mut self, lo: usize, hi: usize, v: i64) {
        self.add_rec(1, 0, self.size - 1, lo, hi, v);
    }

    fn add_rec(&mut self, node: usize, nl: usize, nr: usize, lo: usize, hi: usize, v: i64) {
        if hi < nl || nr < lo {
            return;
        }
        if lo <= nl && nr <= hi {
            self.max[node] += v;
            self.lazy[node] += v;
            return;
        }
        let mid = (nl + nr) / 2;
        self.add_rec(2 * node, nl, mid, lo, hi, v);
        self.add_rec(2 * node + 1, mid + 1, nr, lo, hi, v);
        let (l, r) = (2 * node, 2 * node + 1);
        // ties go left, giving the leftmost argmax
        if self.max[l] >= self.max[r] {
            self.max[node] = self.max[l] + self.lazy[node];
            self.arg[node] = self.arg[l];
        } else {
            self.max[node] = self.max[r] + self.lazy[node];
            self.arg[node] = self.arg[r];
        }
    }

    fn best(&self) -> (i64, usize) {
        (self.max[1], self.arg[1] as usize)
    }
}

/// Exact maximum over every integer placement, ties broken by smallest y
/// then smallest x.
///
/// Only placements whose left (top) edge is 0 or the first position that
/// admits some point can be the tie-ruled optimum, so the search sweeps
/// those y anchors in order while a segment tree over the x anchors tracks
/// the best column. O(n log n) in the number of points.
pub fn peak_window(points: &[EosPoint], side: u32, width: u32, height: u32) -> (u64, Rect) {
    peak_window_in(points, side, Rect::new(0, 0, width, height))
}

/// [`peak_window`] over a slide occupying `bounds` rather than starting at
/// the origin.
pub fn peak_window_in(points: &[EosPoint], side: u32, bounds: Rect) -> (u64, Rect) {
    let frame = Frame::new(side, bounds);

    struct Item {
        x_lo: i64,
        x_hi: i64,
        y_lo: i64,
        y_hi: i64,
        weight: i64,
    }
    let items: Vec<Item> = points
        .iter()
        .filter(|p| frame.admits(p))
        .filter_map(|p| {
            let (x_lo, x_hi) = frame.span(p.x, frame.min_x, frame.max_x)?;
            let (y_lo, y_hi) = frame.span(p.y, frame.min_y, frame.max_y)?;
            Some(Item {
                x_lo,
                x_hi,
                y_lo,
                y_hi,
                weight: p.multiplicity as i64,
            })
        })
        .collect();
    if items.is_empty() {
        return (0, frame.origin());
    }

    let mut xs: Vec<i64> = items
        .iter()
        .map(|it| it.x_lo)
        .chain([frame.min_x])
        .collect();
    xs.sort_unstable();
    xs.dedup();
    // candidate index range [first >= lo, last <= hi]
    let x_range = |it: &Item| {
        let a = xs.partition_point(|&c| c < it.x_lo);
        let b = xs.partition_point(|&c| c <= it.x_hi) - 1;
        (a, b)
    };

    let mut ys: Vec<i64> = items
        .iter()
        .map(|it| it.y_lo)
        .chain([frame.min_y])
        .collect();
    ys.sort_unstable();
    ys.dedup();

    let mut by_start: Vec<usize> = (0..items.len()).collect();
    by_start.sort_by_key(|&i| items[i].y_lo);
    let mut by_end: Vec<usize> = (0..items.len()).collect();
    by_end.sort_by_key(|&i| items[i].y_hi);

    let mut tree = MaxTree::new(xs.len());
    let (mut si, mut ei) = (0, 0);
    let mut best: Option<(i64, i64, i64)> = None;
    for &y in &ys {
        while si < by_start.len() && items[by_start[si]].y_lo <= y {
            let it = &items[by_start[si]];
            let (a, b) = x_range(it);
            tree.add(a, b, it.weight);
            si += 1;
        }
        while ei < by_end.len() && items[by_end[ei]].y_hi < y {
            let it = &items[by_end[ei]];
            let (a, b) = x_range(it);
            tree.add(a, b, -it.weight);
            ei += 1;
        }
        let (value, idx) = tree.best();
        if best.is_none_or(|(v, _, _)| value > v) {
            best = Some((value, xs[idx], y));
        }
    }
    let (value, x, y) = best.expect("the top edge is always a candidate");
    (value as u64, frame.rect(x, y))
}

/// Approximate search over a `stride`-pixel density grid with a summed-area
/// table. Only grid-aligned placements are tried and each counts the cells
/// lying wholly inside it, so the result never exceeds [`peak_window`] and
/// the returned count is a true lower bound for the returned rectangle.
pub fn peak_window_grid(
    points: &[EosPoint],
    side: u32,
    width: u32,
    height: u32,
    stride: u32,
) -> (u64, Rect) {
    let stride = stride.max(1);
    let frame = Frame::new(side, Rect::new(0, 0, width, height));
    let cells_w = width.div_ceil(stride) as usize;
    let cells_h = height.div_ceil(stride) as usize;
    let span_cells = |extent: u32, cells: usize| {
        if extent >= frame.side as u32 {
            ((frame.side as u32 / stride) as usize).min(cells)
        } else {
            cells
        }
    };
    let (kx, ky) = (span_cells(width, cells_w), span_cells(height, cells_h));
    if kx == 0 || ky == 0 {
        return (0, frame.origin());
    }

    let mut sat = vec![0u64; (cells_w + 1) * (cells_h + 1)];
    let at = |cx: usize, cy: usize| cy * (cells_w + 1) + cx;
    for p in points.iter().filter(|p| frame.admits(p)) {
        let cx = (p.x.floor() as u64 / stride as u64) as usize;
        let cy = (p.y.floor() as u64 / stride as u64) as usize;
        sat[at(cx + 1, cy + 1)] += p.multiplicity as u64;
    }
    for cy in 1..=cells_h {
        for cx in 1..=cells_w {
            sat[at(cx, cy)] += sat[at(cx - 1, cy)] + sat[at(cx, cy - 1)] - sat[at(cx - 1, cy - 1)];
        }
    }

    let last_cx = (frame.max_x as u64 / stride as u64) as usize;
    let last_cy = (frame.max_y as u64 / stride as u64) as usize;
    let mut best = (0u64, frame.origin());
    let mut found = false;
    for cy in 0..=last_cy.min(cells_h - ky) {
        for cx in 0..=last_cx.min(cells_w - kx) {
            let v = sat[at(cx + kx, cy + ky)] + sat[at(cx, cy)]
                - sat[at(cx, cy + ky)]
                - sat[at(cx + kx, cy)];
            if !found || v > best.0 {
                best = (
                    v,
                    frame.rect(cx as i64 * stride as i64, cy as i64 * stride as i64),
                );
                found = true;
            }
        }
    }
    best
}
