//! Connected components over class channels and the area-to-count rule.
//!
//! Labeling works on horizontal runs rather than pixels: each row's runs
//! are unioned with the overlapping runs of the row above, so memory scales
//! with the number of runs, not the raster size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slide::{BitMask, ClassMask, EosClass, Rect};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Area thresholds, in pixels, for turning a region into a cell count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingRule {
    /// Regions at or below this area count as zero.
    pub min_area_px: u64,
    /// Largest area still counted as a single cell.
    pub single_max_area_px: u64,
    /// Each full increment of this size beyond `single_max_area_px` adds a cell.
    pub increment_area_px: u64,
    pub typical_cell_area_px: u64,
}

impl Default for CountingRule {
    fn default() -> Self {
        CountingRule {
            min_area_px: 1800,
            single_max_area_px: 3000,
            increment_area_px: 2000,
            typical_cell_area_px: 2050,
        }
    }
}

impl CountingRule {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.min_area_px && self.min_area_px < self.single_max_area_px) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < min_area_px ({}) < single_max_area_px ({})",
                self.min_area_px, self.single_max_area_px
            )));
        }
        if self.increment_area_px == 0 {
            return Err(Error::InvalidConfig("increment_area_px must be > 0".into()));
        }
        Ok(())
    }
}

pub fn eos_count_of_area(area_px: u64, rule: &CountingRule) -> u32 {
    if area_px <= rule.min_area_px {
        0
    } else if area_px <= rule.single_max_area_px {
        1
    } else {
        1 + ((area_px - rule.single_max_area_px) / rule.increment_area_px) as u32
    }
}

/// Half-open horizontal run `[x0, x1)` on row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub y: u32,
    pub x0: u32,
    pub x1: u32,
}

impl Run {
    pub fn len(&self) -> u64 {
        (self.x1 - self.x0) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.x1 == self.x0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EosRegion {
    pub class: EosClass,
    pub area_px: u64,
    pub bbox: Rect,
    /// Mean of member pixel coordinates.
    pub centroid: (f64, f64),
    pub eos_count: u32,
    /// Member pixels as row runs, sorted by row then column.
    #[serde(skip)]
    pub runs: Vec<Run>,
}

/// Point form of a counted region, consumed by the window search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EosPoint {
    pub x: f64,
    pub y: f64,
    pub multiplicity: u32,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn push(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let up = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = up;
            x = up;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        // smaller id wins so roots stay at the earliest run
        match ra.cmp(&rb) {
            std::cmp::Ordering::Less => self.parent[rb as usize] = ra,
            std::cmp::Ordering::Greater => self.parent[ra as usize] = rb,
            std::cmp::Ordering::Equal => {}
        }
    }
}

fn touches(prev: &Run, cur: &Run, conn: Connectivity) -> bool {
    match conn {
        Connectivity::Four => prev.x0 < cur.x1 && cur.x0 < prev.x1,
        Connectivity::Eight => prev.x0 <= cur.x1 && cur.x0 <= prev.x1,
    }
}

/// Maximal connected foreground sets of `channel`, in raster order of
/// their first pixel. `eos_count` is left at zero.
pub fn connected_components(
    channel: &BitMask,
    connectivity: Connectivity,
    class: EosClass,
) -> Vec<EosRegion> {
    let mut runs: Vec<Run> = Vec::new();
    let mut sets = DisjointSet { parent: Vec::new() };
    let mut prev_row = 0..0;

    for y in 0..channel.height() {
        let row_start = runs.len();
        for (x0, x1) in channel.runs(y) {
            runs.push(Run { y, x0, x1 });
            sets.push();
        }
        let cur_row = row_start..runs.len();
        // two-pointer sweep over the previous row's runs
        let mut p = prev_row.start;
        for c in cur_row.clone() {
            while p < prev_row.end && runs[p].x1 < runs[c].x0 {
                p += 1;
            }
            let mut q = p;
            while q < prev_row.end && runs[q].x0 <= runs[c].x1 {
                if touches(&runs[q], &runs[c], connectivity) {
                    sets.union(q as u32, c as u32);
                }
                q += 1;
            }
        }
        prev_row = cur_row;
    }

    struct Acc {
        area: u64,
        sum_x: u128,
        sum_y: u128,
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        runs: Vec<Run>,
    }

    let mut index_of_root: Vec<u32> = vec![u32::MAX; runs.len()];
    let mut accs: Vec<Acc> = Vec::new();
    for (i, run) in runs.iter().enumerate() {
        let root = sets.find(i as u32) as usize;
        if index_of_root[root] == u32::MAX {
            index_of_root[root] = accs.len() as u32;
            accs.push(Acc {
                area: 0,
                sum_x: 0,
                sum_y: 0,
                x0: u32::MAX,
                y0: run.y,
                x1: 0,
                y1: 0,
                runs: Vec::new(),
            });
        }
        let a = &mut accs[index_of_root[root] as usize];
        let n = run.len();
        a.area += n;
        // sum of x0..x1-1
        a.sum_x += (run.x0 as u128 + run.x1 as u128 - 1) * n as u128 / 2;
        a.sum_y += run.y as u128 * n as u128;
        a.x0 = a.x0.min(run.x0);
        a.x1 = a.x1.max(run.x1);
        a.y1 = a.y1.max(run.y + 1);
        a.runs.push(*run);
    }

    accs.into_iter()
        .map(|a| EosRegion {
            class,
            area_px: a.area,
            bbox: Rect::new(a.x0, a.y0, a.x1 - a.x0, a.y1 - a.y0),
            centroid: (
                a.sum_x as f64 / a.area as f64,
                a.sum_y as f64 / a.area as f64,
            ),
            eos_count: 0,
            runs: a.runs,
        })
        .collect()
}

/// Labeled and counted regions of one channel.
pub fn count_regions(
    channel: &BitMask,
    class: EosClass,
    rule: &CountingRule,
    connectivity: Connectivity,
) -> Vec<EosRegion> {
    let mut regions = connected_components(channel, connectivity, class);
    for r in &mut regions {
        r.eos_count = eos_count_of_area(r.area_px, rule);
    }
    regions
}

/// One point per region with a non-zero count, at the region centroid.
pub fn points_from_regions(regions: &[EosRegion]) -> Vec<EosPoint> {
    regions
        .iter()
        .filter(|r| r.eos_count > 0)
        .map(|r| EosPoint {
            x: r.centroid.0,
            y: r.centroid.1,
            multiplicity: r.eos_count,
        })
        .collect()
}

pub fn extract_eos_points(mask: &ClassMask, class: EosClass, rule: &CountingRule) -> Vec<EosPoint> {
    points_from_regions(&count_regions(
        &mask.channel(class),
        class,
        rule,
        Connectivity::default(),
    ))
}

/// Intact eosinophils in a patch.
pub fn count_patch(mask: &ClassMask, rule: &CountingRule) -> u64 {
    extract_eos_points(mask, EosClass::Intact, rule)
        .iter()
        .map(|p| p.multiplicity as u64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(w: u32, h: u32, px: &[(u32, u32)]) -> BitMask {
        let mut m = BitMask::new(w, h);
        for &(x, y) in px {
            m.set(x, y);
        }
        m
    }

    fn fill_rect(m: &mut ClassMask, r: Rect, label: u8) {
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                m.set(x, y, label);
            }
        }
    }

    #[test]
    fn component_examples() {
        assert!(
            connected_components(&BitMask::new(5, 5), Connectivity::Eight, EosClass::Intact)
                .is_empty()
        );

        let squares = mask_from(
            6,
            2,
            &[
                (0, 0),
                (1, 0),
                (0, 1),
                (1, 1),
                (4, 0),
                (5, 0),
                (4, 1),
                (5, 1),
            ],
        );
        let r = connected_components(&squares, Connectivity::Eight, EosClass::Intact);
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|r| r.area_px == 4));
        assert_eq!(r[0].centroid, (0.5, 0.5));
        assert_eq!(r[1].bbox, Rect::new(4, 0, 2, 2));

        let diag = mask_from(2, 2, &[(0, 0), (1, 1)]);
        assert_eq!(
            connected_components(&diag, Connectivity::Eight, EosClass::Intact).len(),
            1
        );
        assert_eq!(
            connected_components(&diag, Connectivity::Four, EosClass::Intact).len(),
            2
        );
    }

    #[test]
    fn u_shape_merges_late() {
        // two prongs joined only on the bottom row
        let m = mask_from(
            3,
            3,
            &[(0, 0), (2, 0), (0, 1), (2, 1), (0, 2), (1, 2), (2, 2)],
        );
        let r = connected_components(&m, Connectivity::Four, EosClass::Intact);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].area_px, 7);
    }

    #[test]
    fn rule_table() {
        let rule = CountingRule::default();
        let table = [
            (0, 0),
            (1800, 0),
            (1801, 1),
            (2050, 1),
            (3000, 1),
            (3001, 1),
            (4999, 1),
            (5000, 2),
            (6999, 2),
            (7000, 3),
        ];
        for (area, count) in table {
            assert_eq!(eos_count_of_area(area, &rule), count, "area {area}");
        }
    }

    #[test]
    fn rule_validation() {
        let mut r = CountingRule::default();
        assert!(r.validate().is_ok());
        r.min_area_px = 3000;
        assert!(r.validate().is_err());
        r = CountingRule::default();
        r.increment_area_px = 0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn point_examples() {
        let rule = CountingRule::default();
        // odd sides give an integer centre: 45 x 45 = 2025 px around (100, 200)
        let mut m = ClassMask::new(300, 300);
        fill_rect(&mut m, Rect::new(78, 178, 45, 45), ClassMask::INTACT);
        let pts = extract_eos_points(&m, EosClass::Intact, &rule);
        assert_eq!(
            pts,
            vec![EosPoint {
                x: 100.0,
                y: 200.0,
                multiplicity: 1
            }]
        );

        let mut big = ClassMask::new(200, 200);
        fill_rect(&mut big, Rect::new(0, 0, 100, 50), ClassMask::INTACT);
        let pts = extract_eos_points(&big, EosClass::Intact, &rule);
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].multiplicity, 2);

        let mut red = ClassMask::new(100, 100);
        fill_rect(&mut red, Rect::new(0, 0, 45, 45), ClassMask::NOT_INTACT);
        assert!(extract_eos_points(&red, EosClass::Intact, &rule).is_empty());
    }

    #[test]
    fn patch_counts() {
        let rule = CountingRule::default();
        assert_eq!(count_patch(&ClassMask::new(50, 50), &rule), 0);

        let mut three = ClassMask::new(200, 60);
        for i in 0..3 {
            fill_rect(&mut three, Rect::new(i * 60, 0, 41, 50), ClassMask::INTACT);
        }
        assert_eq!(count_patch(&three, &rule), 3);

        let mut mixed = ClassMask::new(200, 60);
        fill_rect(&mut mixed, Rect::new(0, 0, 41, 50), ClassMask::INTACT);
        fill_rect(&mut mixed, Rect::new(100, 0, 41, 50), ClassMask::NOT_INTACT);
        assert_eq!(count_patch(&mixed, &rule), 1);
    }

    /// Flood-fill labeling, the reference for the run-based labeler.
    fn flood_regions(m: &BitMask, conn: Connectivity) -> Vec<(u64, (f64, f64))> {
        let (w, h) = (m.width() as i64, m.height() as i64);
        let mut seen = vec![false; (w * h) as usize];
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !m.get(x as u32, y as u32) || seen[(y * w + x) as usize] {
                    continue;
                }
                let mut stack = vec![(x, y)];
                seen[(y * w + x) as usize] = true;
                let (mut n, mut sx, mut sy) = (0u64, 0f64, 0f64);
                while let Some((cx, cy)) = stack.pop() {
                    n += 1;
                    sx += cx as f64;
                    sy += cy as f64;
                    for dy in -1..=1i64 {
                        for dx in -1..=1i64 {
                            if (dx, dy) == (0, 0)
                                || (conn == Connectivity::Four && dx != 0 && dy != 0)
                            {
                                continue;
                            }
                            let (nx, ny) = (cx + dx, cy + dy);
                            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                                continue;
                            }
                            let i = (ny * w + nx) as usize;
                            if m.get(nx as u32, ny as u32) && !seen[i] {
                                seen[i] = true;
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
                out.push((n, (sx / n as f64, sy / n as f64)));
            }
        }
        out
    }

    proptest! {
        #[test]
        fn matches_flood_fill(
            bits in proptest::collection::vec(prop::bool::weighted(0.45), 24 * 20),
            four in any::<bool>(),
        ) {
            let conn = if four { Connectivity::Four } else { Connectivity::Eight };
            let mut m = BitMask::new(24, 20);
            for (i, &b) in bits.iter().enumerate() {
                m.put(i as u32 % 24, i as u32 / 24, b);
            }
            let got = connected_components(&m, conn, EosClass::Intact);
            let want = flood_regions(&m, conn);
            prop_assert_eq!(got.len(), want.len());
            for (g, (area, c)) in got.iter().zip(&want) {
                prop_assert_eq!(g.area_px, *area);
                prop_assert!((g.centroid.0 - c.0).abs() < 1e-9 && (g.centroid.1 - c.1).abs() < 1e-9);
                prop_assert!(g.bbox.contains(g.centroid.0.floor() as u32, g.centroid.1.floor() as u32));
                prop_assert_eq!(g.runs.iter().map(Run::len).sum::<u64>(), g.area_px);
            }
            prop_assert_eq!(got.iter().map(|r| r.area_px).sum::<u64>(), m.count_ones());
        }

        #[test]
        fn count_is_monotone(a in 0u64..20000, b in 0u64..20000) {
            let rule = CountingRule::default();
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(eos_count_of_area(lo, &rule) <= eos_count_of_area(hi, &rule));
        }

        #[test]
        fn split_by_gap_follows_rule(w in 20u32..160, h in 20u32..60, cut in 2u32..150) {
            prop_assume!(cut + 2 < w);
            let rule = CountingRule::default();
            let mut whole = ClassMask::new(w, h);
            fill_rect(&mut whole, Rect::new(0, 0, w, h), ClassMask::INTACT);
            let before = count_patch(&whole, &rule);
            prop_assert_eq!(before, eos_count_of_area((w * h) as u64, &rule) as u64);
            // clear a 2 px channel, leaving two rectangles
            fill_rect(&mut whole, Rect::new(cut, 0, 2, h), ClassMask::NON_EOS);
            let regions = count_regions(&whole.channel(EosClass::Intact), EosClass::Intact, &rule, Connectivity::Eight);
            prop_assert_eq!(regions.len(), 2);
            let left = (cut * h) as u64;
            let right = ((w - cut - 2) * h) as u64;
            prop_assert_eq!(regions.iter().map(|r| r.area_px).sum::<u64>(), left + right);
            prop_assert_eq!(
                count_patch(&whole, &rule),
                (eos_count_of_area(left, &rule) + eos_count_of_area(right, &rule)) as u64
            );
        }
    }
}
