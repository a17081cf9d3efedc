//! Patch grids over arbitrary rasters, background filtering, and OR fusion
//! of per-patch masks back onto the slide.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slide::{ClassChannels, Rect, RgbRaster};

/// Fill used when a patch runs past the raster edge: plain glass.
pub const PAD_RGB: [u8; 3] = [255, 255, 255];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilerConfig {
    pub patch_size: u32,
    /// A pixel is background when all three channels are at or above this.
    pub background_pixel_threshold: u8,
    /// Patches need a background fraction strictly below this to be segmented.
    pub background_fraction_limit: f64,
}

impl Default for TilerConfig {
    fn default() -> Self {
        TilerConfig {
            patch_size: 448,
            background_pixel_threshold: 200,
            background_fraction_limit: 0.85,
        }
    }
}

impl TilerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::InvalidConfig("patch_size must be >= 1".into()));
        }
        let f = self.background_fraction_limit;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "background_fraction_limit {f} outside (0, 1]"
            )));
        }
        Ok(())
    }
}

/// Patch origins along one axis: `n = max(1, ceil(len / patch))` offsets
/// spread evenly from 0 to `len - patch` (rounded), so the patches cover
/// `[0, len)` with as little overlap as the count allows.
pub fn plan_grid(len: u32, patch: u32) -> Vec<u32> {
    assert!(len >= 1 && patch >= 1, "plan_grid needs len, patch >= 1");
    let n = len.div_ceil(patch).max(1) as u64;
    if n == 1 {
        return vec![0];
    }
    let span = (len - patch) as u64;
    let den = n - 1;
    // round-half-up of i * span / den
    (0..n)
        .map(|i| ((2 * i * span + den) / (2 * den)) as u32)
        .collect()
}

/// Two-axis patch layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPlan {
    pub patch_size: u32,
    pub offsets_x: Vec<u32>,
    pub offsets_y: Vec<u32>,
}

impl GridPlan {
    pub fn new(width: u32, height: u32, patch_size: u32) -> Self {
        GridPlan {
            patch_size,
            offsets_x: plan_grid(width, patch_size),
            offsets_y: plan_grid(height, patch_size),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets_x.len() * self.offsets_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Patch origins in row-major order.
    pub fn origins(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.offsets_y
            .iter()
            .flat_map(move |&y| self.offsets_x.iter().map(move |&x| (x, y)))
    }

    /// The part of the patch at `(x, y)` that lies on a `width` x `height` raster.
    pub fn clipped(&self, x: u32, y: u32, width: u32, height: u32) -> Rect {
        Rect::new(
            x,
            y,
            self.patch_size.min(width - x),
            self.patch_size.min(height - y),
        )
    }
}

fn is_background_px(px: &[u8], threshold: u8) -> bool {
    px[0] >= threshold && px[1] >= threshold && px[2] >= threshold
}

/// Fraction of pixels whose R, G and B are all at or above the threshold.
pub fn background_fraction(patch: &RgbRaster, cfg: &TilerConfig) -> f64 {
    let total = patch.width() as u64 * patch.height() as u64;
    if total == 0 {
        return 1.0;
    }
    let bg = patch
        .as_bytes()
        .chunks_exact(3)
        .filter(|px| is_background_px(px, cfg.background_pixel_threshold))
        .count() as u64;
    bg as f64 / total as f64
}

pub fn is_informative(patch: &RgbRaster, cfg: &TilerConfig) -> bool {
    background_fraction(patch, cfg) < cfg.background_fraction_limit
}

/// Pads `raster` on the right and bottom with [`PAD_RGB`] to `w` x `h`.
pub fn pad_patch(raster: &RgbRaster, w: u32, h: u32) -> RgbRaster {
    if raster.width() == w && raster.height() == h {
        return raster.clone();
    }
    let mut out = RgbRaster::filled(w, h, PAD_RGB);
    out.blit(raster, 0, 0)
        .expect("pad target is at least as large as the source");
    out
}

/// ORs per-patch channel masks onto a fresh `width` x `height` mask. Each
/// patch mask must already be cropped to the slide.
pub fn fuse_masks<'a, I>(patches: I, width: u32, height: u32) -> Result<ClassChannels>
where
    I: IntoIterator<Item = (&'a ClassChannels, (u32, u32))>,
{
    let mut out = ClassChannels::new(width, height);
    for (mask, (x, y)) in patches {
        fuse_into(&mut out, mask, x, y)?;
    }
    Ok(out)
}

/// ORs one patch into an existing fused mask.
pub fn fuse_into(target: &mut ClassChannels, patch: &ClassChannels, x: u32, y: u32) -> Result<()> {
    target.intact.or_from(&patch.intact, x, y)?;
    target.not_intact.or_from(&patch.not_intact, x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_examples() {
        assert_eq!(plan_grid(1200, 448), vec![0, 376, 752]);
        assert_eq!(plan_grid(448, 448), vec![0]);
        assert_eq!(plan_grid(1000, 448), vec![0, 276, 552]);
        assert_eq!(plan_grid(100, 448), vec![0]);
        assert_eq!(GridPlan::new(1200, 1200, 448).len(), 9);
    }

    #[test]
    fn grid_1000_covers_every_index() {
        let offs = plan_grid(1000, 448);
        for i in 0..1000u32 {
            assert!(offs.iter().any(|&o| o <= i && i < o + 448), "index {i}");
        }
    }

    proptest! {
        #[test]
        fn grid_covers_and_is_well_formed(len in 1u32..5000, patch in 1u32..700) {
            let offs = plan_grid(len, patch);
            prop_assert_eq!(offs.len() as u32, len.div_ceil(patch).max(1));
            prop_assert_eq!(offs[0], 0);
            prop_assert_eq!(*offs.last().unwrap(), len.saturating_sub(patch));
            for w in offs.windows(2) {
                prop_assert!(w[0] <= w[1] && w[1] - w[0] <= patch);
            }
            // first and last offsets pin both ends; gaps <= patch fill the middle
            prop_assert!(offs.last().unwrap() + patch >= len);
        }
    }

    #[test]
    fn background_examples() {
        let cfg = TilerConfig::default();
        assert_eq!(
            background_fraction(&RgbRaster::filled(4, 4, [255; 3]), &cfg),
            1.0
        );
        assert_eq!(
            background_fraction(&RgbRaster::filled(4, 4, [0; 3]), &cfg),
            0.0
        );
        let mut half = RgbRaster::filled(4, 4, [255; 3]);
        for y in 0..2 {
            for x in 0..4 {
                half.set_pixel(x, y, [100, 50, 120]);
            }
        }
        assert_eq!(background_fraction(&half, &cfg), 0.5);
    }

    #[test]
    fn informative_boundary_is_strict() {
        let cfg = TilerConfig::default();
        let with_bg = |n: u32| {
            let mut r = RgbRaster::filled(10, 10, [120, 40, 90]);
            for i in 0..n {
                r.set_pixel(i % 10, i / 10, [250, 250, 250]);
            }
            r
        };
        assert!(is_informative(&with_bg(84), &cfg));
        assert!(!is_informative(&with_bg(85), &cfg));
        assert!(is_informative(&with_bg(0), &cfg));
    }

    fn patch(w: u32, h: u32, intact: &[(u32, u32)]) -> ClassChannels {
        let mut c = ClassChannels::new(w, h);
        for &(x, y) in intact {
            c.intact.set(x, y);
        }
        c
    }

    #[test]
    fn fusion_is_or() {
        let a = patch(4, 4, &[(3, 3)]);
        let b = patch(4, 4, &[]);
        let fused = fuse_masks([(&a, (0, 0)), (&b, (3, 3))], 8, 8).unwrap();
        assert!(fused.intact.get(3, 3));
        assert_eq!(fused.intact.count_ones(), 1);

        let empty = fuse_masks([(&b, (0, 0)), (&b, (4, 4))], 8, 8).unwrap();
        assert!(empty.intact.is_empty() && empty.not_intact.is_empty());

        let c = patch(2, 2, &[(0, 0), (1, 1)]);
        let placed = fuse_masks([(&c, (5, 1))], 8, 8).unwrap();
        assert!(placed.intact.get(5, 1) && placed.intact.get(6, 2));
        assert_eq!(placed.intact.count_ones(), 2);

        assert!(fuse_masks([(&a, (6, 0))], 8, 8).is_err());
    }
}
