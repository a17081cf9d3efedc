//! Raster and geometry types shared by every stage, plus the tiled
//! on-disk container used for slides and masks.
//!
//! Everything is row-major with the origin at the top-left pixel.

mod bitmask;
mod container;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bitmask::{BitMask, ClassChannels};
pub use container::{
    open_mask, open_slide, read_mask, read_rgb_png, write_mask, write_mask_tiles, write_rgb_png,
    write_slide, Manifest, MaskContainer, TileEntry, TiledSlide, MANIFEST_FILE,
};

/// Largest accepted slide side, in pixels.
pub const MAX_SLIDE_SIDE: u32 = 1 << 20;

/// Pixel pitch assumed when a manifest does not carry one. At this pitch a
/// 0.3 mm² field is 2144 px wide.
pub const DEFAULT_MICRONS_PER_PIXEL: f64 = 0.2555;

/// Axis-aligned pixel rectangle, half-open: covers `x..x+w` by `y..y+h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && (px as u64) < self.right() && py >= self.y && (py as u64) < self.bottom()
    }

    /// True when the rectangle is non-empty and lies inside a `width` x `height` raster.
    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= width as u64 && self.bottom() <= height as u64
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if (x0 as u64) < x1 && (y0 as u64) < y1 {
            Some(Rect::new(
                x0,
                y0,
                (x1 - x0 as u64) as u32,
                (y1 - y0 as u64) as u32,
            ))
        } else {
            None
        }
    }

    pub(crate) fn check_within(&self, width: u32, height: u32) -> Result<()> {
        if self.fits_within(width, height) {
            Ok(())
        } else {
            Err(Error::OutOfBounds {
                rect: *self,
                width,
                height,
            })
        }
    }
}

/// Calibrated slide geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideMeta {
    pub id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub microns_per_pixel: f64,
    pub tile_size: u32,
}

impl SlideMeta {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("width_px", self.width_px), ("height_px", self.height_px)] {
            if !(1..=MAX_SLIDE_SIDE).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "{name} = {v} outside [1, {MAX_SLIDE_SIDE}]"
                )));
            }
        }
        if !(self.microns_per_pixel.is_finite() && self.microns_per_pixel > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "microns_per_pixel must be finite and positive, got {}",
                self.microns_per_pixel
            )));
        }
        if self.tile_size == 0 {
            return Err(Error::InvalidConfig("tile_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width_px, self.height_px)
    }
}

/// Anything that can serve RGB regions of a slide.
///
/// Implementations must be safe to read from several threads at once and
/// must return bit-identical pixels for repeated reads of the same region.
pub trait SlideSource: Send + Sync {
    fn meta(&self) -> &SlideMeta;

    fn read_region(&self, rect: Rect) -> Result<RgbRaster>;
}

/// 8-bit RGB raster, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbRaster {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        RgbRaster {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a {width}x{height} RGB raster",
                data.len()
            )));
        }
        Ok(RgbRaster {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let stride = self.width as usize * 3;
        &self.data[y as usize * stride..(y as usize + 1) * stride]
    }

    pub fn row_mut(&mut self, y: u32) -> &mut [u8] {
        let stride = self.width as usize * 3;
        &mut self.data[y as usize * stride..(y as usize + 1) * stride]
    }

    pub fn crop(&self, rect: Rect) -> Result<RgbRaster> {
        rect.check_within(self.width, self.height)?;
        let mut out = Vec::with_capacity(rect.area() as usize * 3);
        for y in rect.y..rect.y + rect.h {
            let start = self.offset(rect.x, y);
            out.extend_from_slice(&self.data[start..start + rect.w as usize * 3]);
        }
        Ok(RgbRaster {
            width: rect.w,
            height: rect.h,
            data: out,
        })
    }

    /// Copies `src` into `self` with its top-left corner at `(x, y)`.
    pub fn blit(&mut self, src: &RgbRaster, x: u32, y: u32) -> Result<()> {
        Rect::new(x, y, src.width, src.height).check_within(self.width, self.height)?;
        let n = src.width as usize * 3;
        for row in 0..src.height {
            let dst = self.offset(x, y + row);
            self.data[dst..dst + n].copy_from_slice(src.row(row));
        }
        Ok(())
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }
}

impl SlideSource for (SlideMeta, RgbRaster) {
    fn meta(&self) -> &SlideMeta {
        &self.0
    }

    fn read_region(&self, rect: Rect) -> Result<RgbRaster> {
        self.1.crop(rect)
    }
}

/// The two eosinophil classes that carry a mask channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EosClass {
    Intact,
    NotIntact,
}

impl EosClass {
    pub const ALL: [EosClass; 2] = [EosClass::Intact, EosClass::NotIntact];

    pub fn label(self) -> u8 {
        match self {
            EosClass::Intact => ClassMask::INTACT,
            EosClass::NotIntact => ClassMask::NOT_INTACT,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EosClass::Intact => "intact",
            EosClass::NotIntact => "not_intact",
        }
    }
}

/// Per-pixel tri-class label raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    width: u32,
    height: u32,
    labels: Vec<u8>,
}

impl ClassMask {
    pub const NON_EOS: u8 = 0;
    pub const INTACT: u8 = 1;
    pub const NOT_INTACT: u8 = 2;

    pub fn new(width: u32, height: u32) -> Self {
        ClassMask {
            width,
            height,
            labels: vec![0; width as usize * height as usize],
        }
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > Self::NOT_INTACT) {
            return Err(Error::InvalidInput(format!(
                "mask label {bad} not in {{0,1,2}}"
            )));
        }
        Ok(ClassMask {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: u8) {
        debug_assert!(label <= Self::NOT_INTACT);
        self.labels[y as usize * self.width as usize + x as usize] = label;
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let w = self.width as usize;
        &self.labels[y as usize * w..(y as usize + 1) * w]
    }

    pub fn channel(&self, class: EosClass) -> BitMask {
        let want = class.label();
        let mut out = BitMask::new(self.width, self.height);
        for y in 0..self.height {
            for (x, &l) in self.row(y).iter().enumerate() {
                if l == want {
                    out.set(x as u32, y);
                }
            }
        }
        out
    }

    pub fn channels(&self) -> ClassChannels {
        ClassChannels {
            intact: self.channel(EosClass::Intact),
            not_intact: self.channel(EosClass::NotIntact),
        }
    }

    pub fn crop(&self, rect: Rect) -> Result<ClassMask> {
        rect.check_within(self.width, self.height)?;
        let mut labels = Vec::with_capacity(rect.area() as usize);
        for y in rect.y..rect.y + rect.h {
            let row = self.row(y);
            labels.extend_from_slice(&row[rect.x as usize..(rect.x + rect.w) as usize]);
        }
        Ok(ClassMask {
            width: rect.w,
            height: rect.h,
            labels,
        })
    }
}

/// Read-only per-pixel label lookup, shared by dense masks and bit-packed
/// channel pairs.
pub trait LabelGrid {
    fn width(&self) -> u32;
    fn height(&self) -> u32;
    fn label(&self, x: u32, y: u32) -> u8;
}

impl LabelGrid for ClassMask {
    fn width(&self) -> u32 {
        self.width
    }
    fn height(&self) -> u32 {
        self.height
    }
    fn label(&self, x: u32, y: u32) -> u8 {
        self.get(x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_intersection() {
        let a = Rect::new(0, 0, 10, 10);
        let b = Rect::new(5, 8, 10, 10);
        assert_eq!(a.intersect(&b), Some(Rect::new(5, 8, 5, 2)));
        assert_eq!(a.intersect(&Rect::new(10, 0, 3, 3)), None);
    }

    #[test]
    fn meta_validation() {
        let mut m = SlideMeta {
            id: "s".into(),
            width_px: 10,
            height_px: 10,
            microns_per_pixel: 0.25,
            tile_size: 4,
        };
        assert!(m.validate().is_ok());
        m.microns_per_pixel = f64::NAN;
        assert!(m.validate().is_err());
        m.microns_per_pixel = 0.25;
        m.width_px = MAX_SLIDE_SIDE + 1;
        assert!(m.validate().is_err());
        m.width_px = 0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn channels_are_exclusive() {
        let mask = ClassMask::from_labels(3, 1, vec![0, 1, 2]).unwrap();
        let ch = mask.channels();
        assert!(ch.intact.get(1, 0) && !ch.intact.get(2, 0));
        assert!(ch.not_intact.get(2, 0) && !ch.not_intact.get(1, 0));
        assert!(ClassMask::from_labels(1, 1, vec![3]).is_err());
    }

    #[test]
    fn raster_crop_and_blit() {
        let mut r = RgbRaster::filled(4, 4, [1, 2, 3]);
        r.set_pixel(2, 3, [9, 9, 9]);
        let c = r.crop(Rect::new(1, 2, 3, 2)).unwrap();
        assert_eq!(c.pixel(1, 1), [9, 9, 9]);
        let mut dst = RgbRaster::filled(5, 5, [0, 0, 0]);
        dst.blit(&c, 2, 3).unwrap();
        assert_eq!(dst.pixel(3, 4), [9, 9, 9]);
        assert!(dst.blit(&c, 3, 4).is_err());
    }
}
