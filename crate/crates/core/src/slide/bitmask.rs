use std::fmt;

use memmap2::MmapMut;

use super::{ClassMask, LabelGrid};
use crate::error::{Error, Result};

enum Storage {
    Heap(Vec<u8>),
    Mapped(MmapMut),
}

impl Storage {
    fn bytes(&self) -> &[u8] {
        match self {
            Storage::Heap(v) => v,
            Storage::Mapped(m) => m,
        }
    }

    fn bytes_mut(&mut self) -> &mut [u8] {
        match self {
            Storage::Heap(v) => v,
            Storage::Mapped(m) => m,
        }
    }
}

/// One bit per pixel binary raster. Bits are packed LSB-first within each
/// byte and every row starts on a byte boundary; padding bits stay zero.
///
/// Large masks can live in an anonymous temporary file mapped into memory,
/// so the OS pages them instead of the heap holding them.
pub struct BitMask {
    width: u32,
    height: u32,
    stride: usize,
    storage: Storage,
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        let stride = (width as usize).div_ceil(8);
        BitMask {
            width,
            height,
            stride,
            storage: Storage::Heap(vec![0; stride * height as usize]),
        }
    }

    /// File-backed mask; zero heap footprint beyond the handle.
    pub fn new_mapped(width: u32, height: u32) -> Result<Self> {
        let stride = (width as usize).div_ceil(8);
        let len = stride * height as usize;
        let file = tempfile::tempfile().map_err(|e| Error::io("<bitmask tempfile>", e))?;
        file.set_len(len.max(1) as u64)
            .map_err(|e| Error::io("<bitmask tempfile>", e))?;
        // SAFETY: the file is an unlinked temporary owned solely by this mapping.
        let map = unsafe { MmapMut::map_mut(&file) }.map_err(|e| Error::io("<bitmask mmap>", e))?;
        Ok(BitMask {
            width,
            height,
            stride,
            storage: Storage::Mapped(map),
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_mapped(&self) -> bool {
        matches!(self.storage, Storage::Mapped(_))
    }

    /// Bytes needed to hold a `width` x `height` mask.
    pub fn bytes_for(width: u32, height: u32) -> u64 {
        (width as u64).div_ceil(8) * height as u64
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        let b = self.storage.bytes()[y as usize * self.stride + (x as usize >> 3)];
        b >> (x & 7) & 1 == 1
    }

    pub fn set(&mut self, x: u32, y: u32) {
        let i = y as usize * self.stride + (x as usize >> 3);
        self.storage.bytes_mut()[i] |= 1 << (x & 7);
    }

    pub fn put(&mut self, x: u32, y: u32, on: bool) {
        let i = y as usize * self.stride + (x as usize >> 3);
        let bit = 1u8 << (x & 7);
        let b = &mut self.storage.bytes_mut()[i];
        if on {
            *b |= bit;
        } else {
            *b &= !bit;
        }
    }

    pub fn row_bytes(&self, y: u32) -> &[u8] {
        let s = y as usize * self.stride;
        &self.storage.bytes()[s..s + self.stride]
    }

    pub fn count_ones(&self) -> u64 {
        self.storage
            .bytes()
            .iter()
            .map(|b| b.count_ones() as u64)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.bytes().iter().all(|&b| b == 0)
    }

    /// ORs `src` into `self` with `src`'s origin at `(x, y)`. Only ever sets
    /// bits, so applying patches in any order gives the same result.
    pub fn or_from(&mut self, src: &BitMask, x: u32, y: u32) -> Result<()> {
        if x as u64 + src.width as u64 > self.width as u64
            || y as u64 + src.height as u64 > self.height as u64
        {
            return Err(Error::OutOfBounds {
                rect: super::Rect::new(x, y, src.width, src.height),
                width: self.width,
                height: self.height,
            });
        }
        let shift = x & 7;
        let base = x as usize >> 3;
        for row in 0..src.height {
            let src_row = src.row_bytes(row);
            let dst_start = (y + row) as usize * self.stride + base;
            let dst = &mut self.storage.bytes_mut()[dst_start..];
            for (i, &b) in src_row.iter().enumerate() {
                if b == 0 {
                    continue;
                }
                let wide = (b as u16) << shift;
                dst[i] |= wide as u8;
                let hi = (wide >> 8) as u8;
                if hi != 0 {
                    // src padding bits are zero, so `hi` never spills past the row.
                    dst[i + 1] |= hi;
                }
            }
        }
        Ok(())
    }

    /// Copy of the sub-rectangle `rect`.
    pub fn crop(&self, rect: super::Rect) -> Result<BitMask> {
        rect.check_within(self.width, self.height)?;
        let mut out = BitMask::new(rect.w, rect.h);
        for y in 0..rect.h {
            for (s, e) in self.runs(rect.y + y) {
                let s = s.max(rect.x);
                let e = (e as u64).min(rect.right()) as u32;
                for x in s..e.max(s) {
                    out.set(x - rect.x, y);
                }
            }
        }
        Ok(out)
    }

    /// Clears every bit of `self` that is set in `other`.
    pub fn and_not(&mut self, other: &BitMask) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        for (a, b) in self
            .storage
            .bytes_mut()
            .iter_mut()
            .zip(other.storage.bytes())
        {
            *a &= !b;
        }
        Ok(())
    }

    /// Maximal runs of set bits in row `y`, as half-open `[start, end)`.
    pub fn runs(&self, y: u32) -> RowRuns<'_> {
        RowRuns {
            bytes: self.row_bytes(y),
            width: self.width,
            pos: 0,
        }
    }
}

impl Clone for BitMask {
    fn clone(&self) -> Self {
        BitMask {
            width: self.width,
            height: self.height,
            stride: self.stride,
            storage: Storage::Heap(self.storage.bytes().to_vec()),
        }
    }
}

impl PartialEq for BitMask {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.storage.bytes() == other.storage.bytes()
    }
}

impl Eq for BitMask {}

impl fmt::Debug for BitMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BitMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("ones", &self.count_ones())
            .field("mapped", &self.is_mapped())
            .finish()
    }
}

pub struct RowRuns<'a> {
    bytes: &'a [u8],
    width: u32,
    pos: u32,
}

impl RowRuns<'_> {
    fn bit(&self, x: u32) -> bool {
        self.bytes[x as usize >> 3] >> (x & 7) & 1 == 1
    }
}

impl Iterator for RowRuns<'_> {
    type Item = (u32, u32);

    fn next(&mut self) -> Option<(u32, u32)> {
        // skip clear bits, whole bytes at a time when aligned
        while self.pos < self.width {
            if self.pos & 7 == 0 && self.bytes[self.pos as usize >> 3] == 0 {
                self.pos += 8;
                continue;
            }
            if self.bit(self.pos) {
                break;
            }
            self.pos += 1;
        }
        if self.pos >= self.width {
            return None;
        }
        let start = self.pos;
        while self.pos < self.width {
            if self.pos & 7 == 0 && self.bytes[self.pos as usize >> 3] == 0xff {
                self.pos = (self.pos + 8).min(self.width);
                continue;
            }
            if !self.bit(self.pos) {
                break;
            }
            self.pos += 1;
        }
        Some((start, self.pos))
    }
}

/// Intact and not-intact binary channels over the same raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassChannels {
    pub intact: BitMask,
    pub not_intact: BitMask,
}

impl ClassChannels {
    pub fn new(width: u32, height: u32) -> Self {
        ClassChannels {
            intact: BitMask::new(width, height),
            not_intact: BitMask::new(width, height),
        }
    }

    pub fn new_mapped(width: u32, height: u32) -> Result<Self> {
        Ok(ClassChannels {
            intact: BitMask::new_mapped(width, height)?,
            not_intact: BitMask::new_mapped(width, height)?,
        })
    }

    pub fn width(&self) -> u32 {
        self.intact.width()
    }

    pub fn height(&self) -> u32 {
        self.intact.height()
    }

    pub fn channel(&self, class: super::EosClass) -> &BitMask {
        match class {
            super::EosClass::Intact => &self.intact,
            super::EosClass::NotIntact => &self.not_intact,
        }
    }

    /// Intact-wins resolution done in place on the packed channels.
    pub fn resolve_in_place(&mut self) {
        let intact = &self.intact;
        // dimensions match by construction
        let _ = self.not_intact.and_not(intact);
    }

    pub fn to_class_mask(&self) -> ClassMask {
        let mut mask = ClassMask::new(self.width(), self.height());
        for y in 0..self.height() {
            for (s, e) in self.not_intact.runs(y) {
                for x in s..e {
                    mask.set(x, y, ClassMask::NOT_INTACT);
                }
            }
            for (s, e) in self.intact.runs(y) {
                for x in s..e {
                    mask.set(x, y, ClassMask::INTACT);
                }
            }
        }
        mask
    }
}

impl LabelGrid for ClassChannels {
    fn width(&self) -> u32 {
        self.intact.width()
    }

    fn height(&self) -> u32 {
        self.intact.height()
    }

    fn label(&self, x: u32, y: u32) -> u8 {
        if self.intact.get(x, y) {
            ClassMask::INTACT
        } else if self.not_intact.get(x, y) {
            ClassMask::NOT_INTACT
        } else {
            ClassMask::NON_EOS
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_runs(bits: &[bool]) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < bits.len() {
            if bits[i] {
                let s = i;
                while i < bits.len() && bits[i] {
                    i += 1;
                }
                out.push((s as u32, i as u32));
            } else {
                i += 1;
            }
        }
        out
    }

    proptest! {
        #[test]
        fn runs_match_naive_scan(bits in proptest::collection::vec(any::<bool>(), 1..80)) {
            let mut m = BitMask::new(bits.len() as u32, 1);
            for (x, &b) in bits.iter().enumerate() {
                m.put(x as u32, 0, b);
            }
            prop_assert_eq!(m.runs(0).collect::<Vec<_>>(), naive_runs(&bits));
        }

        #[test]
        fn or_from_matches_per_pixel(
            w in 1u32..40, h in 1u32..6, sw in 1u32..20, sh in 1u32..6,
            ox in 0u32..40, oy in 0u32..6, seed in any::<u64>()
        ) {
            let (sw, sh) = (sw.min(w), sh.min(h));
            let (ox, oy) = (ox % (w - sw + 1), oy % (h - sh + 1));
            let mut src = BitMask::new(sw, sh);
            let mut s = seed;
            for y in 0..sh {
                for x in 0..sw {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    if s >> 63 == 1 {
                        src.set(x, y);
                    }
                }
            }
            let mut dst = BitMask::new(w, h);
            dst.set(0, 0);
            let mut expect = dst.clone();
            dst.or_from(&src, ox, oy).unwrap();
            for y in 0..sh {
                for x in 0..sw {
                    if src.get(x, y) {
                        expect.set(ox + x, oy + y);
                    }
                }
            }
            prop_assert_eq!(dst, expect);
        }
    }

    #[test]
    fn mapped_storage_behaves_like_heap() {
        let mut a = BitMask::new_mapped(100, 3).unwrap();
        let mut b = BitMask::new(100, 3);
        for (x, y) in [(0, 0), (99, 2), (37, 1)] {
            a.set(x, y);
            b.set(x, y);
        }
        assert!(a.is_mapped());
        assert_eq!(a, b);
        assert_eq!(a.count_ones(), 3);
    }

    #[test]
    fn or_from_rejects_overhang() {
        let mut dst = BitMask::new(10, 10);
        let src = BitMask::new(4, 4);
        assert!(dst.or_from(&src, 7, 0).is_err());
    }

    #[test]
    fn resolve_gives_intact_precedence() {
        let mut ch = ClassChannels::new(2, 1);
        ch.intact.set(0, 0);
        ch.not_intact.set(0, 0);
        ch.not_intact.set(1, 0);
        ch.resolve_in_place();
        assert_eq!(ch.to_class_mask().labels(), &[1, 2]);
    }
}
