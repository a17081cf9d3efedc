//! Directory container: `manifest.json` plus grid-aligned PNG tiles.
//!
//! Slides use 8-bit RGB tiles, masks single-channel 8-bit tiles holding
//! labels 0, 1 or 2. Tiles sit at multiples of `tile_size`; the last column
//! and row may be narrower.

use std::collections::{HashMap, VecDeque};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{ClassMask, Rect, RgbRaster, SlideMeta, SlideSource, DEFAULT_MICRONS_PER_PIXEL};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

fn default_mpp() -> f64 {
    DEFAULT_MICRONS_PER_PIXEL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub id: String,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default = "default_mpp")]
    pub microns_per_pixel: f64,
    pub tile_size: u32,
    pub tiles: Vec<TileEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileEntry {
    pub x: u32,
    pub y: u32,
    pub file: String,
}

impl Manifest {
    pub fn meta(&self) -> SlideMeta {
        SlideMeta {
            id: self.id.clone(),
            width_px: self.width_px,
            height_px: self.height_px,
            microns_per_pixel: self.microns_per_pixel,
            tile_size: self.tile_size,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TileKind {
    Rgb,
    Labels,
}

impl TileKind {
    fn channels(self) -> usize {
        match self {
            TileKind::Rgb => 3,
            TileKind::Labels => 1,
        }
    }

    fn color_type(self) -> png::ColorType {
        match self {
            TileKind::Rgb => png::ColorType::Rgb,
            TileKind::Labels => png::ColorType::Grayscale,
        }
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Validated tile layout of one container.
struct TileGrid {
    meta: SlideMeta,
    kind: TileKind,
    cols: u32,
    rows: u32,
    files: Vec<PathBuf>,
}

impl TileGrid {
    fn open(path: &Path, kind: TileKind) -> Result<Self> {
        let mpath = manifest_path(path);
        let dir = mpath
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::manifest(&mpath, e.to_string()))?;
        let meta = manifest.meta();
        meta.validate()
            .map_err(|e| Error::manifest(&mpath, e.to_string()))?;

        let ts = meta.tile_size;
        let cols = meta.width_px.div_ceil(ts);
        let rows = meta.height_px.div_ceil(ts);
        let mut slots: Vec<Option<PathBuf>> = vec![None; cols as usize * rows as usize];
        for t in &manifest.tiles {
            if t.x % ts != 0 || t.y % ts != 0 {
                return Err(Error::TileLayout(format!(
                    "tile {} at ({}, {}) is not aligned to tile_size {ts}",
                    t.file, t.x, t.y
                )));
            }
            if t.x >= meta.width_px || t.y >= meta.height_px {
                return Err(Error::TileLayout(format!(
                    "tile {} at ({}, {}) lies outside {}x{}",
                    t.file, t.x, t.y, meta.width_px, meta.height_px
                )));
            }
            let slot = &mut slots[(t.y / ts * cols + t.x / ts) as usize];
            if slot.is_some() {
                return Err(Error::TileLayout(format!(
                    "overlapping tiles at ({}, {})",
                    t.x, t.y
                )));
            }
            *slot = Some(dir.join(&t.file));
        }
        let mut files = Vec::with_capacity(slots.len());
        for (i, slot) in slots.into_iter().enumerate() {
            match slot {
                Some(p) => files.push(p),
                None => {
                    let (c, r) = (i as u32 % cols, i as u32 / cols);
                    return Err(Error::TileLayout(format!(
                        "gap: no tile at ({}, {})",
                        c * ts,
                        r * ts
                    )));
                }
            }
        }

        let grid = TileGrid {
            meta,
            kind,
            cols,
            rows,
            files,
        };
        // header-only pass: existence and geometry, no pixel decoding
        for r in 0..rows {
            for c in 0..cols {
                let file = &grid.files[(r * cols + c) as usize];
                let expect = grid.tile_rect(c, r);
                let (w, h) = read_png_header(file, kind)?;
                if (w, h) != (expect.w, expect.h) {
                    return Err(Error::TileDimensions {
                        path: file.clone(),
                        expected_w: expect.w,
                        expected_h: expect.h,
                        actual_w: w,
                        actual_h: h,
                    });
                }
            }
        }
        Ok(grid)
    }

    fn tile_rect(&self, col: u32, row: u32) -> Rect {
        let ts = self.meta.tile_size;
        let x = col * ts;
        let y = row * ts;
        Rect::new(
            x,
            y,
            ts.min(self.meta.width_px - x),
            ts.min(self.meta.height_px - y),
        )
    }

    /// Tile (col, row) indices intersecting `rect`, row-major.
    fn tiles_for(&self, rect: Rect) -> impl Iterator<Item = (u32, u32)> {
        let ts = self.meta.tile_size as u64;
        let c0 = rect.x / self.meta.tile_size;
        let r0 = rect.y / self.meta.tile_size;
        let c1 = ((rect.right() - 1) / ts) as u32;
        let r1 = ((rect.bottom() - 1) / ts) as u32;
        (r0..=r1).flat_map(move |r| (c0..=c1).map(move |c| (c, r)))
    }

    fn decode(&self, col: u32, row: u32) -> Result<Vec<u8>> {
        let path = &self.files[(row * self.cols + col) as usize];
        let expect = self.tile_rect(col, row);
        let data = decode_png(path, self.kind, expect.w, expect.h)?;
        if self.kind == TileKind::Labels {
            if let Some(bad) = data.iter().find(|&&v| v > ClassMask::NOT_INTACT) {
                return Err(Error::png(
                    path,
                    format!("mask value {bad} not in {{0,1,2}}"),
                ));
            }
        }
        Ok(data)
    }

    /// Copies the intersection of every tile with `rect` into a row-major
    /// buffer covering exactly `rect`.
    fn read_into(
        &self,
        rect: Rect,
        mut fetch: impl FnMut(u32, u32) -> Result<Arc<Vec<u8>>>,
    ) -> Result<Vec<u8>> {
        rect.check_within(self.meta.width_px, self.meta.height_px)?;
        let ch = self.kind.channels();
        let mut out = vec![0u8; rect.area() as usize * ch];
        let out_stride = rect.w as usize * ch;
        for (c, r) in self.tiles_for(rect) {
            let tr = self.tile_rect(c, r);
            let Some(part) = tr.intersect(&rect) else {
                continue;
            };
            let tile = fetch(c, r)?;
            let tile_stride = tr.w as usize * ch;
            let n = part.w as usize * ch;
            for y in part.y..part.y + part.h {
                let src = (y - tr.y) as usize * tile_stride + (part.x - tr.x) as usize * ch;
                let dst = (y - rect.y) as usize * out_stride + (part.x - rect.x) as usize * ch;
                out[dst..dst + n].copy_from_slice(&tile[src..src + n]);
            }
        }
        Ok(out)
    }
}

fn read_png_header(path: &Path, kind: TileKind) -> Result<(u32, u32)> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::TileNotFound(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    let info = decoder
        .read_header_info()
        .map_err(|e| Error::png(path, e))?;
    if info.color_type != kind.color_type() || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::png(
            path,
            format!(
                "expected 8-bit {:?}, found {:?} at {:?}",
                kind.color_type(),
                info.color_type,
                info.bit_depth
            ),
        ));
    }
    Ok((info.width, info.height))
}

fn decode_png(path: &Path, kind: TileKind, w: u32, h: u32) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::TileNotFound(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::png(path, e))?;
    let info = reader.info();
    if info.color_type != kind.color_type() || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::png(path, "unexpected colour type or bit depth"));
    }
    if (info.width, info.height) != (w, h) {
        return Err(Error::TileDimensions {
            path: path.to_path_buf(),
            expected_w: w,
            expected_h: h,
            actual_w: info.width,
            actual_h: info.height,
        });
    }
    let mut buf = vec![0u8; w as usize * h as usize * kind.channels()];
    reader
        .next_frame(&mut buf)
        .map_err(|e| Error::png(path, e))?;
    Ok(buf)
}

fn encode_png(path: &Path, kind: TileKind, w: u32, h: u32, data: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
    enc.set_color(kind.color_type());
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Fast);
    let mut writer = enc.write_header().map_err(|e| Error::png(path, e))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::png(path, e))?;
    writer.finish().map_err(|e| Error::png(path, e))
}

/// Writes a single standalone RGB PNG.
pub fn write_rgb_png(path: &Path, raster: &RgbRaster) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    encode_png(
        path,
        TileKind::Rgb,
        raster.width(),
        raster.height(),
        raster.as_bytes(),
    )
}

pub fn read_rgb_png(path: &Path) -> Result<RgbRaster> {
    let (w, h) = read_png_header(path, TileKind::Rgb)?;
    RgbRaster::from_raw(w, h, decode_png(path, TileKind::Rgb, w, h)?)
}

fn write_container(
    meta: &SlideMeta,
    out_dir: &Path,
    kind: TileKind,
    mut produce: impl FnMut(Rect) -> Result<Vec<u8>>,
) -> Result<()> {
    meta.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ts = meta.tile_size;
    let mut tiles = Vec::new();
    for y in (0..meta.height_px).step_by(ts as usize) {
        for x in (0..meta.width_px).step_by(ts as usize) {
            let rect = Rect::new(x, y, ts.min(meta.width_px - x), ts.min(meta.height_px - y));
            let data = produce(rect)?;
            if data.len() != rect.area() as usize * kind.channels() {
                return Err(Error::DimensionMismatch(format!(
                    "tile producer returned {} bytes for {rect:?}",
                    data.len()
                )));
            }
            let file = format!("tile_{x}_{y}.png");
            encode_png(&out_dir.join(&file), kind, rect.w, rect.h, &data)?;
            tiles.push(TileEntry { x, y, file });
        }
    }
    let manifest = Manifest {
        id: meta.id.clone(),
        width_px: meta.width_px,
        height_px: meta.height_px,
        microns_per_pixel: meta.microns_per_pixel,
        tile_size: meta.tile_size,
        tiles,
    };
    let mpath = out_dir.join(MANIFEST_FILE);
    let tmp = out_dir.join(".manifest.json.tmp");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &mpath).map_err(|e| Error::io(&mpath, e))
}

/// Writes any slide source as a tiled RGB container, one tile at a time.
pub fn write_slide(src: &dyn SlideSource, out_dir: &Path) -> Result<()> {
    write_container(src.meta(), out_dir, TileKind::Rgb, |rect| {
        Ok(src.read_region(rect)?.into_bytes())
    })
}

/// Writes a full mask aligned to `meta` as a tiled label container.
pub fn write_mask(mask: &ClassMask, meta: &SlideMeta, out_dir: &Path) -> Result<()> {
    if (mask.width(), mask.height()) != (meta.width_px, meta.height_px) {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs slide {}x{}",
            mask.width(),
            mask.height(),
            meta.width_px,
            meta.height_px
        )));
    }
    write_mask_tiles(meta, out_dir, |rect| {
        let mut out = Vec::with_capacity(rect.area() as usize);
        for y in rect.y..rect.y + rect.h {
            out.extend_from_slice(&mask.row(y)[rect.x as usize..(rect.x + rect.w) as usize]);
        }
        Ok(out)
    })
}

/// Writes a label container whose tiles come from `produce`, which is
/// called once per tile with the tile's slide rectangle.
pub fn write_mask_tiles(
    meta: &SlideMeta,
    out_dir: &Path,
    produce: impl FnMut(Rect) -> Result<Vec<u8>>,
) -> Result<()> {
    write_container(meta, out_dir, TileKind::Labels, produce)
}

struct TileCache {
    capacity: usize,
    order: VecDeque<(u32, u32)>,
    tiles: HashMap<(u32, u32), Arc<Vec<u8>>>,
}

impl TileCache {
    fn get(&mut self, key: (u32, u32)) -> Option<Arc<Vec<u8>>> {
        let hit = self.tiles.get(&key).cloned()?;
        if let Some(pos) = self.order.iter().position(|k| *k == key) {
            self.order.remove(pos);
        }
        self.order.push_back(key);
        Some(hit)
    }

    fn insert(&mut self, key: (u32, u32), tile: Arc<Vec<u8>>) {
        if self.capacity == 0 || self.tiles.contains_key(&key) {
            return;
        }
        while self.tiles.len() >= self.capacity {
            match self.order.pop_front() {
                Some(old) => {
                    self.tiles.remove(&old);
                }
                None => break,
            }
        }
        self.order.push_back(key);
        self.tiles.insert(key, tile);
    }
}

/// Lazily decoded tiled slide. Tiles are decoded on first touch and kept in
/// a small LRU cache.
pub struct TiledSlide {
    grid: TileGrid,
    cache: Mutex<TileCache>,
    decoded: AtomicU64,
}

/// Opens a slide container from its directory or its `manifest.json`.
pub fn open_slide(path: &Path) -> Result<TiledSlide> {
    let grid = TileGrid::open(path, TileKind::Rgb)?;
    let capacity = 2 * grid.cols as usize;
    Ok(TiledSlide {
        grid,
        cache: Mutex::new(TileCache {
            capacity,
            order: VecDeque::new(),
            tiles: HashMap::new(),
        }),
        decoded: AtomicU64::new(0),
    })
}

impl TiledSlide {
    pub fn cols(&self) -> u32 {
        self.grid.cols
    }

    pub fn rows(&self) -> u32 {
        self.grid.rows
    }

    /// Number of tile decodes performed so far.
    pub fn tiles_decoded(&self) -> u64 {
        self.decoded.load(Ordering::Relaxed)
    }

    /// Number of tiles a read of `rect` touches.
    pub fn tiles_touched(&self, rect: Rect) -> usize {
        self.grid.tiles_for(rect).count()
    }

    /// Maximum number of decoded tiles kept; 0 disables caching.
    pub fn set_cache_capacity(&self, tiles: usize) {
        let mut cache = self.cache.lock().expect("tile cache poisoned");
        cache.capacity = tiles;
        while cache.tiles.len() > tiles {
            match cache.order.pop_front() {
                Some(old) => {
                    cache.tiles.remove(&old);
                }
                None => break,
            }
        }
    }

    /// Bytes of one full decoded tile.
    pub fn tile_bytes(&self) -> u64 {
        let ts = self.grid.meta.tile_size as u64;
        ts * ts * 3
    }

    fn fetch(&self, c: u32, r: u32) -> Result<Arc<Vec<u8>>> {
        if let Some(hit) = self.cache.lock().expect("tile cache poisoned").get((c, r)) {
            return Ok(hit);
        }
        let tile = Arc::new(self.grid.decode(c, r)?);
        self.decoded.fetch_add(1, Ordering::Relaxed);
        self.cache
            .lock()
            .expect("tile cache poisoned")
            .insert((c, r), tile.clone());
        Ok(tile)
    }
}

impl SlideSource for TiledSlide {
    fn meta(&self) -> &SlideMeta {
        &self.grid.meta
    }

    fn read_region(&self, rect: Rect) -> Result<RgbRaster> {
        let data = self.grid.read_into(rect, |c, r| self.fetch(c, r))?;
        RgbRaster::from_raw(rect.w, rect.h, data)
    }
}

/// Lazily decoded tiled label mask.
pub struct MaskContainer {
    grid: TileGrid,
}

pub fn open_mask(path: &Path) -> Result<MaskContainer> {
    Ok(MaskContainer {
        grid: TileGrid::open(path, TileKind::Labels)?,
    })
}

impl MaskContainer {
    pub fn meta(&self) -> &SlideMeta {
        &self.grid.meta
    }

    pub fn read_region(&self, rect: Rect) -> Result<ClassMask> {
        let data = self
            .grid
            .read_into(rect, |c, r| Ok(Arc::new(self.grid.decode(c, r)?)))?;
        ClassMask::from_labels(rect.w, rect.h, data)
    }
}

/// Reads a whole mask container into memory.
pub fn read_mask(path: &Path) -> Result<ClassMask> {
    let m = open_mask(path)?;
    m.read_region(m.meta().bounds())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide::SlideSource;

    fn meta(w: u32, h: u32, ts: u32) -> SlideMeta {
        SlideMeta {
            id: "t".into(),
            width_px: w,
            height_px: h,
            microns_per_pixel: 0.5,
            tile_size: ts,
        }
    }

    fn gradient(w: u32, h: u32) -> RgbRaster {
        let mut r = RgbRaster::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                r.set_pixel(
                    x,
                    y,
                    [(x % 251) as u8, (y % 241) as u8, ((x * 7 + y) % 256) as u8],
                );
            }
        }
        r
    }

    #[test]
    fn manifest_without_mpp_gets_default() {
        let m: Manifest = serde_json::from_str(
            r#"{"id":"a","width_px":2,"height_px":2,"tile_size":2,"tiles":[]}"#,
        )
        .unwrap();
        assert_eq!(m.microns_per_pixel, DEFAULT_MICRONS_PER_PIXEL);
    }

    #[test]
    fn edge_tiles_and_stitching() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient(70, 45);
        let src = (meta(70, 45, 32), img.clone());
        write_slide(&src, dir.path()).unwrap();
        let slide = open_slide(dir.path()).unwrap();
        assert_eq!((slide.cols(), slide.rows()), (3, 2));
        let r = Rect::new(20, 10, 30, 30);
        assert_eq!(slide.read_region(r).unwrap(), img.crop(r).unwrap());
        assert_eq!(slide.read_region(slide.meta().bounds()).unwrap(), img);
        assert!(slide.read_region(Rect::new(60, 0, 11, 1)).is_err());
    }

    #[test]
    fn layout_errors() {
        let dir = tempfile::tempdir().unwrap();
        let src = (meta(8, 8, 4), gradient(8, 8));
        write_slide(&src, dir.path()).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let good: Manifest = serde_json::from_str(&fs::read_to_string(&mpath).unwrap()).unwrap();

        let mut gap = good.clone();
        gap.tiles.pop();
        fs::write(&mpath, serde_json::to_string(&gap).unwrap()).unwrap();
        assert!(matches!(open_slide(dir.path()), Err(Error::TileLayout(_))));

        let mut dup = good.clone();
        dup.tiles[1] = dup.tiles[0].clone();
        fs::write(&mpath, serde_json::to_string(&dup).unwrap()).unwrap();
        assert!(matches!(open_slide(dir.path()), Err(Error::TileLayout(_))));

        let mut skew = good.clone();
        skew.tiles[1].x = 3;
        fs::write(&mpath, serde_json::to_string(&skew).unwrap()).unwrap();
        assert!(matches!(open_slide(dir.path()), Err(Error::TileLayout(_))));

        let mut wrong = good.clone();
        wrong.tile_size = 5;
        fs::write(&mpath, serde_json::to_string(&wrong).unwrap()).unwrap();
        assert!(open_slide(dir.path()).is_err());

        fs::write(&mpath, "{not json").unwrap();
        assert!(matches!(
            open_slide(dir.path()),
            Err(Error::Manifest { .. })
        ));
    }

    #[test]
    fn tile_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_slide(&(meta(8, 8, 4), gradient(8, 8)), dir.path()).unwrap();
        let other = tempfile::tempdir().unwrap();
        write_slide(&(meta(3, 3, 3), gradient(3, 3)), other.path()).unwrap();
        fs::copy(
            other.path().join("tile_0_0.png"),
            dir.path().join("tile_4_4.png"),
        )
        .unwrap();
        assert!(matches!(
            open_slide(dir.path()),
            Err(Error::TileDimensions { .. })
        ));
    }

    #[test]
    fn cache_limits_decodes() {
        let dir = tempfile::tempdir().unwrap();
        write_slide(&(meta(64, 64, 16), gradient(64, 64)), dir.path()).unwrap();
        let slide = open_slide(dir.path()).unwrap();
        let r = Rect::new(0, 0, 64, 20);
        slide.read_region(r).unwrap();
        slide.read_region(r).unwrap();
        assert_eq!(slide.tiles_decoded(), 8);
        slide.set_cache_capacity(0);
        slide.read_region(Rect::new(0, 0, 1, 1)).unwrap();
        slide.read_region(Rect::new(0, 0, 1, 1)).unwrap();
        assert_eq!(slide.tiles_decoded(), 10);
    }

    #[test]
    fn mask_rejects_out_of_range_labels() {
        let dir = tempfile::tempdir().unwrap();
        write_mask_tiles(&meta(4, 4, 4), dir.path(), |r| {
            Ok(vec![7; r.area() as usize])
        })
        .unwrap();
        assert!(read_mask(dir.path()).is_err());
    }
}
