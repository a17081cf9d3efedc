//! Writing a large synthetic slide must not materialize it.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use eoswsi_core::slide::{open_mask, open_slide, write_slide};
use eoswsi_core::synth::{planted_slide, write_synth_mask, CohortParams};
use eoswsi_core::SlideSource;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

#[test]
fn large_slide_is_written_tile_by_tile() {
    let params = CohortParams {
        width: 16384,
        height: 16384,
        ..CohortParams::default()
    };
    let (synth, gt) = planted_slide(12, "big", 18, &params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (sd, md) = (dir.path().join("slide"), dir.path().join("mask"));

    PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
    let base = CURRENT.load(Ordering::Relaxed);
    write_slide(&synth, &sd).unwrap();
    write_synth_mask(&synth, &md).unwrap();
    let grown = PEAK.load(Ordering::Relaxed) - base;
    // the full RGB raster would be 768 MiB
    assert!(grown < 64 << 20, "peak growth {grown} bytes");

    let slide = open_slide(&sd).unwrap();
    let masks = open_mask(&md).unwrap();
    assert_eq!((slide.cols(), slide.rows()), (16, 16));
    let r = gt.blobs[0].bbox;
    assert_eq!(slide.read_region(r).unwrap(), synth.read_region(r).unwrap());
    assert_eq!(
        masks.read_region(r).unwrap(),
        synth.label_region(r).unwrap()
    );
}
