use eoswsi_core::slide::{open_mask, open_slide, read_mask};
use eoswsi_core::synth::{planted_slide, write_synth_slide, CohortParams};
use eoswsi_core::{Rect, SlideSource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_params() -> CohortParams {
    CohortParams {
        width: 2000,
        height: 1500,
        tile_size: 512,
        margin_px: 64,
        patch_size: 128,
        ..CohortParams::default()
    }
}

#[test]
fn tiled_reads_match_procedural_reads() {
    let (synth, _) = planted_slide(3, "c", 6, &small_params()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (sd, md) = (dir.path().join("slide"), dir.path().join("mask"));
    write_synth_slide(&synth, &sd, &md).unwrap();
    let tiled = open_slide(&sd).unwrap();
    let masks = open_mask(&md).unwrap();
    assert_eq!(tiled.meta(), synth.meta());
    assert_eq!((tiled.cols(), tiled.rows()), (4, 3));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (w, h) = (synth.meta().width_px, synth.meta().height_px);
    for _ in 0..40 {
        let x = rng.random_range(0..w);
        let y = rng.random_range(0..h);
        let r = Rect::new(
            x,
            y,
            rng.random_range(1..=(w - x).min(700)),
            rng.random_range(1..=(h - y).min(700)),
        );
        assert_eq!(
            tiled.read_region(r).unwrap(),
            synth.read_region(r).unwrap(),
            "{r:?}"
        );
        assert_eq!(
            masks.read_region(r).unwrap(),
            synth.label_region(r).unwrap(),
            "{r:?}"
        );
    }
    assert_eq!(read_mask(&md).unwrap(), synth.mask());
}

#[test]
fn region_reads_decode_only_touched_tiles() {
    let params = CohortParams {
        width: 4096,
        height: 4096,
        ..CohortParams::default()
    };
    let (synth, _) = planted_slide(9, "lazy", 0, &params).unwrap();
    let dir = tempfile::tempdir().unwrap();
    eoswsi_core::slide::write_slide(&synth, dir.path()).unwrap();
    let slide = open_slide(dir.path()).unwrap();
    slide.set_cache_capacity(0);

    // straddles a tile corner
    let r = Rect::new(800, 900, 448, 448);
    assert_eq!(slide.tiles_touched(r), 4);
    slide.read_region(r).unwrap();
    assert_eq!(slide.tiles_decoded(), 4);

    // inside one tile
    slide.read_region(Rect::new(10, 10, 448, 448)).unwrap();
    assert_eq!(slide.tiles_decoded(), 5);
}

#[test]
fn cache_avoids_repeat_decodes() {
    let (synth, _) = planted_slide(1, "cache", 0, &small_params()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    eoswsi_core::slide::write_slide(&synth, dir.path()).unwrap();
    let slide = open_slide(dir.path()).unwrap();
    let r = Rect::new(100, 100, 300, 300);
    let first = slide.read_region(r).unwrap();
    let decoded = slide.tiles_decoded();
    assert_eq!(slide.read_region(r).unwrap(), first);
    assert_eq!(slide.tiles_decoded(), decoded);
}

#[test]
fn missing_container_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(open_slide(&dir.path().join("nope")).is_err());
    assert!(open_mask(dir.path()).is_err());
}
