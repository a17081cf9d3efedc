use std::path::PathBuf;

use clap::Args;
use eoswsi_core::pipeline::{render_overlay, render_overlay_tiled};
use eoswsi_core::slide::{open_slide, read_mask};
use eoswsi_core::{ClassMask, Rect, SlideSource};

use crate::output::{file_stem, read_json};
use crate::{CliError, CliResult, Outcome};

#[derive(Args, Debug)]
pub struct OverlayArgs {
    /// Slide container.
    #[arg(long)]
    pub slide: PathBuf,
    /// Label mask container aligned with the slide; empty when omitted.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Slide report whose hpf_rect is outlined.
    #[arg(long, conflicts_with = "rect")]
    pub report: Option<PathBuf>,
    /// Field to outline as x,y,w,h.
    #[arg(long, value_parser = parse_rect)]
    pub rect: Option<Rect>,
    /// Write a full-resolution tiled container instead of one PNG.
    #[arg(long)]
    pub tiled: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_rect(s: &str) -> Result<Rect, String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("{s:?} is not x,y,w,h"))?;
    match parts[..] {
        [x, y, w, h] => Ok(Rect::new(x, y, w, h)),
        _ => Err(format!("{s:?} is not x,y,w,h")),
    }
}

pub fn run(args: OverlayArgs) -> CliResult {
    if args.report.is_none() && args.rect.is_none() {
        return Err(CliError::Usage("give --report or --rect".into()));
    }
    let rect = match (&args.rect, &args.report) {
        (Some(r), _) => *r,
        (None, Some(p)) => {
            let v = read_json(p)?;
            let r = v
                .get("hpf_rect")
                .cloned()
                .ok_or_else(|| CliError::Failed(format!("{} has no hpf_rect", p.display())))?;
            serde_json::from_value(r)
                .map_err(|e| CliError::Failed(format!("{}: bad hpf_rect: {e}", p.display())))?
        }
        (None, None) => unreachable!(),
    };
    let slide = open_slide(&args.slide)?;
    let meta = slide.meta().clone();
    let mask = match &args.mask {
        Some(p) => read_mask(p)?,
        None => ClassMask::new(meta.width_px, meta.height_px),
    };
    let stem = file_stem(&meta.id);
    if args.tiled {
        render_overlay_tiled(
            &slide,
            &mask,
            rect,
            &args.out.join(format!("{stem}.overlay")),
        )?;
    } else {
        render_overlay(
            &slide,
            &mask,
            rect,
            &args.out.join(format!("{stem}.overlay.png")),
        )?;
    }
    Ok(Outcome::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rects_parse() {
        assert_eq!(parse_rect("1,2,3,4"), Ok(Rect::new(1, 2, 3, 4)));
        assert!(parse_rect("1,2,3").is_err());
        assert!(parse_rect("a,b,c,d").is_err());
    }
}
