use std::path::PathBuf;

use clap::Args;
use eoswsi_core::synth::{
    planted_slide, random_cohort_with, write_ground_truth, write_synth_slide, CohortParams,
};

use crate::output::{create_dir, file_stem, write_text};
use crate::{CliError, CliResult, Outcome};

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plant exactly this peak count on a single slide.
    #[arg(long, conflicts_with_all = ["cohort", "activity_mix"])]
    pub pec: Option<u64>,
    /// Generate a cohort of this many slides.
    #[arg(long)]
    pub cohort: Option<usize>,
    /// Fraction of active slides in a cohort.
    #[arg(long, default_value_t = 0.5, requires = "cohort")]
    pub activity_mix: f64,
    #[arg(long, default_value_t = 4096)]
    pub width: u32,
    #[arg(long, default_value_t = 4096)]
    pub height: u32,
    /// Glass border around the tissue, in pixels.
    #[arg(long, default_value_t = 128)]
    pub margin: u32,
    #[arg(long, default_value_t = 1024)]
    pub tile_size: u32,
    /// Pixel pitch in µm [default: 0.2555]
    #[arg(long)]
    pub mpp: Option<f64>,
    /// Field area in mm² [default: 0.3]
    #[arg(long = "hpf-area-mm2")]
    pub hpf_area_mm2: Option<f64>,
    /// Activity threshold [default: 15]
    #[arg(long)]
    pub threshold: Option<u32>,
    /// Analysis patch size; blobs keep this far inside the tissue [default: 448]
    #[arg(long)]
    pub patch_size: Option<u32>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl SynthArgs {
    fn params(&self) -> Result<CohortParams, CliError> {
        let mut p = CohortParams {
            width: self.width,
            height: self.height,
            margin_px: self.margin,
            tile_size: self.tile_size,
            ..CohortParams::default()
        };
        if let Some(v) = self.mpp {
            p.microns_per_pixel = v;
        }
        if let Some(v) = self.hpf_area_mm2 {
            p.hpf.hpf_area_mm2 = v;
        }
        if let Some(v) = self.threshold {
            p.hpf.activity_threshold = v;
        }
        if let Some(v) = self.patch_size {
            p.patch_size = v;
        }
        let usage = |e: eoswsi_core::Error| CliError::Usage(e.to_string());
        p.hpf.validate().map_err(usage)?;
        if !(0.0..=1.0).contains(&self.activity_mix) {
            return Err(CliError::Usage(format!(
                "--activity-mix {} outside [0, 1]",
                self.activity_mix
            )));
        }
        if !(p.microns_per_pixel.is_finite() && p.microns_per_pixel > 0.0) {
            return Err(CliError::Usage("--mpp must be positive".into()));
        }
        if self.width == 0 || self.height == 0 || self.tile_size == 0 {
            return Err(CliError::Usage(
                "width, height and tile size must be >= 1".into(),
            ));
        }
        Ok(p)
    }
}

pub fn run(args: SynthArgs) -> CliResult {
    let params = args.params()?;
    let slides = match (args.pec, args.cohort) {
        (Some(pec), None) => vec![planted_slide(
            args.seed,
            format!("synth-{}", args.seed),
            pec,
            &params,
        )?],
        (None, Some(0)) => return Err(CliError::Usage("--cohort needs at least one slide".into())),
        (None, Some(n)) => random_cohort_with(args.seed, n, args.activity_mix, &params)?,
        _ => return Err(CliError::Usage("give --pec or --cohort".into())),
    };
    create_dir(&args.out)?;
    let mut rows = String::from("slide_id,planted_pec,label\n");
    for (slide, gt) in &slides {
        let stem = file_stem(&gt.slide_id);
        write_synth_slide(
            slide,
            &args.out.join("slides").join(&stem),
            &args.out.join("masks").join(&stem),
        )?;
        let truth_dir = args.out.join("truth");
        create_dir(&truth_dir)?;
        write_ground_truth(gt, &truth_dir.join(format!("{stem}.json")))?;
        rows.push_str(&format!(
            "{},{},{}\n",
            gt.slide_id,
            gt.planted_pec,
            gt.label.as_str()
        ));
    }
    write_text(&args.out.join("truth.csv"), &rows)?;
    Ok(Outcome::Success)
}
