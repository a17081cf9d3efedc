use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use eoswsi_core::pipeline::{analyze_cohort, open_cohort, render_overlay};
use eoswsi_core::slide::{open_slide, MANIFEST_FILE};
use eoswsi_core::SlideReport;
use serde::Serialize;

use crate::opts::{PipelineArgs, SegmenterChoice};
use crate::output::{create_dir, file_stem, ranking_csv, to_json, write_text};
use crate::{CliError, CliResult, Outcome};

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Slide container (directory or manifest path). Repeatable.
    #[arg(long = "slide")]
    pub slides: Vec<PathBuf>,
    /// Directory of slide containers, or a text file listing one per line.
    #[arg(long)]
    pub cohort: Option<PathBuf>,
    /// Segmentation backend: oracle or masks:<path>
    #[arg(long, default_value = "oracle")]
    pub segmenter: SegmenterChoice,
    /// Also write a PNG overlay per slide.
    #[arg(long)]
    pub overlay: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Serialize)]
struct FailureEntry<'a> {
    slide: &'a str,
    error: String,
}

/// Slide containers named by a cohort directory or list file.
fn cohort_paths(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    let unreadable =
        |e: std::io::Error| CliError::Failed(format!("cannot read cohort {}: {e}", path.display()));
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(unreadable)?;
        let base = path.parent().unwrap_or(Path::new("."));
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| base.join(l))
            .collect());
    }
    if path.join(MANIFEST_FILE).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)
        .map_err(unreadable)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn run(args: AnalyzeArgs) -> CliResult {
    let cfg = args.pipeline.config()?;
    if args.slides.is_empty() && args.cohort.is_none() {
        return Err(CliError::Usage(
            "give at least one --slide or a --cohort".into(),
        ));
    }
    let mut paths = args.slides.clone();
    if let Some(c) = &args.cohort {
        paths.extend(cohort_paths(c)?);
    }
    if paths.is_empty() {
        return Err(CliError::Failed("the cohort holds no slides".into()));
    }
    let backend = args.segmenter.build(cfg.tiler.patch_size)?;
    let outcome = analyze_cohort(open_cohort(&paths), &cfg, backend.as_ref())?;
    for f in &outcome.failures {
        eprintln!("error: {}: {}", f.slide, f.error);
    }
    if outcome.analyses.is_empty() {
        return Err(CliError::Failed(format!(
            "all {} slides failed; nothing written",
            paths.len()
        )));
    }

    let name = backend.name();
    create_dir(&args.out)?;
    for a in &outcome.analyses {
        let report = SlideReport::new(a, &cfg, &name);
        let path = args
            .out
            .join("reports")
            .join(format!("{}.json", file_stem(&report.slide_id)));
        write_text(&path, &report.to_json())?;
    }
    write_text(&args.out.join("cohort.csv"), &ranking_csv(&outcome.ranked)?)?;
    if args.overlay {
        for (a, input) in outcome.analyses.iter().zip(&outcome.inputs) {
            let slide = open_slide(Path::new(input))?;
            let path = args
                .out
                .join("overlays")
                .join(format!("{}.png", file_stem(&a.pec.slide_id)));
            create_dir(path.parent().expect("overlay path has a parent"))?;
            render_overlay(&slide, &a.mask, a.pec.hpf_rect, &path)?;
        }
    }
    if outcome.failures.is_empty() {
        return Ok(Outcome::Success);
    }
    let entries: Vec<FailureEntry> = outcome
        .failures
        .iter()
        .map(|f| FailureEntry {
            slide: &f.slide,
            error: f.error.to_string(),
        })
        .collect();
    write_text(&args.out.join("failures.json"), &to_json(&entries))?;
    Ok(Outcome::Partial)
}
