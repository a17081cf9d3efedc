use std::path::PathBuf;

use clap::Args;
use eoswsi_core::pec::{classify, rank_slides};
use eoswsi_core::{Activity, HpfConfig, PecResult, Rect};

use crate::output::{json_files, ranking_csv, read_json, write_text};
use crate::{CliError, CliResult, Outcome};

#[derive(Args, Debug)]
pub struct RankArgs {
    /// Report JSON files or directories of them. Repeatable.
    #[arg(long = "reports", required = true)]
    pub reports: Vec<PathBuf>,
    /// Activity threshold for reports that carry no label [default: 15]
    #[arg(long)]
    pub threshold: Option<u32>,
    /// Output directory; the ranking goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reads the fields ranking needs from a report, ignoring the rest.
pub fn pec_from_report(v: &serde_json::Value, hpf: &HpfConfig) -> Option<PecResult> {
    let id = v.get("slide_id")?.as_str()?.to_string();
    let peak = v.get("peak_count")?.as_u64()?;
    let label = match v.get("label").and_then(|l| l.as_str()) {
        Some(s) => s.parse::<Activity>().ok()?,
        None => classify(peak, hpf),
    };
    let hpf_rect = v
        .get("hpf_rect")
        .and_then(|r| serde_json::from_value::<Rect>(r.clone()).ok())
        .unwrap_or(Rect::new(0, 0, 0, 0));
    Some(PecResult {
        slide_id: id,
        peak_count: peak,
        hpf_rect,
        label,
    })
}

pub fn run(args: RankArgs) -> CliResult {
    let mut hpf = HpfConfig::default();
    if let Some(t) = args.threshold {
        hpf.activity_threshold = t;
    }
    hpf.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut results = Vec::new();
    for root in &args.reports {
        for path in json_files(root)? {
            let v = read_json(&path)?;
            match pec_from_report(&v, &hpf) {
                Some(r) => results.push(r),
                None if root.is_file() => {
                    return Err(CliError::Failed(format!(
                        "{} is not a slide report",
                        path.display()
                    )))
                }
                // other JSON in a report directory is skipped
                None => {}
            }
        }
    }
    if results.is_empty() {
        return Err(CliError::Failed("no slide reports found".into()));
    }
    let csv = ranking_csv(&rank_slides(results)?)?;
    match &args.out {
        Some(dir) => write_text(&dir.join("ranking.csv"), &csv)?,
        None => print!("{csv}"),
    }
    Ok(Outcome::Success)
}
