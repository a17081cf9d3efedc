use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use eoswsi_core::counter::{connected_components, Connectivity};
use eoswsi_core::metrics::{
    class_confusion, classification_report, count_error_stats, region_matches, roc_sweep,
    seg_metrics_with, ClassConfusion, EmptyUnionPolicy, EvalReport, RegionFdr, RocCurve,
};
use eoswsi_core::pec::classify;
use eoswsi_core::slide::read_mask;
use eoswsi_core::{Activity, ClassMask, EosClass, HpfConfig};

use crate::output::{json_files, read_json, to_json, write_text};
use crate::{CliError, CliResult, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmptyUnion {
    /// A term where both masks are empty scores 1.
    One,
    /// Such terms are left out of the means.
    Skip,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Ground-truth mask container. Repeatable; paired in order with --pred-mask.
    #[arg(long = "gt-mask")]
    pub gt_masks: Vec<PathBuf>,
    /// Predicted mask container. Repeatable.
    #[arg(long = "pred-mask")]
    pub pred_masks: Vec<PathBuf>,
    /// True peak counts: CSV (slide_id, peak_count or planted_pec, optional
    /// label) or a directory of ground-truth JSON files.
    #[arg(long, requires = "pred")]
    pub truth: Option<PathBuf>,
    /// Predicted peak counts: CSV or a directory of slide reports.
    #[arg(long, requires = "truth")]
    pub pred: Option<PathBuf>,
    /// Also write the ROC points as CSV.
    #[arg(long)]
    pub roc: bool,
    /// Activity threshold for rows without a label [default: 15]
    #[arg(long)]
    pub threshold: Option<u32>,
    /// Minimum overlap fraction for a predicted region to count as found.
    #[arg(long, default_value_t = 0.5)]
    pub min_overlap: f64,
    #[arg(long, value_enum, default_value_t = EmptyUnion::One)]
    pub empty_union: EmptyUnion,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
struct CountRow {
    count: f64,
    label: Option<Activity>,
}

fn bad(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Failed(format!("{}: {what}", path.display()))
}

fn read_count_csv(path: &Path) -> Result<BTreeMap<String, CountRow>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| bad(path, e))?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| bad(path, e))?.clone();
    let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h.trim()));
    let id_col = col(&["slide_id"]).ok_or_else(|| bad(path, "no slide_id column"))?;
    let count_col = col(&["peak_count", "planted_pec", "count"])
        .ok_or_else(|| bad(path, "no peak_count column"))?;
    let label_col = col(&["label"]);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(path, e))?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let count: f64 = field(count_col)
            .parse()
            .map_err(|_| bad(path, format!("bad count {:?}", field(count_col))))?;
        let label = match label_col.map(field).filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse::<Activity>().map_err(|e| bad(path, e))?),
            None => None,
        };
        let id = field(id_col).to_string();
        if out.insert(id.clone(), CountRow { count, label }).is_some() {
            return Err(bad(path, format!("duplicate slide id {id:?}")));
        }
    }
    Ok(out)
}

fn read_count_dir(path: &Path) -> Result<BTreeMap<String, CountRow>, CliError> {
    let mut out = BTreeMap::new();
    for f in json_files(path)? {
        let v = read_json(&f)?;
        let Some(id) = v.get("slide_id").and_then(|s| s.as_str()) else {
            continue;
        };
        let count = ["peak_count", "planted_pec"]
            .iter()
            .find_map(|k| v.get(*k).and_then(|c| c.as_f64()))
            .ok_or_else(|| bad(&f, "no peak_count or planted_pec"))?;
        let label = match v.get("label").and_then(|l| l.as_str()) {
            Some(s) => Some(s.parse::<Activity>().map_err(|e| bad(&f, e))?),
            None => None,
        };
        if out
            .insert(id.to_string(), CountRow { count, label })
            .is_some()
        {
            return Err(bad(&f, format!("duplicate slide id {id:?}")));
        }
    }
    Ok(out)
}

fn read_counts(path: &Path) -> Result<BTreeMap<String, CountRow>, CliError> {
    if path.is_dir() {
        read_count_dir(path)
    } else {
        read_count_csv(path)
    }
}

fn label_of(row: &CountRow, hpf: &HpfConfig) -> Activity {
    row.label
        .unwrap_or_else(|| classify(row.count.max(0.0).round() as u64, hpf))
}

fn roc_csv(roc: &RocCurve) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Failed(format!("csv: {e}"));
    w.write_record(["threshold", "tpr", "fpr", "accuracy"])
        .map_err(fail)?;
    for p in &roc.points {
        let t = if p.threshold == f64::INFINITY {
            "inf".to_string()
        } else if p.threshold == f64::NEG_INFINITY {
            "-inf".to_string()
        } else {
            p.threshold.to_string()
        };
        w.write_record([
            t,
            p.tpr.to_string(),
            p.fpr.to_string(),
            p.accuracy.to_string(),
        ])
        .map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Failed(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn mask_section(args: &EvaluateArgs, report: &mut EvalReport) -> Result<(), CliError> {
    let mut gts: Vec<ClassMask> = Vec::new();
    let mut preds: Vec<ClassMask> = Vec::new();
    for (g, p) in args.gt_masks.iter().zip(&args.pred_masks) {
        gts.push(read_mask(g)?);
        preds.push(read_mask(p)?);
    }
    let policy = match args.empty_union {
        EmptyUnion::One => EmptyUnionPolicy::CountAsOne,
        EmptyUnion::Skip => EmptyUnionPolicy::Skip,
    };
    report.segmentation = Some(seg_metrics_with(&gts, &preds, policy)?);
    let mut confusion = ClassConfusion::from_counts([[0; 2]; 2]);
    let mut fdr: BTreeMap<EosClass, (usize, usize)> = BTreeMap::new();
    for (g, p) in gts.iter().zip(&preds) {
        confusion = confusion.merge(&class_confusion(g, p)?);
        for class in EosClass::ALL {
            let gr = connected_components(&g.channel(class), Connectivity::Eight, class);
            let pr = connected_components(&p.channel(class), Connectivity::Eight, class);
            let m = region_matches(&gr, &pr, args.min_overlap);
            let e = fdr.entry(class).or_default();
            e.0 += m.predicted;
            e.1 += m.false_discoveries;
        }
    }
    report.class_confusion = Some(confusion);
    report.region_fdr = Some(
        fdr.into_iter()
            .map(|(c, (n, f))| {
                (
                    c,
                    RegionFdr {
                        predicted: n,
                        false_discoveries: f,
                        fdr: f as f64 / n.max(1) as f64,
                    },
                )
            })
            .collect(),
    );
    Ok(())
}

pub fn run(args: EvaluateArgs) -> CliResult {
    if args.gt_masks.len() != args.pred_masks.len() {
        return Err(CliError::Usage(format!(
            "{} --gt-mask vs {} --pred-mask",
            args.gt_masks.len(),
            args.pred_masks.len()
        )));
    }
    if args.gt_masks.is_empty() && args.truth.is_none() {
        return Err(CliError::Usage(
            "give --gt-mask/--pred-mask pairs or --truth with --pred".into(),
        ));
    }
    if !(0.0..=1.0).contains(&args.min_overlap) {
        return Err(CliError::Usage("--min-overlap must be in [0, 1]".into()));
    }
    let mut hpf = HpfConfig::default();
    if let Some(t) = args.threshold {
        hpf.activity_threshold = t;
    }
    hpf.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut report = EvalReport::default();
    if !args.gt_masks.is_empty() {
        mask_section(&args, &mut report)?;
    }
    let mut roc = None;
    if let (Some(tp), Some(pp)) = (&args.truth, &args.pred) {
        let truth = read_counts(tp)?;
        let pred = read_counts(pp)?;
        let pred_by_id: HashMap<&str, &CountRow> =
            pred.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let unpaired: Vec<&str> = truth
            .keys()
            .filter(|k| !pred_by_id.contains_key(k.as_str()))
            .map(String::as_str)
            .chain(
                pred.keys()
                    .filter(|k| !truth.contains_key(*k))
                    .map(String::as_str),
            )
            .collect();
        if !unpaired.is_empty() {
            return Err(CliError::Failed(format!(
                "unpaired slides: {}",
                unpaired.join(", ")
            )));
        }
        if truth.is_empty() {
            return Err(CliError::Failed("no slides to compare".into()));
        }
        let mut pairs = Vec::new();
        let (mut gt_labels, mut pred_labels, mut scores) = (Vec::new(), Vec::new(), Vec::new());
        for (id, t) in &truth {
            let p = pred_by_id[id.as_str()];
            pairs.push((t.count, p.count));
            gt_labels.push(label_of(t, &hpf));
            pred_labels.push(label_of(p, &hpf));
            scores.push(p.count);
        }
        report.counting = Some(count_error_stats(&pairs)?);
        report.classification = Some(classification_report(&pred_labels, &gt_labels)?);
        match roc_sweep(&scores, &gt_labels) {
            Ok(r) => roc = Some(r),
            Err(e) if args.roc => return Err(e.into()),
            Err(e) => eprintln!("note: no ROC: {e}"),
        }
    } else if args.roc {
        return Err(CliError::Usage("--roc needs --truth and --pred".into()));
    }

    let roc_text = match (&roc, args.roc) {
        (Some(r), true) => Some(roc_csv(r)?),
        _ => None,
    };
    report.roc = roc;
    write_text(&args.out.join("eval.json"), &to_json(&report))?;
    if let Some(text) = roc_text {
        write_text(&args.out.join("roc.csv"), &text)?;
    }
    Ok(Outcome::Success)
}
