//! Evaluation against ground truth: pixel overlap scores, eosinophil class
//! confusion, region-level false discoveries, counting error, slide-level
//! classification and ROC sweeps.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::counter::EosRegion;
use crate::error::{Error, Result};
use crate::pec::Activity;
use crate::slide::{ClassMask, EosClass};

/// Pixel counts for one (image, class) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Tally {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Per-image, per-class tallies. Merging is concatenation, so tallies
/// computed on separate workers combine to the serial result.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTally {
    /// `[intact, not_intact]` per image.
    pub images: Vec<[Tally; 2]>,
}

impl ConfusionTally {
    pub fn from_pair(gt: &ClassMask, pred: &ClassMask) -> Result<Self> {
        same_dims(gt, pred)?;
        let mut t = [Tally::default(); 2];
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            for (k, class) in EosClass::ALL.iter().enumerate() {
                let l = class.label();
                match (g == l, p == l) {
                    (true, true) => t[k].tp += 1,
                    (false, true) => t[k].fp += 1,
                    (true, false) => t[k].fn_ += 1,
                    (false, false) => t[k].tn += 1,
                }
            }
        }
        Ok(ConfusionTally { images: vec![t] })
    }

    pub fn merge(mut self, other: ConfusionTally) -> Self {
        self.images.extend(other.images);
        self
    }
}

fn same_dims(gt: &ClassMask, pred: &ClassMask) -> Result<()> {
    if (gt.width(), gt.height()) != (pred.width(), pred.height()) {
        return Err(Error::DimensionMismatch(format!(
            "ground truth {}x{} vs prediction {}x{}",
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height()
        )));
    }
    Ok(())
}

/// What a ratio term contributes when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyUnionPolicy {
    /// Nothing predicted where nothing exists is a perfect term.
    #[default]
    CountAsOne,
    /// Drop the term from the average.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub m_iou: f64,
    pub m_precision: f64,
    pub m_recall: f64,
    pub m_specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub intact: MetricScores,
    pub not_intact: MetricScores,
    /// Mean of the two per-class scores.
    pub overall: MetricScores,
    pub images: usize,
}

/// The four ratios of one (image, class) term, `None` where skipped.
fn term(t: &Tally, policy: EmptyUnionPolicy) -> [Option<f64>; 4] {
    let empty = match policy {
        EmptyUnionPolicy::CountAsOne => Some(1.0),
        EmptyUnionPolicy::Skip => None,
    };
    let ratio = |num: u64, den: u64| num as f64 / den as f64;
    let union = t.tp + t.fp + t.fn_;
    let (iou, precision, recall) = if union == 0 {
        (empty, empty, empty)
    } else {
        (
            Some(ratio(t.tp, union)),
            // a zero denominator with a non-empty union means the class was
            // entirely missed (or entirely hallucinated): the term scores 0
            Some(if t.tp + t.fp == 0 {
                0.0
            } else {
                ratio(t.tp, t.tp + t.fp)
            }),
            Some(if t.tp + t.fn_ == 0 {
                0.0
            } else {
                ratio(t.tp, t.tp + t.fn_)
            }),
        )
    };
    let specificity = if t.tn + t.fp == 0 {
        empty
    } else {
        Some(ratio(t.tn, t.tn + t.fp))
    };
    [iou, precision, recall, specificity]
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Macro-averaged scores from tallies. Under [`EmptyUnionPolicy::Skip`] a
/// class with no remaining terms scores NaN.
pub fn scores_from_tally(tally: &ConfusionTally, policy: EmptyUnionPolicy) -> Result<SegScores> {
    if tally.images.is_empty() {
        return Err(Error::InvalidInput("no images to score".into()));
    }
    let per_class = |k: usize| {
        let terms: Vec<[Option<f64>; 4]> =
            tally.images.iter().map(|t| term(&t[k], policy)).collect();
        let col = |j: usize| mean(terms.iter().filter_map(|t| t[j]));
        MetricScores {
            m_iou: col(0),
            m_precision: col(1),
            m_recall: col(2),
            m_specificity: col(3),
        }
    };
    let intact = per_class(0);
    let not_intact = per_class(1);
    let avg = |a: f64, b: f64| (a + b) / 2.0;
    Ok(SegScores {
        overall: MetricScores {
            m_iou: avg(intact.m_iou, not_intact.m_iou),
            m_precision: avg(intact.m_precision, not_intact.m_precision),
            m_recall: avg(intact.m_recall, not_intact.m_recall),
            m_specificity: avg(intact.m_specificity, not_intact.m_specificity),
        },
        intact,
        not_intact,
        images: tally.images.len(),
    })
}

/// mIoU, mPrecision, mRecall and mSpecificity over paired masks, averaged
/// over every (image, class) term.
pub fn seg_metrics(gt: &[ClassMask], pred: &[ClassMask]) -> Result<SegScores> {
    seg_metrics_with(gt, pred, EmptyUnionPolicy::default())
}

pub fn seg_metrics_with(
    gt: &[ClassMask],
    pred: &[ClassMask],
    policy: EmptyUnionPolicy,
) -> Result<SegScores> {
    if gt.len() != pred.len() {
        return Err(Error::InvalidInput(format!(
            "{} ground-truth masks vs {} predictions",
            gt.len(),
            pred.len()
        )));
    }
    let mut tally = ConfusionTally::default();
    for (g, p) in gt.iter().zip(pred) {
        tally = tally.merge(ConfusionTally::from_pair(g, p)?);
    }
    scores_from_tally(&tally, policy)
}

/// Intact vs not-intact confusion over pixels that both masks call
/// eosinophil. Rows are ground truth, columns prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConfusion {
    pub counts: [[u64; 2]; 2],
    /// Row-normalized counts; `None` for a row with no pixels.
    pub rows: [Option<[f64; 2]>; 2],
}

impl ClassConfusion {
    pub fn from_counts(counts: [[u64; 2]; 2]) -> Self {
        let norm = |r: [u64; 2]| {
            let n = r[0] + r[1];
            (n > 0).then(|| [r[0] as f64 / n as f64, r[1] as f64 / n as f64])
        };
        ClassConfusion {
            counts,
            rows: [norm(counts[0]), norm(counts[1])],
        }
    }

    pub fn merge(&self, other: &ClassConfusion) -> ClassConfusion {
        let mut c = self.counts;
        for (i, row) in c.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += other.counts[i][j];
            }
        }
        ClassConfusion::from_counts(c)
    }
}

pub fn class_confusion(gt: &ClassMask, pred: &ClassMask) -> Result<ClassConfusion> {
    same_dims(gt, pred)?;
    let mut counts = [[0u64; 2]; 2];
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        if g != 0 && p != 0 {
            counts[(g - 1) as usize][(p - 1) as usize] += 1;
        }
    }
    Ok(ClassConfusion::from_counts(counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub n: usize,
    pub mae: f64,
    /// Least-squares `pred ≈ slope·true + intercept`; absent with fewer than
    /// two pairs or no spread in the true counts.
    pub fit: Option<LinearFit>,
    /// `|pred − true| / max(true, 1)` per pair.
    pub relative_errors: Vec<f64>,
}

pub fn count_error_stats(pairs: &[(f64, f64)]) -> Result<CountStats> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no count pairs".into()));
    }
    let n = pairs.len() as f64;
    let mae = pairs.iter().map(|(t, p)| (p - t).abs()).sum::<f64>() / n;
    let relative_errors = pairs
        .iter()
        .map(|(t, p)| (p - t).abs() / t.max(1.0))
        .collect();

    let fit = (pairs.len() >= 2)
        .then(|| {
            let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
            let sxx: f64 = pairs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
            let sxy: f64 = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
            if sxx == 0.0 {
                return None;
            }
            let slope = sxy / sxx;
            let intercept = my - slope * mx;
            let ss_res: f64 = pairs
                .iter()
                .map(|(x, y)| {
                    let r = y - (slope * x + intercept);
                    r * r
                })
                .sum();
            let ss_tot: f64 = pairs.iter().map(|(_, y)| (y - my) * (y - my)).sum();
            let r_squared = if ss_tot == 0.0 {
                if ss_res == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 - ss_res / ss_tot
            };
            Some(LinearFit {
                slope,
                intercept,
                r_squared,
            })
        })
        .flatten();

    Ok(CountStats {
        n: pairs.len(),
        mae,
        fit,
        relative_errors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFdr {
    pub predicted: usize,
    pub false_discoveries: usize,
    pub fdr: f64,
}

/// A predicted region is a true discovery when at least `min_overlap` of its
/// area lies on same-class ground-truth regions.
pub fn region_matches(gt: &[EosRegion], pred: &[EosRegion], min_overlap: f64) -> RegionFdr {
    let mut rows: HashMap<(EosClass, u32), Vec<(u32, u32)>> = HashMap::new();
    for r in gt {
        for run in &r.runs {
            rows.entry((r.class, run.y))
                .or_default()
                .push((run.x0, run.x1));
        }
    }
    for spans in rows.values_mut() {
        spans.sort_unstable();
        // merge so overlapping gt runs are not double counted
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(spans.len());
        for &(a, b) in spans.iter() {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        *spans = merged;
    }

    let false_discoveries = pred
        .iter()
        .filter(|p| {
            let inter: u64 = p
                .runs
                .iter()
                .map(|run| {
                    let Some(spans) = rows.get(&(p.class, run.y)) else {
                        return 0;
                    };
                    let start = spans.partition_point(|s| s.1 <= run.x0);
                    spans[start..]
                        .iter()
                        .take_while(|s| s.0 < run.x1)
                        .map(|s| (s.1.min(run.x1) - s.0.max(run.x0)) as u64)
                        .sum::<u64>()
                })
                .sum();
            p.area_px == 0 || (inter as f64 / p.area_px as f64) < min_overlap
        })
        .count();
    RegionFdr {
        predicted: pred.len(),
        false_discoveries,
        fdr: false_discoveries as f64 / pred.len().max(1) as f64,
    }
}

pub fn region_fdr(gt: &[EosRegion], pred: &[EosRegion], min_overlap: f64) -> f64 {
    region_matches(gt, pred, min_overlap).fdr
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub accuracy: f64,
    /// `None` when there are no Active ground-truth labels.
    pub sensitivity: Option<f64>,
    /// `None` when there are no Inactive ground-truth labels.
    pub specificity: Option<f64>,
}

/// Active is the positive class.
pub fn classification_report(pred: &[Activity], gt: &[Activity]) -> Result<ClassificationReport> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions vs {} labels",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("no labels".into()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (p, g) in pred.iter().zip(gt) {
        match (p, g) {
            (Activity::Active, Activity::Active) => tp += 1,
            (Activity::Active, Activity::Inactive) => fp += 1,
            (Activity::Inactive, Activity::Active) => fn_ += 1,
            (Activity::Inactive, Activity::Inactive) => tn += 1,
        }
    }
    let frac = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    Ok(ClassificationReport {
        tp,
        fp,
        fn_,
        tn,
        accuracy: (tp + tn) as f64 / pred.len() as f64,
        sensitivity: frac(tp, tp + fn_),
        specificity: frac(tn, tn + fp),
    })
}

mod threshold_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Finite(*v)
        } else if *v > 0.0 {
            Repr::Named("inf".into())
        } else {
            Repr::Named("-inf".into())
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => Ok(v),
            Repr::Named(n) if n == "inf" => Ok(f64::INFINITY),
            Repr::Named(n) if n == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Named(n) => Err(serde::de::Error::custom(format!("bad threshold {n:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores at or above this are called Active. `±inf` at the ends.
    #[serde(with = "threshold_repr")]
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ordered from `+inf` down to `-inf`, so fpr never decreases.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    /// Accuracy-maximizing midpoint threshold (smallest on ties); `None`
    /// when all scores are equal.
    pub best_threshold: Option<f64>,
}

/// Sweeps thresholds at the midpoints between consecutive distinct scores,
/// plus `+inf` and `-inf`.
pub fn roc_sweep(scores: &[f64], gt: &[Activity]) -> Result<RocCurve> {
    if scores.len() != gt.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores vs {} labels",
            scores.len(),
            gt.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::InvalidInput("no scores".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("NaN score".into()));
    }
    let pos = gt.iter().filter(|&&g| g == Activity::Active).count() as u64;
    let neg = gt.len() as u64 - pos;
    if pos == 0 {
        return Err(Error::SingleClass("Inactive"));
    }
    if neg == 0 {
        return Err(Error::SingleClass("Active"));
    }

    // per distinct score, descending: (score, positives, negatives)
    let mut by_score: BTreeMap<OrdF64, (u64, u64)> = BTreeMap::new();
    for (&s, &g) in scores.iter().zip(gt) {
        let e = by_score.entry(OrdF64(s)).or_default();
        match g {
            Activity::Active => e.0 += 1,
            Activity::Inactive => e.1 += 1,
        }
    }
    let groups: Vec<(f64, u64, u64)> = by_score
        .into_iter()
        .rev()
        .map(|(k, (p, n))| (k.0, p, n))
        .collect();

    let total = (pos + neg) as f64;
    let point = |threshold: f64, tp: u64, fp: u64| RocPoint {
        threshold,
        tpr: tp as f64 / pos as f64,
        fpr: fp as f64 / neg as f64,
        accuracy: (tp + (neg - fp)) as f64 / total,
    };

    let mut points = vec![point(f64::INFINITY, 0, 0)];
    let (mut tp, mut fp) = (0, 0);
    for (i, &(s, p, n)) in groups.iter().enumerate() {
        tp += p;
        fp += n;
        let threshold = match groups.get(i + 1) {
            Some(&(next, _, _)) => (s + next) / 2.0,
            None => f64::NEG_INFINITY,
        };
        points.push(point(threshold, tp, fp));
    }

    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();

    let best_threshold = points
        .iter()
        .filter(|p| p.threshold.is_finite())
        .fold(None::<&RocPoint>, |best, p| match best {
            // thresholds descend along the sweep, so `>=` keeps the smallest on ties
            Some(b) if b.accuracy > p.accuracy => Some(b),
            _ => Some(p),
        })
        .map(|p| p.threshold);

    Ok(RocCurve {
        points,
        auc,
        best_threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Everything `evaluate` can report; absent sections were not requested
/// or had no inputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_confusion: Option<ClassConfusion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region_fdr: Option<BTreeMap<EosClass, RegionFdr>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counting: Option<CountStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classification: Option<ClassificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc: Option<RocCurve>,
}
