//! GRES evaluation: cIoU, gIoU, Pr@X, N-acc and T-acc.
//!
//! Per-sample results are kept as integer pixel counts ([`EvalRecord`]) so every
//! aggregate is an exact, order-independent reduction.

use std::fmt::Write as _;

use crate::error::{GresError, Result};
use crate::raster::Mask;

pub const PR_THRESHOLDS: [f64; 3] = [0.7, 0.8, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EvalRecord {
    pub intersection: u64,
    pub union: u64,
    /// The sample is a no-target sample.
    pub gt_empty: bool,
    pub pred_empty: bool,
}

impl EvalRecord {
    /// IoU as used by gIoU: no-target samples score 1 when predicted empty, else 0.
    pub fn generalized_iou(&self) -> f64 {
        if self.gt_empty {
            if self.pred_empty {
                1.0
            } else {
                0.0
            }
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

pub fn eval_record(pred: &Mask, gt: &Mask, gt_empty: bool) -> Result<EvalRecord> {
    if !pred.same_size(gt) {
        return Err(GresError::Input(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    if gt_empty != gt.is_empty() {
        return Err(GresError::Input(format!(
            "no-target flag {gt_empty} disagrees with a ground truth of {} pixels",
            gt.count()
        )));
    }
    let (mut inter, mut union, mut pred_any) = (0u64, 0u64, false);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += u64::from(p && g);
        union += u64::from(p || g);
        pred_any |= p;
    }
    Ok(EvalRecord {
        intersection: inter,
        union,
        gt_empty,
        pred_empty: !pred_any,
    })
}

/// Cumulative IoU: total intersection over total union.
pub fn ciou(records: &[EvalRecord]) -> Result<f64> {
    let (i, u) = records
        .iter()
        .fold((0u64, 0u64), |(i, u), r| (i + r.intersection, u + r.union));
    if u == 0 {
        return Err(GresError::UndefinedMetric(
            "cIoU with zero total union".into(),
        ));
    }
    Ok(i as f64 / u as f64)
}

/// Mean per-sample IoU over all samples, no-target ones included.
pub fn giou(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(GresError::UndefinedMetric(
            "gIoU of an empty record list".into(),
        ));
    }
    let sum: f64 = records.iter().map(EvalRecord::generalized_iou).sum();
    Ok(sum / records.len() as f64)
}

/// Fraction of target samples whose IoU is strictly above each threshold.
pub fn pr_at_x(records: &[EvalRecord], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    let ious: Vec<f64> = records
        .iter()
        .filter(|r| !r.gt_empty)
        .map(EvalRecord::generalized_iou)
        .collect();
    if ious.is_empty() {
        return Err(GresError::UndefinedMetric(
            "Pr@X without target samples".into(),
        ));
    }
    Ok(thresholds
        .iter()
        .map(|&x| {
            let hits = ious.iter().filter(|&&iou| iou > x).count();
            (x, hits as f64 / ious.len() as f64)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NoTargetCounts {
    /// No-target sample, empty prediction.
    pub tp: u64,
    /// No-target sample, non-empty prediction.
    pub fn_: u64,
    /// Target sample, non-empty prediction.
    pub tn: u64,
    /// Target sample, empty prediction.
    pub fp: u64,
}

/// `(N-acc, T-acc, counts)`; an accuracy is `None` when its denominator is zero.
pub fn no_target_accuracies(records: &[EvalRecord]) -> (Option<f64>, Option<f64>, NoTargetCounts) {
    let mut c = NoTargetCounts::default();
    for r in records {
        match (r.gt_empty, r.pred_empty) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
        }
    }
    let ratio = |a: u64, b: u64| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    (ratio(c.tp, c.fn_), ratio(c.tn, c.fp), c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub samples: usize,
    pub ciou: Option<f64>,
    pub giou: f64,
    pub pr: Vec<(f64, Option<f64>)>,
    pub n_acc: Option<f64>,
    pub t_acc: Option<f64>,
    pub counts: NoTargetCounts,
    /// Per-sample records in input order.
    pub rows: Vec<EvalRecord>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

impl EvalReport {
    pub fn from_records(records: &[EvalRecord]) -> Result<Self> {
        let giou = giou(records)?;
        let ciou = match ciou(records) {
            Ok(v) => Some(v),
            Err(GresError::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        let pr = match pr_at_x(records, &PR_THRESHOLDS) {
            Ok(v) => v.into_iter().map(|(x, p)| (x, Some(p))).collect(),
            Err(_) => PR_THRESHOLDS.iter().map(|&x| (x, None)).collect(),
        };
        let (n_acc, t_acc, counts) = no_target_accuracies(records);
        Ok(EvalReport {
            samples: records.len(),
            ciou,
            giou,
            pr,
            n_acc,
            t_acc,
            counts,
            rows: records.to_vec(),
        })
    }

    /// Tab-separated per-sample rows: index, intersection, union, gt_empty, pred_empty, IoU.
    pub fn rows_tsv(&self) -> String {
        let mut s = String::from("index\tintersection\tunion\tgt_empty\tpred_empty\tiou\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i}\t{}\t{}\t{}\t{}\t{:.4}",
                r.intersection,
                r.union,
                u8::from(r.gt_empty),
                u8::from(r.pred_empty),
                r.generalized_iou()
            );
        }
        s
    }

    /// `key=value` lines, four decimals, `NA` for undefined values.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples={}", self.samples);
        let _ = writeln!(s, "ciou={}", fmt_opt(self.ciou));
        let _ = writeln!(s, "giou={:.4}", self.giou);
        for (x, p) in &self.pr {
            let _ = writeln!(s, "pr@{x:.1}={}", fmt_opt(*p));
        }
        let _ = writeln!(s, "n_acc={}", fmt_opt(self.n_acc));
        let _ = writeln!(s, "t_acc={}", fmt_opt(self.t_acc));
        let c = self.counts;
        let _ = writeln!(s, "tp={}\nfn={}\ntn={}\nfp={}", c.tp, c.fn_, c.tn, c.fp);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>8}", "metric", "value");
        let _ = writeln!(s, "{:<10} {:>8}", "samples", self.samples);
        let _ = writeln!(s, "{:<10} {:>8}", "cIoU", fmt_opt(self.ciou));
        let _ = writeln!(s, "{:<10} {:>8.4}", "gIoU", self.giou);
        for (x, p) in &self.pr {
            let _ = writeln!(s, "{:<10} {:>8}", format!("Pr@{x:.1}"), fmt_opt(*p));
        }
        let _ = writeln!(s, "{:<10} {:>8}", "N-acc", fmt_opt(self.n_acc));
        let _ = writeln!(s, "{:<10} {:>8}", "T-acc", fmt_opt(self.t_acc));
        let c = self.counts;
        let _ = writeln!(s, "TP={} FN={} TN={} FP={}", c.tp, c.fn_, c.tn, c.fp);
        s
    }
}
