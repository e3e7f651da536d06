//! Segmentation metrics: per-class IoU, micro and macro averages, pixel
//! accuracy and confusion counts.
//!
//! Reports keep integer counts; ratios are derived from them through
//! [`EvalReport::micro`] / [`EvalReport::macro_avg`], which work for any
//! numeric type including exact rationals.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ClassMask, ClassTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub intersection: u64,
    pub union: u64,
    /// `None` when the class occurs in neither mask.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionEntry {
    pub gt: u8,
    pub pred: u8,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: BTreeMap<u8, ClassIou>,
    pub micro_iou: f64,
    pub macro_iou: f64,
    pub pixel_accuracy: f64,
    /// Non-zero cells only, sorted by `(gt, pred)`.
    pub confusion: Vec<ConfusionEntry>,
    pub n_pixels: u64,
}

fn ratio<N: Num + FromPrimitive>(num: u64, den: u64) -> N {
    N::from_u64(num).unwrap() / N::from_u64(den).unwrap()
}

impl EvalReport {
    /// Builds a report from a dense confusion matrix over `ids`.
    pub fn from_confusion(ids: &[u8], counts: &BTreeMap<(u8, u8), u64>) -> Result<Self> {
        let n_pixels: u64 = counts.values().sum();
        if n_pixels == 0 {
            return Err(Error::InvalidArgument("cannot evaluate an empty image".into()));
        }
        let mut per_class = BTreeMap::new();
        for &c in ids {
            let mut inter = 0;
            let mut union = 0;
            for (&(g, p), &n) in counts {
                if g == c && p == c {
                    inter += n;
                }
                if g == c || p == c {
                    union += n;
                }
            }
            let iou = (union > 0).then(|| inter as f64 / union as f64);
            per_class.insert(c, ClassIou { intersection: inter, union, iou });
        }
        let correct: u64 = counts.iter().filter(|((g, p), _)| g == p).map(|(_, n)| n).sum();
        let confusion = counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&(gt, pred), &count)| ConfusionEntry { gt, pred, count })
            .collect();
        let mut report = Self {
            per_class,
            micro_iou: 0.0,
            macro_iou: 0.0,
            pixel_accuracy: correct as f64 / n_pixels as f64,
            confusion,
            n_pixels,
        };
        report.micro_iou = report.micro();
        report.macro_iou = report.macro_avg();
        Ok(report)
    }

    /// Summed intersections over summed unions.
    pub fn micro<N: Num + FromPrimitive>(&self) -> N {
        let i = self.per_class.values().map(|c| c.intersection).sum();
        let u = self.per_class.values().map(|c| c.union).sum();
        ratio(i, u)
    }

    /// Mean IoU over classes with a non-zero union.
    pub fn macro_avg<N: Num + FromPrimitive + Clone>(&self) -> N {
        let defined: Vec<&ClassIou> = self.per_class.values().filter(|c| c.union > 0).collect();
        let sum = defined.iter().fold(N::zero(), |acc, c| acc + ratio::<N>(c.intersection, c.union));
        sum / N::from_usize(defined.len()).unwrap()
    }

    pub fn accuracy<N: Num + FromPrimitive>(&self) -> N {
        let correct = self.confusion.iter().filter(|e| e.gt == e.pred).map(|e| e.count).sum();
        ratio(correct, self.n_pixels)
    }

    pub fn iou<N: Num + FromPrimitive>(&self, class: u8) -> Option<N> {
        let c = self.per_class.get(&class)?;
        (c.union > 0).then(|| ratio(c.intersection, c.union))
    }

    pub fn confusion_count(&self, gt: u8, pred: u8) -> u64 {
        self.confusion.iter().find(|e| e.gt == gt && e.pred == pred).map_or(0, |e| e.count)
    }

    /// Fixed-width text table with six decimals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:>8} {:>12} {:>12} {:>10}", "class", "intersection", "union", "iou").unwrap();
        for (c, m) in &self.per_class {
            let iou = m.iou.map_or_else(|| "absent".to_string(), |v| format!("{v:.6}"));
            writeln!(out, "{:>8} {:>12} {:>12} {:>10}", c, m.intersection, m.union, iou).unwrap();
        }
        writeln!(out, "{:>8} {:.6}", "micro", self.micro_iou).unwrap();
        writeln!(out, "{:>8} {:.6}", "macro", self.macro_iou).unwrap();
        writeln!(out, "{:>8} {:.6}", "accuracy", self.pixel_accuracy).unwrap();
        out
    }
}

fn check_same_dims(gt: &ClassMask, pred: &ClassMask) -> Result<()> {
    if (gt.width(), gt.height()) != (pred.width(), pred.height()) {
        return Err(Error::DimensionMismatch {
            left_w: gt.width(),
            left_h: gt.height(),
            right_w: pred.width(),
            right_h: pred.height(),
        });
    }
    Ok(())
}

fn confusion_counts(gt: &ClassMask, pred: &ClassMask, classes: &ClassTable) -> Result<BTreeMap<(u8, u8), u64>> {
    check_same_dims(gt, pred)?;
    let mut dense = [0u64; 256 * 256];
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        dense[g as usize * 256 + p as usize] += 1;
    }
    let mut counts = BTreeMap::new();
    for (i, &n) in dense.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let (g, p) = ((i / 256) as u8, (i % 256) as u8);
        for l in [g, p] {
            if !classes.contains(l) {
                return Err(Error::LabelOutOfTable(l));
            }
        }
        counts.insert((g, p), n);
    }
    Ok(counts)
}

pub fn evaluate(gt: &ClassMask, pred: &ClassMask, classes: &ClassTable) -> Result<EvalReport> {
    let counts = confusion_counts(gt, pred, classes)?;
    EvalReport::from_confusion(&classes.ids(), &counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    /// Arithmetic mean of the per-pair micro IoUs.
    pub mean_micro: f64,
    /// Arithmetic mean of the per-pair macro IoUs.
    pub mean_macro: f64,
    /// Metrics over all pixels of the batch pooled into one confusion matrix.
    pub pooled: EvalReport,
    pub reports: Vec<EvalReport>,
}

pub fn evaluate_batch(pairs: &[(ClassMask, ClassMask)], classes: &ClassTable) -> Result<BatchReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut pooled: BTreeMap<(u8, u8), u64> = BTreeMap::new();
    let mut reports = Vec::with_capacity(pairs.len());
    for (gt, pred) in pairs {
        let counts = confusion_counts(gt, pred, classes)?;
        for (&k, &n) in &counts {
            *pooled.entry(k).or_default() += n;
        }
        reports.push(EvalReport::from_confusion(&classes.ids(), &counts)?);
    }
    let n = reports.len() as f64;
    Ok(BatchReport {
        mean_micro: reports.iter().map(|r| r.micro_iou).sum::<f64>() / n,
        mean_macro: reports.iter().map(|r| r.macro_iou).sum::<f64>() / n,
        pooled: EvalReport::from_confusion(&classes.ids(), &pooled)?,
        reports,
    })
}

/// Published results for two reference models, kept for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceMetrics {
    pub task: &'static str,
    pub micro_iou: f64,
    pub macro_iou: f64,
}

pub const REFERENCE_CADASTRE: ReferenceMetrics =
    ReferenceMetrics { task: "buildings in cadastral map scans", micro_iou: 0.990389, macro_iou: 0.89516 };

pub const REFERENCE_AERIAL: ReferenceMetrics =
    ReferenceMetrics { task: "buildings in aerial and satellite imagery", micro_iou: 0.795838, macro_iou: 0.537755 };
