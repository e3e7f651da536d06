use std::collections::BTreeMap;

use cadelta_core::eval::{evaluate, evaluate_batch};
use cadelta_core::raster::{ClassMask, ClassTable};
use cadelta_core::{Error, ExactRatio};
use num_traits::{FromPrimitive, One};
use proptest::prelude::*;

/// (intersection, union) per class from a direct pixel scan.
fn scan(gt: &[u8], pred: &[u8], classes: &[u8]) -> BTreeMap<u8, (u64, u64)> {
    classes
        .iter()
        .map(|&c| {
            let i = gt.iter().zip(pred).filter(|(&g, &p)| g == c && p == c).count() as u64;
            let u = gt.iter().zip(pred).filter(|(&g, &p)| g == c || p == c).count() as u64;
            (c, (i, u))
        })
        .collect()
}

fn r(n: u64, d: u64) -> ExactRatio {
    ExactRatio::from_u64(n).unwrap() / ExactRatio::from_u64(d).unwrap()
}

fn pair(k: u8) -> impl Strategy<Value = (u32, u32, Vec<u8>, Vec<u8>)> {
    (1u32..24, 1u32..24).prop_flat_map(move |(w, h)| {
        let n = (w * h) as usize;
        (Just(w), Just(h), prop::collection::vec(0..k, n), prop::collection::vec(0..k, n))
    })
}

fn masks(w: u32, h: u32, g: Vec<u8>, p: Vec<u8>, table: &ClassTable) -> (ClassMask, ClassMask) {
    (ClassMask::new(w, h, g, table.clone()).unwrap(), ClassMask::new(w, h, p, table.clone()).unwrap())
}

proptest! {
    #[test]
    fn counts_match_a_pixel_scan((w, h, g, p) in pair(3)) {
        let table = ClassTable::cadastre();
        let (gt, pred) = masks(w, h, g.clone(), p.clone(), &table);
        let report = evaluate(&gt, &pred, &table).unwrap();
        let want = scan(&g, &p, &[0, 1, 2]);
        for (c, (i, u)) in &want {
            prop_assert_eq!((report.per_class[c].intersection, report.per_class[c].union), (*i, *u));
        }
        let (si, su) = want.values().fold((0, 0), |a, v| (a.0 + v.0, a.1 + v.1));
        prop_assert_eq!(report.micro::<ExactRatio>(), r(si, su));
        let confusion_total: u64 = report.confusion.iter().map(|e| e.count).sum();
        prop_assert_eq!(confusion_total, (w * h) as u64);
    }

    #[test]
    fn iou_is_symmetric_in_its_arguments((w, h, g, p) in pair(3)) {
        let table = ClassTable::cadastre();
        let (gt, pred) = masks(w, h, g, p, &table);
        let ab = evaluate(&gt, &pred, &table).unwrap();
        let ba = evaluate(&pred, &gt, &table).unwrap();
        prop_assert_eq!(ab.micro::<ExactRatio>(), ba.micro::<ExactRatio>());
        prop_assert_eq!(ab.macro_avg::<ExactRatio>(), ba.macro_avg::<ExactRatio>());
        for e in &ab.confusion {
            prop_assert_eq!(ba.confusion_count(e.pred, e.gt), e.count);
        }
    }

    #[test]
    fn identical_masks_score_one((w, h, g, _p) in pair(3)) {
        let table = ClassTable::cadastre();
        let (gt, pred) = masks(w, h, g.clone(), g, &table);
        let report = evaluate(&gt, &pred, &table).unwrap();
        prop_assert!(report.micro::<ExactRatio>().is_one());
        prop_assert!(report.macro_avg::<ExactRatio>().is_one());
        prop_assert!(report.accuracy::<ExactRatio>().is_one());
    }

    #[test]
    fn pooled_batch_equals_one_big_scan(pairs in prop::collection::vec(pair(2), 1..5)) {
        let table = ClassTable::binary();
        let (mut all_g, mut all_p) = (Vec::new(), Vec::new());
        let masks: Vec<_> = pairs
            .into_iter()
            .map(|(w, h, g, p)| {
                all_g.extend_from_slice(&g);
                all_p.extend_from_slice(&p);
                masks(w, h, g, p, &table)
            })
            .collect();
        let batch = evaluate_batch(&masks, &table).unwrap();
        let want = scan(&all_g, &all_p, &[0, 1]);
        for (c, (i, u)) in &want {
            prop_assert_eq!((batch.pooled.per_class[c].intersection, batch.pooled.per_class[c].union), (*i, *u));
        }
        let mean: f64 = batch.reports.iter().map(|r| r.micro_iou).sum::<f64>() / batch.reports.len() as f64;
        prop_assert!((batch.mean_micro - mean).abs() < 1e-12);
    }
}

#[test]
fn macro_skips_classes_absent_from_both_masks() {
    let table = ClassTable::cadastre();
    let (gt, pred) = masks(2, 1, vec![0, 1], vec![0, 1], &table);
    let report = evaluate(&gt, &pred, &table).unwrap();
    assert_eq!(report.per_class[&2].iou, None);
    assert_eq!(report.macro_iou, 1.0);
}

#[test]
fn batch_errors() {
    let table = ClassTable::binary();
    assert!(matches!(evaluate_batch(&[], &table), Err(Error::EmptyBatch)));
    let a = ClassMask::empty(2, 2, table.clone()).unwrap();
    let b = ClassMask::empty(3, 2, table.clone()).unwrap();
    assert!(matches!(evaluate(&a, &b, &table), Err(Error::DimensionMismatch { .. })));
}
