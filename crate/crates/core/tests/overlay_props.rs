use std::collections::BTreeSet;

use cadelta_core::geo::{CrsTag, GeoTransform};
use cadelta_core::morphology::BinaryMask;
use cadelta_core::overlay::{
    diff_raster, negative_profile, overlay_grid, recompute, DiffBackground, OverlayParams, SiteStatus,
    DIFF_FALSE_NEGATIVE, DIFF_FALSE_POSITIVE, DIFF_TRUE_POSITIVE,
};
use cadelta_core::vectorize::{for_each_covered_pixel, Epoch, Footprint, FootprintLayer, Ring};
use cadelta_core::Error;
use proptest::prelude::*;

fn rect(id: String, x: f64, y: f64, w: f64, h: f64) -> Footprint {
    Footprint::new(id, Ring::new(vec![[x, y], [x + w, y], [x + w, y + h], [x, y + h]]), vec![], 1)
}

fn layer(epoch: Epoch, fps: Vec<Footprint>) -> FootprintLayer {
    let mut l = FootprintLayer::new(epoch, CrsTag::metric("EPSG:31256").unwrap());
    l.footprints = fps;
    l
}

fn rects(prefix: &'static str, max: usize) -> impl Strategy<Value = Vec<Footprint>> {
    prop::collection::vec((0.0f64..30.0, 0.0f64..30.0, 2.0f64..10.0, 2.0f64..10.0), 0..=max).prop_map(move |v| {
        v.into_iter().enumerate().map(|(k, (x, y, w, h))| rect(format!("{prefix}{k}"), x, y, w, h)).collect()
    })
}

fn covered(fp: &Footprint, t: &GeoTransform, w: u32, h: u32) -> BTreeSet<(u32, u32)> {
    let mut out = BTreeSet::new();
    for_each_covered_pixel(fp, t, w, h, |c, r| {
        out.insert((c, r));
    })
    .unwrap();
    out
}

fn params(buffer: f64) -> OverlayParams {
    OverlayParams { buffer_m: buffer, min_site_area_m2: 1.0, uncovered_ratio_threshold: 0.3, working_resolution_m: 0.5 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sites_lie_inside_their_sources(hist in rects("h", 3), present in rects("p", 3), buffer in 0.0f64..3.0) {
        let (hist, present) = (layer(Epoch::Historical, hist), layer(Epoch::Present, present));
        let p = params(buffer);
        let sites = negative_profile(&hist, &present, &p).unwrap();
        let Some(grid) = overlay_grid(&hist, &present, &p).unwrap() else {
            prop_assert!(sites.is_empty());
            return Ok(());
        };
        let t = &grid.georef.transform;
        let ids: BTreeSet<&str> = sites.iter().map(|s| s.site_id.as_str()).collect();
        prop_assert_eq!(ids.len(), sites.len());
        for s in &sites {
            let px = covered(&s.geometry, t, grid.width, grid.height);
            let mut sources = BTreeSet::new();
            for id in &s.source_historical_ids {
                let fp = hist.footprints.iter().find(|f| &f.id == id).unwrap();
                sources.extend(covered(fp, t, grid.width, grid.height));
            }
            prop_assert!(px.is_subset(&sources));
            prop_assert!(px.iter().all(|&(c, r)| grid.negative.get(c, r)));
            prop_assert!(s.uncovered_ratio >= p.uncovered_ratio_threshold);
            prop_assert!(s.area_m2 >= p.min_site_area_m2);
        }
    }

    #[test]
    fn recompute_with_same_params_keeps_every_review(hist in rects("h", 3), present in rects("p", 2)) {
        let (hist, present) = (layer(Epoch::Historical, hist), layer(Epoch::Present, present));
        let p = params(1.0);
        let mut sites = negative_profile(&hist, &present, &p).unwrap();
        for (k, s) in sites.iter_mut().enumerate() {
            if k % 2 == 0 {
                s.status = SiteStatus::Confirmed;
                s.notes = format!("note {k}");
            }
        }
        let again = recompute(&sites, &[], Some(&hist), Some(&present), &p).unwrap();
        prop_assert_eq!(&again.candidates, &sites);
        prop_assert!(again.archive.is_empty());
    }

    #[test]
    fn diff_categories_partition_the_image(
        (w, h, g, p) in (1u32..30, 1u32..30).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (Just(w), Just(h), prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n))
        })
    ) {
        let gt = BinaryMask::from_bits(w, h, g);
        let pred = BinaryMask::from_bits(w, h, p);
        let out = diff_raster(&gt, &pred, DiffBackground::Black).unwrap();
        let px: Vec<&[u8]> = out.samples().chunks(4).collect();
        let count = |c: [u8; 4]| px.iter().filter(|p| **p == c).count();
        let (red, green, white, bg) = (count(DIFF_FALSE_POSITIVE), count(DIFF_FALSE_NEGATIVE), count(DIFF_TRUE_POSITIVE), count([0, 0, 0, 255]));
        prop_assert_eq!(red + green + white + bg, (w * h) as usize);
        prop_assert_eq!(white, gt.and(&pred).count());
        prop_assert_eq!(red, pred.and_not(&gt).count());
        prop_assert_eq!(green, gt.and_not(&pred).count());
    }
}

#[test]
fn recompute_needs_both_layers() {
    let hist = layer(Epoch::Historical, vec![rect("h".into(), 0.0, 0.0, 5.0, 5.0)]);
    let err = recompute(&[], &[], Some(&hist), None, &params(1.0)).unwrap_err();
    assert!(matches!(err, Error::MissingLayer(_)));
}

#[test]
fn diff_rejects_mismatched_shapes() {
    let err = diff_raster(&BinaryMask::new(2, 2), &BinaryMask::new(2, 3), DiffBackground::Transparent).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch { .. }));
}
