use cadelta_core::geo::{CrsTag, GeoTransform, Georef};
use cadelta_core::patching::{build_zoom_pyramid, split_six, PatchSpec, ZoomLevel};
use cadelta_core::raster::{ClassMask, ClassTable};
use cadelta_core::split::{make_split, verify_split, Split, SplitItem};
use proptest::prelude::*;

fn small_spec() -> PatchSpec {
    PatchSpec { target_w: 61, target_h: 37, ..PatchSpec::default() }
}

proptest! {
    #[test]
    fn sub_patches_tile_the_sheet_and_feed_the_splitter(
        houses in prop::collection::vec((0u32..61, 0u32..37), 0..6),
        seed in any::<u64>(),
    ) {
        let spec = small_spec();
        let geo = Georef::new(GeoTransform::north_up(0.5, 100.25, 900.75), CrsTag::metric("EPSG:31256").unwrap());
        let mut ann = ClassMask::empty(61, 37, ClassTable::cadastre()).unwrap().with_geo(Some(geo));
        for &(c, r) in &houses {
            ann.set(c, r, 1);
        }
        let subs = split_six("s", &ann, &ann, &spec).unwrap();
        prop_assert_eq!(subs.len(), 6);
        let mut hits = vec![0u8; 61 * 37];
        for s in &subs {
            let w = s.pixel_window;
            for r in w.y0..w.y1 {
                for c in w.x0..w.x1 {
                    hits[(r * 61 + c) as usize] += 1;
                }
            }
            let has = houses.iter().any(|&(c, r)| w.contains(c, r));
            prop_assert_eq!(s.contains_building, has);
        }
        prop_assert!(hits.iter().all(|&n| n == 1));

        let items: Vec<SplitItem> = subs.iter().map(SplitItem::from).collect();
        let m = make_split(&items, [0.6, 0.2, 0.2], seed).unwrap();
        prop_assert!(verify_split(&m, &items).is_empty());
        for it in items.iter().filter(|i| !i.contains_building) {
            prop_assert_eq!(m.assignments[&it.id], Split::Val);
        }
    }
}

#[test]
fn pyramid_keeps_the_world_extent() {
    let spec = small_spec();
    let geo = Georef::new(GeoTransform::north_up(0.5, 100.25, 900.75), CrsTag::metric("EPSG:31256").unwrap());
    let ann = ClassMask::empty(61, 37, ClassTable::cadastre()).unwrap().with_geo(Some(geo.clone()));
    let pyramid = build_zoom_pyramid(&ann, &spec);
    let base = geo.transform.extent_bbox(61, 37);
    for (zoom, level) in &pyramid {
        let bbox = level.transform().unwrap().extent_bbox(level.width(), level.height());
        for k in 0..4 {
            assert!((bbox[k] - base[k]).abs() < 1e-6, "{zoom:?}: {bbox:?} vs {base:?}");
        }
    }
    assert_eq!((pyramid[&ZoomLevel::Medium].width(), pyramid[&ZoomLevel::Medium].height()), (31, 19));
}
