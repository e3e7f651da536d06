use cadelta_core::geo::{CrsTag, GeoTransform, Georef};
use cadelta_core::raster::{ClassMask, ClassTable};
use cadelta_core::vectorize::{layer_to_geojson, rasterize, read_layer_geojson, trace_footprints, Epoch};
use cadelta_core::{Error, FootprintLayer64};
use proptest::prelude::*;

fn crs() -> CrsTag {
    CrsTag::metric("EPSG:31256").unwrap()
}

fn mask_strategy() -> impl Strategy<Value = (u32, u32, Vec<u8>)> {
    (1u32..20, 1u32..20).prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0u8..3, (w * h) as usize)))
}

proptest! {
    #[test]
    fn world_pixel_round_trip(
        a in 0.1f64..2.0, b in -0.3f64..0.3, d in -0.3f64..0.3, e in -2.0f64..-0.1,
        c in -1e5f64..1e5, f in -1e5f64..1e5, col in -50.0f64..500.0, row in -50.0f64..500.0,
    ) {
        let t = GeoTransform::new(a, b, c, d, e, f);
        prop_assume!(t.is_invertible());
        let (x, y) = t.pixel_to_world(col, row);
        let (c2, r2) = t.world_to_pixel(x, y).unwrap();
        prop_assert!((c2 - col).abs() < 1e-6 && (r2 - row).abs() < 1e-6);
    }

    #[test]
    fn geojson_file_round_trip((w, h, labels) in mask_strategy(), px in 0.1f64..2.0) {
        let geo = Georef::new(GeoTransform::north_up(px, 4000.0, 9000.0), crs());
        let table = ClassTable::cadastre();
        let mask = ClassMask::new(w, h, labels, table.clone()).unwrap().with_geo(Some(geo.clone()));
        let layer: FootprintLayer64 = trace_footprints(&mask, Epoch::Present).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("layer.geojson");
        std::fs::write(&path, serde_json::to_vec(&layer_to_geojson(&layer)).unwrap()).unwrap();
        let back = read_layer_geojson(&path, Epoch::Present).unwrap();
        prop_assert_eq!(back.footprints.len(), layer.footprints.len());
        prop_assert_eq!(&back.crs, &layer.crs);
        for (a, b) in back.footprints.iter().zip(&layer.footprints) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.class_id, b.class_id);
            prop_assert_eq!(&a.exterior, &b.exterior);
            prop_assert_eq!(&a.holes, &b.holes);
        }
        let again = rasterize(&back, &geo, w, h, &table).unwrap();
        prop_assert_eq!(again.labels(), mask.labels());
    }
}

#[test]
fn world_file_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sheet.pgw");
    let t = GeoTransform::new(0.5, 0.01, 100.25, -0.02, -0.5, 200.75);
    t.write_world_file(&path).unwrap();
    assert_eq!(GeoTransform::read_world_file(&path).unwrap(), t);
}

#[test]
fn unreadable_inputs_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.pgw");
    assert!(matches!(GeoTransform::read_world_file(&missing), Err(Error::FileNotFound(_))));
    let bad = dir.path().join("bad.pgw");
    std::fs::write(&bad, "1\n0\n0\n").unwrap();
    assert!(matches!(GeoTransform::read_world_file(&bad), Err(Error::WorldFileMalformed { .. })));
    let gj = dir.path().join("bad.geojson");
    std::fs::write(&gj, "{\"type\": \"Point\"}").unwrap();
    assert!(read_layer_geojson(&gj, Epoch::Historical).is_err());
}

#[test]
fn degree_crs_cannot_be_vectorized() {
    let geo = Georef::new(GeoTransform::north_up(0.001, 15.0, 47.0), CrsTag::new("EPSG:4326", cadelta_core::geo::LinearUnit::Degree).unwrap());
    let mask = ClassMask::new(1, 1, vec![1], ClassTable::cadastre()).unwrap().with_geo(Some(geo));
    assert!(matches!(trace_footprints::<f64>(&mask, Epoch::Historical), Err(Error::NonMetricCrs(_))));
}
