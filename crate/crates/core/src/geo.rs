//! Affine georeferencing: the pixel/world transform, CRS tags, world files
//! and map-scale arithmetic.
//!
//! Transforms follow the world-file convention: `(c, f)` is the world
//! position of the *center* of the upper-left pixel, so pixel `(col, row)`
//! maps to
//!
//! ```text
//! X = a*col + b*row + c
//! Y = d*col + e*row + f
//! ```
//!
//! Pixel corners sit at half-integer coordinates, e.g. the outer upper-left
//! corner of the raster is pixel `(-0.5, -0.5)`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Determinants below this magnitude are treated as singular.
pub const SINGULAR_EPS: f64 = 1e-12;

const METRES_PER_INCH: f64 = 0.0254;

/// Six-coefficient affine map from pixel `(col, row)` to world `(X, Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform<T = f64> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
    pub e: T,
    pub f: T,
}

impl<T: Scalar> GeoTransform<T> {
    pub fn new(a: T, b: T, c: T, d: T, e: T, f: T) -> Self {
        Self { a, b, c, d, e, f }
    }

    /// North-up transform with square pixels of `pixel_size` and the given
    /// world position of the upper-left pixel center.
    pub fn north_up(pixel_size: T, ul_center_x: T, ul_center_y: T) -> Self {
        Self::new(pixel_size, T::zero(), ul_center_x, T::zero(), -pixel_size, ul_center_y)
    }

    /// North-up transform whose outer upper-left *corner* is at `(x0, y0)`.
    pub fn north_up_from_corner(pixel_size: T, x0: T, y0: T) -> Self {
        let half = pixel_size / T::lit(2.0);
        Self::north_up(pixel_size, x0 + half, y0 - half)
    }

    pub fn determinant(&self) -> T {
        self.a * self.e - self.b * self.d
    }

    pub fn is_invertible(&self) -> bool {
        self.determinant().abs() >= T::lit(SINGULAR_EPS)
    }

    /// Absolute area of one pixel in squared world units.
    pub fn pixel_area(&self) -> T {
        self.determinant().abs()
    }

    pub fn pixel_to_world(&self, col: T, row: T) -> (T, T) {
        (
            self.a * col + self.b * row + self.c,
            self.d * col + self.e * row + self.f,
        )
    }

    pub fn world_to_pixel(&self, x: T, y: T) -> Result<(T, T)> {
        let det = self.determinant();
        if det.abs() < T::lit(SINGULAR_EPS) {
            return Err(Error::SingularTransform {
                determinant: det.to_f64().unwrap_or(0.0),
            });
        }
        let dx = x - self.c;
        let dy = y - self.f;
        Ok((
            (self.e * dx - self.b * dy) / det,
            (self.a * dy - self.d * dx) / det,
        ))
    }

    /// World position of a pixel-grid corner, where corner `(0, 0)` is the
    /// outer upper-left corner of pixel `(0, 0)`.
    pub fn corner_to_world(&self, corner_col: T, corner_row: T) -> (T, T) {
        let half = T::lit(0.5);
        self.pixel_to_world(corner_col - half, corner_row - half)
    }

    /// The four outer corners of a `width x height` raster, clockwise from
    /// the upper-left in pixel space.
    pub fn extent_corners(&self, width: u32, height: u32) -> [(T, T); 4] {
        let w = T::from_u32(width).unwrap();
        let h = T::from_u32(height).unwrap();
        [
            self.corner_to_world(T::zero(), T::zero()),
            self.corner_to_world(w, T::zero()),
            self.corner_to_world(w, h),
            self.corner_to_world(T::zero(), h),
        ]
    }

    /// Axis-aligned world bounding box `(min_x, min_y, max_x, max_y)` of a raster.
    pub fn extent_bbox(&self, width: u32, height: u32) -> [T; 4] {
        let corners = self.extent_corners(width, height);
        let mut bbox = [corners[0].0, corners[0].1, corners[0].0, corners[0].1];
        for (x, y) in &corners[1..] {
            bbox[0] = bbox[0].min(*x);
            bbox[1] = bbox[1].min(*y);
            bbox[2] = bbox[2].max(*x);
            bbox[3] = bbox[3].max(*y);
        }
        bbox
    }

    /// Transform for the same world extent resampled from `src` to `dst` dimensions.
    pub fn rescaled(&self, src: (u32, u32), dst: (u32, u32)) -> Self {
        let sx = T::from_u32(src.0).unwrap() / T::from_u32(dst.0).unwrap();
        let sy = T::from_u32(src.1).unwrap() / T::from_u32(dst.1).unwrap();
        let (x0, y0) = self.corner_to_world(T::zero(), T::zero());
        let a = self.a * sx;
        let b = self.b * sy;
        let d = self.d * sx;
        let e = self.e * sy;
        let half = T::lit(0.5);
        Self::new(a, b, x0 + half * (a + b), d, e, y0 + half * (d + e))
    }

    /// Transform of a window whose upper-left pixel is `(col0, row0)` of this grid.
    pub fn windowed(&self, col0: u32, row0: u32) -> Self {
        let (c, f) = self.pixel_to_world(T::from_u32(col0).unwrap(), T::from_u32(row0).unwrap());
        Self { c, f, ..*self }
    }

    /// Largest distance between the outer corners of two grids of equal size.
    pub fn max_corner_offset(&self, other: &Self, width: u32, height: u32) -> T {
        self.extent_corners(width, height)
            .iter()
            .zip(other.extent_corners(width, height).iter())
            .map(|(p, q)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
            .fold(T::zero(), T::max)
    }

    pub fn cast<U: Scalar>(&self) -> GeoTransform<U> {
        let cv = |v: T| U::from(v).expect("scalar conversion");
        GeoTransform::new(cv(self.a), cv(self.b), cv(self.c), cv(self.d), cv(self.e), cv(self.f))
    }
}

impl GeoTransform<f64> {
    /// Six lines in world-file order `a, d, b, e, c, f`.
    ///
    /// Rust's shortest round-trip float formatting keeps the text lossless
    /// and in plain decimal notation.
    pub fn to_world_file(&self) -> String {
        format!(
            "{}\n{}\n{}\n{}\n{}\n{}\n",
            self.a, self.d, self.b, self.e, self.c, self.f
        )
    }

    pub fn parse_world_file(text: &str, path: &Path) -> Result<Self> {
        let malformed = |message: String| Error::WorldFileMalformed {
            path: path.to_path_buf(),
            message,
        };
        let lines: Vec<&str> = text.trim_end().lines().map(str::trim).collect();
        if lines.len() != 6 {
            return Err(malformed(format!("expected 6 lines, found {}", lines.len())));
        }
        let mut v = [0.0f64; 6];
        for (i, line) in lines.iter().enumerate() {
            v[i] = line
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| malformed(format!("line {} is not a number: {line:?}", i + 1)))?;
        }
        Ok(Self::new(v[0], v[2], v[4], v[1], v[3], v[5]))
    }

    pub fn read_world_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::parse_world_file(&text, path)
    }

    pub fn write_world_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_world_file())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearUnit {
    Metre,
    Degree,
    Foot,
    Unknown,
}

/// Opaque coordinate reference system identifier, e.g. `"EPSG:31256"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrsTag {
    pub code: String,
    pub units: LinearUnit,
}

impl CrsTag {
    pub fn new(code: impl Into<String>, units: LinearUnit) -> Result<Self> {
        let code = code.into();
        if code.trim().is_empty() {
            return Err(Error::InvalidArgument("CRS code must not be empty".into()));
        }
        Ok(Self { code, units })
    }

    pub fn metric(code: impl Into<String>) -> Result<Self> {
        Self::new(code, LinearUnit::Metre)
    }

    pub fn is_metric(&self) -> bool {
        self.units == LinearUnit::Metre
    }

    /// Layers may only be combined when their codes are equal.
    pub fn ensure_same(&self, other: &CrsTag) -> Result<()> {
        if self.code == other.code {
            Ok(())
        } else {
            Err(Error::CrsMismatch {
                left: self.code.clone(),
                right: other.code.clone(),
            })
        }
    }

    pub fn ensure_metric(&self) -> Result<()> {
        if self.is_metric() {
            Ok(())
        } else {
            Err(Error::NonMetricCrs(self.code.clone()))
        }
    }
}

impl fmt::Display for CrsTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code)
    }
}

/// Transform plus CRS attached to a raster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Georef {
    pub transform: GeoTransform<f64>,
    pub crs: CrsTag,
}

impl Georef {
    pub fn new(transform: GeoTransform<f64>, crs: CrsTag) -> Self {
        Self { transform, crs }
    }
}

/// Ground size of one scanned pixel in metres for a map at `1:scale_denominator`
/// scanned at `dpi` dots per inch.
pub fn ground_resolution<T: Scalar>(scale_denominator: T, dpi: T) -> Result<T> {
    if !(scale_denominator > T::zero()) || !(dpi > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "scale denominator and dpi must be positive (got {scale_denominator}, {dpi})"
        )));
    }
    Ok(scale_denominator * T::lit(METRES_PER_INCH) / dpi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt(v: [f64; 6]) -> GeoTransform {
        GeoTransform::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    #[test]
    fn pixel_to_world_examples() {
        assert_eq!(gt([1.0, 0.0, 10.0, 0.0, -1.0, 20.0]).pixel_to_world(0.0, 0.0), (10.0, 20.0));
        assert_eq!(
            gt([0.5, 0.0, 100.25, 0.0, -0.5, 200.75]).pixel_to_world(2.0, 4.0),
            (101.25, 198.75)
        );
        assert_eq!(gt([1.0, 0.0, 0.0, 0.0, -1.0, 0.0]).pixel_to_world(3.5, 2.5), (3.5, -2.5));
    }

    #[test]
    fn world_to_pixel_examples() {
        assert_eq!(
            gt([1.0, 0.0, 10.0, 0.0, -1.0, 20.0]).world_to_pixel(10.0, 20.0).unwrap(),
            (0.0, 0.0)
        );
        assert_eq!(
            gt([0.5, 0.0, 100.25, 0.0, -0.5, 200.75]).world_to_pixel(101.25, 198.75).unwrap(),
            (2.0, 4.0)
        );
        // swapped axes: X = row, Y = col
        assert_eq!(gt([0.0, 1.0, 0.0, 1.0, 0.0, 0.0]).world_to_pixel(5.0, 7.0).unwrap(), (7.0, 5.0));
    }

    #[test]
    fn singular_transform_rejected() {
        let err = gt([1.0, 2.0, 0.0, 2.0, 4.0, 0.0]).world_to_pixel(1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::SingularTransform { .. }));
    }

    #[test]
    fn ground_resolution_examples() {
        assert!((ground_resolution(2880.0f64, 300.0).unwrap() - 0.24384).abs() < 1e-15);
        assert!((ground_resolution(1000.0f64, 254.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((ground_resolution(1.0f64, 25.4).unwrap() - 0.001).abs() < 1e-15);
        assert!(ground_resolution(0.0, 300.0).is_err());
        assert!(ground_resolution(2880.0, -1.0).is_err());
        assert!(ground_resolution(f64::NAN, 300.0).is_err());
    }

    #[test]
    fn ground_resolution_generic_f32() {
        let r: f32 = ground_resolution(2880.0f32, 300.0f32).unwrap();
        assert!((r - 0.24384).abs() < 1e-6);
    }

    #[test]
    fn world_file_round_trip_keeps_full_precision() {
        let t = gt([0.123456789, 1e-7, 123456.789012345, -2e-9, -0.987654321, 5432109.87654321]);
        let text = t.to_world_file();
        assert_eq!(text.lines().next().unwrap(), "0.123456789");
        assert!(!text.contains('e'), "world file must use decimal notation: {text}");
        let back = GeoTransform::parse_world_file(&text, Path::new("x.pgw")).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn world_file_rejects_bad_line_counts_and_text() {
        let p = Path::new("x.pgw");
        let five = "1\n0\n0\n-1\n10\n";
        assert!(matches!(
            GeoTransform::parse_world_file(five, p),
            Err(Error::WorldFileMalformed { .. })
        ));
        let bad = "1\n0\n0\n-1\nten\n20\n";
        assert!(matches!(
            GeoTransform::parse_world_file(bad, p),
            Err(Error::WorldFileMalformed { .. })
        ));
        let crlf = "1\r\n0\r\n0\r\n-1\r\n10\r\n20\r\n";
        assert_eq!(
            GeoTransform::parse_world_file(crlf, p).unwrap(),
            gt([1.0, 0.0, 10.0, 0.0, -1.0, 20.0])
        );
    }

    #[test]
    fn rescaled_preserves_extent() {
        let t = gt([0.25, 0.0, 1000.125, 0.0, -0.25, 2000.875]);
        let r = t.rescaled((7494, 4470), (3747, 2235));
        assert_eq!(r.a, 0.5);
        assert_eq!(r.e, -0.5);
        for (p, q) in t.extent_corners(7494, 4470).iter().zip(r.extent_corners(3747, 2235).iter()) {
            assert!((p.0 - q.0).abs() < 1e-6 && (p.1 - q.1).abs() < 1e-6);
        }
    }

    #[test]
    fn crs_tag_rules() {
        assert!(CrsTag::metric("  ").is_err());
        let a = CrsTag::metric("EPSG:31256").unwrap();
        let b = CrsTag::metric("EPSG:31255").unwrap();
        assert!(a.ensure_same(&a.clone()).is_ok());
        assert!(matches!(a.ensure_same(&b), Err(Error::CrsMismatch { .. })));
        let deg = CrsTag::new("EPSG:4326", LinearUnit::Degree).unwrap();
        assert!(matches!(deg.ensure_metric(), Err(Error::NonMetricCrs(_))));
    }

    fn invertible_transform() -> impl Strategy<Value = GeoTransform> {
        (
            0.05f64..5.0,
            -0.5f64..0.5,
            -1e5f64..1e5,
            -0.5f64..0.5,
            0.05f64..5.0,
            -1e5f64..1e5,
            prop::bool::ANY,
        )
            .prop_map(|(a, b, c, d, e, f, flip)| {
                let e = if flip { -e } else { e };
                gt([a, b, c, d, e, f])
            })
            .prop_filter("well conditioned", |t| {
                t.determinant().abs() > 0.05 * t.a.abs() * t.e.abs()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn pixel_world_round_trip(t in invertible_transform(), col in 0.0f64..4096.0, row in 0.0f64..4096.0) {
            let (x, y) = t.pixel_to_world(col, row);
            let (c2, r2) = t.world_to_pixel(x, y).unwrap();
            prop_assert!((c2 - col).abs() < 1e-9 && (r2 - row).abs() < 1e-9,
                "round trip error {} {}", c2 - col, r2 - row);
        }

        #[test]
        fn ground_resolution_scale_invariant(s in 1.0f64..10000.0, d in 10.0f64..2400.0, k in 0.01f64..100.0) {
            let base = ground_resolution(s, d).unwrap();
            let scaled = ground_resolution(k * s, k * d).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
        }
    }
}
