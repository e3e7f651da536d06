//! Patch normalization, zoom pyramids and the 3x2 sub-patch grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GeoTransform, Georef};
use crate::raster::{ClassMask, Raster, BACKGROUND};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoomLevel {
    Close,
    Medium,
    Far,
}

impl ZoomLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            ZoomLevel::Close => "close",
            ZoomLevel::Medium => "medium",
            ZoomLevel::Far => "far",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub target_w: u32,
    pub target_h: u32,
    pub zoom_factors: BTreeMap<ZoomLevel, f64>,
    pub grid_cols: u32,
    pub grid_rows: u32,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            target_w: 3747,
            target_h: 2235,
            zoom_factors: BTreeMap::from([
                (ZoomLevel::Close, 1.0),
                (ZoomLevel::Medium, 0.5),
                (ZoomLevel::Far, 0.25),
            ]),
            grid_cols: 3,
            grid_rows: 2,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.grid_cols == 0 || self.grid_rows == 0 {
            return Err(Error::InvalidArgument("grid must have at least one cell".into()));
        }
        if self.target_w < self.grid_cols || self.target_h < self.grid_rows {
            return Err(Error::InvalidArgument(format!(
                "target {}x{} smaller than grid {}x{}",
                self.target_w, self.target_h, self.grid_cols, self.grid_rows
            )));
        }
        if let Some((z, f)) = self.zoom_factors.iter().find(|(_, &f)| !(f > 0.0 && f <= 1.0)) {
            return Err(Error::InvalidArgument(format!("zoom factor {f} for {} not in (0,1]", z.as_str())));
        }
        Ok(())
    }

    /// Dimensions at a zoom factor, rounding halves up.
    pub fn zoom_dims(&self, factor: f64) -> (u32, u32) {
        let scale = |v: u32| ((v as f64 * factor + 0.5).floor() as u32).max(1);
        (scale(self.target_w), scale(self.target_h))
    }
}

/// Grids that can be resized to new dimensions while keeping their world extent.
pub trait Resize: Sized {
    fn dims(&self) -> (u32, u32);
    fn georef(&self) -> Option<&Georef>;
    fn resize(&self, width: u32, height: u32) -> Self;
}

fn rescaled_geo(geo: Option<&Georef>, src: (u32, u32), dst: (u32, u32)) -> Option<Georef> {
    geo.map(|g| Georef::new(g.transform.rescaled(src, dst), g.crs.clone()))
}

impl Resize for Raster {
    fn dims(&self) -> (u32, u32) {
        (self.width(), self.height())
    }

    fn georef(&self) -> Option<&Georef> {
        self.geo.as_ref()
    }

    /// Bilinear resampling with pixel-center alignment.
    fn resize(&self, width: u32, height: u32) -> Self {
        let src = self.dims();
        if src == (width, height) {
            return self.clone();
        }
        let b = self.bands() as usize;
        let (sw, sh) = (src.0 as usize, src.1 as usize);
        let sx = src.0 as f64 / width as f64;
        let sy = src.1 as f64 / height as f64;
        let axis = |i: u32, scale: f64, n: usize| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            (i0, (i0 + 1).min(n - 1), s - i0 as f64)
        };
        let cols: Vec<_> = (0..width).map(|i| axis(i, sx, sw)).collect();
        let samples = self.samples();
        let mut out = Vec::with_capacity(width as usize * height as usize * b);
        for j in 0..height {
            let (y0, y1, fy) = axis(j, sy, sh);
            for &(x0, x1, fx) in &cols {
                for k in 0..b {
                    let p = |x: usize, y: usize| samples[(y * sw + x) * b + k] as f64;
                    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    out.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
                }
            }
        }
        Raster::new(width, height, self.bands(), out)
            .expect("resize keeps buffer consistent")
            .with_geo(rescaled_geo(self.geo.as_ref(), src, (width, height)))
    }
}

impl Resize for ClassMask {
    fn dims(&self) -> (u32, u32) {
        (self.width(), self.height())
    }

    fn georef(&self) -> Option<&Georef> {
        self.geo.as_ref()
    }

    /// Nearest-neighbour resampling, so labels are never blended.
    fn resize(&self, width: u32, height: u32) -> Self {
        let src = self.dims();
        if src == (width, height) {
            return self.clone();
        }
        let nearest = |i: u32, s: u32, d: u32| {
            (((i as f64 + 0.5) * s as f64 / d as f64).floor() as u32).min(s - 1)
        };
        let cols: Vec<u32> = (0..width).map(|i| nearest(i, src.0, width)).collect();
        let mut labels = Vec::with_capacity(width as usize * height as usize);
        for j in 0..height {
            let sr = nearest(j, src.1, height);
            labels.extend(cols.iter().map(|&sc| self.get(sc, sr)));
        }
        ClassMask::new(width, height, labels, self.classes().clone())
            .expect("labels come from a valid mask")
            .with_geo(rescaled_geo(self.geo.as_ref(), src, (width, height)))
    }
}

/// Resizes to the uniform patch size in `spec`, preserving world extent.
pub fn normalize_patch<P: Resize>(src: &P, spec: &PatchSpec) -> P {
    src.resize(spec.target_w, spec.target_h)
}

/// One resized copy per zoom level, each spanning the same world extent.
pub fn build_zoom_pyramid<P: Resize + Clone>(patch: &P, spec: &PatchSpec) -> BTreeMap<ZoomLevel, P> {
    let (w, h) = patch.dims();
    spec.zoom_factors
        .iter()
        .map(|(&zoom, &factor)| {
            let dims = ((w as f64 * factor + 0.5).floor().max(1.0) as u32, (h as f64 * factor + 0.5).floor().max(1.0) as u32);
            let level = if dims == (w, h) { patch.clone() } else { patch.resize(dims.0, dims.1) };
            (zoom, level)
        })
        .collect()
}

/// Half-open pixel window `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelWindow {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelWindow {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn contains(&self, col: u32, row: u32) -> bool {
        col >= self.x0 && col < self.x1 && row >= self.y0 && row < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubPatch {
    pub parent_id: String,
    /// `(col, row)` in the sub-patch grid.
    pub index: (u32, u32),
    pub pixel_window: PixelWindow,
    pub geo: Option<GeoTransform<f64>>,
    pub contains_building: bool,
}

impl SubPatch {
    pub fn id(&self) -> String {
        format!("{}-c{}r{}", self.parent_id, self.index.0, self.index.1)
    }
}

/// Window of grid cell `(col, row)`: base tiles of `floor(w/cols) x floor(h/rows)`
/// with the last column and row absorbing the remainder.
pub fn grid_window(width: u32, height: u32, spec: &PatchSpec, col: u32, row: u32) -> PixelWindow {
    let tw = width / spec.grid_cols;
    let th = height / spec.grid_rows;
    PixelWindow {
        x0: col * tw,
        y0: row * th,
        x1: if col + 1 == spec.grid_cols { width } else { (col + 1) * tw },
        y1: if row + 1 == spec.grid_rows { height } else { (row + 1) * th },
    }
}

/// Splits a patch into the `grid_cols x grid_rows` sub-patches (row-major
/// order), flagging those whose annotation window holds any house pixel.
pub fn split_six<P: Resize>(
    parent_id: &str,
    patch: &P,
    annotation: &ClassMask,
    spec: &PatchSpec,
) -> Result<Vec<SubPatch>> {
    let (w, h) = patch.dims();
    if (annotation.width(), annotation.height()) != (w, h) {
        return Err(Error::DimensionMismatch {
            left_w: w,
            left_h: h,
            right_w: annotation.width(),
            right_h: annotation.height(),
        });
    }
    if let (Some(p), Some(a)) = (patch.georef(), annotation.geo.as_ref()) {
        let offset = p.transform.max_corner_offset(&a.transform, w, h);
        if offset > 1e-6 {
            return Err(Error::GeoMismatch { offset_m: offset });
        }
    }
    let mut out = Vec::with_capacity((spec.grid_cols * spec.grid_rows) as usize);
    for row in 0..spec.grid_rows {
        for col in 0..spec.grid_cols {
            let win = grid_window(w, h, spec, col, row);
            let contains_building = (win.y0..win.y1)
                .any(|r| (win.x0..win.x1).any(|c| annotation.get(c, r) != BACKGROUND));
            out.push(SubPatch {
                parent_id: parent_id.to_string(),
                index: (col, row),
                pixel_window: win,
                geo: patch.georef().map(|g| g.transform.windowed(win.x0, win.y0)),
                contains_building,
            });
        }
    }
    Ok(out)
}
