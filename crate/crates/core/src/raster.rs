//! In-memory rasters: 8-bit imagery and per-pixel class masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GeoTransform, Georef};

pub const BACKGROUND: u8 = 0;
pub const STONE_HOUSE: u8 = 1;
pub const WOODEN_HOUSE: u8 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u8,
    pub name: String,
    /// Display color used when a mask is rendered.
    pub color: [u8; 3],
}

/// The set of class ids a mask may contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTable {
    pub classes: Vec<ClassEntry>,
}

impl ClassTable {
    pub fn new(classes: Vec<ClassEntry>) -> Result<Self> {
        let mut seen = [false; 256];
        for c in &classes {
            if std::mem::replace(&mut seen[c.id as usize], true) {
                return Err(Error::DuplicateId(format!("class {}", c.id)));
            }
        }
        if !seen[BACKGROUND as usize] {
            return Err(Error::InvalidArgument("class table must contain background (0)".into()));
        }
        Ok(Self { classes })
    }

    /// Background, stone house and wooden house.
    pub fn cadastre() -> Self {
        Self {
            classes: vec![
                ClassEntry { id: BACKGROUND, name: "background".into(), color: [0, 0, 0] },
                ClassEntry { id: STONE_HOUSE, name: "stone_house".into(), color: [220, 40, 40] },
                ClassEntry { id: WOODEN_HOUSE, name: "wooden_house".into(), color: [235, 200, 50] },
            ],
        }
    }

    /// Background plus a single house class.
    pub fn binary() -> Self {
        Self {
            classes: vec![
                ClassEntry { id: BACKGROUND, name: "background".into(), color: [0, 0, 0] },
                ClassEntry { id: 1, name: "house".into(), color: [255, 255, 255] },
            ],
        }
    }

    /// Table with the given ids and generic names.
    pub fn with_ids(ids: &[u8]) -> Result<Self> {
        Self::new(
            ids.iter()
                .map(|&id| ClassEntry { id, name: format!("class_{id}"), color: palette_color(id) })
                .collect(),
        )
    }

    pub fn contains(&self, id: u8) -> bool {
        self.classes.iter().any(|c| c.id == id)
    }

    pub fn ids(&self) -> Vec<u8> {
        let mut ids: Vec<u8> = self.classes.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn color(&self, id: u8) -> [u8; 3] {
        self.classes
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.color)
            .unwrap_or_else(|| palette_color(id))
    }

    /// First label in `labels` not present in the table.
    pub fn first_unknown(&self, labels: &[u8]) -> Option<u8> {
        let mut known = [false; 256];
        for c in &self.classes {
            known[c.id as usize] = true;
        }
        labels.iter().copied().find(|&l| !known[l as usize])
    }
}

impl Default for ClassTable {
    fn default() -> Self {
        Self::cadastre()
    }
}

fn palette_color(id: u8) -> [u8; 3] {
    match id {
        0 => [0, 0, 0],
        1 => [220, 40, 40],
        2 => [235, 200, 50],
        n => {
            let h = (n as u32).wrapping_mul(2_654_435_761);
            [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
        }
    }
}

/// 8-bit raster with 1, 3 or 4 interleaved bands, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    bands: u8,
    samples: Vec<u8>,
    pub geo: Option<Georef>,
}

impl Raster {
    pub fn new(width: u32, height: u32, bands: u8, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("raster dimensions must be at least 1x1".into()));
        }
        if !matches!(bands, 1 | 3 | 4) {
            return Err(Error::BandCount { expected: "1, 3 or 4".into(), actual: bands });
        }
        let expected = width as usize * height as usize * bands as usize;
        if samples.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "sample buffer has {} bytes, expected {expected}",
                samples.len()
            )));
        }
        Ok(Self { width, height, bands, samples, geo: None })
    }

    pub fn filled(width: u32, height: u32, pixel: &[u8]) -> Result<Self> {
        let samples = pixel.repeat(width as usize * height as usize);
        Self::new(width, height, pixel.len() as u8, samples)
    }

    pub fn with_geo(mut self, geo: Option<Georef>) -> Self {
        self.geo = geo;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bands(&self) -> u8 {
        self.bands
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [u8] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    pub fn pixel(&self, col: u32, row: u32) -> &[u8] {
        let b = self.bands as usize;
        let i = (row as usize * self.width as usize + col as usize) * b;
        &self.samples[i..i + b]
    }

    pub fn pixel_mut(&mut self, col: u32, row: u32) -> &mut [u8] {
        let b = self.bands as usize;
        let i = (row as usize * self.width as usize + col as usize) * b;
        &mut self.samples[i..i + b]
    }

    pub fn crop(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        let (w, h) = check_window(self.width, self.height, x0, y0, x1, y1)?;
        let b = self.bands as usize;
        let mut samples = Vec::with_capacity(w as usize * h as usize * b);
        for row in y0..y1 {
            let start = (row as usize * self.width as usize + x0 as usize) * b;
            samples.extend_from_slice(&self.samples[start..start + w as usize * b]);
        }
        let geo = self.geo.as_ref().map(|g| Georef::new(g.transform.windowed(x0, y0), g.crs.clone()));
        Ok(Self::new(w, h, self.bands, samples)?.with_geo(geo))
    }

    /// Nearest-neighbour resample onto another grid of the same CRS.
    /// Target pixels falling outside the source are zero.
    pub fn resample_nearest(&self, target: &Georef, width: u32, height: u32) -> Result<Self> {
        let src = self.geo.as_ref().ok_or(Error::MissingGeoreference)?;
        src.crs.ensure_same(&target.crs)?;
        let b = self.bands as usize;
        let mut out = vec![0u8; width as usize * height as usize * b];
        for_each_nearest_source(&src.transform, self.width, self.height, &target.transform, width, height, |dst, srci| {
            out[dst * b..dst * b + b].copy_from_slice(&self.samples[srci * b..srci * b + b]);
        })?;
        Ok(Self::new(width, height, self.bands, out)?.with_geo(Some(target.clone())))
    }
}

/// Per-pixel class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMask {
    width: u32,
    height: u32,
    labels: Vec<u8>,
    classes: ClassTable,
    pub geo: Option<Georef>,
}

impl ClassMask {
    pub fn new(width: u32, height: u32, labels: Vec<u8>, classes: ClassTable) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("mask dimensions must be at least 1x1".into()));
        }
        if labels.len() != width as usize * height as usize {
            return Err(Error::InvalidArgument(format!(
                "label buffer has {} entries, expected {}",
                labels.len(),
                width as usize * height as usize
            )));
        }
        if let Some(bad) = classes.first_unknown(&labels) {
            return Err(Error::LabelOutOfTable(bad));
        }
        Ok(Self { width, height, labels, classes, geo: None })
    }

    pub fn empty(width: u32, height: u32, classes: ClassTable) -> Result<Self> {
        Self::new(width, height, vec![BACKGROUND; width as usize * height as usize], classes)
    }

    pub fn with_geo(mut self, geo: Option<Georef>) -> Self {
        self.geo = geo;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn classes(&self) -> &ClassTable {
        &self.classes
    }

    pub fn get(&self, col: u32, row: u32) -> u8 {
        self.labels[row as usize * self.width as usize + col as usize]
    }

    /// Sets a label; the caller guarantees it is in the class table.
    pub fn set(&mut self, col: u32, row: u32, label: u8) {
        debug_assert!(self.classes.contains(label));
        self.labels[row as usize * self.width as usize + col as usize] = label;
    }

    pub fn transform(&self) -> Option<&GeoTransform<f64>> {
        self.geo.as_ref().map(|g| &g.transform)
    }

    pub fn is_empty(&self) -> bool {
        self.labels.iter().all(|&l| l == BACKGROUND)
    }

    pub fn crop(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<Self> {
        let (w, h) = check_window(self.width, self.height, x0, y0, x1, y1)?;
        let mut labels = Vec::with_capacity(w as usize * h as usize);
        for row in y0..y1 {
            let start = row as usize * self.width as usize + x0 as usize;
            labels.extend_from_slice(&self.labels[start..start + w as usize]);
        }
        let geo = self.geo.as_ref().map(|g| Georef::new(g.transform.windowed(x0, y0), g.crs.clone()));
        Ok(Self { width: w, height: h, labels, classes: self.classes.clone(), geo })
    }

    /// Nearest-neighbour resample; target pixels outside the source become background.
    pub fn resample_nearest(&self, target: &Georef, width: u32, height: u32) -> Result<Self> {
        let src = self.geo.as_ref().ok_or(Error::MissingGeoreference)?;
        src.crs.ensure_same(&target.crs)?;
        let mut out = vec![BACKGROUND; width as usize * height as usize];
        for_each_nearest_source(&src.transform, self.width, self.height, &target.transform, width, height, |dst, srci| {
            out[dst] = self.labels[srci];
        })?;
        Ok(Self::new(width, height, out, self.classes.clone())?.with_geo(Some(target.clone())))
    }

    /// Same labels under a different class table.
    pub fn with_classes(self, classes: ClassTable) -> Result<Self> {
        Self::new(self.width, self.height, self.labels, classes).map(|m| m.with_geo(self.geo))
    }
}

fn check_window(w: u32, h: u32, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<(u32, u32)> {
    if x0 >= x1 || y0 >= y1 || x1 > w || y1 > h {
        return Err(Error::InvalidArgument(format!(
            "window [{x0},{y0},{x1},{y1}) invalid for {w}x{h} raster"
        )));
    }
    Ok((x1 - x0, y1 - y0))
}

/// Calls `f(dst_index, src_index)` for every target pixel whose center lies
/// nearest to an in-bounds source pixel center.
fn for_each_nearest_source(
    src: &GeoTransform<f64>,
    src_w: u32,
    src_h: u32,
    dst: &GeoTransform<f64>,
    dst_w: u32,
    dst_h: u32,
    mut f: impl FnMut(usize, usize),
) -> Result<()> {
    // Composite affine map from target pixel to source pixel.
    let (ox, oy) = src.world_to_pixel(dst.c, dst.f)?;
    let (cx, cy) = src.world_to_pixel(dst.c + dst.a, dst.f + dst.d)?;
    let (rx, ry) = src.world_to_pixel(dst.c + dst.b, dst.f + dst.e)?;
    let (dcx, dcy) = (cx - ox, cy - oy);
    let (drx, dry) = (rx - ox, ry - oy);
    let (sw, sh) = (src_w as f64, src_h as f64);
    for row in 0..dst_h {
        for col in 0..dst_w {
            let (c, r) = (col as f64, row as f64);
            let sc = (ox + dcx * c + drx * r + 0.5).floor();
            let sr = (oy + dcy * c + dry * r + 0.5).floor();
            if sc >= 0.0 && sr >= 0.0 && sc < sw && sr < sh {
                f(
                    row as usize * dst_w as usize + col as usize,
                    sr as usize * src_w as usize + sc as usize,
                );
            }
        }
    }
    Ok(())
}
