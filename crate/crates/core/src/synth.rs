//! Synthetic cadastral sheets with known ground truth.
//!
//! A scene is a beige page with random hatching lines and non-overlapping
//! red (stone) and yellow (wooden) building rectangles, plus per-channel
//! Gaussian colour noise. A matching present-day mask drops a chosen subset
//! of buildings and is shifted by a small offset.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{CrsTag, GeoTransform, Georef};
use crate::raster::{ClassMask, ClassTable, Raster, STONE_HOUSE, WOODEN_HOUSE};

pub const PAGE_COLOR: [u8; 3] = [245, 235, 210];
pub const STONE_COLOR: [u8; 3] = [200, 40, 40];
pub const WOOD_COLOR: [u8; 3] = [230, 200, 60];
pub const HATCH_COLOR: [u8; 3] = [120, 110, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub pixel_size_m: f64,
    /// World coordinates of the outer upper-left corner.
    pub origin: [f64; 2],
    pub crs: String,
    pub buildings: usize,
    pub removed: usize,
    pub min_side_px: u32,
    pub max_side_px: u32,
    /// Minimum free space between buildings.
    pub gap_px: u32,
    pub hatching_lines: usize,
    /// Standard deviation of the colour noise in 8-bit units.
    pub jitter_sigma: f64,
    /// Offset applied to the present-day mask, in pixels.
    pub present_shift_px: [i32; 2],
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            seed: 7,
            width: 800,
            height: 600,
            pixel_size_m: 0.25,
            origin: [5000.0, 200_000.0],
            crs: "EPSG:31256".into(),
            buildings: 12,
            removed: 4,
            min_side_px: 32,
            max_side_px: 80,
            gap_px: 40,
            hatching_lines: 25,
            jitter_sigma: 8.0,
            present_shift_px: [3, -2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBuilding {
    /// Pixel rectangle `[x0, y0, x1, y1)`.
    pub rect: [u32; 4],
    pub class_id: u8,
    pub removed: bool,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub map: Raster,
    pub truth: ClassMask,
    pub present: ClassMask,
    pub buildings: Vec<SynthBuilding>,
}

impl SynthScene {
    pub fn georef(&self) -> &Georef {
        self.truth.geo.as_ref().expect("synthetic scenes are georeferenced")
    }
}

fn draw_line(img: &mut Raster, from: (f64, f64), to: (f64, f64)) {
    let steps = (to.0 - from.0).abs().max((to.1 - from.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (from.0 + t * (to.0 - from.0)).round();
        let y = (from.1 + t * (to.1 - from.1)).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.pixel_mut(x as u32, y as u32).copy_from_slice(&HATCH_COLOR);
        }
    }
}

fn place_buildings(p: &SynthParams, rng: &mut ChaCha8Rng) -> Result<Vec<SynthBuilding>> {
    let mut placed: Vec<SynthBuilding> = Vec::with_capacity(p.buildings);
    let margin = p.gap_px / 2;
    let mut attempts = 0;
    while placed.len() < p.buildings {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::InvalidArgument(format!(
                "could not place {} buildings on a {}x{} page",
                p.buildings, p.width, p.height
            )));
        }
        let bw = rng.random_range(p.min_side_px..=p.max_side_px);
        let bh = rng.random_range(p.min_side_px..=p.max_side_px);
        if bw + 2 * margin >= p.width || bh + 2 * margin >= p.height {
            continue;
        }
        let x0 = rng.random_range(margin..p.width - bw - margin);
        let y0 = rng.random_range(margin..p.height - bh - margin);
        let rect = [x0, y0, x0 + bw, y0 + bh];
        let clear = placed.iter().all(|b| {
            rect[0] >= b.rect[2] + p.gap_px
                || b.rect[0] >= rect[2] + p.gap_px
                || rect[1] >= b.rect[3] + p.gap_px
                || b.rect[1] >= rect[3] + p.gap_px
        });
        if clear {
            let class_id = if rng.random_bool(0.5) { STONE_HOUSE } else { WOODEN_HOUSE };
            placed.push(SynthBuilding { rect, class_id, removed: false });
        }
    }
    Ok(placed)
}

pub fn generate(p: &SynthParams) -> Result<SynthScene> {
    if p.removed > p.buildings {
        return Err(Error::InvalidArgument("cannot remove more buildings than are drawn".into()));
    }
    if p.min_side_px == 0 || p.min_side_px > p.max_side_px {
        return Err(Error::InvalidArgument("building side range is empty".into()));
    }
    if !(p.pixel_size_m > 0.0) {
        return Err(Error::InvalidArgument("pixel_size_m must be > 0".into()));
    }
    let noise = Normal::new(0.0, p.jitter_sigma.max(0.0))
        .map_err(|e| Error::InvalidArgument(format!("jitter_sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let georef = Georef::new(
        GeoTransform::north_up_from_corner(p.pixel_size_m, p.origin[0], p.origin[1]),
        CrsTag::metric(p.crs.clone())?,
    );

    let mut map = Raster::filled(p.width, p.height, &PAGE_COLOR)?.with_geo(Some(georef.clone()));
    let (w, h) = (p.width as f64, p.height as f64);
    for _ in 0..p.hatching_lines {
        let from = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        let to = (rng.random_range(0.0..w), rng.random_range(0.0..h));
        draw_line(&mut map, from, to);
    }

    let mut buildings = place_buildings(p, &mut rng)?;
    for i in sample(&mut rng, buildings.len(), p.removed) {
        buildings[i].removed = true;
    }
    let mut truth = ClassMask::empty(p.width, p.height, ClassTable::cadastre())?.with_geo(Some(georef.clone()));
    let mut present = truth.clone();
    for b in &buildings {
        let color = if b.class_id == STONE_HOUSE { STONE_COLOR } else { WOOD_COLOR };
        for y in b.rect[1]..b.rect[3] {
            for x in b.rect[0]..b.rect[2] {
                map.pixel_mut(x, y).copy_from_slice(&color);
                truth.set(x, y, b.class_id);
                if !b.removed {
                    let (sx, sy) = (x as i64 + p.present_shift_px[0] as i64, y as i64 + p.present_shift_px[1] as i64);
                    if sx >= 0 && sy >= 0 && sx < p.width as i64 && sy < p.height as i64 {
                        present.set(sx as u32, sy as u32, b.class_id);
                    }
                }
            }
        }
    }
    if p.jitter_sigma > 0.0 {
        for v in map.samples_mut() {
            *v = (*v as f64 + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(SynthScene { map, truth, present, buildings })
}
