//! Chromatic baseline segmentation of cadastral sheets and ingestion of
//! externally produced masks.
//!
//! The cadastre colors stone buildings red and wooden buildings yellow.
//! Each [`ColorRule`] is an HSV box; the first matching rule in list order
//! labels the pixel. Per class the result is then opened, closed and
//! stripped of small 4-connected specks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Georef;
use crate::morphology::{self, BinaryMask};
use crate::raster::{ClassMask, ClassTable, Raster, BACKGROUND, STONE_HOUSE, WOODEN_HOUSE};
use crate::raster_io::{read_mask_png, world_path_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorRule {
    #[serde(rename = "class")]
    pub class_id: u8,
    /// Hue interval in degrees; `lo > hi` wraps through 0.
    pub hue: [f64; 2],
    pub sat_min: f64,
    pub val_min: f64,
}

impl ColorRule {
    pub fn validate(&self) -> Result<()> {
        if self.class_id == BACKGROUND {
            return Err(Error::InvalidArgument("color rules cannot target background".into()));
        }
        let [lo, hi] = self.hue;
        if !(0.0..=360.0).contains(&lo) || !(0.0..=360.0).contains(&hi) {
            return Err(Error::InvalidArgument(format!("hue bounds {lo},{hi} outside [0,360]")));
        }
        if !(0.0..=1.0).contains(&self.sat_min) || !(0.0..=1.0).contains(&self.val_min) {
            return Err(Error::InvalidArgument("sat_min and val_min must lie in [0,1]".into()));
        }
        Ok(())
    }

    pub fn hue_contains(&self, hue: f64) -> bool {
        let [lo, hi] = self.hue;
        if lo <= hi {
            hue >= lo && hue <= hi
        } else {
            hue >= lo || hue <= hi
        }
    }

    pub fn matches(&self, hsv: Hsv) -> bool {
        hsv.s >= self.sat_min && hsv.v >= self.val_min && self.hue_contains(hsv.h)
    }

    /// Red (stone) rule.
    pub fn red() -> Self {
        Self { class_id: STONE_HOUSE, hue: [340.0, 20.0], sat_min: 0.35, val_min: 0.25 }
    }

    /// Yellow (wood) rule.
    pub fn yellow() -> Self {
        Self { class_id: WOODEN_HOUSE, hue: [40.0, 70.0], sat_min: 0.35, val_min: 0.35 }
    }
}

pub fn default_rules() -> Vec<ColorRule> {
    vec![ColorRule::red(), ColorRule::yellow()]
}

/// Parses a JSON array of rules such as
/// `[{"class":1,"hue":[340,20],"sat_min":0.35,"val_min":0.25}]`.
pub fn parse_rules(json: &str) -> Result<Vec<ColorRule>> {
    let rules: Vec<ColorRule> = serde_json::from_str(json)?;
    for r in &rules {
        r.validate()?;
    }
    Ok(rules)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorphologyParams {
    pub open_radius: u32,
    pub close_radius: u32,
    pub min_area: u32,
}

impl MorphologyParams {
    pub const NONE: Self = Self { open_radius: 0, close_radius: 0, min_area: 0 };
}

impl Default for MorphologyParams {
    fn default() -> Self {
        Self { open_radius: 1, close_radius: 2, min_area: 25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    /// Degrees in `[0, 360)`.
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> Hsv {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    Hsv { h: h.rem_euclid(360.0), s, v: max }
}

/// Labels pixels by first-matching color rule, without any cleanup.
pub fn classify_pixels(img: &Raster, rules: &[ColorRule]) -> Result<Vec<u8>> {
    if img.bands() < 3 {
        return Err(Error::BandCount { expected: "3".into(), actual: img.bands() });
    }
    let b = img.bands() as usize;
    Ok(img
        .samples()
        .chunks_exact(b)
        .map(|p| {
            let hsv = rgb_to_hsv(p[0], p[1], p[2]);
            rules.iter().find(|r| r.matches(hsv)).map_or(BACKGROUND, |r| r.class_id)
        })
        .collect())
}

pub fn segment_chromatic(img: &Raster, rules: &[ColorRule], morph: &MorphologyParams) -> Result<ClassMask> {
    if img.bands() != 3 {
        return Err(Error::BandCount { expected: "3".into(), actual: img.bands() });
    }
    for r in rules {
        r.validate()?;
    }
    let raw = classify_pixels(img, rules)?;
    let (w, h) = (img.width(), img.height());

    let mut ids: Vec<u8> = Vec::new();
    for r in rules {
        if !ids.contains(&r.class_id) {
            ids.push(r.class_id);
        }
    }
    let cleaned: Vec<(u8, BinaryMask)> = ids
        .iter()
        .map(|&id| {
            let mut m = BinaryMask::from_bits(w, h, raw.iter().map(|&l| l == id).collect());
            if morph.open_radius > 0 {
                m = morphology::open(&m, morph.open_radius as f64);
            }
            if morph.close_radius > 0 {
                m = morphology::close(&m, morph.close_radius as f64);
            }
            (id, morphology::remove_small_components(&m, morph.min_area as usize))
        })
        .collect();

    // Closing can grow a class into its neighbour; rule order decides.
    let labels = (0..raw.len())
        .map(|i| {
            cleaned
                .iter()
                .find(|(_, m)| m.bits()[i])
                .map_or(BACKGROUND, |(id, _)| *id)
        })
        .collect();

    let mut table = ClassTable::cadastre();
    for &id in &ids {
        if !table.contains(id) {
            table.classes.push(crate::raster::ClassEntry {
                id,
                name: format!("class_{id}"),
                color: [128, 128, 128],
            });
        }
    }
    Ok(ClassMask::new(w, h, labels, table)?.with_geo(img.geo.clone()))
}

/// Loads a model-produced mask (PNG + optional `.pgw`) and checks labels and
/// georeferencing against what the project expects.
pub fn ingest_external_mask(path: &Path, classes: &ClassTable, expected: Option<&Georef>) -> Result<ClassMask> {
    let mask = read_mask_png(path, classes)?;
    let world = world_path_for(path);
    let transform = if world.exists() {
        Some(crate::geo::GeoTransform::read_world_file(&world)?)
    } else {
        None
    };
    let geo = match (expected, transform) {
        (Some(exp), Some(t)) => {
            let offset = exp.transform.max_corner_offset(&t, mask.width(), mask.height());
            if offset > 1e-6 {
                return Err(Error::GeoMismatch { offset_m: offset });
            }
            Some(Georef::new(t, exp.crs.clone()))
        }
        (Some(_), None) => return Err(Error::MissingGeoreference),
        (None, _) => None,
    };
    Ok(mask.with_geo(geo))
}
