//! Negative profiles: historical buildings without a present-day counterpart.
//!
//! All boolean work happens on a raster grid aligned to integer multiples of
//! the working resolution, so the same footprint always lands on the same
//! pixels regardless of which other geometry shares the scene.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::{CrsTag, GeoTransform, Georef};
use crate::morphology::{dilate, label_components, BinaryMask, Connectivity};
use crate::raster::{ClassMask, ClassTable, Raster};
use crate::scalar::Scalar;
use crate::vectorize::{for_each_covered_pixel, trace_footprints, Epoch, Footprint, FootprintLayer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlayParams {
    pub buffer_m: f64,
    pub min_site_area_m2: f64,
    pub uncovered_ratio_threshold: f64,
    pub working_resolution_m: f64,
}

impl Default for OverlayParams {
    fn default() -> Self {
        Self { buffer_m: 3.0, min_site_area_m2: 10.0, uncovered_ratio_threshold: 0.5, working_resolution_m: 0.25 }
    }
}

impl OverlayParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.buffer_m >= 0.0 && self.buffer_m.is_finite()) {
            return bad("buffer_m must be a finite value >= 0");
        }
        if !(self.min_site_area_m2 >= 0.0 && self.min_site_area_m2.is_finite()) {
            return bad("min_site_area_m2 must be a finite value >= 0");
        }
        if !(0.0..=1.0).contains(&self.uncovered_ratio_threshold) {
            return bad("uncovered_ratio_threshold must lie in [0, 1]");
        }
        if !(self.working_resolution_m > 0.0 && self.working_resolution_m.is_finite()) {
            return bad("working_resolution_m must be > 0");
        }
        Ok(())
    }

    pub fn buffer_px(&self) -> u32 {
        (self.buffer_m / self.working_resolution_m).round() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteStatus {
    #[default]
    Unreviewed,
    Confirmed,
    Rejected,
}

impl SiteStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SiteStatus::Unreviewed => "unreviewed",
            SiteStatus::Confirmed => "confirmed",
            SiteStatus::Rejected => "rejected",
        }
    }
}

impl fmt::Display for SiteStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SiteStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unreviewed" => Ok(SiteStatus::Unreviewed),
            "confirmed" => Ok(SiteStatus::Confirmed),
            "rejected" => Ok(SiteStatus::Rejected),
            _ => Err(Error::InvalidArgument(format!("unknown site status {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSite<T = f64> {
    pub site_id: String,
    pub geometry: Footprint<T>,
    pub bbox: [T; 4],
    pub area_m2: T,
    pub uncovered_ratio: f64,
    pub source_historical_ids: Vec<String>,
    pub status: SiteStatus,
    pub notes: String,
    pub updated_at: Option<DateTime<Utc>>,
}

impl<T> CandidateSite<T> {
    pub fn is_reviewed(&self) -> bool {
        self.status != SiteStatus::Unreviewed || !self.notes.is_empty()
    }
}

/// Hash of the class id and all ring vertices rounded to millimetres.
pub fn site_id<T: Scalar>(geometry: &Footprint<T>) -> String {
    let mut hasher = Sha256::new();
    hasher.update([geometry.class_id]);
    for ring in geometry.rings() {
        hasher.update((ring.points.len() as u64).to_le_bytes());
        for p in &ring.points {
            for v in p {
                let mm = (v.to_f64().unwrap() * 1000.0).round() as i64;
                hasher.update(mm.to_le_bytes());
            }
        }
    }
    let digest = hasher.finalize();
    format!("site-{}", &hex::encode(digest)[..16])
}

/// Grid covering `bbox` padded by `pad_px` pixels, with corners on integer
/// multiples of `res`.
pub fn aligned_grid(bbox: [f64; 4], res: f64, pad_px: u32, crs: CrsTag) -> (Georef, u32, u32) {
    let pad = pad_px as i64;
    let i0 = (bbox[0] / res).floor() as i64 - pad;
    let i1 = (bbox[2] / res).ceil() as i64 + pad;
    let j0 = (bbox[1] / res).floor() as i64 - pad;
    let j1 = (bbox[3] / res).ceil() as i64 + pad;
    let width = (i1 - i0).max(1) as u32;
    let height = (j1 - j0).max(1) as u32;
    let transform = GeoTransform::north_up_from_corner(res, i0 as f64 * res, j1 as f64 * res);
    (Georef::new(transform, crs), width, height)
}

fn ensure_epoch<T>(layer: &FootprintLayer<T>, expected: Epoch) -> Result<()> {
    if layer.epoch != expected {
        return Err(Error::EpochMismatch {
            expected: expected.as_str().to_string(),
            actual: layer.epoch.as_str().to_string(),
        });
    }
    Ok(())
}

/// Working grid plus the rasterized masks the negative profile is built from.
#[derive(Debug, Clone)]
pub struct OverlayGrid {
    pub georef: Georef,
    pub width: u32,
    pub height: u32,
    pub historical: BinaryMask,
    pub present_buffered: BinaryMask,
    pub negative: BinaryMask,
}

fn to_f64_bbox<T: Scalar>(b: [T; 4]) -> [f64; 4] {
    b.map(|v| v.to_f64().unwrap())
}

/// Steps one to four of the negative profile: grid, rasterization, present
/// dilation, and historical minus buffered present.
pub fn overlay_grid<T: Scalar>(
    hist: &FootprintLayer<T>,
    present: &FootprintLayer<T>,
    params: &OverlayParams,
) -> Result<Option<OverlayGrid>> {
    params.validate()?;
    hist.crs.ensure_same(&present.crs)?;
    hist.crs.ensure_metric()?;
    ensure_epoch(hist, Epoch::Historical)?;
    ensure_epoch(present, Epoch::Present)?;
    let Some(bbox) = hist.bbox() else {
        return Ok(None);
    };
    // Present geometry farther than the buffer from every historical pixel
    // cannot influence the result, so the grid only needs to cover the
    // historical extent plus the buffer reach.
    let r = params.buffer_px();
    let (georef, width, height) =
        aligned_grid(to_f64_bbox(bbox), params.working_resolution_m, r + 2, hist.crs.clone());
    let mut historical = BinaryMask::new(width, height);
    for fp in &hist.footprints {
        for_each_covered_pixel(fp, &georef.transform, width, height, |c, r| historical.set(c, r, true))?;
    }
    let mut present_mask = BinaryMask::new(width, height);
    for fp in &present.footprints {
        for_each_covered_pixel(fp, &georef.transform, width, height, |c, r| present_mask.set(c, r, true))?;
    }
    let present_buffered = dilate(&present_mask, r as f64);
    let negative = historical.and_not(&present_buffered);
    Ok(Some(OverlayGrid { georef, width, height, historical, present_buffered, negative }))
}

pub fn negative_profile<T: Scalar>(
    hist: &FootprintLayer<T>,
    present: &FootprintLayer<T>,
    params: &OverlayParams,
) -> Result<Vec<CandidateSite<T>>> {
    let Some(grid) = overlay_grid(hist, present, params)? else {
        return Ok(Vec::new());
    };
    let (w, h) = (grid.width, grid.height);
    let comps = label_components(&grid.negative, Connectivity::Four);
    let n = comps.count();

    // Per historical footprint: pixel count, surviving count, and how many of
    // its pixels fall in each negative component.
    let mut ratios = Vec::with_capacity(hist.footprints.len());
    let mut overlap: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n];
    for (fi, fp) in hist.footprints.iter().enumerate() {
        let (mut total, mut surviving) = (0usize, 0usize);
        for_each_covered_pixel(fp, &grid.georef.transform, w, h, |c, r| {
            total += 1;
            let l = comps.label(c, r);
            if l != 0 {
                surviving += 1;
                *overlap[l as usize - 1].entry(fi).or_default() += 1;
            }
        })?;
        ratios.push(if total == 0 { 0.0 } else { surviving as f64 / total as f64 });
    }

    let px_area = params.working_resolution_m * params.working_resolution_m;
    let mut keep: Vec<Option<(u8, f64)>> = vec![None; n];
    for k in 0..n {
        if (comps.sizes[k] as f64) * px_area < params.min_site_area_m2 {
            continue;
        }
        let sources = &overlap[k];
        let best_ratio = sources.keys().map(|&fi| ratios[fi]).fold(f64::NEG_INFINITY, f64::max);
        if sources.is_empty() || best_ratio < params.uncovered_ratio_threshold {
            continue;
        }
        // Class of the source contributing the most pixels; ties go to the
        // earlier footprint.
        let (&major, _) = sources.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).unwrap();
        keep[k] = Some((hist.footprints[major].class_id, best_ratio));
    }

    let mut ids: BTreeSet<u8> = keep.iter().flatten().map(|(c, _)| *c).collect();
    ids.insert(0);
    let classes = ClassTable::with_ids(&ids.iter().copied().collect::<Vec<_>>())?;
    let mut site_mask = ClassMask::empty(w, h, classes)?.with_geo(Some(grid.georef.clone()));
    for r in 0..h {
        for c in 0..w {
            let l = comps.label(c, r);
            if l != 0 {
                if let Some((class, _)) = keep[l as usize - 1] {
                    site_mask.set(c, r, class);
                }
            }
        }
    }
    let traced: FootprintLayer<T> = trace_footprints(&site_mask, Epoch::Historical)?;
    let kept: Vec<usize> = (0..n).filter(|&k| keep[k].is_some()).collect();
    debug_assert_eq!(traced.footprints.len(), kept.len());

    let mut sites = Vec::with_capacity(kept.len());
    for (mut geometry, k) in traced.footprints.into_iter().zip(kept) {
        let id = site_id(&geometry);
        geometry.id = id.clone();
        sites.push(CandidateSite {
            site_id: id,
            bbox: geometry.bbox,
            area_m2: geometry.area_m2,
            geometry,
            uncovered_ratio: keep[k].unwrap().1,
            source_historical_ids: overlap[k].keys().map(|&fi| hist.footprints[fi].id.clone()).collect(),
            status: SiteStatus::Unreviewed,
            notes: String::new(),
            updated_at: None,
        });
    }
    Ok(sites)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recomputed<T = f64> {
    pub candidates: Vec<CandidateSite<T>>,
    pub archive: Vec<CandidateSite<T>>,
}

/// Reruns the negative profile, carrying reviews over by site id. Reviewed
/// sites that no longer appear move to the archive; archived reviews are
/// restored when their geometry reappears.
pub fn recompute<T: Scalar>(
    candidates: &[CandidateSite<T>],
    archive: &[CandidateSite<T>],
    hist: Option<&FootprintLayer<T>>,
    present: Option<&FootprintLayer<T>>,
    params: &OverlayParams,
) -> Result<Recomputed<T>> {
    let hist = hist.ok_or_else(|| Error::MissingLayer("historical footprints".into()))?;
    let present = present.ok_or_else(|| Error::MissingLayer("present footprints".into()))?;
    let mut fresh = negative_profile(hist, present, params)?;
    let reviewed: BTreeMap<&str, &CandidateSite<T>> = archive
        .iter()
        .chain(candidates.iter())
        .filter(|s| s.is_reviewed())
        .map(|s| (s.site_id.as_str(), s))
        .collect();
    for site in &mut fresh {
        if let Some(prev) = reviewed.get(site.site_id.as_str()) {
            site.status = prev.status;
            site.notes = prev.notes.clone();
            site.updated_at = prev.updated_at;
        }
    }
    let live: BTreeSet<&str> = fresh.iter().map(|s| s.site_id.as_str()).collect();
    let mut new_archive: Vec<CandidateSite<T>> = Vec::new();
    let mut archived: BTreeSet<String> = BTreeSet::new();
    for s in archive.iter().chain(candidates.iter().filter(|s| s.is_reviewed())) {
        if !live.contains(s.site_id.as_str()) && archived.insert(s.site_id.clone()) {
            new_archive.push(s.clone());
        }
    }
    Ok(Recomputed { candidates: fresh, archive: new_archive })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffBackground {
    #[default]
    Transparent,
    Black,
}

pub const DIFF_FALSE_POSITIVE: [u8; 4] = [255, 0, 0, 255];
pub const DIFF_FALSE_NEGATIVE: [u8; 4] = [0, 255, 0, 255];
pub const DIFF_TRUE_POSITIVE: [u8; 4] = [255, 255, 255, 255];

/// RGBA comparison image: red where only `pred` is set, green where only
/// `gt` is set, white where both are.
pub fn diff_raster(gt: &BinaryMask, pred: &BinaryMask, background: DiffBackground) -> Result<Raster> {
    if (gt.width(), gt.height()) != (pred.width(), pred.height()) {
        return Err(Error::DimensionMismatch {
            left_w: gt.width(),
            left_h: gt.height(),
            right_w: pred.width(),
            right_h: pred.height(),
        });
    }
    let bg = match background {
        DiffBackground::Transparent => [0, 0, 0, 0],
        DiffBackground::Black => [0, 0, 0, 255],
    };
    let mut samples = Vec::with_capacity(gt.bits().len() * 4);
    for (&g, &p) in gt.bits().iter().zip(pred.bits()) {
        samples.extend_from_slice(match (g, p) {
            (true, true) => &DIFF_TRUE_POSITIVE,
            (false, true) => &DIFF_FALSE_POSITIVE,
            (true, false) => &DIFF_FALSE_NEGATIVE,
            (false, false) => &bg,
        });
    }
    Raster::new(gt.width(), gt.height(), 4, samples)
}

/// Diff of two class masks, treating every non-background label as building.
pub fn diff_masks(gt: &ClassMask, pred: &ClassMask, background: DiffBackground) -> Result<Raster> {
    let g = BinaryMask::from_mask(gt, |l| l != 0);
    let p = BinaryMask::from_mask(pred, |l| l != 0);
    Ok(diff_raster(&g, &p, background)?.with_geo(gt.geo.clone()))
}

/// GeoJSON FeatureCollection of candidate sites.
pub fn candidates_to_geojson(sites: &[CandidateSite<f64>], crs: &CrsTag) -> Value {
    let features: Vec<Value> = sites
        .iter()
        .map(|s| {
            let rings: Vec<Value> = s
                .geometry
                .rings()
                .map(|r| Value::Array(r.points.iter().map(|p| json!([p[0], p[1]])).collect()))
                .collect();
            json!({
                "type": "Feature",
                "id": s.site_id,
                "bbox": s.bbox,
                "geometry": {"type": "Polygon", "coordinates": rings},
                "properties": {
                    "site_id": s.site_id,
                    "area_m2": s.area_m2,
                    "uncovered_ratio": s.uncovered_ratio,
                    "status": s.status,
                    "notes": s.notes,
                    "class_id": s.geometry.class_id,
                    "source_historical_ids": s.source_historical_ids,
                    "updated_at": s.updated_at,
                },
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "crs_tag": crs.code, "features": features})
}
