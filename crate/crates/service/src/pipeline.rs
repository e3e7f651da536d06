//! Project-level operations. Callers hold the project's write lock for every
//! function here that mutates state.

use std::io::{Cursor, Write};

use cadelta_core::eval::{evaluate, EvalReport};
use cadelta_core::overlay::{candidates_to_geojson, diff_masks, recompute, DiffBackground, OverlayParams, SiteStatus};
use cadelta_core::raster::{ClassMask, ClassTable};
use cadelta_core::raster_io::{encode_mask_png, encode_png, LayerDescriptor, LayerRole};
use cadelta_core::segment::segment_chromatic;
use cadelta_core::vectorize::{simplify_layer, trace_footprints, Epoch, FootprintLayer};
use cadelta_core::Error as CoreError;
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Result, ServiceError};
use crate::store::{Project, ProjectStore};

pub const SEGMENTED_LAYER_ID: &str = "historical_segmented";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Segment,
    Vectorize,
    Overlay,
}

impl Step {
    pub const ALL: [Step; 3] = [Step::Segment, Step::Vectorize, Step::Overlay];

    pub fn as_str(self) -> &'static str {
        match self {
            Step::Segment => "segment",
            Step::Vectorize => "vectorize",
            Step::Overlay => "overlay",
        }
    }
}

/// Sorted, de-duplicated steps; an empty request means all steps.
pub fn normalize_steps(steps: &[Step]) -> Vec<Step> {
    if steps.is_empty() {
        return Step::ALL.to_vec();
    }
    let mut s = steps.to_vec();
    s.sort();
    s.dedup();
    s
}

fn save_derived_mask(store: &ProjectStore, project: &mut Project, id: &str, role: LayerRole, mask: &ClassMask) -> Result<LayerDescriptor> {
    let pid = project.project_id.clone();
    let raster_rel = format!("masks/{id}.png");
    store.write_bytes(&pid, &raster_rel, &encode_mask_png(mask)?)?;
    let world_rel = match &mask.geo {
        Some(g) => {
            let rel = format!("masks/{id}.pgw");
            store.write_bytes(&pid, &rel, g.transform.to_world_file().as_bytes())?;
            Some(rel.into())
        }
        None => None,
    };
    let desc = LayerDescriptor {
        layer_id: id.to_string(),
        role,
        raster_path: raster_rel.into(),
        world_path: world_rel,
        crs: project.crs.clone(),
    };
    project.upsert_derived(desc.clone());
    Ok(desc)
}

/// Segments the historical map with the project's colour rules. Skipped
/// when the project has an uploaded historical mask and no map.
pub fn segment(store: &ProjectStore, project: &mut Project) -> Result<Value> {
    let Some(desc) = project.layer_by_role(LayerRole::HistoricalMap).cloned() else {
        if project.layer_by_role(LayerRole::HistoricalMask).is_some() {
            return Ok(json!({"skipped": "using uploaded historical mask"}));
        }
        return Err(CoreError::MissingLayer(LayerRole::HistoricalMap.as_str().into()).into());
    };
    let img = store
        .load_layer(project, &desc)?
        .into_raster()
        .ok_or_else(|| ServiceError::Internal("historical map is not an image".into()))?;
    let cfg = &project.segmentation;
    let mask = segment_chromatic(&img, &cfg.rules, &cfg.morphology)?;
    let building_px = mask.labels().iter().filter(|&&l| l != 0).count();
    save_derived_mask(store, project, SEGMENTED_LAYER_ID, LayerRole::HistoricalMask, &mask)?;
    store.save(project)?;
    Ok(json!({"layer_id": SEGMENTED_LAYER_ID, "building_pixels": building_px}))
}

fn mask_layer(store: &ProjectStore, project: &Project, desc: &LayerDescriptor) -> Result<ClassMask> {
    store
        .load_layer(project, desc)?
        .into_mask()
        .ok_or_else(|| CoreError::InvalidArgument(format!("layer {} is not a mask", desc.layer_id)).into())
}

fn trace(mask: &ClassMask, epoch: Epoch, epsilon: f64) -> Result<FootprintLayer> {
    let layer: FootprintLayer = trace_footprints(mask, epoch)?;
    if epsilon > 0.0 {
        let (simplified, degenerate) = simplify_layer(&layer, epsilon)?;
        if degenerate > 0 {
            tracing::warn!(degenerate, epoch = epoch.as_str(), "kept unsimplified rings");
        }
        return Ok(simplified);
    }
    Ok(layer)
}

/// Traces both epochs into `vectors/<epoch>.geojson`.
pub fn vectorize(store: &ProjectStore, project: &mut Project) -> Result<Value> {
    let hist_desc = project
        .derived_by_id(SEGMENTED_LAYER_ID)
        .or_else(|| project.layer_by_role(LayerRole::HistoricalMask))
        .cloned()
        .ok_or_else(|| CoreError::MissingLayer(LayerRole::HistoricalMask.as_str().into()))?;
    let present_desc = project
        .layer_by_role(LayerRole::PresentMask)
        .cloned()
        .ok_or_else(|| CoreError::MissingLayer(LayerRole::PresentMask.as_str().into()))?;
    let hist = trace(&mask_layer(store, project, &hist_desc)?, Epoch::Historical, project.simplify_epsilon_m)?;
    let present = trace(&mask_layer(store, project, &present_desc)?, Epoch::Present, project.simplify_epsilon_m)?;
    store.save_vectors(&project.project_id, &hist)?;
    store.save_vectors(&project.project_id, &present)?;
    Ok(json!({"historical_footprints": hist.footprints.len(), "present_footprints": present.footprints.len()}))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlaySummary {
    pub params: OverlayParams,
    pub candidate_count: usize,
    pub archived_count: usize,
    pub recomputed: bool,
}

/// Recomputes candidates from the stored footprint layers, keeping reviews.
pub fn overlay(store: &ProjectStore, project: &Project) -> Result<OverlaySummary> {
    let pid = &project.project_id;
    let hist = store.vectors(pid, Epoch::Historical)?;
    let present = store.vectors(pid, Epoch::Present)?;
    let out = recompute(
        &store.candidates(pid)?,
        &store.archive(pid)?,
        hist.as_ref(),
        present.as_ref(),
        &project.params,
    )?;
    store.save_sites(pid, &out.candidates, &out.archive)?;
    Ok(OverlaySummary {
        params: project.params,
        candidate_count: out.candidates.len(),
        archived_count: out.archive.len(),
        recomputed: true,
    })
}

/// Stores new overlay parameters and recomputes when both footprint layers exist.
pub fn set_params(store: &ProjectStore, project: &mut Project, params: OverlayParams) -> Result<OverlaySummary> {
    params.validate()?;
    project.params = params;
    store.save(project)?;
    let pid = &project.project_id;
    let ready = store.vectors_path(pid, Epoch::Historical)?.exists() && store.vectors_path(pid, Epoch::Present)?.exists();
    if ready {
        return overlay(store, project);
    }
    Ok(OverlaySummary {
        params,
        candidate_count: store.candidates(pid)?.len(),
        archived_count: store.archive(pid)?.len(),
        recomputed: false,
    })
}

pub fn run_step(store: &ProjectStore, project_id: &str, step: Step) -> Result<Value> {
    let mut project = store.load(project_id)?;
    match step {
        Step::Segment => segment(store, &mut project),
        Step::Vectorize => vectorize(store, &mut project),
        Step::Overlay => Ok(serde_json::to_value(overlay(store, &project)?)?),
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct ReviewRequest {
    pub status: Option<String>,
    pub notes: Option<String>,
}

pub fn review_site(
    store: &ProjectStore,
    project_id: &str,
    site_id: &str,
    req: &ReviewRequest,
) -> Result<cadelta_core::overlay::CandidateSite> {
    store.load(project_id)?;
    let status = match req.status.as_deref() {
        Some(s) => Some(
            s.parse::<SiteStatus>()
                .map_err(|_| ServiceError::Conflict(format!("unknown status transition to {s:?}")))?,
        ),
        None => None,
    };
    let mut candidates = store.candidates(project_id)?;
    let site = candidates
        .iter_mut()
        .find(|s| s.site_id == site_id)
        .ok_or_else(|| ServiceError::not_found("site", site_id))?;
    if let Some(s) = status {
        site.status = s;
    }
    if let Some(n) = &req.notes {
        site.notes = n.clone();
    }
    site.updated_at = Some(Utc::now());
    let out = site.clone();
    store.write_json(project_id, "candidates.json", &candidates)?;
    Ok(out)
}

/// Evaluates two mask layers, storing the report and an RGBA diff layer.
pub fn evaluate_layers(store: &ProjectStore, project: &mut Project, gt_id: &str, pred_id: &str) -> Result<EvalReport> {
    let find = |id: &str| project.find_layer(id).cloned().ok_or_else(|| ServiceError::not_found("layer", id));
    let (gt_desc, pred_desc) = (find(gt_id)?, find(pred_id)?);
    let gt = mask_layer(store, project, &gt_desc)?;
    let pred = mask_layer(store, project, &pred_desc)?;
    let report = evaluate(&gt, &pred, &ClassTable::cadastre())?;
    let pid = project.project_id.clone();
    let name = format!("eval-{gt_id}-vs-{pred_id}");
    store.write_json(&pid, &format!("reports/{name}.json"), &report)?;
    let diff = diff_masks(&gt, &pred, DiffBackground::Transparent)?;
    let diff_id = format!("diff-{gt_id}-vs-{pred_id}");
    store.write_bytes(&pid, &format!("masks/{diff_id}.png"), &encode_png(&diff)?)?;
    let world_path = match &diff.geo {
        Some(g) => {
            let rel = format!("masks/{diff_id}.pgw");
            store.write_bytes(&pid, &rel, g.transform.to_world_file().as_bytes())?;
            Some(rel.into())
        }
        None => None,
    };
    project.upsert_derived(LayerDescriptor {
        layer_id: diff_id.clone(),
        role: LayerRole::Diff,
        raster_path: format!("masks/{diff_id}.png").into(),
        world_path,
        crs: project.crs.clone(),
    });
    let file = format!("{name}.json");
    if !project.eval_reports.contains(&file) {
        project.eval_reports.push(file);
    }
    store.save(project)?;
    Ok(report)
}

pub fn candidates_geojson(store: &ProjectStore, project: &Project, status: Option<SiteStatus>) -> Result<Value> {
    let sites: Vec<_> = store
        .candidates(&project.project_id)?
        .into_iter()
        .filter(|s| status.is_none_or(|st| s.status == st))
        .collect();
    Ok(candidates_to_geojson(&sites, &project.crs))
}

/// Zip archive of the project's vectors, candidates, reports and parameters.
pub fn export_zip(store: &ProjectStore, project_id: &str) -> Result<Vec<u8>> {
    use zip::write::SimpleFileOptions;
    let project = store.load(project_id)?;
    let dir = store.dir(project_id)?;
    let mut zip = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default().compression_method(zip::CompressionMethod::Deflated);
    let zip_err = |e: zip::result::ZipError| ServiceError::Internal(format!("zip: {e}"));
    let mut add = |name: &str, bytes: &[u8]| -> Result<()> {
        zip.start_file(name, opts).map_err(zip_err)?;
        zip.write_all(bytes)?;
        Ok(())
    };
    add("project.json", &std::fs::read(dir.join("project.json"))?)?;
    add("params.json", &serde_json::to_vec_pretty(&project.params)?)?;
    add("candidates.geojson", &serde_json::to_vec_pretty(&candidates_geojson(store, &project, None)?)?)?;
    for rel in ["candidates.json", "archive.json", "split.json", "vectors/historical.geojson", "vectors/present.geojson"] {
        if let Ok(bytes) = std::fs::read(dir.join(rel)) {
            add(rel, &bytes)?;
        }
    }
    for report in &project.eval_reports {
        let rel = format!("reports/{report}");
        add(&rel, &std::fs::read(dir.join(&rel))?)?;
    }
    let cursor = zip.finish().map_err(zip_err)?;
    Ok(cursor.into_inner())
}
