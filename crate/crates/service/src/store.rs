//! File-backed project persistence.
//!
//! ```text
//! <root>/<project_id>/
//!     project.json
//!     layers/<layer_id>.png, layers/<layer_id>.pgw
//!     masks/            derived masks and diff rasters
//!     vectors/<epoch>.geojson
//!     candidates.json
//!     archive.json
//!     reports/
//!     split.json
//! ```
//!
//! Every file is replaced through a temporary file and a rename, so readers
//! never observe a partial write.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use cadelta_core::geo::{CrsTag, GeoTransform, Georef};
use cadelta_core::overlay::{CandidateSite, OverlayParams};
use cadelta_core::raster::ClassTable;
use cadelta_core::raster_io::{decode_mask_png, decode_png, load_layer, write_atomic, Layer, LayerDescriptor, LayerRole};
use cadelta_core::segment::{default_rules, ColorRule, MorphologyParams};
use cadelta_core::split::SplitManifest;
use cadelta_core::vectorize::{layer_from_geojson, layer_to_geojson, Epoch, FootprintLayer};
use cadelta_core::Error as CoreError;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    pub rules: Vec<ColorRule>,
    pub morphology: MorphologyParams,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { rules: default_rules(), morphology: MorphologyParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: String,
    pub name: String,
    pub crs: CrsTag,
    /// Uploaded layers; one per role except `diff`.
    pub layers: Vec<LayerDescriptor>,
    /// Layers produced by the pipeline (segmented masks, diff rasters).
    #[serde(default)]
    pub derived_layers: Vec<LayerDescriptor>,
    pub params: OverlayParams,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    /// Douglas-Peucker tolerance applied after tracing; 0 keeps pixel edges.
    #[serde(default)]
    pub simplify_epsilon_m: f64,
    /// Report files under `reports/`.
    #[serde(default)]
    pub eval_reports: Vec<String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl Project {
    pub fn find_layer(&self, layer_id: &str) -> Option<&LayerDescriptor> {
        self.layers.iter().chain(&self.derived_layers).find(|l| l.layer_id == layer_id)
    }

    pub fn layer_by_role(&self, role: LayerRole) -> Option<&LayerDescriptor> {
        self.layers.iter().find(|l| l.role == role)
    }

    pub fn derived_by_id(&self, layer_id: &str) -> Option<&LayerDescriptor> {
        self.derived_layers.iter().find(|l| l.layer_id == layer_id)
    }

    pub fn upsert_derived(&mut self, desc: LayerDescriptor) {
        match self.derived_layers.iter_mut().find(|l| l.layer_id == desc.layer_id) {
            Some(slot) => *slot = desc,
            None => self.derived_layers.push(desc),
        }
    }
}

/// Lower-case alphanumerics and dashes, never empty.
pub fn slugify(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    let out = out.trim_end_matches('-').to_string();
    if out.is_empty() {
        "project".into()
    } else {
        out
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub struct ProjectStore {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ProjectStore {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root, locks: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// The single-writer lock of a project. Mutations hold it for their
    /// whole read-modify-write cycle.
    pub fn lock(&self, project_id: &str) -> Arc<Mutex<()>> {
        self.locks.lock().unwrap().entry(project_id.to_string()).or_default().clone()
    }

    pub fn dir(&self, project_id: &str) -> Result<PathBuf> {
        if !valid_id(project_id) {
            return Err(ServiceError::not_found("project", project_id));
        }
        Ok(self.root.join(project_id))
    }

    pub fn exists(&self, project_id: &str) -> bool {
        self.dir(project_id).map(|d| d.join("project.json").is_file()).unwrap_or(false)
    }

    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().join("project.json").is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Creates a project whose id is derived from its name, with a numeric
    /// suffix when the id is taken.
    pub fn create(&self, name: &str, crs: CrsTag, params: OverlayParams) -> Result<Project> {
        params.validate()?;
        if name.trim().is_empty() {
            return Err(CoreError::InvalidArgument("project name must not be empty".into()).into());
        }
        let base = slugify(name);
        let _guard = self.locks.lock().unwrap();
        let mut id = base.clone();
        let mut n = 2;
        while self.root.join(&id).exists() {
            id = format!("{base}-{n}");
            n += 1;
        }
        let dir = self.root.join(&id);
        for sub in ["layers", "masks", "vectors", "reports"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        let now = Utc::now();
        let project = Project {
            project_id: id,
            name: name.to_string(),
            crs,
            layers: Vec::new(),
            derived_layers: Vec::new(),
            params,
            segmentation: SegmentationConfig::default(),
            simplify_epsilon_m: 0.0,
            eval_reports: Vec::new(),
            created_at: now,
            updated_at: now,
        };
        self.write_json(&project.project_id, "project.json", &project)?;
        Ok(project)
    }

    pub fn load(&self, project_id: &str) -> Result<Project> {
        let path = self.dir(project_id)?.join("project.json");
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ServiceError::not_found("project", project_id))
            }
            Err(e) => return Err(e.into()),
        };
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn save(&self, project: &mut Project) -> Result<()> {
        project.updated_at = Utc::now();
        self.write_json(&project.project_id, "project.json", project)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, project_id: &str, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(project_id, rel, &bytes)
    }

    pub fn write_bytes(&self, project_id: &str, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir(project_id)?.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_atomic(&path, bytes)?;
        Ok(())
    }

    fn read_json_or<T: for<'de> Deserialize<'de>>(&self, project_id: &str, rel: &str, default: T) -> Result<T> {
        let path = self.dir(project_id)?.join(rel);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(default),
            Err(e) => Err(e.into()),
        }
    }

    pub fn candidates(&self, project_id: &str) -> Result<Vec<CandidateSite>> {
        self.read_json_or(project_id, "candidates.json", Vec::new())
    }

    pub fn archive(&self, project_id: &str) -> Result<Vec<CandidateSite>> {
        self.read_json_or(project_id, "archive.json", Vec::new())
    }

    pub fn save_sites(&self, project_id: &str, candidates: &[CandidateSite], archive: &[CandidateSite]) -> Result<()> {
        self.write_json(project_id, "candidates.json", candidates)?;
        self.write_json(project_id, "archive.json", archive)
    }

    pub fn split(&self, project_id: &str) -> Result<Option<SplitManifest>> {
        self.read_json_or(project_id, "split.json", None)
    }

    pub fn save_split(&self, project_id: &str, manifest: &SplitManifest) -> Result<()> {
        self.write_bytes(project_id, "split.json", manifest.to_json()?.as_bytes())
    }

    pub fn vectors_path(&self, project_id: &str, epoch: Epoch) -> Result<PathBuf> {
        Ok(self.dir(project_id)?.join("vectors").join(format!("{}.geojson", epoch.as_str())))
    }

    pub fn vectors(&self, project_id: &str, epoch: Epoch) -> Result<Option<FootprintLayer>> {
        let path = self.vectors_path(project_id, epoch)?;
        match std::fs::read(&path) {
            Ok(bytes) => {
                let mut layer = layer_from_geojson(&serde_json::from_slice(&bytes)?)?;
                layer.epoch = epoch;
                Ok(Some(layer))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save_vectors(&self, project_id: &str, layer: &FootprintLayer) -> Result<()> {
        let rel = format!("vectors/{}.geojson", layer.epoch.as_str());
        self.write_json(project_id, &rel, &layer_to_geojson(layer))
    }

    pub fn load_layer(&self, project: &Project, desc: &LayerDescriptor) -> Result<Layer> {
        Ok(load_layer(&self.dir(&project.project_id)?, desc, &ClassTable::cadastre())?)
    }

    /// Validates and stores an uploaded layer. Uploading a role again
    /// replaces the previous layer of that role; diff layers accumulate.
    pub fn add_layer(
        &self,
        project: &mut Project,
        role: LayerRole,
        image: &[u8],
        world: Option<&[u8]>,
        crs: Option<CrsTag>,
    ) -> Result<LayerDescriptor> {
        let crs = match crs {
            Some(c) => {
                c.ensure_same(&project.crs)?;
                c
            }
            None => project.crs.clone(),
        };
        let shown_name = Path::new("uploaded world file");
        let transform = match world {
            Some(bytes) => {
                let text = std::str::from_utf8(bytes).map_err(|_| CoreError::WorldFileMalformed {
                    path: shown_name.to_path_buf(),
                    message: "not valid UTF-8 text".into(),
                })?;
                Some(GeoTransform::parse_world_file(text, shown_name)?)
            }
            None => None,
        };
        let image_name = Path::new("uploaded image");
        let dims = if role.is_mask() {
            let m = decode_mask_png(Cursor::new(image), image_name, &ClassTable::cadastre())?;
            (m.width(), m.height())
        } else {
            let r = decode_png(Cursor::new(image), image_name)?;
            (r.width(), r.height())
        };
        if let Some(t) = &transform {
            // Reject transforms that cannot be inverted before anything is stored.
            Georef::new(*t, crs.clone()).transform.world_to_pixel(0.0, 0.0)?;
        }
        let layer_id = if role == LayerRole::Diff {
            let n = project.layers.iter().filter(|l| l.role == LayerRole::Diff).count() + 1;
            format!("diff-{n}")
        } else {
            role.as_str().to_string()
        };
        let raster_rel = PathBuf::from(format!("layers/{layer_id}.png"));
        let world_rel = transform.map(|_| PathBuf::from(format!("layers/{layer_id}.pgw")));
        let id = project.project_id.clone();
        self.write_bytes(&id, raster_rel.to_str().unwrap(), image)?;
        match (&transform, &world_rel) {
            (Some(t), Some(rel)) => self.write_bytes(&id, rel.to_str().unwrap(), t.to_world_file().as_bytes())?,
            _ => {
                let stale = self.dir(&id)?.join(format!("layers/{layer_id}.pgw"));
                if stale.exists() {
                    std::fs::remove_file(stale)?;
                }
            }
        }
        let desc = LayerDescriptor { layer_id: layer_id.clone(), role, raster_path: raster_rel, world_path: world_rel, crs };
        project.layers.retain(|l| l.layer_id != layer_id);
        project.layers.push(desc.clone());
        tracing::debug!(project = %id, layer = %layer_id, width = dims.0, height = dims.1, "stored layer");
        self.save(project)?;
        Ok(desc)
    }
}
