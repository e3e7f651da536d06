//! Command-line interface. Every subcommand exits 0 on success, 2 on a
//! validation error and 1 on an internal error; errors are printed to
//! stderr as a JSON object `{code, message, detail}`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cadelta_core::eval::evaluate;
use cadelta_core::geo::{CrsTag, GeoTransform, Georef};
use cadelta_core::overlay::{candidates_to_geojson, negative_profile, OverlayParams};
use cadelta_core::patching::{build_zoom_pyramid, normalize_patch, split_six, PatchSpec};
use cadelta_core::raster::{ClassMask, ClassTable, Raster};
use cadelta_core::raster_io::{read_mask_png, read_png, save_layer, world_path_for, write_atomic, Layer, LayerRole};
use cadelta_core::segment::{default_rules, parse_rules, segment_chromatic, MorphologyParams};
use cadelta_core::split::{make_split, SplitItem};
use cadelta_core::synth::{generate, SynthParams};
use cadelta_core::vectorize::{layer_to_geojson, read_layer_geojson, simplify_layer, trace_footprints, Epoch, FootprintLayer};
use cadelta_core::Error as CoreError;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::{Result, ServiceError};
use crate::pipeline::{self, Step};
use crate::store::ProjectStore;

#[derive(Parser, Debug)]
#[command(name = "cadelta", version, about = "Find buildings that disappeared since a historical cadastral survey")]
pub struct Cli {
    /// Directory holding project folders.
    #[arg(long, global = true, env = "CADELTA_ROOT", default_value = "cadelta-projects")]
    pub root: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Add a georeferenced layer to a project, creating the project if needed.
    Ingest(IngestArgs),
    /// Normalize a map patch, build its zoom pyramid and cut it into sub-patches.
    Patch(PatchArgs),
    /// Assign sub-patches to train/test/val.
    Split(SplitArgs),
    /// Extract building masks from a cadastral map by colour.
    Segment(SegmentArgs),
    /// Trace masks into footprint polygons.
    Vectorize(VectorizeArgs),
    /// Compute candidate sites from historical and present footprints.
    Overlay(OverlayArgs),
    /// Compare a predicted mask with a ground-truth mask.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Generate a synthetic cadastral scene with ground truth.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub project: String,
    /// CRS code used when the project has to be created.
    #[arg(long)]
    pub crs: Option<String>,
    #[arg(long)]
    pub role: LayerRole,
    #[arg(long)]
    pub image: PathBuf,
    /// World file; defaults to the `.pgw` next to the image when present.
    #[arg(long)]
    pub world: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PatchArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Annotation mask of the same sheet; decides which sub-patches are empty.
    #[arg(long)]
    pub annotation: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "sheet")]
    pub parent_id: String,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// JSON array of `{id, contains_building}` items.
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_ratios)]
    pub ratios: [f64; 3],
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also store the manifest as the project's `split.json`.
    #[arg(long)]
    pub project: Option<String>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(long, conflicts_with_all = ["image", "out"])]
    pub project: Option<String>,
    #[arg(long, requires = "out")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON list of colour rules.
    #[arg(long)]
    pub rules: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VectorizeArgs {
    #[arg(long, conflicts_with_all = ["mask", "out"])]
    pub project: Option<String>,
    #[arg(long, requires_all = ["out", "crs"])]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub crs: Option<String>,
    #[arg(long, default_value = "historical", value_parser = parse_epoch)]
    pub epoch: Epoch,
    /// Simplification tolerance in metres.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
}

#[derive(Args, Debug)]
pub struct OverlayArgs {
    #[arg(long, conflicts_with_all = ["hist", "present"])]
    pub project: Option<String>,
    #[arg(long, requires = "present")]
    pub hist: Option<PathBuf>,
    #[arg(long)]
    pub present: Option<PathBuf>,
    /// Write candidates as GeoJSON (file mode).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub buffer_m: Option<f64>,
    #[arg(long)]
    pub min_site_area_m2: Option<f64>,
    #[arg(long)]
    pub uncovered_ratio_threshold: Option<f64>,
    #[arg(long)]
    pub working_resolution_m: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ground truth: a mask PNG, or a layer id with `--project`.
    #[arg(long)]
    pub gt: String,
    #[arg(long)]
    pub pred: String,
    #[arg(long)]
    pub project: Option<String>,
    /// Print the full report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 800)]
    pub width: u32,
    #[arg(long, default_value_t = 600)]
    pub height: u32,
    #[arg(long, default_value_t = 12)]
    pub buildings: usize,
    #[arg(long, default_value_t = 4)]
    pub removed: usize,
    /// Also create a project with the map, truth and present layers.
    #[arg(long)]
    pub project: Option<String>,
}

fn parse_ratios(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts.try_into().map_err(|_| "expected three comma-separated ratios".to_string())
}

fn parse_epoch(s: &str) -> std::result::Result<Epoch, String> {
    match s {
        "historical" => Ok(Epoch::Historical),
        "present" => Ok(Epoch::Present),
        _ => Err(format!("unknown epoch {s:?}")),
    }
}

fn read_world_beside(image: &Path, explicit: Option<&Path>) -> Result<Option<GeoTransform>> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| world_path_for(image));
    if explicit.is_none() && !path.exists() {
        return Ok(None);
    }
    Ok(Some(GeoTransform::read_world_file(&path)?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn ingest(store: &ProjectStore, a: &IngestArgs) -> Result<String> {
    let mut project = if store.exists(&a.project) {
        store.load(&a.project)?
    } else {
        let code = a.crs.clone().ok_or_else(|| {
            CoreError::InvalidArgument(format!("project {:?} does not exist; pass --crs to create it", a.project))
        })?;
        store.create(&a.project, CrsTag::metric(code)?, OverlayParams::default())?
    };
    let image = std::fs::read(&a.image).map_err(|_| CoreError::FileNotFound(a.image.clone()))?;
    let world_path = a.world.clone().unwrap_or_else(|| world_path_for(&a.image));
    let world = match std::fs::read(&world_path) {
        Ok(b) => Some(b),
        Err(_) if a.world.is_none() => None,
        Err(_) => return Err(CoreError::FileNotFound(world_path).into()),
    };
    let crs = a.crs.clone().map(CrsTag::metric).transpose()?;
    let desc = store.add_layer(&mut project, a.role, &image, world.as_deref(), crs)?;
    Ok(format!("project {} layer {}", project.project_id, desc.layer_id))
}

fn patch(a: &PatchArgs) -> Result<String> {
    let spec = PatchSpec::default();
    let img = read_png(&a.image)?;
    let world = read_world_beside(&a.image, None)?;
    let img = match (&world, &img) {
        (Some(t), _) => img.with_geo(Some(Georef::new(*t, CrsTag::metric("local")?))),
        _ => img,
    };
    let ann = read_mask_png(&a.annotation, &ClassTable::cadastre())?.with_geo(img.geo.clone());
    let img = normalize_patch(&img, &spec);
    let ann = normalize_patch(&ann, &spec);
    std::fs::create_dir_all(&a.out)?;
    for (zoom, level) in build_zoom_pyramid(&img, &spec) {
        let p = a.out.join(format!("{}_{}.png", a.parent_id, zoom.as_str()));
        save_layer(&Layer::Raster(level), &p, None)?;
    }
    let subs = split_six(&a.parent_id, &img, &ann, &spec)?;
    for s in &subs {
        let w = s.pixel_window;
        let crop: Raster = img.crop(w.x0, w.y0, w.x1, w.y1)?;
        save_layer(&Layer::Raster(crop), &a.out.join(format!("{}.png", s.id())), None)?;
        let mask: ClassMask = ann.crop(w.x0, w.y0, w.x1, w.y1)?;
        save_layer(&Layer::Mask(mask), &a.out.join(format!("{}_mask.png", s.id())), None)?;
    }
    let items: Vec<SplitItem> = subs.iter().map(SplitItem::from).collect();
    write_text(&a.out.join("items.json"), &(serde_json::to_string_pretty(&items)? + "\n"))?;
    write_text(&a.out.join("patches.json"), &(serde_json::to_string_pretty(&subs)? + "\n"))?;
    let empty = items.iter().filter(|i| !i.contains_building).count();
    Ok(format!("{} sub-patches ({} without buildings) in {}", subs.len(), empty, a.out.display()))
}

fn split(store: &ProjectStore, a: &SplitArgs) -> Result<String> {
    let text = std::fs::read_to_string(&a.items).map_err(|_| CoreError::FileNotFound(a.items.clone()))?;
    let items: Vec<SplitItem> = serde_json::from_str(&text)
        .map_err(|e| CoreError::InvalidArgument(format!("items file: {e}")))?;
    let manifest = make_split(&items, a.ratios, a.seed)?;
    let json = manifest.to_json()?;
    if let Some(p) = &a.project {
        let lock = store.lock(p);
        let _g = lock.lock().unwrap();
        store.load(p)?;
        store.save_split(p, &manifest)?;
    }
    match &a.out {
        Some(out) => {
            write_text(out, &json)?;
            Ok(format!("{} items assigned, manifest written to {}", items.len(), out.display()))
        }
        None => Ok(json.trim_end().to_string()),
    }
}

fn segment(store: &ProjectStore, a: &SegmentArgs) -> Result<String> {
    let rules = match &a.rules {
        Some(p) => parse_rules(&std::fs::read_to_string(p).map_err(|_| CoreError::FileNotFound(p.clone()))?)?,
        None => default_rules(),
    };
    if let Some(id) = &a.project {
        let lock = store.lock(id);
        let _g = lock.lock().unwrap();
        let mut project = store.load(id)?;
        if a.rules.is_some() {
            project.segmentation.rules = rules;
            store.save(&mut project)?;
        }
        let v = pipeline::run_step(store, id, Step::Segment)?;
        return Ok(format!("segmented project {id}: {v}"));
    }
    let (Some(image), Some(out)) = (&a.image, &a.out) else {
        return Err(CoreError::InvalidArgument("pass --project, or --image with --out".into()).into());
    };
    let crs = CrsTag::metric("local")?;
    let img = read_png(image)?.with_geo(read_world_beside(image, None)?.map(|t| Georef::new(t, crs)));
    let mask = segment_chromatic(&img, &rules, &MorphologyParams::default())?;
    let px = mask.labels().iter().filter(|&&l| l != 0).count();
    let world = mask.geo.is_some().then(|| world_path_for(out));
    save_layer(&Layer::Mask(mask), out, world.as_deref())?;
    Ok(format!("{px} building pixels written to {}", out.display()))
}

fn vectorize(store: &ProjectStore, a: &VectorizeArgs) -> Result<String> {
    if let Some(id) = &a.project {
        let lock = store.lock(id);
        let _g = lock.lock().unwrap();
        let v = pipeline::run_step(store, id, Step::Vectorize)?;
        return Ok(format!("vectorized project {id}: {v}"));
    }
    let (Some(mask_path), Some(out), Some(code)) = (&a.mask, &a.out, &a.crs) else {
        return Err(CoreError::InvalidArgument("pass --project, or --mask with --out and --crs".into()).into());
    };
    let t = read_world_beside(mask_path, None)?.ok_or(CoreError::MissingGeoreference)?;
    let mask = read_mask_png(mask_path, &ClassTable::cadastre())?.with_geo(Some(Georef::new(t, CrsTag::metric(code.clone())?)));
    let mut layer: FootprintLayer = trace_footprints(&mask, a.epoch)?;
    if a.epsilon > 0.0 {
        layer = simplify_layer(&layer, a.epsilon)?.0;
    }
    write_text(out, &(serde_json::to_string_pretty(&layer_to_geojson(&layer))? + "\n"))?;
    Ok(format!("{} footprints written to {}", layer.footprints.len(), out.display()))
}

fn apply_overrides(mut p: OverlayParams, a: &OverlayArgs) -> OverlayParams {
    if let Some(v) = a.buffer_m {
        p.buffer_m = v;
    }
    if let Some(v) = a.min_site_area_m2 {
        p.min_site_area_m2 = v;
    }
    if let Some(v) = a.uncovered_ratio_threshold {
        p.uncovered_ratio_threshold = v;
    }
    if let Some(v) = a.working_resolution_m {
        p.working_resolution_m = v;
    }
    p
}

fn overlay(store: &ProjectStore, a: &OverlayArgs) -> Result<String> {
    if let Some(id) = &a.project {
        let lock = store.lock(id);
        let _g = lock.lock().unwrap();
        let mut project = store.load(id)?;
        let params = apply_overrides(project.params, a);
        let summary = pipeline::set_params(store, &mut project, params)?;
        if !summary.recomputed {
            return Err(CoreError::MissingLayer("footprint vectors; run vectorize first".into()).into());
        }
        return Ok(format!("{} candidate sites ({} archived)", summary.candidate_count, summary.archived_count));
    }
    let (Some(h), Some(p)) = (&a.hist, &a.present) else {
        return Err(CoreError::InvalidArgument("pass --project, or --hist with --present".into()).into());
    };
    let mut hist = read_layer_geojson(h, Epoch::Historical)?;
    hist.epoch = Epoch::Historical;
    let mut present = read_layer_geojson(p, Epoch::Present)?;
    present.epoch = Epoch::Present;
    let sites = negative_profile(&hist, &present, &apply_overrides(OverlayParams::default(), a))?;
    if let Some(out) = &a.out {
        write_text(out, &(serde_json::to_string_pretty(&candidates_to_geojson(&sites, &hist.crs))? + "\n"))?;
    }
    Ok(format!("{} candidate sites", sites.len()))
}

fn eval(store: &ProjectStore, a: &EvalArgs) -> Result<String> {
    let report = match &a.project {
        Some(id) => {
            let lock = store.lock(id);
            let _g = lock.lock().unwrap();
            let mut project = store.load(id)?;
            pipeline::evaluate_layers(store, &mut project, &a.gt, &a.pred)?
        }
        None => {
            let classes = ClassTable::cadastre();
            let gt = read_mask_png(Path::new(&a.gt), &classes)?;
            let pred = read_mask_png(Path::new(&a.pred), &classes)?;
            evaluate(&gt, &pred, &classes)?
        }
    };
    if a.json {
        return Ok(serde_json::to_string_pretty(&report)?);
    }
    Ok(report.to_table().trim_end().to_string())
}

fn synth(store: &ProjectStore, a: &SynthArgs) -> Result<String> {
    let params = SynthParams {
        seed: a.seed,
        width: a.width,
        height: a.height,
        buildings: a.buildings,
        removed: a.removed,
        ..SynthParams::default()
    };
    let scene = generate(&params)?;
    std::fs::create_dir_all(&a.out)?;
    let map = a.out.join("map.png");
    let truth = a.out.join("truth.png");
    let present = a.out.join("present.png");
    save_layer(&Layer::Raster(scene.map.clone()), &map, None)?;
    save_layer(&Layer::Mask(scene.truth.clone()), &truth, None)?;
    save_layer(&Layer::Mask(scene.present.clone()), &present, None)?;
    let meta = json!({"params": params, "buildings": scene.buildings});
    write_text(&a.out.join("scene.json"), &(serde_json::to_string_pretty(&meta)? + "\n"))?;
    let mut msg = format!("scene with {} buildings ({} removed) in {}", scene.buildings.len(), a.removed, a.out.display());
    if let Some(name) = &a.project {
        let mut project = store.create(name, CrsTag::metric(params.crs.clone())?, OverlayParams::default())?;
        for (role, path) in [
            (LayerRole::HistoricalMap, &map),
            (LayerRole::HistoricalMask, &truth),
            (LayerRole::PresentMask, &present),
        ] {
            let world = std::fs::read(world_path_for(path))?;
            store.add_layer(&mut project, role, &std::fs::read(path)?, Some(&world), None)?;
        }
        msg.push_str(&format!("; project {}", project.project_id));
    }
    Ok(msg)
}

fn run(cli: Cli) -> Result<String> {
    if let Command::Serve(s) = &cli.command {
        let rt = tokio::runtime::Runtime::new()?;
        rt.block_on(crate::api::serve(cli.root.clone(), s.port))
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        return Ok(String::new());
    }
    let store = ProjectStore::new(&cli.root)?;
    match &cli.command {
        Command::Ingest(a) => ingest(&store, a),
        Command::Patch(a) => patch(a),
        Command::Split(a) => split(&store, a),
        Command::Segment(a) => segment(&store, a),
        Command::Vectorize(a) => vectorize(&store, a),
        Command::Overlay(a) => overlay(&store, a),
        Command::Eval(a) => eval(&store, a),
        Command::Synth(a) => synth(&store, a),
        Command::Serve(_) => unreachable!(),
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(out) => {
            if !out.is_empty() {
                println!("{out}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.body());
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
