//! Shared helpers: brute-force oracles written independently of the library
//! code paths they check, plus HTTP plumbing.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cadelta_core::geo::Georef;
use cadelta_core::overlay::{aligned_grid, OverlayParams};
use cadelta_core::raster::ClassMask;
use cadelta_core::vectorize::{Footprint, FootprintLayer};
use cadelta_core::ExactRatio;
use http_body_util::BodyExt;
use num_traits::FromPrimitive;
use serde_json::Value;
use tower::ServiceExt;

// ---------------------------------------------------------------- metrics

/// Per-class (intersection, union) by visiting every pixel.
pub fn count_iou(gt: &[u8], pred: &[u8], classes: &[u8]) -> BTreeMap<u8, (u64, u64)> {
    let mut out = BTreeMap::new();
    for &c in classes {
        let mut i = 0;
        let mut u = 0;
        for (&g, &p) in gt.iter().zip(pred) {
            if g == c && p == c {
                i += 1;
            }
            if g == c || p == c {
                u += 1;
            }
        }
        out.insert(c, (i, u));
    }
    out
}

pub fn q(n: u64, d: u64) -> ExactRatio {
    ExactRatio::from_u64(n).unwrap() / ExactRatio::from_u64(d).unwrap()
}

pub fn exact_micro(counts: &BTreeMap<u8, (u64, u64)>) -> ExactRatio {
    let i: u64 = counts.values().map(|c| c.0).sum();
    let u: u64 = counts.values().map(|c| c.1).sum();
    q(i, u)
}

pub fn exact_macro(counts: &BTreeMap<u8, (u64, u64)>) -> ExactRatio {
    let defined: Vec<_> = counts.values().filter(|c| c.1 > 0).collect();
    let sum = defined.iter().fold(q(0, 1), |acc, c| acc + q(c.0, c.1));
    sum / ExactRatio::from_usize(defined.len()).unwrap()
}

pub fn to_f64(r: &ExactRatio) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap()
}

// ---------------------------------------------------------------- geometry

/// Even-odd ray casting over every ring of the footprint.
pub fn point_in_footprint(fp: &Footprint, x: f64, y: f64) -> bool {
    let mut inside = false;
    for ring in std::iter::once(&fp.exterior).chain(&fp.holes) {
        let pts = &ring.points;
        for k in 0..pts.len() - 1 {
            let (a, b) = (pts[k], pts[k + 1]);
            if (a[1] > y) != (b[1] > y) && x < a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0]) {
                inside = !inside;
            }
        }
    }
    inside
}

/// Pixel indices whose centers fall inside the footprint.
pub fn pixels_of(fp: &Footprint, geo: &Georef, w: u32, h: u32) -> BTreeSet<usize> {
    // Restrict the scan to the footprint's bbox; the ray cast decides.
    let mut rows = (f64::INFINITY, f64::NEG_INFINITY);
    let mut cols = rows;
    for x in [fp.bbox[0], fp.bbox[2]] {
        for y in [fp.bbox[1], fp.bbox[3]] {
            let (c, r) = geo.transform.world_to_pixel(x, y).unwrap();
            cols = (cols.0.min(c), cols.1.max(c));
            rows = (rows.0.min(r), rows.1.max(r));
        }
    }
    let span = |lo: f64, hi: f64, n: u32| (lo.floor().max(0.0) as u32)..((hi.ceil() + 1.0).clamp(0.0, n as f64) as u32);
    let mut out = BTreeSet::new();
    for r in span(rows.0, rows.1, h) {
        for c in span(cols.0, cols.1, w) {
            let (x, y) = geo.transform.pixel_to_world(c as f64, r as f64);
            if point_in_footprint(fp, x, y) {
                out.insert((r * w + c) as usize);
            }
        }
    }
    out
}

/// 4-connected components of the set pixels, each as a sorted pixel set.
pub fn components4(bits: &[bool], w: u32, h: u32) -> Vec<BTreeSet<usize>> {
    let (w, h) = (w as usize, h as usize);
    let mut seen = vec![false; bits.len()];
    let mut out = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || seen[start] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            comp.insert(p);
            let (x, y) = (p % w, p / w);
            let mut push = |q: usize| {
                if bits[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                push(p - 1);
            }
            if x + 1 < w {
                push(p + 1);
            }
            if y > 0 {
                push(p - w);
            }
            if y + 1 < h {
                push(p + w);
            }
        }
        out.push(comp);
    }
    out
}

pub struct OracleSite {
    pub pixels: BTreeSet<usize>,
    pub ratio: f64,
    pub sources: BTreeSet<String>,
}

pub struct OracleRun {
    pub georef: Georef,
    pub width: u32,
    pub height: u32,
    pub sites: Vec<OracleSite>,
    /// 4-connected components of the rasterized historical layer.
    pub hist_components: Vec<BTreeSet<usize>>,
}

/// Negative profile by brute force on the same aligned working grid.
pub fn overlay_oracle(hist: &FootprintLayer, present: &FootprintLayer, p: &OverlayParams) -> OracleRun {
    let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for fp in &hist.footprints {
        for pt in &fp.exterior.points {
            bbox = [bbox[0].min(pt[0]), bbox[1].min(pt[1]), bbox[2].max(pt[0]), bbox[3].max(pt[1])];
        }
    }
    let r = (p.buffer_m / p.working_resolution_m).round() as i64;
    let (georef, w, h) = aligned_grid(bbox, p.working_resolution_m, r as u32 + 2, hist.crs.clone());
    let n = (w * h) as usize;
    let hist_px: Vec<BTreeSet<usize>> = hist.footprints.iter().map(|f| pixels_of(f, &georef, w, h)).collect();
    let mut in_hist = vec![false; n];
    for s in &hist_px {
        for &i in s {
            in_hist[i] = true;
        }
    }
    let mut dilated = vec![false; n];
    for f in &present.footprints {
        for i in pixels_of(f, &georef, w, h) {
            let (x, y) = ((i % w as usize) as i64, (i / w as usize) as i64);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if dx * dx + dy * dy <= r * r && nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 {
                        dilated[(ny * w as i64 + nx) as usize] = true;
                    }
                }
            }
        }
    }
    let negative: Vec<bool> = (0..n).map(|i| in_hist[i] && !dilated[i]).collect();
    let ratios: Vec<f64> = hist_px
        .iter()
        .map(|s| if s.is_empty() { 0.0 } else { s.iter().filter(|&&i| negative[i]).count() as f64 / s.len() as f64 })
        .collect();
    let px_area = p.working_resolution_m * p.working_resolution_m;
    let mut sites = Vec::new();
    for comp in components4(&negative, w, h) {
        if (comp.len() as f64) * px_area < p.min_site_area_m2 {
            continue;
        }
        let src: Vec<usize> = (0..hist_px.len()).filter(|&k| hist_px[k].iter().any(|i| comp.contains(i))).collect();
        let best = src.iter().map(|&k| ratios[k]).fold(f64::NEG_INFINITY, f64::max);
        if src.is_empty() || best < p.uncovered_ratio_threshold {
            continue;
        }
        sites.push(OracleSite {
            pixels: comp,
            ratio: best,
            sources: src.iter().map(|&k| hist.footprints[k].id.clone()).collect(),
        });
    }
    let hist_components = components4(&in_hist, w, h);
    OracleRun { georef, width: w, height: h, sites, hist_components }
}

// ---------------------------------------------------------------- masks

pub fn labels_of(mask: &ClassMask) -> Vec<u8> {
    mask.labels().to_vec()
}

// ---------------------------------------------------------------- http

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

pub async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut b = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            b = b.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let (status, bytes) = send(app, b.body(body).unwrap()).await;
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

pub const BOUNDARY: &str = "cadelta-test-boundary";

/// Multipart body with a `role` text field and `image` / `world` file parts.
pub fn multipart_body(role: &str, image: &[u8], world: Option<&[u8]>, crs: Option<&str>) -> Vec<u8> {
    let mut body = Vec::new();
    let text = |name: &str, value: &str, body: &mut Vec<u8>| {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"\r\n\r\n{value}\r\n").as_bytes(),
        );
    };
    text("role", role, &mut body);
    if let Some(c) = crs {
        text("crs", c, &mut body);
    }
    let file = |name: &str, fname: &str, ct: &str, data: &[u8], body: &mut Vec<u8>| {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{fname}\"\r\nContent-Type: {ct}\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(data);
        body.extend_from_slice(b"\r\n");
    };
    file("image", "layer.png", "image/png", image, &mut body);
    if let Some(w) = world {
        file("world", "layer.pgw", "text/plain", w, &mut body);
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

pub async fn upload(app: &Router, project: &str, role: &str, image: &[u8], world: Option<&[u8]>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method("POST")
        .uri(format!("/projects/{project}/layers"))
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart_body(role, image, world, None)))
        .unwrap();
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

/// Polls a job until it leaves the queued/running states.
pub async fn wait_job(app: &Router, job_id: &str) -> Value {
    for _ in 0..6000 {
        let (_, v) = call_json(app, "GET", &format!("/jobs/{job_id}"), None).await;
        if v["state"] == "done" || v["state"] == "failed" {
            return v;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    panic!("job {job_id} did not finish");
}

// ---------------------------------------------------------------- files

/// Every file below `root`, relative, sorted.
pub fn list_files(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}

/// Removes timestamp fields at any depth.
pub fn strip_timestamps(v: &mut Value) {
    match v {
        Value::Object(m) => {
            for key in ["created_at", "updated_at"] {
                m.remove(key);
            }
            m.values_mut().for_each(strip_timestamps);
        }
        Value::Array(a) => a.iter_mut().for_each(strip_timestamps),
        _ => {}
    }
}
