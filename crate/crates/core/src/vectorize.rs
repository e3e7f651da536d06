//! Mask to polygon conversion and back.
//!
//! Tracing follows pixel edges: each 4-connected same-class component is the
//! union of its unit pixel squares, so footprint areas are exact pixel
//! counts and [`rasterize`] (pixel-center inclusion) reproduces the mask.
//! Background is treated as 8-connected, so two pixels of a component that
//! only touch at a corner are kept apart by the boundary walk.
//!
//! Rings are closed (first point repeated last). In world coordinates
//! (Y up) exteriors are counter-clockwise and holes clockwise.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo::{CrsTag, GeoTransform, Georef};
use crate::morphology::{label_by, Connectivity};
use crate::raster::{ClassMask, ClassTable, BACKGROUND};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Epoch {
    Historical,
    Present,
}

impl Epoch {
    pub fn as_str(self) -> &'static str {
        match self {
            Epoch::Historical => "historical",
            Epoch::Present => "present",
        }
    }
}

/// Closed polygon ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring<T = f64> {
    pub points: Vec<[T; 2]>,
}

impl<T: Scalar> Ring<T> {
    /// Closes the ring if the last point differs from the first.
    pub fn new(mut points: Vec<[T; 2]>) -> Self {
        if let (Some(first), Some(last)) = (points.first().copied(), points.last().copied()) {
            if first != last {
                points.push(first);
            }
        }
        Self { points }
    }

    /// Shoelace area, positive for counter-clockwise rings in a Y-up frame.
    pub fn signed_area(&self) -> T {
        let mut acc = T::zero();
        for w in self.points.windows(2) {
            acc = acc + (w[0][0] * w[1][1] - w[1][0] * w[0][1]);
        }
        acc / T::lit(2.0)
    }

    /// Points without the closing duplicate.
    pub fn vertices(&self) -> &[[T; 2]] {
        &self.points[..self.points.len().saturating_sub(1)]
    }

    pub fn bbox(&self) -> [T; 4] {
        let mut b = [T::infinity(), T::infinity(), T::neg_infinity(), T::neg_infinity()];
        for p in &self.points {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self { points }
    }

    pub fn segments(&self) -> impl Iterator<Item = ([T; 2], [T; 2])> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    /// True when no two non-adjacent segments intersect or touch.
    pub fn is_simple(&self) -> bool {
        let segs: Vec<_> = self.segments().collect();
        let n = segs.len();
        if n < 3 {
            return false;
        }
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_touch(segs[i], segs[j]) {
                    return false;
                }
            }
        }
        true
    }

    pub fn cast<U: Scalar>(&self) -> Ring<U> {
        Ring {
            points: self
                .points
                .iter()
                .map(|p| [U::from(p[0]).unwrap(), U::from(p[1]).unwrap()])
                .collect(),
        }
    }
}

fn orient<T: Scalar>(a: [T; 2], b: [T; 2], c: [T; 2]) -> T {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment<T: Scalar>(a: [T; 2], b: [T; 2], p: [T; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

fn segments_touch<T: Scalar>(s: ([T; 2], [T; 2]), t: ([T; 2], [T; 2])) -> bool {
    let (p1, p2) = s;
    let (q1, q2) = t;
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    let z = T::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    (d1 == z && on_segment(q1, q2, p1))
        || (d2 == z && on_segment(q1, q2, p2))
        || (d3 == z && on_segment(p1, p2, q1))
        || (d4 == z && on_segment(p1, p2, q2))
}

/// Distance from `p` to segment `ab`.
pub fn point_segment_distance<T: Scalar>(p: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == T::zero() {
        T::zero()
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).max(T::zero()).min(T::one())
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Footprint<T = f64> {
    pub id: String,
    pub exterior: Ring<T>,
    pub holes: Vec<Ring<T>>,
    pub class_id: u8,
    pub area_m2: T,
    /// `[min_x, min_y, max_x, max_y]`
    pub bbox: [T; 4],
}

impl<T: Scalar> Footprint<T> {
    /// Builds a footprint, normalizing ring orientation and deriving area and bbox.
    pub fn new(id: impl Into<String>, exterior: Ring<T>, holes: Vec<Ring<T>>, class_id: u8) -> Self {
        let exterior = if exterior.signed_area() < T::zero() { exterior.reversed() } else { exterior };
        let holes: Vec<Ring<T>> = holes
            .into_iter()
            .map(|h| if h.signed_area() > T::zero() { h.reversed() } else { h })
            .collect();
        let area = holes.iter().fold(exterior.signed_area(), |acc, h| acc + h.signed_area());
        let bbox = exterior.bbox();
        Self { id: id.into(), exterior, holes, class_id, area_m2: area, bbox }
    }

    pub fn rings(&self) -> impl Iterator<Item = &Ring<T>> {
        std::iter::once(&self.exterior).chain(self.holes.iter())
    }

    /// Even-odd point-in-polygon over exterior and holes.
    pub fn contains(&self, x: T, y: T) -> bool {
        let mut inside = false;
        for ring in self.rings() {
            for (p, q) in ring.segments() {
                if (p[1] > y) != (q[1] > y) {
                    let xi = p[0] + (y - p[1]) * (q[0] - p[0]) / (q[1] - p[1]);
                    if x < xi {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintLayer<T = f64> {
    pub epoch: Epoch,
    pub crs: CrsTag,
    pub footprints: Vec<Footprint<T>>,
}

impl<T: Scalar> FootprintLayer<T> {
    pub fn new(epoch: Epoch, crs: CrsTag) -> Self {
        Self { epoch, crs, footprints: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.footprints.is_empty()
    }

    pub fn bbox(&self) -> Option<[T; 4]> {
        self.footprints.iter().map(|f| f.bbox).reduce(|a, b| {
            [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])]
        })
    }

    pub fn total_area(&self) -> T {
        self.footprints.iter().fold(T::zero(), |acc, f| acc + f.area_m2)
    }
}

struct Edge {
    from: (i64, i64),
    to: (i64, i64),
    pixel: usize,
}

/// Boundary loops of one component in corner coordinates (Y down).
fn component_loops(pixels: &[usize], width: usize, member: impl Fn(i64, i64) -> bool) -> Vec<Vec<(i64, i64)>> {
    let mut edges = Vec::new();
    for &p in pixels {
        let (x, y) = ((p % width) as i64, (p / width) as i64);
        // Clockwise on screen: the pixel lies to the right of each edge.
        if !member(x, y - 1) {
            edges.push(Edge { from: (x, y), to: (x + 1, y), pixel: p });
        }
        if !member(x + 1, y) {
            edges.push(Edge { from: (x + 1, y), to: (x + 1, y + 1), pixel: p });
        }
        if !member(x, y + 1) {
            edges.push(Edge { from: (x + 1, y + 1), to: (x, y + 1), pixel: p });
        }
        if !member(x - 1, y) {
            edges.push(Edge { from: (x, y + 1), to: (x, y), pixel: p });
        }
    }
    let mut outgoing: HashMap<(i64, i64), [Option<usize>; 2]> = HashMap::with_capacity(edges.len());
    for (i, e) in edges.iter().enumerate() {
        let slot = outgoing.entry(e.from).or_insert([None, None]);
        if slot[0].is_none() {
            slot[0] = Some(i);
        } else {
            slot[1] = Some(i);
        }
    }
    let next_edge = |cur: usize| -> usize {
        let slot = outgoing[&edges[cur].to];
        match slot {
            [Some(a), None] => a,
            // Corner pinch: stay on the pixel we arrived along.
            [Some(a), Some(b)] => {
                if edges[a].pixel == edges[cur].pixel {
                    a
                } else {
                    b
                }
            }
            _ => unreachable!("boundary edges always continue"),
        }
    };
    let mut used = vec![false; edges.len()];
    let mut loops = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut verts = Vec::new();
        let mut cur = start;
        loop {
            used[cur] = true;
            verts.push(edges[cur].from);
            let nxt = next_edge(cur);
            if nxt == start {
                break;
            }
            debug_assert!(!used[nxt], "boundary walk revisited an edge");
            cur = nxt;
        }
        loops.push(merge_collinear(verts));
    }
    loops
}

fn merge_collinear(verts: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    let n = verts.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let prev = verts[(i + n - 1) % n];
        let cur = verts[i];
        let next = verts[(i + 1) % n];
        let cross = (cur.0 - prev.0) * (next.1 - cur.1) - (cur.1 - prev.1) * (next.0 - cur.0);
        if cross != 0 {
            out.push(cur);
        }
    }
    out
}

fn doubled_area(verts: &[(i64, i64)]) -> i64 {
    let n = verts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (verts[i], verts[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum()
}

/// One footprint per 4-connected same-class component, in raster order of
/// each component's first pixel.
pub fn trace_footprints<T: Scalar>(mask: &ClassMask, epoch: Epoch) -> Result<FootprintLayer<T>> {
    let geo = mask.geo.as_ref().ok_or(Error::MissingGeoreference)?;
    geo.crs.ensure_metric()?;
    let transform: GeoTransform<T> = geo.transform.cast();
    let flip = transform.determinant() < T::zero();
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let labels = mask.labels();
    let comps = label_by(
        mask.width(),
        mask.height(),
        Connectivity::Four,
        |i| labels[i] != BACKGROUND,
        |i, j| labels[i] == labels[j],
    );
    let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); comps.count()];
    for (i, &l) in comps.labels.iter().enumerate() {
        if l != 0 {
            pixels[l as usize - 1].push(i);
        }
    }
    let to_world = |(cx, cy): (i64, i64)| -> [T; 2] {
        let (x, y) = transform.corner_to_world(T::from_i64(cx).unwrap(), T::from_i64(cy).unwrap());
        [x, y]
    };
    let mut layer = FootprintLayer::new(epoch, geo.crs.clone());
    for (k, px) in pixels.iter().enumerate() {
        let label = k as u32 + 1;
        let member = |x: i64, y: i64| {
            x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && comps.labels[y as usize * w + x as usize] == label
        };
        let mut exterior = None;
        let mut holes = Vec::new();
        for lp in component_loops(px, w, member) {
            let outer = doubled_area(&lp) > 0;
            let mut pts: Vec<[T; 2]> = lp.into_iter().map(to_world).collect();
            if flip {
                pts.reverse();
            }
            let ring = Ring::new(pts);
            if outer {
                debug_assert!(exterior.is_none(), "component with two outer loops");
                exterior = Some(ring);
            } else {
                holes.push(ring);
            }
        }
        let exterior = exterior.expect("every component has an outer loop");
        let mut fp = Footprint::new(format!("{}-{}", epoch.as_str(), k), exterior, holes, labels[px[0]]);
        fp.area_m2 = T::from_usize(px.len()).unwrap() * transform.pixel_area();
        layer.footprints.push(fp);
    }
    Ok(layer)
}

/// Calls `visit(col, row)` for every pixel whose center falls inside the
/// footprint (inside the exterior, outside all holes).
pub fn for_each_covered_pixel<T: Scalar>(
    fp: &Footprint<T>,
    transform: &GeoTransform<f64>,
    width: u32,
    height: u32,
    mut visit: impl FnMut(u32, u32),
) -> Result<()> {
    let mut rings: Vec<Vec<(f64, f64)>> = Vec::new();
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for ring in fp.rings() {
        let mut pts = Vec::with_capacity(ring.points.len());
        for p in &ring.points {
            let (c, r) = transform.world_to_pixel(p[0].to_f64().unwrap(), p[1].to_f64().unwrap())?;
            min_y = min_y.min(r);
            max_y = max_y.max(r);
            pts.push((c, r));
        }
        rings.push(pts);
    }
    if !(min_y <= max_y) {
        return Ok(());
    }
    let row_lo = min_y.ceil().max(0.0);
    let row_hi = max_y.floor().min(height as f64 - 1.0);
    if row_lo > row_hi {
        return Ok(());
    }
    let mut xs = Vec::new();
    for row in row_lo as u32..=row_hi as u32 {
        let y = row as f64;
        xs.clear();
        for pts in &rings {
            for e in pts.windows(2) {
                let (p, q) = (e[0], e[1]);
                if (p.1 <= y) != (q.1 <= y) {
                    xs.push(p.0 + (y - p.1) * (q.0 - p.0) / (q.1 - p.1));
                }
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for pair in xs.chunks_exact(2) {
            let lo = pair[0].ceil().max(0.0);
            let hi = (pair[1].ceil() - 1.0).min(width as f64 - 1.0);
            if lo <= hi {
                for col in lo as u32..=hi as u32 {
                    visit(col, row);
                }
            }
        }
    }
    Ok(())
}

/// Burns footprints onto a grid; later footprints overwrite earlier ones.
pub fn rasterize<T: Scalar>(
    layer: &FootprintLayer<T>,
    target: &Georef,
    width: u32,
    height: u32,
    classes: &ClassTable,
) -> Result<ClassMask> {
    layer.crs.ensure_same(&target.crs)?;
    layer.crs.ensure_metric()?;
    let mut mask = ClassMask::empty(width, height, classes.clone())?.with_geo(Some(target.clone()));
    for fp in &layer.footprints {
        if !classes.contains(fp.class_id) {
            return Err(Error::LabelOutOfTable(fp.class_id));
        }
        for_each_covered_pixel(fp, &target.transform, width, height, |c, r| mask.set(c, r, fp.class_id))?;
    }
    Ok(mask)
}

fn douglas_peucker<T: Scalar>(pts: &[[T; 2]], lo: usize, hi: usize, eps: T, keep: &mut [bool]) {
    if hi <= lo + 1 {
        return;
    }
    let mut best = (T::zero(), lo);
    for i in lo + 1..hi {
        let d = point_segment_distance(pts[i], pts[lo], pts[hi]);
        if d > best.0 {
            best = (d, i);
        }
    }
    if best.0 > eps {
        keep[best.1] = true;
        douglas_peucker(pts, lo, best.1, eps, keep);
        douglas_peucker(pts, best.1, hi, eps, keep);
    }
}

/// Douglas-Peucker on a closed ring, anchored at the first vertex and the
/// vertex farthest from it. `None` when the result would not be a valid ring.
fn simplify_ring<T: Scalar>(ring: &Ring<T>, eps: T) -> Option<Ring<T>> {
    let verts = ring.vertices();
    let n = verts.len();
    if n < 3 {
        return None;
    }
    let far = (1..n)
        .max_by(|&i, &j| {
            let di = (verts[i][0] - verts[0][0]).powi(2) + (verts[i][1] - verts[0][1]).powi(2);
            let dj = (verts[j][0] - verts[0][0]).powi(2) + (verts[j][1] - verts[0][1]).powi(2);
            di.partial_cmp(&dj).unwrap()
        })
        .unwrap();
    let closed: Vec<[T; 2]> = verts.iter().copied().chain(std::iter::once(verts[0])).collect();
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[far] = true;
    keep[n] = true;
    douglas_peucker(&closed, 0, far, eps, &mut keep);
    douglas_peucker(&closed, far, n, eps, &mut keep);
    let pts: Vec<[T; 2]> = closed.iter().zip(&keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect();
    let out = Ring { points: pts };
    let original_sign = ring.signed_area() > T::zero();
    if out.points.len() < 4 || out.signed_area() == T::zero() || (out.signed_area() > T::zero()) != original_sign {
        return None;
    }
    if !out.is_simple() {
        return None;
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simplified<T = f64> {
    pub footprint: Footprint<T>,
    /// Set when a ring could not be simplified without degenerating and was
    /// kept as is.
    pub degenerate: bool,
}

pub fn simplify<T: Scalar>(fp: &Footprint<T>, epsilon: T) -> Result<Simplified<T>> {
    if !(epsilon >= T::zero()) {
        return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let mut degenerate = false;
    let mut simplify_or_keep = |r: &Ring<T>| match simplify_ring(r, epsilon) {
        Some(s) => s,
        None => {
            degenerate = true;
            r.clone()
        }
    };
    let exterior = simplify_or_keep(&fp.exterior);
    let holes: Vec<Ring<T>> = fp.holes.iter().map(&mut simplify_or_keep).collect();
    let mut out = Footprint::new(fp.id.clone(), exterior, holes, fp.class_id);
    if out.exterior == fp.exterior && out.holes == fp.holes {
        out.area_m2 = fp.area_m2;
    }
    Ok(Simplified { footprint: out, degenerate })
}

pub fn simplify_layer<T: Scalar>(layer: &FootprintLayer<T>, epsilon: T) -> Result<(FootprintLayer<T>, usize)> {
    let mut degenerate = 0;
    let mut out = FootprintLayer::new(layer.epoch, layer.crs.clone());
    for fp in &layer.footprints {
        let s = simplify(fp, epsilon)?;
        degenerate += s.degenerate as usize;
        out.footprints.push(s.footprint);
    }
    Ok((out, degenerate))
}

fn ring_coords(r: &Ring<f64>) -> Value {
    Value::Array(r.points.iter().map(|p| json!([p[0], p[1]])).collect())
}

/// FeatureCollection with one Polygon feature per footprint. The CRS code is
/// carried in the foreign member `crs_tag`.
pub fn layer_to_geojson(layer: &FootprintLayer<f64>) -> Value {
    let features: Vec<Value> = layer
        .footprints
        .iter()
        .map(|fp| {
            let mut coords = vec![ring_coords(&fp.exterior)];
            coords.extend(fp.holes.iter().map(ring_coords));
            json!({
                "type": "Feature",
                "id": fp.id,
                "bbox": fp.bbox,
                "geometry": {"type": "Polygon", "coordinates": coords},
                "properties": {
                    "class_id": fp.class_id,
                    "area_m2": fp.area_m2,
                    "epoch": layer.epoch,
                },
            })
        })
        .collect();
    json!({
        "type": "FeatureCollection",
        "crs_tag": layer.crs.code,
        "crs_units": layer.crs.units,
        "features": features,
    })
}

fn bad_geojson(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(format!("invalid footprint GeoJSON: {}", msg.into()))
}

pub fn layer_from_geojson(value: &Value) -> Result<FootprintLayer<f64>> {
    let code = value["crs_tag"].as_str().ok_or_else(|| bad_geojson("missing crs_tag"))?;
    let units = match value.get("crs_units") {
        Some(u) => serde_json::from_value(u.clone())?,
        None => crate::geo::LinearUnit::Metre,
    };
    let crs = CrsTag::new(code, units)?;
    let features = value["features"].as_array().ok_or_else(|| bad_geojson("missing features"))?;
    let mut epoch = None;
    let mut footprints = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let props = &f["properties"];
        let e: Epoch = serde_json::from_value(props["epoch"].clone())?;
        if *epoch.get_or_insert(e) != e {
            return Err(bad_geojson("mixed epochs in one layer"));
        }
        let class_id = props["class_id"]
            .as_u64()
            .and_then(|c| u8::try_from(c).ok())
            .ok_or_else(|| bad_geojson("class_id"))?;
        let rings: Vec<Vec<[f64; 2]>> = serde_json::from_value(f["geometry"]["coordinates"].clone())?;
        let mut rings = rings.into_iter().map(Ring::new);
        let exterior = rings.next().ok_or_else(|| bad_geojson("polygon without rings"))?;
        let id = f["id"].as_str().map(str::to_string).unwrap_or_else(|| format!("{i}"));
        let mut fp = Footprint::new(id, exterior, rings.collect(), class_id);
        if let Some(a) = props["area_m2"].as_f64() {
            fp.area_m2 = a;
        }
        footprints.push(fp);
    }
    Ok(FootprintLayer { epoch: epoch.unwrap_or(Epoch::Historical), crs, footprints })
}

/// Reads a layer, taking the epoch from the file when it has features.
pub fn read_layer_geojson(path: &std::path::Path, epoch: Epoch) -> Result<FootprintLayer<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut layer = layer_from_geojson(&serde_json::from_str(&text)?)?;
    if layer.footprints.is_empty() {
        layer.epoch = epoch;
    }
    Ok(layer)
}
