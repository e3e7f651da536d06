//! Planar quadtree tiles in the layer's own CRS.
//!
//! Level 0 is one tile covering the layer's bounding box padded to a square
//! (anchored at the upper-left corner). Each level halves the world span of
//! a tile. Tile pixels sample the world at their upper-left corner, so the
//! even pixels of four reassembled child tiles coincide with the parent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{ClassMask, Raster};
use crate::raster_io::Layer;

pub const TILE_SIZE: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileAddress {
    pub z: u32,
    pub x: u64,
    pub y: u64,
}

impl TileAddress {
    pub fn validate(&self) -> Result<()> {
        let out = || Error::AddressOutOfRange { z: self.z, x: self.x, y: self.y };
        if self.z > 30 {
            return Err(out());
        }
        let n = 1u64 << self.z;
        if self.x >= n || self.y >= n {
            return Err(out());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    Nearest,
    Bilinear,
}

/// Upper-left corner and side length of the level-0 tile.
pub fn root_square(layer: &Layer) -> Result<([f64; 2], f64)> {
    let geo = layer.geo().ok_or(Error::MissingGeoreference)?;
    let (w, h) = layer.dims();
    let b = geo.transform.extent_bbox(w, h);
    let side = (b[2] - b[0]).max(b[3] - b[1]);
    Ok(([b[0], b[3]], side))
}

fn rgba_of_mask(mask: &ClassMask, col: u32, row: u32) -> [u8; 4] {
    let l = mask.get(col, row);
    if l == 0 {
        return [0, 0, 0, 0];
    }
    let [r, g, b] = mask.classes().color(l);
    [r, g, b, 255]
}

fn rgba_of_raster(r: &Raster, col: u32, row: u32) -> [f64; 4] {
    let p = r.pixel(col, row);
    match p.len() {
        1 => [p[0] as f64, p[0] as f64, p[0] as f64, 255.0],
        2 => [p[0] as f64, p[0] as f64, p[0] as f64, p[1] as f64],
        3 => [p[0] as f64, p[1] as f64, p[2] as f64, 255.0],
        _ => [p[0] as f64, p[1] as f64, p[2] as f64, p[3] as f64],
    }
}

fn sample_bilinear(r: &Raster, c: f64, row: f64) -> [u8; 4] {
    let (w, h) = (r.width() as i64, r.height() as i64);
    let (c0, r0) = (c.floor(), row.floor());
    let (fx, fy) = (c - c0, row - r0);
    let clamp = |v: i64, n: i64| v.clamp(0, n - 1) as u32;
    let (x0, x1) = (clamp(c0 as i64, w), clamp(c0 as i64 + 1, w));
    let (y0, y1) = (clamp(r0 as i64, h), clamp(r0 as i64 + 1, h));
    let (p00, p10) = (rgba_of_raster(r, x0, y0), rgba_of_raster(r, x1, y0));
    let (p01, p11) = (rgba_of_raster(r, x0, y1), rgba_of_raster(r, x1, y1));
    let mut out = [0u8; 4];
    for k in 0..4 {
        let top = p00[k] * (1.0 - fx) + p10[k] * fx;
        let bottom = p01[k] * (1.0 - fx) + p11[k] * fx;
        out[k] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Renders one 256x256 RGBA tile. Pixels outside the layer are transparent.
pub fn render_tile(layer: &Layer, resampling: Resampling, addr: TileAddress) -> Result<Raster> {
    addr.validate()?;
    let geo = layer.geo().ok_or(Error::MissingGeoreference)?;
    let (w, h) = layer.dims();
    let (origin, side) = root_square(layer)?;
    // Power-of-two divisions keep sample positions bit-identical across levels.
    let step = side / (TILE_SIZE as f64 * (1u64 << addr.z) as f64);
    let mut samples = vec![0u8; (TILE_SIZE * TILE_SIZE * 4) as usize];
    for j in 0..TILE_SIZE {
        let gy = (addr.y * TILE_SIZE as u64 + j as u64) as f64;
        let y = origin[1] - gy * step;
        for i in 0..TILE_SIZE {
            let gx = (addr.x * TILE_SIZE as u64 + i as u64) as f64;
            let x = origin[0] + gx * step;
            let (c, r) = geo.transform.world_to_pixel(x, y)?;
            if c < -0.5 || r < -0.5 || c >= w as f64 - 0.5 || r >= h as f64 - 0.5 {
                continue;
            }
            let px = match (layer, resampling) {
                (Layer::Mask(m), _) => rgba_of_mask(m, (c + 0.5).floor() as u32, (r + 0.5).floor() as u32),
                (Layer::Raster(img), Resampling::Nearest) => {
                    rgba_of_raster(img, (c + 0.5).floor() as u32, (r + 0.5).floor() as u32).map(|v| v as u8)
                }
                (Layer::Raster(img), Resampling::Bilinear) => sample_bilinear(img, c, r),
            };
            let o = ((j * TILE_SIZE + i) * 4) as usize;
            samples[o..o + 4].copy_from_slice(&px);
        }
    }
    Raster::new(TILE_SIZE, TILE_SIZE, 4, samples)
}

/// True when every pixel of an RGBA tile is fully transparent.
pub fn is_blank(tile: &Raster) -> bool {
    tile.samples().chunks_exact(4).all(|p| p[3] == 0)
}
