//! PNG + world-file persistence for rasters and class masks.
//!
//! Imagery is stored as 8-bit gray, RGB or RGBA PNG. Masks are stored as
//! 8-bit indexed PNG whose palette index is the class id, so the raw file
//! carries the labels while viewers show class colors. Georeferencing lives
//! in a sidecar world file (`.pgw`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{CrsTag, GeoTransform, Georef};
use crate::raster::{ClassMask, ClassTable, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    HistoricalMap,
    PresentImagery,
    HistoricalMask,
    PresentMask,
    Diff,
}

impl LayerRole {
    pub fn is_mask(self) -> bool {
        matches!(self, LayerRole::HistoricalMask | LayerRole::PresentMask)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerRole::HistoricalMap => "historical_map",
            LayerRole::PresentImagery => "present_imagery",
            LayerRole::HistoricalMask => "historical_mask",
            LayerRole::PresentMask => "present_mask",
            LayerRole::Diff => "diff",
        }
    }
}

impl std::str::FromStr for LayerRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "historical_map" => LayerRole::HistoricalMap,
            "present_imagery" => LayerRole::PresentImagery,
            "historical_mask" => LayerRole::HistoricalMask,
            "present_mask" => LayerRole::PresentMask,
            "diff" => LayerRole::Diff,
            other => return Err(Error::InvalidArgument(format!("unknown layer role {other:?}"))),
        })
    }
}

/// A layer file registered in a project. Paths are relative to the project root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub layer_id: String,
    pub role: LayerRole,
    pub raster_path: PathBuf,
    pub world_path: Option<PathBuf>,
    pub crs: CrsTag,
}

/// A decoded layer: imagery or class labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Raster(Raster),
    Mask(ClassMask),
}

impl Layer {
    pub fn geo(&self) -> Option<&Georef> {
        match self {
            Layer::Raster(r) => r.geo.as_ref(),
            Layer::Mask(m) => m.geo.as_ref(),
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        match self {
            Layer::Raster(r) => (r.width(), r.height()),
            Layer::Mask(m) => (m.width(), m.height()),
        }
    }

    pub fn into_mask(self) -> Option<ClassMask> {
        match self {
            Layer::Mask(m) => Some(m),
            Layer::Raster(_) => None,
        }
    }

    pub fn into_raster(self) -> Option<Raster> {
        match self {
            Layer::Raster(r) => Some(r),
            Layer::Mask(_) => None,
        }
    }
}

/// Conventional world-file path next to a PNG.
pub fn world_path_for(raster_path: &Path) -> PathBuf {
    raster_path.with_extension("pgw")
}

pub fn load_layer(root: &Path, desc: &LayerDescriptor, classes: &ClassTable) -> Result<Layer> {
    let raster_path = root.join(&desc.raster_path);
    let world_path = desc.world_path.as_ref().map(|p| root.join(p));
    let geo = match &world_path {
        Some(p) => Some(Georef::new(GeoTransform::read_world_file(p)?, desc.crs.clone())),
        None => None,
    };
    if desc.role.is_mask() {
        let mask = read_mask_png(&raster_path, classes).map_err(|e| match e {
            Error::LabelOutOfTable(v) => Error::Decode {
                path: raster_path.clone(),
                message: format!("label value {v} is not in the class table {:?}", classes.ids()),
            },
            other => other,
        })?;
        Ok(Layer::Mask(mask.with_geo(geo)))
    } else {
        Ok(Layer::Raster(read_png(&raster_path)?.with_geo(geo)))
    }
}

/// Writes the layer PNG and, when the layer is georeferenced, its world file.
pub fn save_layer(layer: &Layer, raster_path: &Path, world_path: Option<&Path>) -> Result<()> {
    match layer {
        Layer::Raster(r) => write_png(r, raster_path)?,
        Layer::Mask(m) => write_mask_png(m, raster_path)?,
    }
    if let Some(geo) = layer.geo() {
        let wp = world_path.map(Path::to_path_buf).unwrap_or_else(|| world_path_for(raster_path));
        write_atomic(&wp, geo.transform.to_world_file().as_bytes())?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode { path: path.to_path_buf(), message: e.to_string() }
}

pub fn read_png(path: &Path) -> Result<Raster> {
    decode_png(open(path)?, path)
}

pub fn decode_png<R: std::io::BufRead + std::io::Seek>(reader: R, path: &Path) -> Result<Raster> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    buf.truncate(info.buffer_size());
    if info.bit_depth != png::BitDepth::Eight {
        return Err(decode_err(path, format!("unsupported bit depth {:?}", info.bit_depth)));
    }
    let (bands, samples) = match info.color_type {
        png::ColorType::Grayscale => (1, buf),
        png::ColorType::Rgb => (3, buf),
        png::ColorType::Rgba => (4, buf),
        png::ColorType::GrayscaleAlpha => {
            let rgba = buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0], p[1]]).collect();
            (4, rgba)
        }
        png::ColorType::Indexed => return Err(decode_err(path, "palette was not expanded")),
    };
    Raster::new(info.width, info.height, bands, samples).map_err(|e| decode_err(path, e))
}

/// Reads a single-band mask: gray or indexed 8-bit, raw values are class ids.
pub fn read_mask_png(path: &Path, classes: &ClassTable) -> Result<ClassMask> {
    decode_mask_png(open(path)?, path, classes)
}

pub fn decode_mask_png<R: std::io::BufRead + std::io::Seek>(
    reader: R,
    path: &Path,
    classes: &ClassTable,
) -> Result<ClassMask> {
    let mut decoder = png::Decoder::new(reader);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(path, e))?;
    buf.truncate(info.buffer_size());
    if !matches!(info.color_type, png::ColorType::Grayscale | png::ColorType::Indexed) {
        return Err(decode_err(
            path,
            format!("mask must be single-band, found {:?}", info.color_type),
        ));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(decode_err(path, format!("mask must be 8-bit, found {:?}", info.bit_depth)));
    }
    ClassMask::new(info.width, info.height, buf, classes.clone())
}

pub fn encode_png(raster: &Raster) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, raster.width(), raster.height());
        enc.set_color(match raster.bands() {
            1 => png::ColorType::Grayscale,
            3 => png::ColorType::Rgb,
            _ => png::ColorType::Rgba,
        });
        enc.set_depth(png::BitDepth::Eight);
        // Balanced is ~30x slower on full-size sheets for ~20% smaller files.
        enc.set_compression(png::Compression::Fast);
        let mut writer = enc.write_header().map_err(png_write_err)?;
        writer.write_image_data(raster.samples()).map_err(png_write_err)?;
    }
    Ok(out)
}

pub fn encode_mask_png(mask: &ClassMask) -> Result<Vec<u8>> {
    let max_id = mask.classes().ids().into_iter().max().unwrap_or(0);
    let palette: Vec<u8> = (0..=max_id).flat_map(|id| mask.classes().color(id)).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, mask.width(), mask.height());
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette);
        let mut writer = enc.write_header().map_err(png_write_err)?;
        writer.write_image_data(mask.labels()).map_err(png_write_err)?;
    }
    Ok(out)
}

fn png_write_err(e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::InvalidArgument(other.to_string()),
    }
}

pub fn write_png(raster: &Raster, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(raster)?)
}

pub fn write_mask_png(mask: &ClassMask, path: &Path) -> Result<()> {
    write_atomic(path, &encode_mask_png(mask)?)
}

/// Decodes PNG bytes held in memory.
pub fn png_from_bytes(bytes: &[u8]) -> Result<Raster> {
    decode_png(Cursor::new(bytes), Path::new("<memory>"))
}

pub fn mask_from_bytes(bytes: &[u8], classes: &ClassTable) -> Result<ClassMask> {
    decode_mask_png(Cursor::new(bytes), Path::new("<memory>"), classes)
}

/// Writes `bytes` to a temporary file in the destination directory, syncs
/// it, then renames it over `path`. Readers see either the old or the new
/// content, never a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::Builder::new().prefix(".tmp-").tempfile_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        w.write_all(bytes)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
