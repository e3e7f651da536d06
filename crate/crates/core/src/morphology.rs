//! Binary masks, Euclidean-disk morphology and connected components.

use crate::raster::ClassMask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize, "bit buffer size");
        Self { width, height, bits }
    }

    /// Pixels of `mask` whose label satisfies `pred`.
    pub fn from_mask(mask: &ClassMask, pred: impl Fn(u8) -> bool) -> Self {
        Self::from_bits(mask.width(), mask.height(), mask.labels().iter().map(|&l| pred(l)).collect())
    }

    /// Row-major rows of 0/1 values.
    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let height = rows.len() as u32;
        let width = rows.first().map_or(0, |r| r.len()) as u32;
        let bits = rows.iter().flat_map(|r| r.iter().map(|&v| v != 0)).collect();
        Self::from_bits(width, height, bits)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, col: u32, row: u32) -> bool {
        self.bits[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, v: bool) {
        self.bits[row as usize * self.width as usize + col as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn not(&self) -> Self {
        Self::from_bits(self.width, self.height, self.bits.iter().map(|b| !b).collect())
    }

    pub fn and(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a && !b)
    }

    pub fn or(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a || b)
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        assert_eq!((self.width, self.height), (other.width, other.height), "mask dims");
        Self::from_bits(
            self.width,
            self.height,
            self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        )
    }
}

/// Half-widths of the disk `dx^2 + dy^2 <= radius^2`, indexed by `|dy|`.
fn disk_half_widths(radius: f64) -> Vec<i64> {
    if !(radius >= 0.0) {
        return vec![0];
    }
    let r2 = radius * radius;
    let reach = radius.floor() as i64;
    (0..=reach)
        .map(|dy| {
            let mut w = ((r2 - (dy * dy) as f64).max(0.0)).sqrt().floor() as i64;
            while ((w + 1) * (w + 1) + dy * dy) as f64 <= r2 {
                w += 1;
            }
            while w > 0 && (w * w + dy * dy) as f64 > r2 {
                w -= 1;
            }
            w
        })
        .collect()
}

/// Every pixel whose center lies within Euclidean distance `radius` of a
/// foreground pixel center. Radius 0 is the identity; negative radii are
/// treated as 0.
pub fn dilate(mask: &BinaryMask, radius: f64) -> BinaryMask {
    let half = disk_half_widths(radius);
    let (w, h) = (mask.width as usize, mask.height as usize);
    if w == 0 || h == 0 {
        return mask.clone();
    }
    // prefix[row][x] = foreground count in row[0..x]
    let mut prefix = vec![0u32; h * (w + 1)];
    for row in 0..h {
        let base = row * (w + 1);
        for x in 0..w {
            prefix[base + x + 1] = prefix[base + x] + mask.bits[row * w + x] as u32;
        }
    }
    let reach = half.len() as i64 - 1;
    let mut out = vec![false; w * h];
    for ty in 0..h as i64 {
        for dy in -reach..=reach {
            let sy = ty + dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            let hw = half[dy.unsigned_abs() as usize];
            let base = sy as usize * (w + 1);
            if prefix[base + w] == 0 {
                continue;
            }
            for x in 0..w as i64 {
                let lo = (x - hw).max(0) as usize;
                let hi = ((x + hw + 1).min(w as i64)) as usize;
                if prefix[base + hi] > prefix[base + lo] {
                    out[ty as usize * w + x as usize] = true;
                }
            }
        }
    }
    BinaryMask::from_bits(mask.width, mask.height, out)
}

/// Dual of [`dilate`]; pixels outside the image count as foreground.
pub fn erode(mask: &BinaryMask, radius: f64) -> BinaryMask {
    dilate(&mask.not(), radius).not()
}

pub fn open(mask: &BinaryMask, radius: f64) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}

pub fn close(mask: &BinaryMask, radius: f64) -> BinaryMask {
    erode(&dilate(mask, radius), radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
        }
    }
}

/// Connected-component labelling. Labels start at 1 in raster order of
/// each component's first pixel; 0 marks pixels outside any component.
#[derive(Debug, Clone)]
pub struct Components {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
    /// `sizes[k]` is the pixel count of label `k + 1`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn label(&self, col: u32, row: u32) -> u32 {
        self.labels[row as usize * self.width as usize + col as usize]
    }
}

/// Labels groups of pixels with `same(i, j)` true between neighbours,
/// considering only pixels where `member(i)` holds.
pub fn label_by(
    width: u32,
    height: u32,
    connectivity: Connectivity,
    member: impl Fn(usize) -> bool,
    same: impl Fn(usize, usize) -> bool,
) -> Components {
    let (w, h) = (width as i64, height as i64);
    let mut labels = vec![0u32; (w * h) as usize];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..(w * h) as usize {
        if labels[start] != 0 || !member(start) {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let mut size = 0usize;
        while let Some(p) = stack.pop() {
            size += 1;
            let (x, y) = ((p as i64) % w, (p as i64) / w);
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let q = (ny * w + nx) as usize;
                if labels[q] == 0 && member(q) && same(p, q) {
                    labels[q] = label;
                    stack.push(q);
                }
            }
        }
        sizes.push(size);
    }
    Components { width, height, labels, sizes }
}

pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> Components {
    label_by(mask.width, mask.height, connectivity, |i| mask.bits[i], |_, _| true)
}

/// Drops 4-connected components with fewer than `min_area` pixels.
pub fn remove_small_components(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    if min_area <= 1 {
        return mask.clone();
    }
    let comps = label_components(mask, Connectivity::Four);
    let bits = comps
        .labels
        .iter()
        .map(|&l| l != 0 && comps.sizes[l as usize - 1] >= min_area)
        .collect();
    BinaryMask::from_bits(mask.width, mask.height, bits)
}
