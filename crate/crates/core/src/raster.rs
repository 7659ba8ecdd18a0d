//! Class-labelled and binary rasters, square-kernel morphology, connected
//! components, the pre/post change mask and the damage heatmap.
//!
//! All operators treat pixels outside the raster as background.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Semantic class codes stored in a [`Mask`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Class {
    Background = 0,
    Building = 1,
    Road = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Background, Class::Building, Class::Road];

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Class {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Class::Background),
            1 => Ok(Class::Building),
            2 => Ok(Class::Road),
            other => Err(Error::invalid(format!(
                "class code {other} is not one of 0 (background), 1 (building), 2 (road)"
            ))),
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Class::Background => "background",
            Class::Building => "building",
            Class::Road => "road",
        };
        f.write_str(name)
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "raster dimensions must be positive, got {width}x{height}"
        )));
    }
    if width.checked_mul(height) != Some(len) {
        return Err(Error::invalid(format!(
            "raster of {width}x{height} needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

fn same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            left_width: a.0,
            left_height: a.1,
            right_width: b.0,
            right_height: b.1,
        });
    }
    Ok(())
}

/// Row-major grid of class codes in `{0, 1, 2}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        check_dims(width, height, labels.len())?;
        if let Some((idx, &bad)) = labels.iter().enumerate().find(|(_, &v)| v > 2) {
            return Err(Error::invalid(format!(
                "label {bad} at pixel ({}, {}) is outside {{0, 1, 2}}",
                idx % width,
                idx / width
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, class: Class) -> Result<Self> {
        Self::new(width, height, vec![class.code(); width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> Class {
        // Codes are validated on every write path.
        match self.labels[y * self.width + x] {
            1 => Class::Building,
            2 => Class::Road,
            _ => Class::Background,
        }
    }

    pub fn set(&mut self, x: usize, y: usize, class: Class) {
        self.labels[y * self.width + x] = class.code();
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&v| v == class.code()).count()
    }
}

/// Row-major grid of `{0, 1}` values.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        check_dims(width, height, bits.len())?;
        if let Some(bad) = bits.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!(
                "binary mask value {bad} is not 0 or 1"
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0; width * height])
    }

    pub fn ones(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![1; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y) as u8);
            }
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    /// Like [`get`](Self::get) but returns `false` outside the raster.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    /// Positive pixels as `(x, y)` in row-major order.
    pub fn ones_iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(&a, &b)| a <= b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a & b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a | b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(u8, u8) -> u8) -> Result<BinaryMask> {
        same_dims(self.dims(), other.dims())?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Square structuring element with an odd side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    size: usize,
}

impl StructuringElement {
    pub fn square(size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "structuring element size must be odd and >= 1, got {size}"
            )));
        }
        Ok(Self { size })
    }

    pub fn size(self) -> usize {
        self.size
    }

    pub fn radius(self) -> usize {
        self.size / 2
    }
}

#[derive(Clone, Copy)]
enum Window {
    Any,
    All,
}

/// One separable pass of a square window along rows (`horizontal`) or columns.
fn window_pass(src: &[u8], width: usize, height: usize, r: usize, horizontal: bool, op: Window) -> Vec<u8> {
    let (lines, len) = if horizontal { (height, width) } else { (width, height) };
    let idx = |line: usize, pos: usize| {
        if horizontal {
            line * width + pos
        } else {
            pos * width + line
        }
    };
    let full = 2 * r + 1;
    let mut out = vec![0u8; src.len()];
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        for pos in 0..len {
            prefix[pos + 1] = prefix[pos] + src[idx(line, pos)] as usize;
        }
        for pos in 0..len {
            let lo = pos.saturating_sub(r);
            let hi = (pos + r).min(len - 1);
            let ones = prefix[hi + 1] - prefix[lo];
            out[idx(line, pos)] = match op {
                Window::Any => (ones > 0) as u8,
                // Out-of-raster pixels count as zeros, so a clipped window never passes.
                Window::All => (ones == full) as u8,
            };
        }
    }
    out
}

fn square_filter(mask: &BinaryMask, se: StructuringElement, iterations: usize, op: Window) -> BinaryMask {
    let r = se.radius();
    let mut bits = mask.bits.clone();
    if r > 0 {
        for _ in 0..iterations {
            let rows = window_pass(&bits, mask.width, mask.height, r, true, op);
            bits = window_pass(&rows, mask.width, mask.height, r, false, op);
        }
    }
    BinaryMask {
        width: mask.width,
        height: mask.height,
        bits,
    }
}

/// Binary dilation with a square element, repeated `iterations` times.
pub fn dilate(mask: &BinaryMask, se: StructuringElement, iterations: usize) -> BinaryMask {
    square_filter(mask, se, iterations, Window::Any)
}

/// Binary erosion with a square element, repeated `iterations` times.
pub fn erode(mask: &BinaryMask, se: StructuringElement, iterations: usize) -> BinaryMask {
    square_filter(mask, se, iterations, Window::All)
}

/// Morphological opening: one erosion followed by one dilation.
pub fn open(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se, 1), se, 1)
}

/// Pixels labelled building or road before the event and background after it.
pub fn compute_change_mask(pre: &Mask, post: &Mask) -> Result<BinaryMask> {
    same_dims(pre.dims(), post.dims())?;
    let bits = pre
        .labels
        .iter()
        .zip(&post.labels)
        .map(|(&a, &b)| (a != 0 && b == 0) as u8)
        .collect();
    Ok(BinaryMask {
        width: pre.width,
        height: pre.height,
        bits,
    })
}

pub fn class_mask(mask: &Mask, code: u8) -> Result<BinaryMask> {
    let class = Class::try_from(code)?;
    Ok(BinaryMask {
        width: mask.width,
        height: mask.height,
        bits: mask
            .labels
            .iter()
            .map(|&v| (v == class.code()) as u8)
            .collect(),
    })
}

/// 8-connected component labelling of positive pixels.
#[derive(Debug, Clone)]
pub struct Components {
    /// Per-pixel component id, `0` for background; ids start at 1 in the
    /// row-major order of each component's first pixel.
    pub labels: Vec<u32>,
    /// `areas[id - 1]` is the pixel count of component `id`.
    pub areas: Vec<usize>,
}

pub fn label_components(mask: &BinaryMask) -> Components {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.bits[start] == 0 || labels[start] != 0 {
            continue;
        }
        let id = areas.len() as u32 + 1;
        let mut area = 0;
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            area += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits[j] != 0 && labels[j] == 0 {
                        labels[j] = id;
                        stack.push(j);
                    }
                }
            }
        }
        areas.push(area);
    }
    Components { labels, areas }
}

/// Clears every 8-connected component with fewer than `min_area` pixels.
pub fn remove_small_blobs(mask: &BinaryMask, min_area: usize) -> BinaryMask {
    if min_area == 0 {
        return mask.clone();
    }
    let comps = label_components(mask);
    let bits = comps
        .labels
        .iter()
        .map(|&id| (id != 0 && comps.areas[id as usize - 1] >= min_area) as u8)
        .collect();
    BinaryMask {
        width: mask.width,
        height: mask.height,
        bits,
    }
}

/// Changed-pixel counts over a regular grid of square cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeHeatmap {
    pub cell_size: usize,
    pub cols: usize,
    pub rows: usize,
    /// Row-major, `rows * cols` entries.
    pub counts: Vec<u64>,
}

impl ChangeHeatmap {
    pub fn get(&self, col: usize, row: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn damage_heatmap(diff: &BinaryMask, cell_size: usize) -> Result<ChangeHeatmap> {
    if cell_size == 0 {
        return Err(Error::invalid("heatmap cell size must be >= 1"));
    }
    let cols = diff.width.div_ceil(cell_size);
    let rows = diff.height.div_ceil(cell_size);
    let mut counts = vec![0u64; cols * rows];
    for (x, y) in diff.ones_iter() {
        counts[(y / cell_size) * cols + x / cell_size] += 1;
    }
    Ok(ChangeHeatmap {
        cell_size,
        cols,
        rows,
        counts,
    })
}
