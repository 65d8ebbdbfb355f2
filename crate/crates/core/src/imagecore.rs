//! Raster and geometry primitives shared by every pipeline stage.
//!
//! Intensities are stored as `f64` in `[0, 1]`; quantization to 8 bits only
//! happens in [`crate::preprocess::quantize_8bit`] and on export. Geometry uses
//! continuous coordinates where pixel `(i, j)` covers `[i, i+1) x [j, j+1)` and
//! its center sits at `(i + 0.5, j + 0.5)`.

use std::collections::BTreeMap;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Landmark names every [`LandmarkSet`] must carry.
pub const REQUIRED_LANDMARKS: [&str; 5] = [
    "medial_tibia_margin",
    "lateral_tibia_margin",
    "tibial_plateau_left",
    "tibial_plateau_right",
    "medial_condyle_center",
];

#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    spacing: f64,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, spacing: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        check_spacing(spacing)?;
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite intensity".into()));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
            spacing,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64, spacing: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], spacing)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        spacing: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels, spacing)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Same raster with its pixels replaced; dimensions and spacing are kept.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        Self::new(self.width, self.height, pixels, self.spacing)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_pixels(self.pixels.iter().map(|&v| f(v)).collect())
    }

    pub fn mirror_horizontal(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            pixels.extend(row.iter().rev());
        }
        GrayImage {
            pixels,
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

fn check_spacing(spacing: f64) -> Result<()> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pixel spacing must be positive, got {spacing}"
        )));
    }
    Ok(())
}

/// Where a mask came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OriginTag {
    Adaptive,
    AdaptiveAverage,
    StandardRect,
}

impl OriginTag {
    pub fn as_str(self) -> &'static str {
        match self {
            OriginTag::Adaptive => "Adaptive",
            OriginTag::AdaptiveAverage => "AdaptiveAverage",
            OriginTag::StandardRect => "StandardRect",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "Adaptive" => Ok(OriginTag::Adaptive),
            "AdaptiveAverage" => Ok(OriginTag::AdaptiveAverage),
            "StandardRect" => Ok(OriginTag::StandardRect),
            other => Err(Error::InvalidArgument(format!("unknown roi tag {other:?}"))),
        }
    }
}

/// Half-open pixel bounding box `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Boolean pixel mask with at least one set pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoiMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    origin: OriginTag,
}

impl RoiMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>, origin: OriginTag) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} mask bits for a {width}x{height} frame",
                bits.len()
            )));
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::EmptyMask("mask has no set pixels".into()));
        }
        Ok(RoiMask {
            width,
            height,
            bits,
            origin,
        })
    }

    pub fn full(width: usize, height: usize, origin: OriginTag) -> Result<Self> {
        Self::new(width, height, vec![true; width * height], origin)
    }

    /// Axis-aligned rectangle `[x0, x1) x [y0, y1)` clipped to the frame.
    pub fn rect(
        width: usize,
        height: usize,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        origin: OriginTag,
    ) -> Result<Self> {
        let mut bits = vec![false; width * height];
        for y in y0.min(height)..y1.min(height) {
            for x in x0.min(width)..x1.min(width) {
                bits[y * width + x] = true;
            }
        }
        Self::new(width, height, bits, origin)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn origin(&self) -> OriginTag {
        self.origin
    }

    pub fn with_origin(mut self, origin: OriginTag) -> Self {
        self.origin = origin;
        self
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// `get` that treats out-of-frame coordinates as unset.
    #[inline]
    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bbox(&self) -> BBox {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.bits[y * self.width + x] {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        BBox { x0, y0, x1, y1 }
    }

    /// Centroid of set pixel centers in continuous coordinates.
    pub fn centroid(&self) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.bits[y * self.width + x] {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        (sx / n as f64, sy / n as f64)
    }

    pub fn mirror_horizontal(&self) -> Self {
        let mut bits = Vec::with_capacity(self.bits.len());
        for row in self.bits.chunks(self.width) {
            bits.extend(row.iter().rev());
        }
        RoiMask {
            bits,
            ..self.clone()
        }
    }

    pub fn intersect(&self, other: &RoiMask) -> Result<Self> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch("mask frames differ".into()));
        }
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a && b)
            .collect();
        Self::new(self.width, self.height, bits, self.origin)
    }

    /// True when the set pixels form a single 4-connected component.
    pub fn is_connected(&self) -> bool {
        let (_, sizes) = components4(self.width, self.height, |i| self.bits[i]);
        sizes.len() == 1
    }

    /// Keeps only the largest 4-connected component; ties go to the component
    /// met first in row-major order.
    pub fn largest_component(&self) -> Self {
        let (ids, sizes) = components4(self.width, self.height, |i| self.bits[i]);
        let mut best = 0;
        for (c, &s) in sizes.iter().enumerate() {
            if s > sizes[best] {
                best = c;
            }
        }
        let bits = ids.iter().map(|&c| c == best as i64).collect();
        RoiMask {
            bits,
            ..self.clone()
        }
    }
}

/// 4-connected component labeling of the pixels selected by `member`.
///
/// Returns per-pixel component ids (-1 for non-members) numbered in row-major
/// order of first appearance, plus the size of every component.
pub fn components4(
    width: usize,
    height: usize,
    member: impl Fn(usize) -> bool,
) -> (Vec<i64>, Vec<usize>) {
    components4_by(width, height, |i| if member(i) { Some(0) } else { None })
}

/// Like [`components4`], but two neighbors join only when `key` returns the
/// same value for both.
pub fn components4_by(
    width: usize,
    height: usize,
    key: impl Fn(usize) -> Option<i64>,
) -> (Vec<i64>, Vec<usize>) {
    let n = width * height;
    let mut ids = vec![-1i64; n];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if ids[start] != -1 {
            continue;
        }
        let Some(k) = key(start) else { continue };
        let id = sizes.len() as i64;
        ids[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = (i % width, i / width);
            let mut visit = |j: usize| {
                if ids[j] == -1 && key(j) == Some(k) {
                    ids[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        sizes.push(size);
    }
    (ids, sizes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

/// Named anatomical points plus closed bone contours for one knee.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkSet {
    pub points: Vec<Landmark>,
    #[serde(default)]
    pub contours: BTreeMap<String, Vec<[f64; 2]>>,
}

impl LandmarkSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let set: LandmarkSet = serde_json::from_str(text)?;
        set.validate_structure()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("landmarks serialize")
    }

    /// Name uniqueness for required points and minimum contour length.
    pub fn validate_structure(&self) -> Result<()> {
        for name in REQUIRED_LANDMARKS {
            let n = self.points.iter().filter(|p| p.name == name).count();
            if n != 1 {
                return Err(Error::Landmarks(format!(
                    "landmark {name:?} must appear exactly once, found {n}"
                )));
            }
        }
        for (name, pts) in &self.contours {
            if pts.len() < 3 {
                return Err(Error::Landmarks(format!(
                    "contour {name:?} has {} points, need at least 3",
                    pts.len()
                )));
            }
        }
        Ok(())
    }

    pub fn validate_bounds(&self, width: usize, height: usize) -> Result<()> {
        let inside = |x: f64, y: f64| {
            x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x <= width as f64 && y <= height as f64
        };
        for p in &self.points {
            if !inside(p.x, p.y) {
                return Err(Error::Landmarks(format!(
                    "point {:?} at ({}, {}) outside {width}x{height}",
                    p.name, p.x, p.y
                )));
            }
        }
        for (name, pts) in &self.contours {
            if pts.iter().any(|&[x, y]| !inside(x, y)) {
                return Err(Error::Landmarks(format!(
                    "contour {name:?} leaves the {width}x{height} frame"
                )));
            }
        }
        Ok(())
    }

    pub fn point(&self, name: &str) -> Result<(f64, f64)> {
        self.points
            .iter()
            .find(|p| p.name == name)
            .map(|p| (p.x, p.y))
            .ok_or_else(|| Error::Landmarks(format!("missing landmark {name:?}")))
    }

    pub fn contour(&self, name: &str) -> Result<&[[f64; 2]]> {
        self.contours
            .get(name)
            .map(|c| c.as_slice())
            .ok_or_else(|| Error::Landmarks(format!("missing contour {name:?}")))
    }

    /// Applies a point map to every landmark and contour vertex.
    pub fn transform(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let points = self
            .points
            .iter()
            .map(|p| {
                let (x, y) = f(p.x, p.y);
                Landmark {
                    name: p.name.clone(),
                    x,
                    y,
                }
            })
            .collect();
        let contours = self
            .contours
            .iter()
            .map(|(k, pts)| {
                let moved = pts
                    .iter()
                    .map(|&[x, y]| {
                        let (u, v) = f(x, y);
                        [u, v]
                    })
                    .collect();
                (k.clone(), moved)
            })
            .collect();
        LandmarkSet { points, contours }
    }

    /// Mirror about the vertical center line of a `width`-wide frame. The
    /// image-side plateau names swap; anatomical names stay put.
    pub fn mirror_horizontal(&self, width: usize) -> Self {
        let w = width as f64;
        let mut out = self.transform(|x, y| (w - x, y));
        for p in &mut out.points {
            if p.name == "tibial_plateau_left" {
                p.name = "tibial_plateau_right".into();
            } else if p.name == "tibial_plateau_right" {
                p.name = "tibial_plateau_left".into();
            }
        }
        for pts in out.contours.values_mut() {
            pts.reverse();
        }
        out
    }
}

/// Reads an 8- or 16-bit single-channel PNG or binary PGM, mapping the
/// integer range linearly onto `[0, 1]`.
pub fn load_raster(path: &Path, spacing: f64) -> Result<GrayImage> {
    check_spacing(spacing)?;
    let raster_err = |reason: String| Error::Raster {
        path: path.to_path_buf(),
        reason,
    };
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| raster_err(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let pixels: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        other => {
            return Err(raster_err(format!(
                "expected a single-channel raster, got {:?}",
                other.color()
            )))
        }
    };
    GrayImage::new(w, h, pixels, spacing)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_buffer<P: image::Pixel<Subpixel = S> + image::PixelWithColorType, S: image::Primitive>(
    buf: ImageBuffer<P, Vec<S>>,
    path: &Path,
) -> Result<()>
where
    [S]: image::EncodableLayout,
{
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save(path).map_err(|e| Error::Raster {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Writes an 8-bit grayscale PNG (or PGM when the extension is `.pgm`).
pub fn save_raster_8bit(img: &GrayImage, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.pixels().iter().map(|&v| to_u8(v)).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).expect("buffer size");
    save_buffer(buf, path)
}

/// Writes a 16-bit grayscale PNG, `round(v * 65535)` per pixel.
pub fn save_raster_16bit(img: &GrayImage, path: &Path) -> Result<()> {
    let raw = img
        .pixels()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    save_png16(img.width(), img.height(), raw, path)
}

/// Mask as an 8-bit PNG: set pixels 255, others 0.
pub fn save_mask_png(mask: &RoiMask, path: &Path) -> Result<()> {
    let raw: Vec<u8> = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.width() as u32, mask.height() as u32, raw).expect("buffer size");
    save_buffer(buf, path)
}

pub fn load_mask_png(path: &Path, origin: OriginTag) -> Result<RoiMask> {
    let img = load_raster(path, 1.0)?;
    let bits = img.pixels().iter().map(|&v| v >= 0.5).collect();
    RoiMask::new(img.width(), img.height(), bits, origin)
}

/// 16-bit single-channel PNG from raw values.
pub fn save_png16(width: usize, height: usize, values: Vec<u16>, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, values).expect("buffer size");
    save_buffer(buf, path)
}

pub fn load_png16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let decoded = image::open(path).map_err(|e| Error::Raster {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    Ok((w, h, decoded.into_luma16().into_raw()))
}

/// Tight bounding-box crop of an image and its mask; spacing is preserved.
pub fn crop_bbox(img: &GrayImage, mask: &RoiMask) -> Result<(GrayImage, RoiMask)> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.width(),
            img.height(),
            mask.width(),
            mask.height()
        )));
    }
    let b = mask.bbox();
    let (w, h) = (b.width(), b.height());
    let mut pixels = Vec::with_capacity(w * h);
    let mut bits = Vec::with_capacity(w * h);
    for y in b.y0..b.y1 {
        for x in b.x0..b.x1 {
            pixels.push(img.get(x, y));
            bits.push(mask.get(x, y));
        }
    }
    Ok((
        GrayImage::new(w, h, pixels, img.spacing())?,
        RoiMask::new(w, h, bits, mask.origin())?,
    ))
}

fn polygon_area(contour: &[[f64; 2]]) -> f64 {
    let n = contour.len();
    let mut acc = 0.0;
    for i in 0..n {
        let [x0, y0] = contour[i];
        let [x1, y1] = contour[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

/// Even-odd rasterization of a closed polygon; a pixel is set when its center
/// lies inside.
pub fn polygon_fill(contour: &[[f64; 2]], width: usize, height: usize) -> Result<RoiMask> {
    if contour.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "polygon needs at least 3 points, got {}",
            contour.len()
        )));
    }
    if polygon_area(contour).abs() < 1e-12 {
        return Err(Error::EmptyMask("polygon has zero area".into()));
    }
    let n = contour.len();
    let mut bits = vec![false; width * height];
    let mut crossings = Vec::new();
    for row in 0..height {
        let y = row as f64 + 0.5;
        crossings.clear();
        for i in 0..n {
            let [xi, yi] = contour[i];
            let [xj, yj] = contour[(i + n - 1) % n];
            if (yi > y) != (yj > y) {
                crossings.push((xj - xi) * (y - yi) / (yj - yi) + xi);
            }
        }
        if crossings.is_empty() {
            continue;
        }
        crossings.sort_by(|a, b| a.total_cmp(b));
        for col in 0..width {
            let x = col as f64 + 0.5;
            // number of crossings strictly to the right of the center
            let right = crossings.len() - crossings.partition_point(|&c| c <= x);
            if right % 2 == 1 {
                bits[row * width + col] = true;
            }
        }
    }
    RoiMask::new(width, height, bits, OriginTag::Adaptive)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pnpoly(contour: &[[f64; 2]], x: f64, y: f64) -> bool {
        let mut inside = false;
        let n = contour.len();
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = contour[i];
            let [xj, yj] = contour[j];
            if ((yi > y) != (yj > y)) && (x < (xj - xi) * (y - yi) / (yj - yi) + xi) {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    #[test]
    fn rectangle_fill_counts_strict_interior_centers() {
        let rect = [[1.0, 1.0], [4.0, 1.0], [4.0, 3.0], [1.0, 3.0]];
        let m = polygon_fill(&rect, 6, 6).unwrap();
        assert_eq!(m.count(), 6);
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(m.get(x, y), pnpoly(&rect, x as f64 + 0.5, y as f64 + 0.5));
            }
        }
    }

    #[test]
    fn triangle_on_tiny_frame_matches_brute_force() {
        let tri = [[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]];
        let m = polygon_fill(&tri, 2, 2).unwrap();
        assert!(m.count() <= 2);
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(m.get(x, y), pnpoly(&tri, x as f64 + 0.5, y as f64 + 0.5));
            }
        }
    }

    #[test]
    fn collinear_polygon_is_rejected() {
        let line = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(polygon_fill(&line, 4, 4), Err(Error::EmptyMask(_))));
    }

    #[test]
    fn crop_of_full_mask_is_identity() {
        let img = GrayImage::from_fn(5, 4, 0.2, |x, y| (x * 7 + y) as f64 / 40.0).unwrap();
        let m = RoiMask::full(5, 4, OriginTag::StandardRect).unwrap();
        let (c, cm) = crop_bbox(&img, &m).unwrap();
        assert_eq!(c, img);
        assert_eq!(cm, m);
    }

    #[test]
    fn crop_single_pixel() {
        let img = GrayImage::from_fn(8, 8, 0.3, |x, y| (x + 8 * y) as f64 / 64.0).unwrap();
        let m = RoiMask::rect(8, 8, 3, 5, 4, 6, OriginTag::Adaptive).unwrap();
        let (c, cm) = crop_bbox(&img, &m).unwrap();
        assert_eq!((c.width(), c.height()), (1, 1));
        assert_eq!(c.get(0, 0), img.get(3, 5));
        assert_eq!(c.spacing(), 0.3);
        assert!(cm.get(0, 0));
    }

    #[test]
    fn crop_l_shape_matches_index_arithmetic() {
        let img = GrayImage::from_fn(10, 10, 0.2, |x, y| (x * 10 + y) as f64 / 100.0).unwrap();
        let mut bits = vec![false; 100];
        for y in 2..7 {
            bits[y * 10 + 3] = true;
        }
        for x in 3..8 {
            bits[6 * 10 + x] = true;
        }
        let m = RoiMask::new(10, 10, bits.clone(), OriginTag::Adaptive).unwrap();
        let (c, cm) = crop_bbox(&img, &m).unwrap();
        assert_eq!((c.width(), c.height()), (5, 5));
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(c.get(x, y), img.get(x + 3, y + 2));
                assert_eq!(cm.get(x, y), bits[(y + 2) * 10 + x + 3]);
            }
        }
    }

    #[test]
    fn empty_mask_rejected() {
        assert!(RoiMask::new(2, 2, vec![false; 4], OriginTag::Adaptive).is_err());
    }

    #[test]
    fn nonpositive_spacing_rejected() {
        assert!(GrayImage::filled(2, 2, 0.0, 0.0).is_err());
        assert!(GrayImage::filled(2, 2, 0.0, -1.0).is_err());
    }

    #[test]
    fn landmark_json_contract() {
        let text = r#"{"points":[
            {"name":"medial_tibia_margin","x":1,"y":2},
            {"name":"lateral_tibia_margin","x":9,"y":2},
            {"name":"tibial_plateau_left","x":1,"y":2},
            {"name":"tibial_plateau_right","x":9,"y":2},
            {"name":"medial_condyle_center","x":3,"y":2}],
            "contours":{"tibia":[[1,2],[9,2],[9,9],[1,9]],"femur":[[1,0],[9,0],[5,1]]}}"#;
        let lm = LandmarkSet::from_json(text).unwrap();
        assert_eq!(lm.point("lateral_tibia_margin").unwrap(), (9.0, 2.0));
        lm.validate_bounds(10, 10).unwrap();
        assert!(lm.validate_bounds(5, 5).is_err());
        let mirrored = lm.mirror_horizontal(10);
        assert_eq!(mirrored.point("tibial_plateau_left").unwrap(), (1.0, 2.0));
        assert_eq!(mirrored.mirror_horizontal(10), lm);
    }

    #[test]
    fn duplicate_landmark_rejected() {
        let text = r#"{"points":[
            {"name":"medial_tibia_margin","x":1,"y":2},
            {"name":"medial_tibia_margin","x":1,"y":2},
            {"name":"lateral_tibia_margin","x":9,"y":2},
            {"name":"tibial_plateau_left","x":1,"y":2},
            {"name":"tibial_plateau_right","x":9,"y":2},
            {"name":"medial_condyle_center","x":3,"y":2}]}"#;
        assert!(LandmarkSet::from_json(text).is_err());
    }

    #[test]
    fn largest_component_keeps_bigger_blob() {
        let mut bits = vec![false; 36];
        bits[0] = true;
        for y in 3..6 {
            for x in 3..6 {
                bits[y * 6 + x] = true;
            }
        }
        let m = RoiMask::new(6, 6, bits, OriginTag::AdaptiveAverage).unwrap();
        assert!(!m.is_connected());
        let l = m.largest_component();
        assert_eq!(l.count(), 9);
        assert!(l.is_connected());
    }
}
