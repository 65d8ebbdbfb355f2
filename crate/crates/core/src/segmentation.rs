//! Superpixel oversegmentation of bone masks and the region machinery built
//! on top of it: grid-point region lookup, region ranking by classifier
//! performance, average masks with Otsu thresholding, and the landmark-based
//! standard and anchor ROIs.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::{lbp_histogram, LbpParams};
use crate::error::{Error, Result};
use crate::imagecore::{
    components4_by, load_png16, save_png16, BBox, GrayImage, LandmarkSet, OriginTag, RoiMask,
};
use crate::learn::{self, CvConfig, SampleKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicParams {
    pub n_regions: usize,
    /// Weight `m` of the spatial term.
    pub compactness: f64,
    pub max_iters: usize,
    pub enforce_connectivity: bool,
    /// Multiplier applied to `[0, 1]` intensities before the color distance.
    pub intensity_scale: f64,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            n_regions: 100,
            compactness: 0.08,
            max_iters: 10,
            enforce_connectivity: true,
            intensity_scale: 1.0,
        }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_regions == 0 || !(self.compactness > 0.0) || self.max_iters == 0 || !(self.intensity_scale > 0.0) {
            return Err(Error::Config(format!("invalid SLIC parameters {self:?}")));
        }
        Ok(())
    }
}

/// Per-pixel superpixel labels; `-1` marks pixels outside the bone mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<i32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {width}x{height} frame",
                labels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> i32 {
        self.labels[y * self.width + x]
    }

    pub fn n_labels(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
    }

    /// Pixels carrying `label`.
    pub fn label_mask(&self, label: i32) -> Result<RoiMask> {
        let bits = self.labels.iter().map(|&l| l == label).collect();
        RoiMask::new(self.width, self.height, bits, OriginTag::Adaptive)
    }

    /// 16-bit PNG with labels shifted by one so the background is 0.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let values = self.labels.iter().map(|&l| (l + 1) as u16).collect();
        save_png16(self.width, self.height, values, path)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let (w, h, values) = load_png16(path)?;
        Self::new(w, h, values.into_iter().map(|v| v as i32 - 1).collect())
    }
}

#[derive(Clone, Copy, Debug)]
struct Center {
    intensity: f64,
    x: f64,
    y: f64,
}

/// Full SLIC result including the per-iteration assignment energy.
#[derive(Clone, Debug)]
pub struct SlicOutput {
    pub labels: LabelMap,
    /// Sum of squared distances after each assignment step.
    pub energy: Vec<f64>,
}

pub fn slic_segment(img: &GrayImage, bone: &RoiMask, params: &SlicParams) -> Result<LabelMap> {
    Ok(slic_segment_traced(img, bone, params)?.labels)
}

/// Grayscale SLIC restricted to `bone`.
///
/// The distance is `D^2 = dc^2 + (ds / S)^2 m^2` with `dc` the scaled
/// intensity difference and `ds` the pixel distance. A pixel keeps its
/// current center unless a center inside the `2S x 2S` search window is
/// strictly closer, so the recorded energy never increases.
pub fn slic_segment_traced(img: &GrayImage, bone: &RoiMask, params: &SlicParams) -> Result<SlicOutput> {
    params.validate()?;
    if img.width() != bone.width() || img.height() != bone.height() {
        return Err(Error::DimensionMismatch("image and bone mask frames differ".into()));
    }
    let (w, h) = (img.width(), img.height());
    let n_bone = bone.count();
    if n_bone < params.n_regions {
        return Err(Error::InvalidArgument(format!(
            "bone mask has {n_bone} pixels, fewer than {} regions",
            params.n_regions
        )));
    }
    if params.n_regions == 1 {
        let labels = bone.bits().iter().map(|&b| if b { 0 } else { -1 }).collect();
        return Ok(SlicOutput {
            labels: LabelMap::new(w, h, labels)?,
            energy: vec![],
        });
    }

    let step = (n_bone as f64 / params.n_regions as f64).sqrt();
    let scale = params.intensity_scale;
    let spatial = (params.compactness / step).powi(2);
    let mut centers = initial_centers(img, bone, step);

    let mut labels = vec![-1i32; w * h];
    let mut dist = vec![f64::INFINITY; w * h];
    let mut energy = Vec::with_capacity(params.max_iters);
    let d2 = |c: &Center, x: usize, y: usize| {
        let dc = (img.get(x, y) - c.intensity) * scale;
        let dx = x as f64 - c.x;
        let dy = y as f64 - c.y;
        dc * dc + (dx * dx + dy * dy) * spatial
    };

    for _ in 0..params.max_iters {
        for i in 0..w * h {
            dist[i] = match labels[i] {
                l if l >= 0 => d2(&centers[l as usize], i % w, i / w),
                _ => f64::INFINITY,
            };
        }
        for (k, c) in centers.iter().enumerate() {
            let x0 = (c.x - step).floor().max(0.0) as usize;
            let y0 = (c.y - step).floor().max(0.0) as usize;
            let x1 = ((c.x + step).ceil() as usize).min(w - 1);
            let y1 = ((c.y + step).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    if !bone.bits()[i] {
                        continue;
                    }
                    let d = d2(c, x, y);
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = k as i32;
                    }
                }
            }
        }
        // pixels no window reached fall back to the globally nearest center
        for i in 0..w * h {
            if bone.bits()[i] && labels[i] < 0 {
                let (x, y) = (i % w, i / w);
                let (k, d) = centers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k, d2(c, x, y)))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                labels[i] = k as i32;
                dist[i] = d;
            }
        }
        energy.push((0..w * h).filter(|&i| bone.bits()[i]).map(|i| dist[i]).sum());

        let mut acc = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            if l >= 0 {
                let a = &mut acc[l as usize];
                a.0 += img.pixels()[i];
                a.1 += (i % w) as f64;
                a.2 += (i / w) as f64;
                a.3 += 1;
            }
        }
        for (c, a) in centers.iter_mut().zip(acc) {
            if a.3 > 0 {
                let n = a.3 as f64;
                *c = Center {
                    intensity: a.0 / n,
                    x: a.1 / n,
                    y: a.2 / n,
                };
            }
        }
    }

    if params.enforce_connectivity {
        merge_orphan_fragments(&mut labels, w, h);
    }
    relabel_dense(&mut labels);
    Ok(SlicOutput {
        labels: LabelMap::new(w, h, labels)?,
        energy,
    })
}

fn gradient_energy(img: &GrayImage, x: usize, y: usize) -> f64 {
    let (w, h) = (img.width(), img.height());
    let gx = img.get((x + 1).min(w - 1), y) - img.get(x.saturating_sub(1), y);
    let gy = img.get(x, (y + 1).min(h - 1)) - img.get(x, y.saturating_sub(1));
    gx * gx + gy * gy
}

/// Regular lattice of step `step` over the mask bounding box, keeping points
/// inside the mask, each nudged to the lowest-gradient in-mask pixel of its
/// 3x3 neighborhood.
fn initial_centers(img: &GrayImage, bone: &RoiMask, step: f64) -> Vec<Center> {
    let b = bone.bbox();
    let nx = ((b.width() as f64 / step).round() as usize).max(1);
    let ny = ((b.height() as f64 / step).round() as usize).max(1);
    let mut centers = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let x = b.x0 + ((i as f64 + 0.5) * b.width() as f64 / nx as f64) as usize;
            let y = b.y0 + ((j as f64 + 0.5) * b.height() as f64 / ny as f64) as usize;
            if !bone.get(x, y) {
                continue;
            }
            let (mut bx, mut by) = (x, y);
            let mut best = gradient_energy(img, x, y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if !bone.contains(xx, yy) {
                        continue;
                    }
                    let g = gradient_energy(img, xx as usize, yy as usize);
                    if g < best {
                        best = g;
                        bx = xx as usize;
                        by = yy as usize;
                    }
                }
            }
            centers.push(Center {
                intensity: img.get(bx, by),
                x: bx as f64,
                y: by as f64,
            });
        }
    }
    if centers.is_empty() {
        let i = bone.bits().iter().position(|&b| b).expect("nonempty mask");
        let (x, y) = (i % img.width(), i / img.width());
        centers.push(Center {
            intensity: img.get(x, y),
            x: x as f64,
            y: y as f64,
        });
    }
    centers
}

fn find(parent: &mut [usize], mut a: usize) -> usize {
    while parent[a] != a {
        parent[a] = parent[parent[a]];
        a = parent[a];
    }
    a
}

/// Every label keeps its largest 4-connected piece; the other pieces are
/// absorbed, smallest first, by the neighboring piece they share the longest
/// border with.
fn merge_orphan_fragments(labels: &mut [i32], w: usize, h: usize) {
    let (comp, sizes) = components4_by(w, h, |i| (labels[i] >= 0).then_some(labels[i] as i64));
    let n = sizes.len();
    if n == 0 {
        return;
    }
    let mut comp_label = vec![0i32; n];
    for (i, &c) in comp.iter().enumerate() {
        if c >= 0 {
            comp_label[c as usize] = labels[i];
        }
    }
    let mut main: HashMap<i32, usize> = HashMap::new();
    for c in 0..n {
        let e = main.entry(comp_label[c]).or_insert(c);
        if sizes[c] > sizes[*e] {
            *e = c;
        }
    }
    let mut contacts: Vec<HashMap<usize, usize>> = vec![HashMap::new(); n];
    for y in 0..h {
        for x in 0..w {
            let a = comp[y * w + x];
            if a < 0 {
                continue;
            }
            let mut touch = |b: i64| {
                if b >= 0 && b != a {
                    *contacts[a as usize].entry(b as usize).or_default() += 1;
                    *contacts[b as usize].entry(a as usize).or_default() += 1;
                }
            };
            if x + 1 < w {
                touch(comp[y * w + x + 1]);
            }
            if y + 1 < h {
                touch(comp[(y + 1) * w + x]);
            }
        }
    }
    let mut orphans: Vec<usize> = (0..n).filter(|&c| main[&comp_label[c]] != c).collect();
    orphans.sort_by_key(|&c| (sizes[c], c));

    let mut parent: Vec<usize> = (0..n).collect();
    let mut group_label = comp_label.clone();
    for c in orphans {
        let root = find(&mut parent, c);
        let mut merged: HashMap<usize, usize> = HashMap::new();
        for (&nb, &cnt) in &contacts[root] {
            let r = find(&mut parent, nb);
            if r != root {
                *merged.entry(r).or_default() += cnt;
            }
        }
        let Some((&target, _)) = merged.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))) else {
            continue;
        };
        parent[root] = target;
        let moved = std::mem::take(&mut contacts[root]);
        for (nb, cnt) in moved {
            *contacts[target].entry(nb).or_default() += cnt;
        }
        group_label[root] = group_label[target];
    }
    for i in 0..w * h {
        if comp[i] >= 0 {
            let r = find(&mut parent, comp[i] as usize);
            labels[i] = group_label[r];
        }
    }
    // orphans that could not merge anywhere become labels of their own
    let mut seen: HashMap<i32, usize> = HashMap::new();
    let mut next = labels.iter().copied().max().unwrap_or(-1) + 1;
    let mut fresh: HashMap<usize, i32> = HashMap::new();
    for i in 0..w * h {
        if comp[i] < 0 {
            continue;
        }
        let r = find(&mut parent, comp[i] as usize);
        let l = labels[i];
        match seen.get(&l) {
            None => {
                seen.insert(l, r);
            }
            Some(&owner) if owner != r => {
                let nl = *fresh.entry(r).or_insert_with(|| {
                    next += 1;
                    next - 1
                });
                labels[i] = nl;
            }
            _ => {}
        }
    }
}

/// Renumbers labels `0..K` in row-major order of first appearance.
fn relabel_dense(labels: &mut [i32]) {
    let mut map: HashMap<i32, i32> = HashMap::new();
    for l in labels.iter_mut() {
        if *l >= 0 {
            let next = map.len() as i32;
            *l = *map.entry(*l).or_insert(next);
        }
    }
}

/// Lattice shape for grid points placed over a bone bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
}

impl Default for GridLayout {
    fn default() -> Self {
        GridLayout { rows: 6, cols: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// Lattice index `row * cols + col`, stable across subjects.
    pub index: usize,
    pub row: usize,
    pub col: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub layout: GridLayout,
    pub points: Vec<GridPoint>,
}

impl GridSpec {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn point(&self, index: usize) -> Option<&GridPoint> {
        self.points.iter().find(|p| p.index == index)
    }
}

/// Lattice at fractional offsets `(i + 1) / (n + 1)` of the bone bounding
/// box, row-major, keeping only points that land inside the mask.
pub fn grid_points(bone: &RoiMask, layout: GridLayout) -> Result<GridSpec> {
    if layout.rows == 0 || layout.cols == 0 {
        return Err(Error::Config("grid layout needs at least one row and column".into()));
    }
    let b = bone.bbox();
    let mut points = Vec::new();
    for row in 0..layout.rows {
        for col in 0..layout.cols {
            let fx = (col + 1) as f64 / (layout.cols + 1) as f64;
            let fy = (row + 1) as f64 / (layout.rows + 1) as f64;
            let x = (b.x0 as f64 + fx * b.width() as f64).floor() as usize;
            let y = (b.y0 as f64 + fy * b.height() as f64).floor() as usize;
            if x < bone.width() && y < bone.height() && bone.get(x, y) {
                points.push(GridPoint {
                    index: row * layout.cols + col,
                    row,
                    col,
                    x,
                    y,
                });
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyMask("no grid point falls inside the bone mask".into()));
    }
    Ok(GridSpec { layout, points })
}

/// The superpixel enclosing pixel `(x, y)`.
pub fn region_of_point(labels: &LabelMap, x: usize, y: usize) -> Result<RoiMask> {
    if x >= labels.width() || y >= labels.height() {
        return Err(Error::InvalidArgument(format!("point ({x}, {y}) outside the label map")));
    }
    let l = labels.get(x, y);
    if l < 0 {
        return Err(Error::InvalidArgument(format!("point ({x}, {y}) lies outside the bone")));
    }
    labels.label_mask(l)
}

/// ROI anchored `offset_mm` inside a tibia margin landmark; each offset
/// component points from the anchor toward the bone centroid.
pub fn anchor_point(
    lm: &LandmarkSet,
    bone: &RoiMask,
    anchor: &str,
    offset_mm: (f64, f64),
    spacing: f64,
) -> Result<(f64, f64)> {
    if anchor != "medial_tibia_margin" && anchor != "lateral_tibia_margin" {
        return Err(Error::InvalidArgument(format!("unsupported anchor {anchor:?}")));
    }
    let (ax, ay) = lm.point(anchor)?;
    let (cx, cy) = bone.centroid();
    let sx = if cx >= ax { 1.0 } else { -1.0 };
    let sy = if cy >= ay { 1.0 } else { -1.0 };
    Ok((ax + sx * offset_mm.0 / spacing, ay + sy * offset_mm.1 / spacing))
}

pub fn anchor_roi(
    labels: &LabelMap,
    lm: &LandmarkSet,
    bone: &RoiMask,
    anchor: &str,
    offset_mm: (f64, f64),
    spacing: f64,
) -> Result<RoiMask> {
    let (px, py) = anchor_point(lm, bone, anchor, offset_mm, spacing)?;
    let (x, y) = (px.floor() as i64, py.floor() as i64);
    if !bone.contains(x, y) {
        return Err(Error::InvalidArgument(format!(
            "anchor point ({px:.1}, {py:.1}) lies outside the bone mask"
        )));
    }
    region_of_point(labels, x as usize, y as usize)
}

/// Reference frame size: lower median of bounding-box widths and heights.
pub fn median_frame(boxes: &[BBox]) -> Result<(usize, usize)> {
    if boxes.is_empty() {
        return Err(Error::InvalidArgument("no bounding boxes".into()));
    }
    let mut ws: Vec<usize> = boxes.iter().map(|b| b.width()).collect();
    let mut hs: Vec<usize> = boxes.iter().map(|b| b.height()).collect();
    ws.sort_unstable();
    hs.sort_unstable();
    let mid = (boxes.len() - 1) / 2;
    Ok((ws[mid], hs[mid]))
}

/// Nearest-neighbor resampling of the `bbox` part of `mask` into a
/// `frame.0 x frame.1` reference frame.
pub fn to_reference_frame(mask: &RoiMask, bbox: BBox, frame: (usize, usize)) -> Result<RoiMask> {
    let (fw, fh) = frame;
    let mut bits = vec![false; fw * fh];
    for v in 0..fh {
        let y = bbox.y0 + (((v as f64 + 0.5) * bbox.height() as f64 / fh as f64) as usize).min(bbox.height() - 1);
        for u in 0..fw {
            let x = bbox.x0 + (((u as f64 + 0.5) * bbox.width() as f64 / fw as f64) as usize).min(bbox.width() - 1);
            bits[v * fw + u] = x < mask.width() && y < mask.height() && mask.get(x, y);
        }
    }
    RoiMask::new(fw, fh, bits, mask.origin())
}

/// Inverse of [`to_reference_frame`]: paints a reference-frame mask onto
/// `bbox` of a `width x height` subject frame.
pub fn from_reference_frame(reference: &RoiMask, bbox: BBox, width: usize, height: usize) -> Result<RoiMask> {
    let (fw, fh) = (reference.width(), reference.height());
    let mut bits = vec![false; width * height];
    for y in bbox.y0..bbox.y1.min(height) {
        let v = (((y - bbox.y0) as f64 + 0.5) * fh as f64 / bbox.height() as f64) as usize;
        for x in bbox.x0..bbox.x1.min(width) {
            let u = (((x - bbox.x0) as f64 + 0.5) * fw as f64 / bbox.width() as f64) as usize;
            bits[y * width + x] = reference.get(u.min(fw - 1), v.min(fh - 1));
        }
    }
    RoiMask::new(width, height, bits, reference.origin())
}

/// Per-pixel fraction of subjects whose region covers the pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct AverageMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub n_subjects: usize,
}

impl AverageMask {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::new(self.width, self.height, self.values.clone(), 1.0)?;
        crate::imagecore::save_raster_8bit(&img, path)
    }

    /// 256-bin histogram of `round(value * 255)`.
    pub fn histogram(&self) -> [u64; 256] {
        let mut hist = [0u64; 256];
        for &v in &self.values {
            hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
        }
        hist
    }
}

pub fn accumulate_masks(masks: &[RoiMask]) -> Result<AverageMask> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no masks to accumulate".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut counts = vec![0usize; w * h];
    for m in masks {
        if m.width() != w || m.height() != h {
            return Err(Error::DimensionMismatch(format!(
                "mask frame {}x{} differs from reference {w}x{h}",
                m.width(),
                m.height()
            )));
        }
        for (c, &b) in counts.iter_mut().zip(m.bits()) {
            *c += b as usize;
        }
    }
    let n = masks.len();
    Ok(AverageMask {
        width: w,
        height: h,
        values: counts.into_iter().map(|c| c as f64 / n as f64).collect(),
        n_subjects: n,
    })
}

/// Otsu's threshold on a 256-bin histogram: the cut `t` (class 0 = bins
/// `<= t`) maximizing between-class variance, lowest `t` on ties. `None`
/// when fewer than two bins are populated.
pub fn otsu_from_histogram(hist: &[u64; 256]) -> Option<usize> {
    let total: u64 = hist.iter().sum();
    let sum: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let (mut n0, mut s0) = (0u64, 0u128);
    let mut best: Option<(usize, f64)> = None;
    for t in 0..255 {
        n0 += hist[t];
        s0 += t as u128 * hist[t] as u128;
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        // N^2 * sigma_B^2 * N = (N s0 - n0 S)^2 / (n0 n1)
        let diff = total as i128 * s0 as i128 - n0 as i128 * sum as i128;
        let score = (diff as f64) * (diff as f64) / (n0 as f64 * n1 as f64);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((t, score));
        }
    }
    best.map(|(t, _)| t)
}

/// Thresholds an average mask with Otsu's method and keeps the largest
/// 4-connected component. Returns the mask and the threshold bin.
pub fn otsu_threshold(avg: &AverageMask) -> Result<(RoiMask, usize)> {
    let hist = avg.histogram();
    let t = otsu_from_histogram(&hist)
        .ok_or_else(|| Error::Degenerate("average mask is constant; Otsu needs two levels".into()))?;
    let bits = avg
        .values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as usize > t)
        .collect();
    let mask = RoiMask::new(avg.width, avg.height, bits, OriginTag::AdaptiveAverage)?;
    Ok((mask.largest_component(), t))
}

/// Square ROI beneath the tibial plateau centered on the medial condyle;
/// side is `side_fraction` of the margin-to-margin tibial width.
pub fn standard_roi(width: usize, height: usize, lm: &LandmarkSet, side_fraction: f64) -> Result<RoiMask> {
    let (mx, _) = lm.point("medial_tibia_margin")?;
    let (lx, _) = lm.point("lateral_tibia_margin")?;
    let (cx, _) = lm.point("medial_condyle_center")?;
    let (plx, ply) = lm.point("tibial_plateau_left")?;
    let (prx, pry) = lm.point("tibial_plateau_right")?;
    let side = (side_fraction * (lx - mx).abs()).round();
    if !(side >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "standard ROI side is {side} pixels (fraction {side_fraction})"
        )));
    }
    let top = if (prx - plx).abs() > 1e-9 {
        ply + (cx - plx) * (pry - ply) / (prx - plx)
    } else {
        ply.min(pry)
    };
    let x0 = (cx - side / 2.0).round();
    let y0 = top.round();
    let (x1, y1) = (x0 + side, y0 + side);
    let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
    let (cx0, cy0, cx1, cy1) = (clamp(x0, width), clamp(y0, height), clamp(x1, width), clamp(y1, height));
    if (cx0 as f64, cy0 as f64, cx1 as f64, cy1 as f64) != (x0, y0, x1, y1) {
        log::warn!("standard ROI [{x0}, {x1}) x [{y0}, {y1}) clamped to the {width}x{height} frame");
    }
    RoiMask::rect(width, height, cx0, cy0, cx1, cy1, OriginTag::StandardRect)
}

/// One segmented bone of one knee, ready for region ranking.
pub struct SegmentedSample<'a> {
    pub key: SampleKey,
    pub image: &'a GrayImage,
    pub labels: &'a LabelMap,
    pub grid: &'a GridSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub grid_index: usize,
    pub row: usize,
    pub col: usize,
    /// Mean of the per-fold held-out ROC AUCs.
    pub auc: f64,
    pub auc_lo: f64,
    pub auc_hi: f64,
    pub n_samples: usize,
    /// Set when a fold lacked one class and the region fell back to 0.5.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    pub lbp: LbpParams,
    pub cv: CvConfig,
    pub lambda: f64,
    pub n_boot: usize,
}

/// LBP histogram of the region under each grid point of one sample, indexed
/// by grid index; `None` where the point was dropped or LBP failed. Points
/// sharing a superpixel share one computation.
pub fn grid_region_features(sample: &SegmentedSample, lbp: &LbpParams) -> Result<Vec<Option<Vec<f64>>>> {
    let layout = sample.grid.layout;
    let mut out = vec![None; layout.rows * layout.cols];
    let mut by_label: BTreeMap<i32, Option<Vec<f64>>> = BTreeMap::new();
    for p in &sample.grid.points {
        let label = sample.labels.get(p.x, p.y);
        if label < 0 {
            continue;
        }
        let feats = match by_label.get(&label) {
            Some(f) => f.clone(),
            None => {
                let region = sample.labels.label_mask(label)?;
                let f = match lbp_histogram(sample.image, &region, lbp) {
                    Ok(f) => Some(f.values),
                    Err(e) => {
                        log::warn!("grid {}, sample {}: {e}", p.index, sample.key.sample_id);
                        None
                    }
                };
                by_label.insert(label, f.clone());
                f
            }
        };
        out[p.index] = feats;
    }
    Ok(out)
}

/// Scores every grid location by subject-wise cross-validated LBP logistic
/// regression and returns locations sorted by AUC, best first (ties by grid
/// index).
pub fn rank_regions(samples: &[SegmentedSample], cfg: &RankConfig) -> Result<Vec<RegionScore>> {
    let Some(first) = samples.first() else {
        return Err(Error::InvalidArgument("no samples to rank".into()));
    };
    let layout = first.grid.layout;
    if samples.iter().any(|s| s.grid.layout != layout) {
        return Err(Error::InvalidArgument("samples use different grid layouts".into()));
    }
    let feats = samples
        .par_iter()
        .map(|s| grid_region_features(s, &cfg.lbp))
        .collect::<Result<Vec<_>>>()?;
    let keys: Vec<SampleKey> = samples.iter().map(|s| s.key.clone()).collect();
    rank_from_features(&keys, &feats, layout, cfg)
}

/// Ranking from precomputed per-sample grid features (see
/// [`grid_region_features`]).
pub fn rank_from_features(
    keys: &[SampleKey],
    feats: &[Vec<Option<Vec<f64>>>],
    layout: GridLayout,
    cfg: &RankConfig,
) -> Result<Vec<RegionScore>> {
    if keys.len() != feats.len() {
        return Err(Error::DimensionMismatch(format!("{} keys, {} feature sets", keys.len(), feats.len())));
    }
    let n_cells = layout.rows * layout.cols;
    if feats.iter().any(|f| f.len() != n_cells) {
        return Err(Error::DimensionMismatch("feature sets differ from the grid layout".into()));
    }
    let mut scores: Vec<RegionScore> = (0..n_cells)
        .into_par_iter()
        .map(|index| score_region(keys, feats, index, layout, cfg))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    scores.sort_by(|a, b| b.auc.total_cmp(&a.auc).then(a.grid_index.cmp(&b.grid_index)));
    Ok(scores)
}

fn score_region(
    all_keys: &[SampleKey],
    feats: &[Vec<Option<Vec<f64>>>],
    index: usize,
    layout: GridLayout,
    cfg: &RankConfig,
) -> Result<Option<RegionScore>> {
    let mut keys = Vec::new();
    let mut rows = Vec::new();
    for (k, f) in all_keys.iter().zip(feats) {
        if let Some(v) = &f[index] {
            keys.push(k.clone());
            rows.push(v.clone());
        }
    }
    let (row, col) = (index / layout.cols, index % layout.cols);
    let n_pos = keys.iter().filter(|k| k.label).count();
    if n_pos == 0 || n_pos == keys.len() {
        if keys.is_empty() {
            return Ok(None);
        }
        log::warn!("grid {index}: only one class present; scored 0.5");
        return Ok(Some(RegionScore {
            grid_index: index,
            row,
            col,
            auc: 0.5,
            auc_lo: 0.5,
            auc_hi: 0.5,
            n_samples: keys.len(),
            degenerate: true,
        }));
    }
    let folds = match learn::subjectwise_kfold(&keys, &cfg.cv) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("grid {index}: {e}; skipped");
            return Ok(None);
        }
    };
    let labels: Vec<bool> = keys.iter().map(|k| k.label).collect();
    let cv = learn::cross_validate(&rows, &labels, &folds, cfg.cv.k_folds, cfg.lambda)?;
    let fold_sets = cv.fold_score_sets(&labels);
    let degenerate = cv.per_fold.iter().any(|f| f.auc.is_none());
    let (auc, lo, hi) = if degenerate {
        log::warn!("grid {index}: a fold holds a single class; scored 0.5");
        (0.5, 0.5, 0.5)
    } else {
        let auc = cv.per_fold.iter().filter_map(|f| f.auc).sum::<f64>() / cv.per_fold.len() as f64;
        let (lo, hi) = learn::bootstrap_mean_fold_auc(&fold_sets, cfg.n_boot, cfg.cv.seed ^ index as u64)?;
        (auc, lo.min(auc), hi.max(auc))
    };
    Ok(Some(RegionScore {
        grid_index: index,
        row,
        col,
        auc,
        auc_lo: lo,
        auc_hi: hi,
        n_samples: keys.len(),
        degenerate,
    }))
}

pub fn write_ranking_csv(scores: &[RegionScore], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["grid_index", "row", "col", "auc", "auc_lo", "auc_hi"])?;
    for s in scores {
        w.write_record([
            s.grid_index.to_string(),
            s.row.to_string(),
            s.col.to_string(),
            s.auc.to_string(),
            s.auc_lo.to_string(),
            s.auc_hi.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_ranking_csv(path: &Path) -> Result<Vec<RegionScore>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad ranking row {rec:?}")))
        };
        out.push(RegionScore {
            grid_index: f(0)? as usize,
            row: f(1)? as usize,
            col: f(2)? as usize,
            auc: f(3)?,
            auc_lo: f(4)?,
            auc_hi: f(5)?,
            n_samples: 0,
            degenerate: false,
        });
    }
    Ok(out)
}
