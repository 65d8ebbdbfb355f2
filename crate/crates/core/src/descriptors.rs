//! Texture descriptors computed over an image region: local binary patterns,
//! histograms of oriented gradients, Haralick GLCM statistics, directional
//! fractal dimension and Shannon entropy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{crop_bbox, GrayImage, OriginTag, RoiMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Descriptor {
    #[serde(rename = "LBP")]
    Lbp,
    #[serde(rename = "HOG")]
    Hog,
    Haralick,
    Fractal,
    Entropy,
    Composite,
}

impl Descriptor {
    pub const ALL: [Descriptor; 5] = [
        Descriptor::Lbp,
        Descriptor::Hog,
        Descriptor::Haralick,
        Descriptor::Fractal,
        Descriptor::Entropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Descriptor::Lbp => "LBP",
            Descriptor::Hog => "HOG",
            Descriptor::Haralick => "Haralick",
            Descriptor::Fractal => "Fractal",
            Descriptor::Entropy => "Entropy",
            Descriptor::Composite => "Composite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lbp" => Ok(Descriptor::Lbp),
            "hog" => Ok(Descriptor::Hog),
            "haralick" => Ok(Descriptor::Haralick),
            "fractal" | "fd" | "fsa" => Ok(Descriptor::Fractal),
            "entropy" => Ok(Descriptor::Entropy),
            "composite" => Ok(Descriptor::Composite),
            other => Err(Error::InvalidArgument(format!("unknown descriptor {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub descriptor: Descriptor,
    pub values: Vec<f64>,
    pub roi_tag: OriginTag,
    /// Set when a degenerate-region convention was applied (for example a
    /// single-level GLCM).
    #[serde(default)]
    pub degenerate: bool,
}

impl FeatureVector {
    fn new(descriptor: Descriptor, values: Vec<f64>, roi_tag: OriginTag) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!("{} produced a non-finite value", descriptor.as_str())));
        }
        Ok(FeatureVector {
            descriptor,
            values,
            roi_tag,
            degenerate: false,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_frame(img: &GrayImage, mask: &RoiMask) -> Result<()> {
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            img.width(),
            img.height(),
            mask.width(),
            mask.height()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- LBP

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbpParams {
    pub radius: f64,
    pub n_points: usize,
    /// Rotation-invariant uniform mapping (`P + 2` bins) instead of raw codes.
    pub uniform: bool,
}

impl Default for LbpParams {
    fn default() -> Self {
        LbpParams {
            radius: 6.0,
            n_points: 8,
            uniform: false,
        }
    }
}

impl LbpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 1.0) || self.n_points < 4 || (!self.uniform && self.n_points > 16) {
            return Err(Error::Config(format!("invalid LBP parameters {self:?}")));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        if self.uniform {
            self.n_points + 2
        } else {
            1 << self.n_points
        }
    }

    /// Sampling offsets `(dx, dy)` counterclockwise from angle 0; y grows
    /// downward so counterclockwise means decreasing y first.
    pub fn offsets(&self) -> Vec<(f64, f64)> {
        let round5 = |v: f64| (v * 1e5).round() / 1e5;
        (0..self.n_points)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / self.n_points as f64;
                (round5(self.radius * a.cos()), round5(-self.radius * a.sin()))
            })
            .collect()
    }
}

#[inline]
fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (x0, y0) = (fx as usize, fy as usize);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let top = (1.0 - tx) * img.get(x0, y0) + tx * img.get(x1, y0);
    let bottom = (1.0 - tx) * img.get(x0, y1) + tx * img.get(x1, y1);
    (1.0 - ty) * top + ty * bottom
}

/// Raw LBP code at `(x, y)`: bit `k` is set when the `k`-th circular sample is
/// at least the center value. The caller guarantees the circle is in frame.
pub fn lbp_code(img: &GrayImage, x: usize, y: usize, offsets: &[(f64, f64)]) -> u32 {
    let c = img.get(x, y);
    let mut code = 0u32;
    for (k, &(dx, dy)) in offsets.iter().enumerate() {
        if bilinear(img, x as f64 + dx, y as f64 + dy) >= c {
            code |= 1 << k;
        }
    }
    code
}

/// Rotation-invariant uniform label: number of set bits for patterns with
/// at most two 0/1 transitions, `P + 1` otherwise.
pub fn uniform_label(code: u32, n_points: usize) -> usize {
    let mut transitions = 0;
    for k in 0..n_points {
        let a = (code >> k) & 1;
        let b = (code >> ((k + 1) % n_points)) & 1;
        transitions += (a != b) as u32;
    }
    if transitions <= 2 {
        code.count_ones() as usize
    } else {
        n_points + 1
    }
}

/// Normalized histogram of LBP codes over mask pixels whose sampling circle
/// fits inside the image.
pub fn lbp_histogram(img: &GrayImage, mask: &RoiMask, p: &LbpParams) -> Result<FeatureVector> {
    p.validate()?;
    check_frame(img, mask)?;
    let offsets = p.offsets();
    let margin = p.radius.ceil() as usize;
    let (w, h) = (img.width(), img.height());
    let mut hist = vec![0.0; p.n_bins()];
    let mut n = 0usize;
    if w > 2 * margin && h > 2 * margin {
        for y in margin..h - margin {
            for x in margin..w - margin {
                if !mask.get(x, y) {
                    continue;
                }
                let code = lbp_code(img, x, y, &offsets);
                let bin = if p.uniform {
                    uniform_label(code, p.n_points)
                } else {
                    code as usize
                };
                hist[bin] += 1.0;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask(format!(
            "no mask pixel lies {margin} px away from the image border"
        )));
    }
    let total = n as f64;
    hist.iter_mut().for_each(|v| *v /= total);
    FeatureVector::new(Descriptor::Lbp, hist, mask.origin())
}

// ---------------------------------------------------------------- HOG

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HogParams {
    pub orientations: usize,
    /// (rows, cols)
    pub pixels_per_cell: (usize, usize),
    pub cells_per_block: (usize, usize),
    /// Fixed (rows, cols) cell grid taken from the center of the crop. When
    /// unset the grid covers as many whole cells as fit from the top-left.
    pub n_cells: Option<(usize, usize)>,
}

impl Default for HogParams {
    fn default() -> Self {
        HogParams {
            orientations: 4,
            pixels_per_cell: (10, 10),
            cells_per_block: (4, 4),
            n_cells: None,
        }
    }
}

impl HogParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.orientations >= 1
            && self.pixels_per_cell.0 >= 1
            && self.pixels_per_cell.1 >= 1
            && self.cells_per_block.0 >= 1
            && self.cells_per_block.1 >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid HOG parameters {self:?}")))
        }
    }

    /// Cell grid for a crop of `rows x cols` pixels.
    pub fn cell_grid(&self, rows: usize, cols: usize) -> (usize, usize) {
        self.n_cells
            .unwrap_or((rows / self.pixels_per_cell.0, cols / self.pixels_per_cell.1))
    }

    pub fn feature_len(&self, rows: usize, cols: usize) -> usize {
        let (cr, cc) = self.cell_grid(rows, cols);
        let br = (cr + 1).saturating_sub(self.cells_per_block.0);
        let bc = (cc + 1).saturating_sub(self.cells_per_block.1);
        br * bc * self.cells_per_block.0 * self.cells_per_block.1 * self.orientations
    }
}

/// Gradient magnitude and unsigned orientation in degrees `[0, 180)`;
/// central differences in the interior, zero on the outermost rows/cols.
pub fn gradients(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let mut mag = vec![0.0; w * h];
    let mut ori = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let gx = if x > 0 && x + 1 < w { img.get(x + 1, y) - img.get(x - 1, y) } else { 0.0 };
            let gy = if y > 0 && y + 1 < h { img.get(x, y + 1) - img.get(x, y - 1) } else { 0.0 };
            mag[y * w + x] = gx.hypot(gy);
            ori[y * w + x] = gy.atan2(gx).to_degrees().rem_euclid(180.0);
        }
    }
    (mag, ori)
}

/// HOG over the mask bounding box with pixels outside the mask zeroed.
/// Blocks of `cells_per_block` cells slide by one cell and are L2-Hys
/// normalized (clip 0.2); output is block-major, then cell, then bin.
pub fn hog_features(img: &GrayImage, mask: &RoiMask, p: &HogParams) -> Result<FeatureVector> {
    p.validate()?;
    check_frame(img, mask)?;
    let (crop, cmask) = crop_bbox(img, mask)?;
    let (ppr, ppc) = p.pixels_per_cell;
    let (cr, cc) = p.cell_grid(crop.height(), crop.width());
    let (bpr, bpc) = p.cells_per_block;
    // a fixed cell grid larger than the crop is centered on a zero canvas
    let (w, h) = if p.n_cells.is_some() {
        (crop.width().max(cc * ppc), crop.height().max(cr * ppr))
    } else {
        (crop.width(), crop.height())
    };
    let (px, py) = ((w - crop.width()) / 2, (h - crop.height()) / 2);
    let mut canvas = vec![0.0; w * h];
    for y in 0..crop.height() {
        for x in 0..crop.width() {
            if cmask.get(x, y) {
                canvas[(y + py) * w + x + px] = crop.get(x, y);
            }
        }
    }
    let masked = GrayImage::new(w, h, canvas, crop.spacing())?;
    if cr < bpr || cc < bpc || cr * ppr > h || cc * ppc > w {
        return Err(Error::InvalidArgument(format!(
            "{}x{} region is smaller than one {bpc}x{bpr} block of {ppc}x{ppr} cells",
            crop.width(),
            crop.height()
        )));
    }
    let (oy, ox) = if p.n_cells.is_some() {
        ((h - cr * ppr) / 2, (w - cc * ppc) / 2)
    } else {
        (0, 0)
    };
    let (mag, ori) = gradients(&masked);
    let nb = p.orientations;
    let bin_width = 180.0 / nb as f64;
    let mut cells = vec![0.0; cr * cc * nb];
    for r in 0..cr {
        for c in 0..cc {
            let hist = &mut cells[(r * cc + c) * nb..(r * cc + c + 1) * nb];
            for y in oy + r * ppr..oy + (r + 1) * ppr {
                for x in ox + c * ppc..ox + (c + 1) * ppc {
                    let i = y * w + x;
                    let bin = ((ori[i] / bin_width) as usize).min(nb - 1);
                    hist[bin] += mag[i];
                }
            }
            let area = (ppr * ppc) as f64;
            hist.iter_mut().for_each(|v| *v /= area);
        }
    }
    let (nbr, nbc) = (cr - bpr + 1, cc - bpc + 1);
    let mut out = Vec::with_capacity(nbr * nbc * bpr * bpc * nb);
    let mut block = Vec::with_capacity(bpr * bpc * nb);
    for br in 0..nbr {
        for bc in 0..nbc {
            block.clear();
            for r in br..br + bpr {
                for c in bc..bc + bpc {
                    block.extend_from_slice(&cells[(r * cc + c) * nb..(r * cc + c + 1) * nb]);
                }
            }
            l2_hys(&mut block);
            out.extend_from_slice(&block);
        }
    }
    FeatureVector::new(Descriptor::Hog, out, mask.origin())
}

fn l2_hys(v: &mut [f64]) {
    const EPS: f64 = 1e-5;
    let norm = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() + EPS * EPS).sqrt();
    let n = norm(v);
    v.iter_mut().for_each(|x| *x = (*x / n).min(0.2));
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}

// ---------------------------------------------------------------- Haralick

/// Unit displacements for 0, 45, 90 and 135 degrees (y grows downward).
pub const GLCM_OFFSETS: [(i64, i64); 4] = [(1, 0), (1, -1), (0, -1), (-1, -1)];

/// In-mask intensities quantized to `levels` equal-width bins over the
/// in-mask range; `None` outside the mask. All pixels map to level 0 when the
/// range is empty.
pub fn quantize_levels(img: &GrayImage, mask: &RoiMask, levels: usize) -> Vec<Option<usize>> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&v, &b) in img.pixels().iter().zip(mask.bits()) {
        if b {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = hi - lo;
    img.pixels()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &b)| {
            b.then(|| {
                if span > 0.0 {
                    (((v - lo) / span * levels as f64) as usize).min(levels - 1)
                } else {
                    0
                }
            })
        })
        .collect()
}

/// Symmetric co-occurrence counts (`levels x levels`, row-major) for pairs at
/// `offset` with both pixels in the mask.
pub fn glcm_counts(q: &[Option<usize>], width: usize, height: usize, offset: (i64, i64), levels: usize) -> Vec<u64> {
    let mut m = vec![0u64; levels * levels];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let (nx, ny) = (x + offset.0, y + offset.1);
            if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                continue;
            }
            if let (Some(a), Some(b)) = (q[(y * width as i64 + x) as usize], q[(ny * width as i64 + nx) as usize]) {
                m[a * levels + b] += 1;
                m[b * levels + a] += 1;
            }
        }
    }
    m
}

fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

/// The thirteen Haralick statistics of a normalized GLCM. Returns the
/// features and whether the correlation was undefined (set to 0).
pub fn haralick_from_glcm(p: &[f64], levels: usize) -> ([f64; 13], bool) {
    let l = levels;
    let mut px = vec![0.0; l];
    let mut py = vec![0.0; l];
    let mut p_sum = vec![0.0; 2 * l - 1];
    let mut p_diff = vec![0.0; l];
    for i in 0..l {
        for j in 0..l {
            let v = p[i * l + j];
            px[i] += v;
            py[j] += v;
            p_sum[i + j] += v;
            p_diff[i.abs_diff(j)] += v;
        }
    }
    let mean = |d: &[f64]| d.iter().enumerate().map(|(k, &v)| k as f64 * v).sum::<f64>();
    let var = |d: &[f64], m: f64| d.iter().enumerate().map(|(k, &v)| (k as f64 - m).powi(2) * v).sum::<f64>();
    let (mx, my) = (mean(&px), mean(&py));
    let (vx, vy) = (var(&px, mx), var(&py, my));

    let mut f = [0.0; 13];
    let mut ij = 0.0;
    let mut idm = 0.0;
    for i in 0..l {
        for j in 0..l {
            let v = p[i * l + j];
            f[0] += v * v;
            ij += (i * j) as f64 * v;
            idm += v / (1.0 + ((i as f64) - (j as f64)).powi(2));
        }
    }
    f[1] = p_diff.iter().enumerate().map(|(k, &v)| (k * k) as f64 * v).sum();
    let sd = (vx * vy).sqrt();
    let degenerate = !(sd > 1e-15);
    f[2] = if degenerate { 0.0 } else { (ij - mx * my) / sd };
    f[3] = vx;
    f[4] = idm;
    f[5] = mean(&p_sum);
    f[6] = var(&p_sum, f[5]);
    f[7] = entropy_bits(&p_sum);
    f[8] = entropy_bits(p);
    f[9] = var(&p_diff, mean(&p_diff));
    f[10] = entropy_bits(&p_diff);

    let hx = entropy_bits(&px);
    let hy = entropy_bits(&py);
    let hxy = f[8];
    let (mut hxy1, mut hxy2) = (0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let q = px[i] * py[j];
            if q > 0.0 {
                hxy1 -= p[i * l + j] * q.log2();
                hxy2 -= q * q.log2();
            }
        }
    }
    let hmax = hx.max(hy);
    f[11] = if hmax > 0.0 { (hxy - hxy1) / hmax } else { 0.0 };
    // exponent in nats
    f[12] = (1.0 - (-2.0 * (hxy2 - hxy) * std::f64::consts::LN_2).exp()).max(0.0).sqrt();
    (f, degenerate)
}

/// Mean over the four directions of the Haralick features of symmetric
/// distance-1 GLCMs built from in-mask pixel pairs.
pub fn haralick13(img: &GrayImage, mask: &RoiMask, levels: usize) -> Result<FeatureVector> {
    check_frame(img, mask)?;
    if levels < 2 {
        return Err(Error::Config(format!("Haralick needs at least 2 levels, got {levels}")));
    }
    let q = quantize_levels(img, mask, levels);
    let mut acc = [0.0; 13];
    let mut degenerate = false;
    let mut total_pairs = 0u64;
    for off in GLCM_OFFSETS {
        let counts = glcm_counts(&q, img.width(), img.height(), off, levels);
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyMask(format!("no in-mask pixel pair at offset {off:?}")));
        }
        total_pairs += total / 2;
        let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let (f, d) = haralick_from_glcm(&p, levels);
        degenerate |= d;
        for k in 0..13 {
            acc[k] += f[k] / 4.0;
        }
    }
    if total_pairs < 2 {
        return Err(Error::EmptyMask("fewer than two in-mask pixel pairs".into()));
    }
    if degenerate {
        log::debug!("Haralick correlation undefined on a flat region; reported as 0");
    }
    let mut fv = FeatureVector::new(Descriptor::Haralick, acc.to_vec(), mask.origin())?;
    fv.degenerate = degenerate;
    Ok(fv)
}

// ---------------------------------------------------------------- fractal

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsaVariant {
    /// Horizontal and vertical line elements, two features.
    Directional,
    /// Flat disk element, one feature.
    Disk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FsaParams {
    pub min_scale_mm: f64,
    pub max_scale_mm: f64,
    pub variant: FsaVariant,
}

impl Default for FsaParams {
    fn default() -> Self {
        FsaParams {
            min_scale_mm: 0.2,
            max_scale_mm: 3.2,
            variant: FsaVariant::Directional,
        }
    }
}

impl FsaParams {
    /// Element radii in pixels, in 1-pixel steps.
    pub fn radii(&self, spacing: f64) -> Result<Vec<usize>> {
        let lo = ((self.min_scale_mm / spacing).round() as usize).max(1);
        let hi = (self.max_scale_mm / spacing).round() as usize;
        if !(self.min_scale_mm < self.max_scale_mm) || hi < lo + 2 {
            return Err(Error::Config(format!(
                "fractal scales {}..{} mm give fewer than 3 radii at {spacing} mm/px",
                self.min_scale_mm, self.max_scale_mm
            )));
        }
        Ok((lo..=hi).collect())
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Blanket surface measure `A(s) = sum(u_s - l_s) / (2 s)` for each radius,
/// where `u_s`/`l_s` are the flat dilation/erosion by the element
/// `footprint(s)` evaluated at every pixel in `valid`.
fn blanket_areas(
    img: &GrayImage,
    valid: &[(usize, usize)],
    radii: &[usize],
    footprint: impl Fn(usize) -> Vec<(i64, i64)>,
) -> Vec<f64> {
    radii
        .iter()
        .map(|&s| {
            let fp = footprint(s);
            let mut total = 0.0;
            for &(x, y) in valid {
                let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
                for &(dx, dy) in &fp {
                    let v = img.get((x as i64 + dx) as usize, (y as i64 + dy) as usize);
                    hi = hi.max(v);
                    lo = lo.min(v);
                }
                total += hi - lo;
            }
            total / (2.0 * s as f64)
        })
        .collect()
}

fn fd_from_areas(areas: &[f64], radii: &[usize]) -> Result<f64> {
    if areas.iter().any(|&a| !(a > 0.0)) {
        return Err(Error::Degenerate("flat region: blanket area vanishes at some scale".into()));
    }
    let xs: Vec<f64> = radii.iter().map(|&s| (s as f64).ln()).collect();
    let ys: Vec<f64> = areas.iter().map(|a| a.ln()).collect();
    Ok(2.0 - ls_slope(&xs, &ys))
}

/// Mask pixels whose element stays inside the image frame.
fn valid_centers(mask: &RoiMask, footprint: &[(i64, i64)]) -> Vec<(usize, usize)> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut out = Vec::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y)
                && footprint.iter().all(|&(dx, dy)| {
                    let (u, v) = (x as i64 + dx, y as i64 + dy);
                    u >= 0 && v >= 0 && u < w && v < h
                })
            {
                out.push((x, y));
            }
        }
    }
    out
}

fn line_footprint(s: usize, horizontal: bool) -> Vec<(i64, i64)> {
    let s = s as i64;
    (-s..=s).map(|d| if horizontal { (d, 0) } else { (0, d) }).collect()
}

fn disk_footprint(s: usize) -> Vec<(i64, i64)> {
    let s = s as i64;
    let mut fp = Vec::new();
    for dy in -s..=s {
        for dx in -s..=s {
            if dx * dx + dy * dy <= s * s {
                fp.push((dx, dy));
            }
        }
    }
    fp
}

/// Fractal dimension by the blanket method, `FD = 2 - slope` of
/// `log A(s)` against `log s`. The directional variant returns
/// `[horizontal structures, vertical structures]`: horizontal structures are
/// probed with a vertical line element and vice versa. Every scale is
/// evaluated on the same pixel set: mask pixels whose largest element stays in
/// the image. The element may read intensities outside the mask.
pub fn fractal_dimension_fsa(img: &GrayImage, mask: &RoiMask, p: &FsaParams) -> Result<FeatureVector> {
    check_frame(img, mask)?;
    let radii = p.radii(img.spacing())?;
    let rmax = *radii.last().expect("nonempty radii");
    let values = match p.variant {
        FsaVariant::Directional => {
            let mut out = Vec::with_capacity(2);
            for horizontal_element in [false, true] {
                let valid = valid_centers(mask, &line_footprint(rmax, horizontal_element));
                if valid.is_empty() {
                    return Err(Error::EmptyMask("no mask pixel lies far enough from the image border for the largest line element".into()));
                }
                let areas = blanket_areas(img, &valid, &radii, |s| line_footprint(s, horizontal_element));
                out.push(fd_from_areas(&areas, &radii)?);
            }
            out
        }
        FsaVariant::Disk => {
            let valid = valid_centers(mask, &disk_footprint(rmax));
            if valid.is_empty() {
                return Err(Error::EmptyMask("no mask pixel lies far enough from the image border for the largest disk element".into()));
            }
            let areas = blanket_areas(img, &valid, &radii, disk_footprint);
            vec![fd_from_areas(&areas, &radii)?]
        }
    };
    FeatureVector::new(Descriptor::Fractal, values, mask.origin())
}

// ---------------------------------------------------------------- entropy

/// Shannon entropy in bits of the 256-level histogram of in-mask pixels.
pub fn shannon_entropy(img: &GrayImage, mask: &RoiMask) -> Result<FeatureVector> {
    check_frame(img, mask)?;
    let mut hist = [0u64; 256];
    let mut n = 0u64;
    for (&v, &b) in img.pixels().iter().zip(mask.bits()) {
        if b {
            hist[(v.clamp(0.0, 1.0) * 255.0).round() as usize] += 1;
            n += 1;
        }
    }
    let p: Vec<f64> = hist.iter().map(|&c| c as f64 / n as f64).collect();
    FeatureVector::new(Descriptor::Entropy, vec![entropy_bits(&p)], mask.origin())
}

// ---------------------------------------------------------------- combination

pub fn concat_features(parts: &[FeatureVector]) -> Result<FeatureVector> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
    if parts.len() == 1 {
        return Ok(first.clone());
    }
    let values = parts.iter().flat_map(|p| p.values.iter().copied()).collect();
    Ok(FeatureVector {
        descriptor: Descriptor::Composite,
        values,
        roi_tag: first.roi_tag,
        degenerate: parts.iter().any(|p| p.degenerate),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorParams {
    pub lbp: LbpParams,
    pub hog: HogParams,
    pub haralick: HaralickParams,
    pub fractal: FsaParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HaralickParams {
    pub levels: usize,
}

impl Default for HaralickParams {
    fn default() -> Self {
        HaralickParams { levels: 64 }
    }
}

pub fn compute(descriptor: Descriptor, img: &GrayImage, mask: &RoiMask, p: &DescriptorParams) -> Result<FeatureVector> {
    match descriptor {
        Descriptor::Lbp => lbp_histogram(img, mask, &p.lbp),
        Descriptor::Hog => hog_features(img, mask, &p.hog),
        Descriptor::Haralick => haralick13(img, mask, p.haralick.levels),
        Descriptor::Fractal => fractal_dimension_fsa(img, mask, &p.fractal),
        Descriptor::Entropy => shannon_entropy(img, mask),
        Descriptor::Composite => Err(Error::InvalidArgument(
            "composite features are built with concat_features".into(),
        )),
    }
}
