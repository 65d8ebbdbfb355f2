//! Contrast normalization, 8-bit quantization, bicubic resampling to a
//! standard pixel spacing and rotation that levels the tibial plateau.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{GrayImage, LandmarkSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Lower truncation percentile as a fraction.
    pub low_percentile: f64,
    pub high_percentile: f64,
    /// Output pixel spacing in millimeters.
    pub target_spacing: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            low_percentile: 0.05,
            high_percentile: 0.99,
            target_spacing: 0.2,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.low_percentile)
            && (0.0..=1.0).contains(&self.high_percentile)
            && self.low_percentile < self.high_percentile
            && self.target_spacing.is_finite()
            && self.target_spacing > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid preprocess config {self:?}")))
        }
    }
}

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p * n)`, clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Output of [`normalize_contrast`]; `degenerate` is set when the two
/// percentiles coincide and the image collapsed to zeros.
#[derive(Clone, Debug)]
pub struct Normalized {
    pub image: GrayImage,
    pub degenerate: bool,
}

/// Clips intensities to the `[low, high]` nearest-rank percentiles of the
/// whole image and maps that interval affinely onto `[0, 1]`.
pub fn normalize_contrast(img: &GrayImage, cfg: &PreprocessConfig) -> Result<Normalized> {
    cfg.validate()?;
    let mut sorted = img.pixels().to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = nearest_rank(&sorted, cfg.low_percentile);
    let hi = nearest_rank(&sorted, cfg.high_percentile);
    if hi <= lo {
        log::warn!("contrast normalization on a constant image; output set to zero");
        return Ok(Normalized {
            image: img.map(|_| 0.0)?,
            degenerate: true,
        });
    }
    let span = hi - lo;
    Ok(Normalized {
        image: img.map(|v| (v.clamp(lo, hi) - lo) / span)?,
        degenerate: false,
    })
}

/// `v -> round(v * 255) / 255`.
pub fn quantize_8bit(img: &GrayImage) -> Result<GrayImage> {
    img.map(|v| (v * 255.0).round() / 255.0)
}

/// Catmull-Rom cubic convolution kernel (`a = -0.5`).
pub fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

/// Interpolates four equally spaced taps at fractional offset `t` in `[0, 1)`
/// past the second tap. Written relative to the second tap so that constant
/// inputs and integer positions are reproduced exactly.
#[inline]
fn cubic4(p: [f64; 4], t: f64) -> f64 {
    if t == 0.0 {
        return p[1];
    }
    let w0 = cubic_kernel(1.0 + t);
    let w2 = cubic_kernel(1.0 - t);
    let w3 = cubic_kernel(2.0 - t);
    p[1] + w0 * (p[0] - p[1]) + w2 * (p[2] - p[1]) + w3 * (p[3] - p[1])
}

/// Bicubic sample at index-space position `(x, y)` with edge replication.
pub fn sample_bicubic(img: &GrayImage, x: f64, y: f64) -> f64 {
    let (x, y) = (snap(x), snap(y));
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (ix, iy) = (fx as i64, fy as i64);
    let px = |dx: i64| (ix + dx).clamp(0, w - 1) as usize;
    let py = |dy: i64| (iy + dy).clamp(0, h - 1) as usize;
    let row = |yy: usize| cubic4([img.get(px(-1), yy), img.get(px(0), yy), img.get(px(1), yy), img.get(px(2), yy)], tx);
    if ty == 0.0 {
        return row(py(0));
    }
    cubic4([row(py(-1)), row(py(0)), row(py(1)), row(py(2))], ty)
}

/// 1-D resampling of `len` taps read via `get` onto `out_len` samples.
fn resample_line(get: impl Fn(usize) -> f64, len: usize, out_len: usize) -> Vec<f64> {
    let scale = len as f64 / out_len as f64;
    let last = len as i64 - 1;
    (0..out_len)
        .map(|i| {
            let x = snap((i as f64 + 0.5) * scale - 0.5);
            let fx = x.floor();
            let t = x - fx;
            let ix = fx as i64;
            let tap = |d: i64| get((ix + d).clamp(0, last) as usize);
            cubic4([tap(-1), tap(0), tap(1), tap(2)], t)
        })
        .collect()
}

/// Resamples to `target_spacing` with a separable Catmull-Rom kernel. Output
/// dimensions are `round(dim * spacing / target_spacing)`.
pub fn resample_bicubic(img: &GrayImage, target_spacing: f64) -> Result<GrayImage> {
    if !(target_spacing.is_finite() && target_spacing > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be positive, got {target_spacing}"
        )));
    }
    let ratio = img.spacing() / target_spacing;
    let out_w = (img.width() as f64 * ratio).round() as usize;
    let out_h = (img.height() as f64 * ratio).round() as usize;
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "resampling {}x{} to spacing {target_spacing} gives an empty image",
            img.width(),
            img.height()
        )));
    }
    resample_to(img, out_w, out_h, target_spacing)
}

/// Bicubic resize to explicit dimensions.
pub fn resample_to(img: &GrayImage, out_w: usize, out_h: usize, spacing: f64) -> Result<GrayImage> {
    let (w, h) = (img.width(), img.height());
    let mut horiz = vec![0.0; out_w * h];
    for y in 0..h {
        let line = resample_line(|x| img.get(x, y), w, out_w);
        horiz[y * out_w..(y + 1) * out_w].copy_from_slice(&line);
    }
    let mut out = vec![0.0; out_w * out_h];
    for x in 0..out_w {
        let col = resample_line(|y| horiz[y * out_w + x], h, out_h);
        for (y, v) in col.into_iter().enumerate() {
            out[y * out_w + x] = v;
        }
    }
    GrayImage::new(out_w, out_h, out, spacing)
}

/// Rigid rotation about the image center, with the canvas grown to hold the
/// whole rotated frame.
#[derive(Clone, Copy, Debug)]
pub struct Rotation {
    cos: f64,
    sin: f64,
    center: (f64, f64),
    out_center: (f64, f64),
    pub out_width: usize,
    pub out_height: usize,
}

impl Rotation {
    /// Rotation by `angle` radians (positive turns +x toward +y) of a
    /// `width x height` frame.
    pub fn new(angle: f64, width: usize, height: usize) -> Self {
        let (mut sin, mut cos) = angle.sin_cos();
        if sin.abs() < 1e-12 {
            sin = 0.0;
            cos = cos.signum();
        } else if cos.abs() < 1e-12 {
            cos = 0.0;
            sin = sin.signum();
        }
        let (w, h) = (width as f64, height as f64);
        let out_w = (w * cos.abs() + h * sin.abs() - 1e-9).ceil().max(1.0);
        let out_h = (w * sin.abs() + h * cos.abs() - 1e-9).ceil().max(1.0);
        Rotation {
            cos,
            sin,
            center: (w / 2.0, h / 2.0),
            out_center: (out_w / 2.0, out_h / 2.0),
            out_width: out_w as usize,
            out_height: out_h as usize,
        }
    }

    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        (
            self.out_center.0 + dx * self.cos - dy * self.sin,
            self.out_center.1 + dx * self.sin + dy * self.cos,
        )
    }

    pub fn inverse(&self, u: f64, v: f64) -> (f64, f64) {
        let (du, dv) = (u - self.out_center.0, v - self.out_center.1);
        (
            self.center.0 + du * self.cos + dv * self.sin,
            self.center.1 - du * self.sin + dv * self.cos,
        )
    }

    /// Rotates an image; output pixels whose source falls outside the input
    /// frame are set to 0.
    pub fn apply(&self, img: &GrayImage) -> Result<GrayImage> {
        let (w, h) = (img.width() as f64, img.height() as f64);
        GrayImage::from_fn(self.out_width, self.out_height, img.spacing(), |i, j| {
            let (x, y) = self.inverse(i as f64 + 0.5, j as f64 + 0.5);
            let (x, y) = (snap(x), snap(y));
            if x < 0.0 || y < 0.0 || x > w || y > h {
                0.0
            } else {
                sample_bicubic(img, x - 0.5, y - 0.5)
            }
        })
    }
}

/// Angle of the plateau segment, left to right, in radians.
pub fn plateau_angle(lm: &LandmarkSet) -> Result<f64> {
    let (lx, ly) = lm.point("tibial_plateau_left")?;
    let (rx, ry) = lm.point("tibial_plateau_right")?;
    let (dx, dy) = (rx - lx, ry - ly);
    if dx.hypot(dy) < 1e-9 {
        return Err(Error::Landmarks("tibial plateau points coincide".into()));
    }
    Ok(dy.atan2(dx))
}

/// Rotates image and landmarks so the tibial plateau becomes horizontal.
pub fn align_rotation(img: &GrayImage, lm: &LandmarkSet) -> Result<(GrayImage, LandmarkSet)> {
    let theta = plateau_angle(lm)?;
    let rot = Rotation::new(-theta, img.width(), img.height());
    let out = rot.apply(img)?;
    let moved = lm.transform(|x, y| rot.forward(x, y));
    Ok((out, moved))
}

/// Result of the full chain.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub image: GrayImage,
    pub landmarks: LandmarkSet,
    pub degenerate_contrast: bool,
}

/// normalize -> quantize -> resample -> rotate, with landmarks carried along.
pub fn preprocess(img: &GrayImage, lm: &LandmarkSet, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let normalized = normalize_contrast(img, cfg)?;
    let quantized = quantize_8bit(&normalized.image)?;
    let resampled = resample_bicubic(&quantized, cfg.target_spacing)?;
    let sx = resampled.width() as f64 / img.width() as f64;
    let sy = resampled.height() as f64 / img.height() as f64;
    let scaled = lm.transform(|x, y| (x * sx, y * sy));
    let (image, landmarks) = align_rotation(&resampled, &scaled)?;
    Ok(Preprocessed {
        image,
        landmarks,
        degenerate_contrast: normalized.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::Landmark;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn landmarks_with_plateau(l: (f64, f64), r: (f64, f64)) -> LandmarkSet {
        let mk = |name: &str, (x, y): (f64, f64)| Landmark {
            name: name.into(),
            x,
            y,
        };
        LandmarkSet {
            points: vec![
                mk("tibial_plateau_left", l),
                mk("tibial_plateau_right", r),
                mk("medial_tibia_margin", l),
                mk("lateral_tibia_margin", r),
                mk("medial_condyle_center", ((l.0 + r.0) / 2.0, (l.1 + r.1) / 2.0)),
            ],
            contours: Default::default(),
        }
    }

    #[test]
    fn ramp_percentiles_follow_sort_clip_rescale_oracle() {
        let img = GrayImage::from_fn(10, 10, 0.2, |x, y| (y * 10 + x) as f64).unwrap();
        let out = normalize_contrast(&img, &PreprocessConfig::default()).unwrap();
        assert!(!out.degenerate);
        // oracle: sorted ramp 0..99; rank 5 -> 4, rank 99 -> 98
        let (lo, hi) = (4.0, 98.0);
        for (v, o) in img.pixels().iter().zip(out.image.pixels()) {
            let expect = (v.max(lo).min(hi) - lo) / (hi - lo);
            assert_eq!(*o, expect);
        }
        let px = out.image.pixels();
        assert_eq!(px.iter().cloned().fold(f64::MAX, f64::min), 0.0);
        assert_eq!(px.iter().cloned().fold(f64::MIN, f64::max), 1.0);
    }

    #[test]
    fn constant_image_normalizes_to_zero_with_flag() {
        let img = GrayImage::filled(4, 4, 0.3, 0.2).unwrap();
        let out = normalize_contrast(&img, &PreprocessConfig::default()).unwrap();
        assert!(out.degenerate);
        assert!(out.image.pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = GrayImage::from_fn(17, 13, 0.2, |_, _| rng.random::<f64>() * 3.0 - 1.0).unwrap();
        let cfg = PreprocessConfig::default();
        let once = normalize_contrast(&img, &cfg).unwrap().image;
        let twice = normalize_contrast(&once, &cfg).unwrap().image;
        for (a, b) in once.pixels().iter().zip(twice.pixels()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn quantization_examples_and_error_bound() {
        let img = GrayImage::new(3, 1, vec![0.5, 0.0, 1.0], 0.2).unwrap();
        let q = quantize_8bit(&img).unwrap();
        assert_eq!(q.pixels(), &[128.0 / 255.0, 0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = GrayImage::from_fn(32, 32, 0.2, |_, _| rng.random::<f64>()).unwrap();
        let q = quantize_8bit(&img).unwrap();
        for (a, b) in img.pixels().iter().zip(q.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-15);
        }
    }

    #[test]
    fn identity_resample() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = GrayImage::from_fn(21, 14, 0.2, |_, _| rng.random::<f64>()).unwrap();
        let out = resample_bicubic(&img, 0.2).unwrap();
        assert_eq!((out.width(), out.height()), (21, 14));
        for (a, b) in img.pixels().iter().zip(out.pixels()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn constant_image_survives_any_scale() {
        let img = GrayImage::filled(13, 9, 0.37, 0.17).unwrap();
        for target in [0.05, 0.1, 0.2, 0.33, 0.5] {
            let out = resample_bicubic(&img, target).unwrap();
            assert!(out.pixels().iter().all(|&v| v == 0.37));
            assert!((out.mean() - 0.37).abs() <= 1e-12);
            assert_eq!(out.spacing(), target);
        }
    }

    #[test]
    fn downscaled_ramp_is_still_a_ramp_in_the_interior() {
        // f(x, y) = 0.01 x + 0.003 y on index coordinates
        let img = GrayImage::from_fn(40, 30, 0.1, |x, y| 0.01 * x as f64 + 0.003 * y as f64).unwrap();
        let out = resample_bicubic(&img, 0.2).unwrap();
        assert_eq!((out.width(), out.height()), (20, 15));
        // output pixel i samples input at 2i + 0.5; taps stay in range for 1 <= i <= n-2
        for j in 1..out.height() - 1 {
            for i in 1..out.width() - 1 {
                let expect = 0.01 * (2.0 * i as f64 + 0.5) + 0.003 * (2.0 * j as f64 + 0.5);
                assert!((out.get(i, j) - expect).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn zero_size_resample_is_an_error() {
        let img = GrayImage::filled(2, 2, 0.0, 0.1).unwrap();
        assert!(resample_bicubic(&img, 10.0).is_err());
    }

    #[test]
    fn level_plateau_leaves_image_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = GrayImage::from_fn(9, 7, 0.2, |_, _| rng.random::<f64>()).unwrap();
        let lm = landmarks_with_plateau((1.0, 3.0), (8.0, 3.0));
        let (out, moved) = align_rotation(&img, &lm).unwrap();
        assert_eq!(out, img);
        assert_eq!(moved, lm);
    }

    #[test]
    fn ten_degree_plateau_becomes_horizontal() {
        let img = GrayImage::filled(60, 40, 0.5, 0.2).unwrap();
        let t = 10f64.to_radians();
        let l = (10.0, 20.0);
        let r = (10.0 + 40.0 * t.cos(), 20.0 + 40.0 * t.sin());
        let (out, moved) = align_rotation(&img, &landmarks_with_plateau(l, r)).unwrap();
        let a = moved.point("tibial_plateau_left").unwrap();
        let b = moved.point("tibial_plateau_right").unwrap();
        assert!((a.1 - b.1).abs() <= 0.51);
        assert!(b.0 > a.0);
        assert!(out.width() > 60 && out.height() > 40);
    }

    #[test]
    fn right_angle_rotation_is_an_exact_permutation() {
        // 3 wide x 2 high, plateau pointing straight down (theta = +90 deg)
        let img = GrayImage::new(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 0.2).unwrap();
        let lm = landmarks_with_plateau((1.5, 0.0), (1.5, 2.0));
        let (out, _) = align_rotation(&img, &lm).unwrap();
        assert_eq!((out.width(), out.height()), (2, 3));
        // rotating by -90 deg sends input (col i, row j) to output (col j, row 2 - i)
        for j in 0..2 {
            for i in 0..3 {
                assert_eq!(out.get(j, 2 - i), img.get(i, j));
            }
        }
    }

    #[test]
    fn coincident_plateau_points_rejected() {
        let img = GrayImage::filled(4, 4, 0.5, 0.2).unwrap();
        let lm = landmarks_with_plateau((1.0, 1.0), (1.0, 1.0));
        assert!(align_rotation(&img, &lm).is_err());
    }

    #[test]
    fn full_chain_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = GrayImage::from_fn(50, 40, 0.25, |_, _| rng.random::<f64>()).unwrap();
        let lm = landmarks_with_plateau((5.0, 20.0), (45.0, 23.0));
        let cfg = PreprocessConfig::default();
        let a = preprocess(&img, &lm, &cfg).unwrap();
        let b = preprocess(&img, &lm, &cfg).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.landmarks, b.landmarks);
    }
}
