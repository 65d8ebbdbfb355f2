//! Synthetic knee radiographs: tibia and femur silhouettes filled with
//! band-pass noise texture. In positive subjects the texture inside a disk
//! around one tibial lattice point turns coarser and horizontally
//! elongated; everything else has the same distribution in both classes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{polygon_fill, save_raster_16bit, GrayImage, Landmark, LandmarkSet};
use crate::preprocess::Rotation;
use crate::segmentation::{grid_points, GridLayout};

use super::manifest::{KneeSide, Manifest, ManifestRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Tibial lattice index carrying the class difference.
    pub informative_cell: usize,
    /// Mixing weight of the altered texture in positive subjects, 0..=1.
    pub texture_delta: f64,
    pub patch_radius_px: f64,
    /// Both knees of a subject share one image.
    pub duplicate_knees: bool,
    pub positive_fraction: f64,
    pub width: usize,
    pub height: usize,
    pub max_tilt_deg: f64,
    pub spacing_mm: f64,
    pub texture_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 200,
            informative_cell: 0,
            texture_delta: 1.0,
            patch_radius_px: 22.0,
            duplicate_knees: false,
            positive_fraction: 0.5,
            width: 440,
            height: 420,
            max_tilt_deg: 3.0,
            spacing_mm: 0.2,
            texture_amplitude: 0.02,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.texture_delta)
            && (0.0..=1.0).contains(&self.positive_fraction)
            && self.patch_radius_px > 0.0
            && self.width >= 200
            && self.height >= 200
            && self.max_tilt_deg.abs() < 45.0
            && self.spacing_mm > 0.0
            && self.texture_amplitude >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synth config {self:?}")))
        }
    }
}

/// Where the class difference was planted, per knee, in the stored image
/// frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub informative_cell: usize,
    pub layout: GridLayout,
    pub patch_centers: BTreeMap<String, (f64, f64)>,
}

struct Geometry {
    tibia_width: f64,
    cx: f64,
    plateau_y: f64,
    gap: f64,
}

impl Geometry {
    fn draw(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Self {
        let scale = cfg.width as f64 / 440.0;
        Geometry {
            tibia_width: rng.random_range(280.0..320.0) * scale,
            cx: cfg.width as f64 / 2.0 + rng.random_range(-10.0..10.0),
            plateau_y: cfg.height as f64 * rng.random_range(0.44..0.48),
            gap: rng.random_range(14.0..18.0),
        }
    }

    fn x_medial(&self) -> f64 {
        self.cx - self.tibia_width / 2.0
    }

    fn x_lateral(&self) -> f64 {
        self.cx + self.tibia_width / 2.0
    }

    fn tibia(&self, bottom: f64) -> Vec<[f64; 2]> {
        let (xl, xr, py) = (self.x_medial(), self.x_lateral(), self.plateau_y);
        let half_shaft = 0.31 * self.tibia_width;
        vec![
            [xl + 8.0, py],
            [xr - 8.0, py],
            [xr, py + 6.0],
            [xr, py + 40.0],
            [self.cx + half_shaft, py + 110.0],
            [self.cx + half_shaft, bottom],
            [self.cx - half_shaft, bottom],
            [self.cx - half_shaft, py + 110.0],
            [xl, py + 40.0],
            [xl, py + 6.0],
        ]
    }

    fn femur(&self, top: f64) -> Vec<[f64; 2]> {
        let fw = 0.95 * self.tibia_width;
        let (c, fy) = (self.cx, self.plateau_y - self.gap);
        vec![
            [c - fw / 2.0, top],
            [c + fw / 2.0, top],
            [c + fw / 2.0, fy - 30.0],
            [c + fw / 2.0 - 15.0, fy - 5.0],
            [c + fw / 4.0 + 10.0, fy],
            [c + fw / 4.0 - 20.0, fy],
            [c + 10.0, fy - 25.0],
            [c - 10.0, fy - 25.0],
            [c - fw / 4.0 + 20.0, fy],
            [c - fw / 4.0 - 10.0, fy],
            [c - fw / 2.0 + 15.0, fy - 5.0],
            [c - fw / 2.0, fy - 30.0],
        ]
    }

    fn landmarks(&self, width: usize, height: usize) -> LandmarkSet {
        let mk = |name: &str, x: f64, y: f64| Landmark {
            name: name.into(),
            x,
            y,
        };
        let (xl, xr, py) = (self.x_medial(), self.x_lateral(), self.plateau_y);
        let mut contours = BTreeMap::new();
        contours.insert("tibia".to_string(), self.tibia(height as f64 - 12.0));
        contours.insert("femur".to_string(), self.femur(12.0));
        let _ = width;
        LandmarkSet {
            points: vec![
                mk("medial_tibia_margin", xl, py + 4.0),
                mk("lateral_tibia_margin", xr, py + 4.0),
                mk("tibial_plateau_left", xl + 10.0, py),
                mk("tibial_plateau_right", xr - 10.0, py),
                mk("medial_condyle_center", xl + 0.3 * self.tibia_width, py - self.gap / 2.0),
            ],
            contours,
        }
    }
}

/// Separable Gaussian blur with edge replication.
fn gaussian_blur(field: &[f64], w: usize, h: usize, sx: f64, sy: f64) -> Vec<f64> {
    let kernel = |s: f64| {
        let r = (3.0 * s).ceil() as i64;
        let k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * s * s)).exp()).collect();
        let sum: f64 = k.iter().sum();
        (r, k.into_iter().map(|v| v / sum).collect::<Vec<_>>())
    };
    let (rx, kx) = kernel(sx);
    let (ry, ky) = kernel(sy);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &field[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kx.iter().enumerate() {
                let xx = (x as i64 + i as i64 - rx).clamp(0, w as i64 - 1) as usize;
                acc += k * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (i, k) in ky.iter().enumerate() {
            let yy = (y as i64 + i as i64 - ry).clamp(0, h as i64 - 1) as usize;
            let src = &tmp[yy * w..(yy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for x in 0..w {
                dst[x] += k * src[x];
            }
        }
    }
    out
}

/// Difference-of-Gaussians band-pass noise scaled to unit variance.
fn band_pass(rng: &mut ChaCha8Rng, w: usize, h: usize, s1: (f64, f64), s2: (f64, f64)) -> Vec<f64> {
    let white: Vec<f64> = (0..w * h).map(|_| StandardNormal.sample(rng)).collect();
    let a = gaussian_blur(&white, w, h, s1.0, s1.1);
    let b = gaussian_blur(&white, w, h, s2.0, s2.1);
    let mut d: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    d.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    d
}

struct Knee {
    image: GrayImage,
    landmarks: LandmarkSet,
    patch: (f64, f64),
}

fn render_knee(rng: &mut ChaCha8Rng, geom: &Geometry, positive: bool, cfg: &SynthConfig, layout: GridLayout) -> Result<Knee> {
    let (w, h) = (cfg.width, cfg.height);
    let lm = geom.landmarks(w, h);
    let tibia = polygon_fill(lm.contour("tibia")?, w, h)?;
    let femur = polygon_fill(lm.contour("femur")?, w, h)?;
    let grid = grid_points(&tibia, layout)?;
    let p = grid.point(cfg.informative_cell).ok_or_else(|| {
        Error::Config(format!("informative cell {} falls outside the synthetic tibia", cfg.informative_cell))
    })?;
    let (px, py) = (p.x as f64 + 0.5, p.y as f64 + 0.5);

    let fine = band_pass(rng, w, h, (1.0, 1.0), (2.0, 2.0));
    let radius = cfg.patch_radius_px;
    let half = (radius + 30.0).ceil() as usize;
    let (wx0, wy0) = (p.x.saturating_sub(half), p.y.saturating_sub(half));
    let (wx1, wy1) = ((p.x + half).min(w), (p.y + half).min(h));
    let (ww, wh) = (wx1 - wx0, wy1 - wy0);
    let coarse = band_pass(rng, ww, wh, (4.0, 1.5), (8.0, 3.0));
    let delta = if positive { cfg.texture_delta } else { 0.0 };

    let fy = geom.plateau_y - geom.gap;
    let bg_noise: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
    let pixels = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let in_tibia = tibia.get(x, y);
            if !in_tibia && !femur.get(x, y) {
                return 0.18 + 0.01 * bg_noise[i];
            }
            let depth = if in_tibia { yf - geom.plateau_y } else { fy - yf }.max(0.0);
            let base = 0.5 + 0.12 * (-depth / 15.0).exp();
            let mut tex = fine[i];
            if delta > 0.0 && in_tibia && x >= wx0 && x < wx1 && y >= wy0 && y < wy1 {
                let r = (xf - px).hypot(yf - py);
                let weight = delta * ((radius + 4.0 - r) / 8.0).clamp(0.0, 1.0);
                if weight > 0.0 {
                    tex = (1.0 - weight) * tex + weight * coarse[(y - wy0) * ww + (x - wx0)];
                }
            }
            base + cfg.texture_amplitude * tex
        })
        .collect();
    let image = GrayImage::new(w, h, pixels, cfg.spacing_mm)?;
    Ok(Knee {
        image,
        landmarks: lm,
        patch: (px, py),
    })
}

/// Tilt, exposure change, and for left knees a horizontal mirror.
fn acquire(knee: &Knee, rng: &mut ChaCha8Rng, cfg: &SynthConfig, side: KneeSide) -> Result<Knee> {
    let tilt = rng.random_range(-1.0..=1.0) * cfg.max_tilt_deg.to_radians();
    let gain = rng.random_range(0.8..1.2);
    let offset = rng.random_range(-0.05..0.05);
    let rot = Rotation::new(tilt, knee.image.width(), knee.image.height());
    let rotated = rot.apply(&knee.image)?.map(|v| (gain * v + offset).clamp(0.0, 1.0))?;
    let mut landmarks = knee.landmarks.transform(|x, y| rot.forward(x, y));
    let mut patch = rot.forward(knee.patch.0, knee.patch.1);
    let image = if side == KneeSide::L {
        landmarks = landmarks.mirror_horizontal(rotated.width());
        patch.0 = rotated.width() as f64 - patch.0;
        rotated.mirror_horizontal()
    } else {
        rotated
    };
    Ok(Knee { image, landmarks, patch })
}

/// Writes `images/`, `landmarks/`, `manifest.csv` and `truth.json` under
/// `out`. Subject `s` draws from stream `s` of a generator seeded with
/// `seed`, so output does not depend on thread scheduling.
pub fn generate(cfg: &SynthConfig, layout: GridLayout, seed: u64, out: &Path) -> Result<(Manifest, SynthTruth)> {
    cfg.validate()?;
    for dir in ["images", "landmarks"] {
        let d = out.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let per_subject: Vec<Vec<(ManifestRow, (f64, f64))>> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|s| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let subject = format!("s{s:04}");
            let positive = rng.random_bool(cfg.positive_fraction);
            let kl = if positive { rng.random_range(2..=4u8) } else { rng.random_range(0..=1u8) };
            let geom = Geometry::draw(&mut rng, cfg);
            let mut rows = Vec::new();
            let mut shared: Option<Knee> = None;
            for side in [KneeSide::R, KneeSide::L] {
                let acquired = match (&shared, cfg.duplicate_knees) {
                    (Some(k), true) => {
                        // same exposure as the first knee, mirrored for storage
                        Knee {
                            image: k.image.mirror_horizontal(),
                            landmarks: k.landmarks.mirror_horizontal(k.image.width()),
                            patch: (k.image.width() as f64 - k.patch.0, k.patch.1),
                        }
                    }
                    _ => {
                        let knee = render_knee(&mut rng, &geom, positive, cfg, layout)?;
                        acquire(&knee, &mut rng, cfg, side)?
                    }
                };
                let sample_id = format!("{subject}_{side:?}");
                let image_path = PathBuf::from("images").join(format!("{sample_id}.png"));
                let landmark_path = PathBuf::from("landmarks").join(format!("{sample_id}.json"));
                save_raster_16bit(&acquired.image, &out.join(&image_path))?;
                let lm_path = out.join(&landmark_path);
                std::fs::write(&lm_path, acquired.landmarks.to_json() + "\n").map_err(|e| Error::io(&lm_path, e))?;
                rows.push((
                    ManifestRow {
                        sample_id,
                        subject_id: subject.clone(),
                        image_path,
                        landmark_path,
                        spacing_mm: cfg.spacing_mm,
                        knee_side: side,
                        kl_grade: kl,
                    },
                    acquired.patch,
                ));
                if shared.is_none() {
                    shared = Some(acquired);
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut patch_centers = BTreeMap::new();
    for (row, patch) in per_subject.into_iter().flatten() {
        patch_centers.insert(row.sample_id.clone(), patch);
        rows.push(row);
    }
    let manifest = Manifest {
        rows,
        base_dir: out.to_path_buf(),
    };
    manifest.write(&out.join("manifest.csv"))?;
    let truth = SynthTruth {
        informative_cell: cfg.informative_cell,
        layout,
        patch_centers,
    };
    let truth_path = out.join("truth.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)? + "\n").map_err(|e| Error::io(&truth_path, e))?;
    Ok((manifest, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let f = vec![2.5; 30 * 20];
        let b = gaussian_blur(&f, 30, 20, 2.0, 0.7);
        assert!(b.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn corpus_is_complete_and_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (m, truth) = generate(&small(), GridLayout::default(), 5, a.path()).unwrap();
        generate(&small(), GridLayout::default(), 5, b.path()).unwrap();
        assert_eq!(m.rows.len(), 6);
        assert_eq!(truth.patch_centers.len(), 6);
        let reloaded = Manifest::load(&a.path().join("manifest.csv")).unwrap();
        assert_eq!(reloaded.rows, m.rows);
        for r in &m.rows {
            for p in [&r.image_path, &r.landmark_path] {
                let x = std::fs::read(a.path().join(p)).unwrap();
                let y = std::fs::read(b.path().join(p)).unwrap();
                assert_eq!(x, y, "{}", p.display());
            }
            let lm = LandmarkSet::load(&a.path().join(&r.landmark_path)).unwrap();
            let img = crate::imagecore::load_raster(&a.path().join(&r.image_path), r.spacing_mm).unwrap();
            lm.validate_bounds(img.width(), img.height()).unwrap();
            // the medial margin sits on the left of right knees and the
            // right of stored left knees
            let (mx, _) = lm.point("medial_tibia_margin").unwrap();
            let (lx, _) = lm.point("lateral_tibia_margin").unwrap();
            assert_eq!(mx < lx, r.knee_side == KneeSide::R);
        }
        let (_, t2) = generate(&small(), GridLayout::default(), 6, b.path()).unwrap();
        assert_ne!(truth.patch_centers, t2.patch_centers);
    }

    #[test]
    fn duplicated_knees_mirror_each_other() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            n_subjects: 1,
            duplicate_knees: true,
            ..SynthConfig::default()
        };
        let (m, _) = generate(&cfg, GridLayout::default(), 1, dir.path()).unwrap();
        let r = crate::imagecore::load_raster(&dir.path().join(&m.rows[0].image_path), 0.2).unwrap();
        let l = crate::imagecore::load_raster(&dir.path().join(&m.rows[1].image_path), 0.2).unwrap();
        assert_eq!(r, l.mirror_horizontal());
    }
}
