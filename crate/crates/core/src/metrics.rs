//! Reconstruction error measures: voxel MSE, image PSNR/SSIM and silhouette
//! reprojection of occupancy grids.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::calib::CameraCalibration;
use crate::matte::SoftMatte;
use crate::pvh::VoxelGrid;
use crate::{Error, Real, Result};

/// Two-view error before refinement on real multi-view capture, MSE ×10⁻³.
pub const BASELINE_INPUT_MSE_E3: f64 = 24.6;
/// Two-view error after refinement at stride 16 on the same capture, MSE ×10⁻³.
pub const BASELINE_REFINED_MSE_E3: f64 = 7.71;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Row-major greyscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, pixels: Vec<T>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "image {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Image { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, v: T) -> Self {
        Image { width, height, pixels: vec![v; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.pixels[y * self.width + x]
    }

    pub fn from_matte(m: &SoftMatte) -> Self {
        Image {
            width: m.width(),
            height: m.height(),
            pixels: m.values().iter().map(|&v| T::from_f32(v).unwrap()).collect(),
        }
    }

    /// 1 where the pixel is at least `level`, else 0.
    pub fn binarised(&self, level: T) -> Self {
        let pixels = self.pixels.iter().map(|&v| if v >= level { T::one() } else { T::zero() }).collect();
        Image { width: self.width, height: self.height, pixels }
    }

    /// Sub-image `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, rect: Rect) -> Result<Self> {
        if rect.x + rect.width > self.width || rect.y + rect.height > self.height {
            return Err(Error::Shape(format!("crop {rect:?} outside {}x{} image", self.width, self.height)));
        }
        let mut pixels = Vec::with_capacity(rect.width * rect.height);
        for y in rect.y..rect.y + rect.height {
            pixels.extend_from_slice(&self.pixels[y * self.width + rect.x..y * self.width + rect.x + rect.width]);
        }
        Ok(Image { width: rect.width, height: rect.height, pixels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

fn same_size<T>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "images differ in size: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Mean squared occupancy difference over all voxels.
pub fn voxel_mse(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("grids differ in size: {:?} vs {:?}", a.dims(), b.dims())));
    }
    let n = a.values().len().max(1) as f64;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / n)
}

pub fn image_mse<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    same_size(a, b)?;
    let n = a.pixels.len().max(1) as f64;
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| (x.to_f64_lossy() - y.to_f64_lossy()).powi(2))
        .sum();
    Ok(sum / n)
}

/// `10·log10(peak² / MSE)`; identical images give `+∞`.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>, peak: f64) -> Result<f64> {
    let mse = image_mse(a, b)?;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter over every full window position.
fn filter_valid<T: Real>(img: &[T], width: usize, height: usize, w: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut rows = vec![T::zero(); ow * height];
    for y in 0..height {
        let line = &img[y * width..(y + 1) * width];
        for x in 0..ow {
            let mut acc = T::zero();
            for k in 0..SSIM_WINDOW {
                acc += w[k] * line[x + k];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = T::zero();
            for k in 0..SSIM_WINDOW {
                acc += w[k] * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean local structural similarity, 11×11 Gaussian window (σ = 1.5),
/// dynamic range 1.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    same_size(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    let w = gaussian_window().map(T::from_f64_lossy);
    let (wd, ht) = (a.width, a.height);
    let sq = |p: &[T]| p.iter().map(|&v| v * v).collect::<Vec<T>>();
    let ab: Vec<T> = a.pixels.iter().zip(&b.pixels).map(|(&x, &y)| x * y).collect();
    let mu_a = filter_valid(&a.pixels, wd, ht, &w);
    let mu_b = filter_valid(&b.pixels, wd, ht, &w);
    let e_aa = filter_valid(&sq(&a.pixels), wd, ht, &w);
    let e_bb = filter_valid(&sq(&b.pixels), wd, ht, &w);
    let e_ab = filter_valid(&ab, wd, ht, &w);
    let c1 = T::from_f64_lossy(SSIM_K1 * SSIM_K1);
    let c2 = T::from_f64_lossy(SSIM_K2 * SSIM_K2);
    let two = T::from_f64_lossy(2.0);
    let mut total = T::zero();
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (two * ma * mb + c1) * (two * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / T::from_usize(mu_a.len()).unwrap())
}

/// Intersection over union of the pixels at or above `level`.
pub fn silhouette_iou<T: Real>(a: &Image<T>, b: &Image<T>, level: T) -> Result<f64> {
    same_size(a, b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.pixels.iter().zip(&b.pixels) {
        let (p, q) = (x >= level, y >= level);
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Bounding box of nonzero pixels in either image, padded by `pad` and grown
/// to at least the SSIM window; `None` when both images are empty.
pub fn foreground_rect<T: Real>(a: &Image<T>, b: &Image<T>, pad: usize) -> Result<Option<Rect>> {
    same_size(a, b)?;
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..a.height {
        for x in 0..a.width {
            if a.get(x, y) > T::zero() || b.get(x, y) > T::zero() {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Ok(None);
    }
    let grow = |lo: usize, hi: usize, size: usize| {
        let mut lo = lo.saturating_sub(pad);
        let mut hi = (hi + pad).min(size - 1);
        while hi + 1 - lo < SSIM_WINDOW.min(size) {
            if lo > 0 {
                lo -= 1;
            }
            if hi + 1 < size {
                hi += 1;
            }
        }
        (lo, hi + 1 - lo)
    };
    let (x, width) = grow(x0, x1, a.width);
    let (y, height) = grow(y0, y1, a.height);
    Ok(Some(Rect { x, y, width, height }))
}

/// Binary silhouette of the `iso` superlevel set seen from `calib`.
///
/// Each pixel's viewing ray is marched at half-voxel steps through the grid's
/// bounds, sampling occupancy trilinearly.
pub fn reproject_silhouette(grid: &VoxelGrid, calib: &CameraCalibration, iso: f32) -> Image<f32> {
    let (w, h) = (calib.image_width as usize, calib.image_height as usize);
    let mut img = Image::filled(w, h, 0.0f32);
    if grid.values().is_empty() || iso > grid.max_value() {
        return img;
    }
    let spec = grid.spec();
    let s = spec.voxel_size as f64;
    let lo: Vector3<f64> = Vector3::from_fn(|a, _| spec.origin[a] as f64 - 0.5 * s);
    let hi: Vector3<f64> = Vector3::from_fn(|a, _| spec.origin[a] as f64 + (spec.dims[a] as f64 - 0.5) * s);
    let origin = calib.cop();
    let step = 0.5 * s;
    img.pixels.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let dir = calib.pixel_ray(x as f64, y as f64);
            let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
            for a in 0..3 {
                if dir[a].abs() < 1e-15 {
                    if origin[a] < lo[a] || origin[a] > hi[a] {
                        t1 = -1.0;
                    }
                    continue;
                }
                let ta = (lo[a] - origin[a]) / dir[a];
                let tb = (hi[a] - origin[a]) / dir[a];
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
            let mut t = t0;
            while t <= t1 {
                if grid.sample_world(&(origin + dir * t)) >= iso {
                    *px = 1.0;
                    break;
                }
                t += step;
            }
        }
    });
    img
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Summary { mean: f64::NAN, std: f64::NAN, count: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Summary { mean, std: var.sqrt(), count: n }
    }
}

/// Decibel value whose infinity serialises as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decibels(pub f64);

impl Serialize for Decibels {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() && self.0 > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Decibels {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Decibels(v)),
            Raw::Text(t) if t == "inf" => Ok(Decibels(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

/// Silhouette-reprojection image scores for one frame and camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub iou: f64,
    pub psnr_full: Decibels,
    pub ssim_full: f64,
    pub psnr_crop: Decibels,
    pub ssim_crop: f64,
}

/// Compares a reprojected silhouette against a reference silhouette on the
/// full frame and on the padded foreground crop.
pub fn score_silhouettes(ours: &Image<f64>, reference: &Image<f64>) -> Result<ImageScores> {
    let rect = foreground_rect(ours, reference, SSIM_WINDOW)?.unwrap_or(Rect {
        x: 0,
        y: 0,
        width: ours.width,
        height: ours.height,
    });
    let (a, b) = (ours.crop(rect)?, reference.crop(rect)?);
    Ok(ImageScores {
        iou: silhouette_iou(ours, reference, 0.5)?,
        psnr_full: Decibels(psnr(ours, reference, 1.0)?),
        ssim_full: ssim(ours, reference)?,
        psnr_crop: Decibels(psnr(&a, &b, 1.0)?),
        ssim_crop: ssim(&a, &b)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame: usize,
    pub mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageScores>,
}

/// One sequence (scene family) under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub sequence: String,
    /// Voxel MSE ×10⁻³ over frames.
    pub mse_e3: Summary,
    pub frames: Vec<FrameScore>,
}

/// One table row: an input or refinement setting at a camera count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub cameras: usize,
    pub sequences: Vec<SequenceScore>,
    /// Voxel MSE ×10⁻³ pooled over every frame of every sequence.
    pub overall_mse_e3: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub baseline_input_mse_e3: f64,
    pub baseline_refined_mse_e3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_metrics: Option<String>,
    pub config: serde_json::Value,
}

impl EvalRow {
    pub fn new(label: impl Into<String>, cameras: usize, sequences: Vec<SequenceScore>) -> Self {
        let all: Vec<f64> = sequences.iter().flat_map(|s| s.frames.iter().map(|f| f.mse * 1e3)).collect();
        EvalRow { label: label.into(), cameras, overall_mse_e3: Summary::of(&all), sequences }
    }
}

impl SequenceScore {
    pub fn new(sequence: impl Into<String>, frames: Vec<FrameScore>) -> Self {
        let vals: Vec<f64> = frames.iter().map(|f| f.mse * 1e3).collect();
        SequenceScore { sequence: sequence.into(), mse_e3: Summary::of(&vals), frames }
    }
}

impl EvalReport {
    pub fn new(rows: Vec<EvalRow>, config: serde_json::Value) -> Self {
        EvalReport {
            rows,
            baseline_input_mse_e3: BASELINE_INPUT_MSE_E3,
            baseline_refined_mse_e3: BASELINE_REFINED_MSE_E3,
            image_metrics: None,
            config,
        }
    }

    /// Plain-text table: rows are settings, columns are sequences, cells are
    /// mean (σ) of MSE ×10⁻³.
    pub fn to_table(&self) -> String {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.rows {
            for s in &r.sequences {
                if !names.contains(&s.sequence.as_str()) {
                    names.push(&s.sequence);
                }
            }
        }
        let mut out = format!("{:<12}{:>4}", "setting", "C");
        for n in &names {
            out += &format!("{n:>18}");
        }
        out += &format!("{:>18}\n", "mean");
        for r in &self.rows {
            out += &format!("{:<12}{:>4}", r.label, r.cameras);
            for n in &names {
                match r.sequences.iter().find(|s| s.sequence == *n) {
                    Some(s) => out += &format!("{:>18}", format!("{:.2} ({:.2})", s.mse_e3.mean, s.mse_e3.std)),
                    None => out += &format!("{:>18}", "-"),
                }
            }
            out += &format!("{:>18}\n", format!("{:.2} ({:.2})", r.overall_mse_e3.mean, r.overall_mse_e3.std));
        }
        out += &format!(
            "real-capture two-view reference: input {:.2}, refined {:.2} (MSE x1e-3)\n",
            self.baseline_input_mse_e3, self.baseline_refined_mse_e3
        );
        if let Some(note) = &self.image_metrics {
            out += note;
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pvh::{compute_pvh, FusionMode, GridSpec};
    use crate::synth::{capture_volume, make_camera_ring, render_soft_matte, Scene, ScenePrimitive};
    use nalgebra::Point3;
    use proptest::prelude::*;

    fn grid(v: f32) -> VoxelGrid {
        VoxelGrid::from_fn(GridSpec { origin: [0.0; 3], voxel_size: 1.0, dims: [4, 4, 4] }, |_| v)
    }

    fn noise(w: usize, h: usize, seed: u64) -> Image<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let pixels = (0..w * h)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Image::new(w, h, pixels).unwrap()
    }

    #[test]
    fn voxel_mse_examples() {
        assert_eq!(voxel_mse(&grid(0.3), &grid(0.3)).unwrap(), 0.0);
        assert!((voxel_mse(&grid(0.3), &grid(0.4)).unwrap() - 0.01).abs() < 1e-7);
        let other = VoxelGrid::zeros(GridSpec { origin: [0.0; 3], voxel_size: 1.0, dims: [4, 4, 5] });
        assert!(voxel_mse(&grid(0.1), &other).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, 0.5f64);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = Image::filled(4, 4, 0.6f64);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let z = Image::filled(4, 4, 0.0f64);
        let o = Image::filled(4, 4, 1.0f64);
        assert_eq!(psnr(&z, &o, 1.0).unwrap(), 0.0);
        assert!(psnr(&a, &Image::filled(4, 5, 0.5), 1.0).is_err());
    }

    #[test]
    fn decibels_serialise_infinity_as_text() {
        assert_eq!(serde_json::to_string(&Decibels(f64::INFINITY)).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&Decibels(20.0)).unwrap(), "20.0");
        let back: Decibels = serde_json::from_str("\"inf\"").unwrap();
        assert!(back.0.is_infinite());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = noise(32, 24, 1);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_of_inverted_checkerboard_is_negative() {
        let pixels: Vec<f64> = (0..32 * 32).map(|i| ((i % 32 + i / 32) % 2) as f64).collect();
        let a = Image::new(32, 32, pixels).unwrap();
        let inv = Image::new(32, 32, a.pixels.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &inv).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::filled(10, 40, 0.0f64);
        assert!(ssim(&a, &a).is_err());
    }

    /// Direct per-window evaluation, without the separable filter.
    #[test]
    fn ssim_matches_direct_window_sum() {
        let (a, b) = (noise(14, 13, 3), noise(14, 13, 4));
        let w = gaussian_window();
        let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=13 - 11 {
            for x in 0..=14 - 11 {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let g = w[i] * w[j];
                        let (p, q) = (a.get(x + i, y + j), b.get(x + i, y + j));
                        ma += g * p;
                        mb += g * q;
                        aa += g * p * p;
                        bb += g * q * q;
                        ab += g * p * q;
                    }
                }
                let (va, vb, cv) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                total += (2.0 * ma * mb + c1) * (2.0 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        assert!((ssim(&a, &b).unwrap() - total / count as f64).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ssim_is_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
            let (a, b) = (noise(16, 16, s1), noise(16, 16, s2));
            let ab = ssim(&a, &b).unwrap();
            prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab <= 1.0);
        }

        #[test]
        fn psnr_falls_as_error_grows(m1 in 1e-6f64..1.0, m2 in 1e-6f64..1.0) {
            prop_assume!(m1 < m2);
            prop_assert!(psnr_from_mse(m1, 1.0) > psnr_from_mse(m2, 1.0));
        }

        #[test]
        fn voxel_mse_is_symmetric(a in 0.0f32..1.0, b in 0.0f32..1.0) {
            prop_assert_eq!(voxel_mse(&grid(a), &grid(b)).unwrap(), voxel_mse(&grid(b), &grid(a)).unwrap());
        }
    }

    #[test]
    fn empty_grid_and_high_iso_reproject_to_nothing() {
        let cams = make_camera_ring(4, 4.0, 1.25, (32, 32), 45.0).unwrap();
        let spec = GridSpec::covering(&capture_volume(), 16);
        let empty = VoxelGrid::zeros(spec);
        assert!(reproject_silhouette(&empty, &cams.cameras[0], 0.5).pixels.iter().all(|&v| v == 0.0));
        let half = VoxelGrid::from_fn(spec, |_| 0.4);
        assert!(reproject_silhouette(&half, &cams.cameras[0], 0.5).pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sphere_reprojects_onto_its_silhouette() {
        let rig = make_camera_ring(8, 4.0, 1.25, (64, 64), 90.0).unwrap();
        let scene = Scene { primitives: vec![ScenePrimitive::sphere(Point3::new(0.0, 0.0, 1.2), 0.6)], frame_index: 0 };
        let mattes: Vec<_> = rig.cameras.iter().map(|c| render_soft_matte(&scene, c, 2).unwrap()).collect();
        let spec = GridSpec::covering(&capture_volume(), 64);
        let pvh = compute_pvh(&rig, &mattes, &spec, FusionMode::default()).unwrap();
        for (cam, matte) in rig.cameras.iter().zip(&mattes).take(3) {
            let sil = reproject_silhouette(&pvh, cam, 0.5);
            let reference = Image::<f32>::from_matte(matte).binarised(0.5);
            let iou = silhouette_iou(&sil, &reference, 0.5).unwrap();
            assert!(iou >= 0.95, "IoU {iou}");
        }
    }

    #[test]
    fn foreground_crop_covers_both_silhouettes() {
        let mut a = Image::filled(40, 30, 0.0f64);
        a.pixels[5 * 40 + 20] = 1.0;
        let b = Image::filled(40, 30, 0.0f64);
        let r = foreground_rect(&a, &b, 2).unwrap().unwrap();
        assert!(r.width >= SSIM_WINDOW && r.height >= SSIM_WINDOW);
        assert!(r.x <= 20 && r.x + r.width > 20 && r.y <= 5);
        assert!(foreground_rect(&b, &b, 2).unwrap().is_none());
        let s = score_silhouettes(&a, &a).unwrap();
        assert_eq!(s.iou, 1.0);
        assert!(s.psnr_crop.0.is_infinite());
    }

    #[test]
    fn report_table_lists_rows_and_reference() {
        let seq = SequenceScore::new("family00", vec![FrameScore { frame: 0, mse: 0.02, image: None }]);
        let report = EvalReport::new(vec![EvalRow::new("Input", 2, vec![seq])], serde_json::json!({}));
        let t = report.to_table();
        assert!(t.contains("Input") && t.contains("20.00") && t.contains("24.60"));
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
