//! Image representation, RGB/HSV conversion, exposure assessment and global
//! V-channel histogram equalization.
//!
//! Equalization works on V only so hue and saturation pass through untouched,
//! which keeps colours from shifting the way per-channel RGB equalization does.
//! V is quantized to 256 levels (`round(v * 255)`) and remapped through the
//! normalized cumulative histogram:
//!
//! ```text
//! level' = round((cdf(level) - cdf_min) / (N - cdf_min) * 255)
//! ```
//!
//! where `cdf_min` is the smallest non-zero cumulative count. An image with a
//! single V level (`N == cdf_min`) maps every pixel to level 0.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEVELS: usize = 256;

/// Default lower mean-V bound below which a frame counts as underexposed.
pub const DEFAULT_LOW_EXPOSURE: f64 = 0.25;
/// Default upper mean-V bound above which a frame counts as overexposed.
pub const DEFAULT_HIGH_EXPOSURE: f64 = 0.75;

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        check_dims(width, height, width as usize * height as usize)?;
        Ok(Self { width, height, pixels: vec![rgb; width as usize * height as usize] })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<[u8; 3]> {
        self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let w = self.width;
        self.pixels[(y * w + x) as usize] = rgb;
    }

    /// Copies the `w`×`h` block at (`x`, `y`). The block must lie inside the image.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<RasterImage> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::Argument(format!(
                "crop ({x},{y},{w},{h}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w as usize * h as usize);
        for row in y..y + h {
            let start = (row * self.width + x) as usize;
            pixels.extend_from_slice(&self.pixels[start..start + w as usize]);
        }
        Ok(RasterImage { width: w, height: h, pixels })
    }
}

fn check_dims(width: u32, height: u32, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!("image dimensions must be positive, got {width}x{height}")));
    }
    if len != width as usize * height as usize {
        return Err(Error::Argument(format!(
            "pixel count {len} does not match {width}x{height}"
        )));
    }
    Ok(())
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

impl Hsv {
    /// V quantized to one of 256 levels.
    pub fn level(&self) -> u8 {
        quantize(self.v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HsvImage {
    width: u32,
    height: u32,
    pixels: Vec<Hsv>,
}

impl HsvImage {
    pub fn new(width: u32, height: u32, pixels: Vec<Hsv>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        for p in &pixels {
            let ok = (0.0..360.0).contains(&p.h)
                && (0.0..=1.0).contains(&p.s)
                && (0.0..=1.0).contains(&p.v);
            if !ok {
                return Err(Error::Argument(format!("HSV pixel out of range: {p:?}")));
            }
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[Hsv] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

fn quantize(x: f64) -> u8 {
    (x * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Hexcone conversion of a single RGB triple.
pub fn rgb_to_hsv_pixel([r, g, b]: [u8; 3]) -> Hsv {
    let (r, g, b) = (r as i32, g as i32, b as i32);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max as f64 / 255.0;
    if delta == 0 {
        return Hsv { h: 0.0, s: 0.0, v };
    }
    let s = delta as f64 / max as f64;
    let d = delta as f64;
    let mut h = if max == r {
        60.0 * ((g - b) as f64 / d)
    } else if max == g {
        60.0 * ((b - r) as f64 / d + 2.0)
    } else {
        60.0 * ((r - g) as f64 / d + 4.0)
    };
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    Hsv { h, s, v }
}

/// Inverse hexcone conversion, channels quantized with `round(x * 255)`.
pub fn hsv_to_rgb_pixel(p: Hsv) -> [u8; 3] {
    let c = p.v * p.s;
    let hp = p.h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = p.v - c;
    [quantize(r1 + m), quantize(g1 + m), quantize(b1 + m)]
}

pub fn rgb_to_hsv(img: &RasterImage) -> HsvImage {
    HsvImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().copied().map(rgb_to_hsv_pixel).collect(),
    }
}

pub fn hsv_to_rgb(img: &HsvImage) -> RasterImage {
    RasterImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().copied().map(hsv_to_rgb_pixel).collect(),
    }
}

/// Counts of quantized V levels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LuminanceHistogram {
    pub bins: [u64; LEVELS],
}

impl LuminanceHistogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Running sums of `bins`.
    pub fn cumulative(&self) -> [u64; LEVELS] {
        let mut cdf = [0u64; LEVELS];
        let mut acc = 0;
        for (c, b) in cdf.iter_mut().zip(self.bins.iter()) {
            acc += b;
            *c = acc;
        }
        cdf
    }

    /// Level remapping produced by classic cdf-min equalization.
    pub fn equalization_map(&self) -> [u8; LEVELS] {
        let cdf = self.cumulative();
        let n = self.total();
        let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
        let mut map = [0u8; LEVELS];
        if n == cdf_min {
            return map;
        }
        let denom = (n - cdf_min) as f64;
        for (m, &c) in map.iter_mut().zip(cdf.iter()) {
            // Levels below the first occupied one have cdf 0; they never occur.
            let num = c.saturating_sub(cdf_min) as f64;
            *m = (num / denom * 255.0).round() as u8;
        }
        map
    }
}

pub fn v_histogram(img: &HsvImage) -> LuminanceHistogram {
    let mut bins = [0u64; LEVELS];
    for p in &img.pixels {
        bins[p.level() as usize] += 1;
    }
    LuminanceHistogram { bins }
}

/// Global histogram equalization of V; `h` and `s` are copied unchanged.
pub fn equalize_v(img: &HsvImage) -> HsvImage {
    let map = v_histogram(img).equalization_map();
    let pixels = img
        .pixels
        .iter()
        .map(|p| Hsv { h: p.h, s: p.s, v: map[p.level() as usize] as f64 / 255.0 })
        .collect();
    HsvImage { width: img.width, height: img.height, pixels }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureVerdict {
    Underexposed,
    Normal,
    Overexposed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureAssessment {
    pub mean_v: f64,
    pub verdict: ExposureVerdict,
}

pub fn mean_v(img: &HsvImage) -> f64 {
    img.pixels.iter().map(|p| p.v).sum::<f64>() / img.pixels.len() as f64
}

pub fn assess_exposure(img: &HsvImage, low: f64, high: f64) -> Result<ExposureAssessment> {
    if !(0.0 <= low && low < high && high <= 1.0) {
        return Err(Error::Config(format!(
            "exposure thresholds must satisfy 0 <= low < high <= 1, got low={low} high={high}"
        )));
    }
    let mean_v = mean_v(img);
    let verdict = if mean_v < low {
        ExposureVerdict::Underexposed
    } else if mean_v > high {
        ExposureVerdict::Overexposed
    } else {
        ExposureVerdict::Normal
    };
    Ok(ExposureAssessment { mean_v, verdict })
}

/// Equalizes the V channel of an RGB frame. Applied unconditionally: the
/// exposure verdict is informational only.
pub fn preprocess(img: &RasterImage) -> RasterImage {
    hsv_to_rgb(&equalize_v(&rgb_to_hsv(img)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(rgb: [u8; 3]) -> RasterImage {
        RasterImage::new(1, 1, vec![rgb]).unwrap()
    }

    fn hsv_const(w: u32, h: u32, v: f64) -> HsvImage {
        HsvImage::new(w, h, vec![Hsv { h: 0.0, s: 0.0, v }; (w * h) as usize]).unwrap()
    }

    fn hsv_levels(levels: &[u8]) -> HsvImage {
        let pixels = levels
            .iter()
            .map(|&l| Hsv { h: 120.0, s: 0.5, v: l as f64 / 255.0 })
            .collect();
        HsvImage::new(levels.len() as u32, 1, pixels).unwrap()
    }

    #[test]
    fn hsv_identity_cases() {
        let red = rgb_to_hsv(&one([255, 0, 0])).pixels()[0];
        assert_eq!((red.h, red.s, red.v), (0.0, 1.0, 1.0));
        let gray = rgb_to_hsv(&one([128, 128, 128])).pixels()[0];
        assert_eq!((gray.h, gray.s, gray.v), (0.0, 0.0, 128.0 / 255.0));
        let blue = rgb_to_hsv(&one([0, 0, 255])).pixels()[0];
        assert_eq!((blue.h, blue.s, blue.v), (240.0, 1.0, 1.0));
    }

    #[test]
    fn hsv_inverse_cases() {
        assert_eq!(hsv_to_rgb_pixel(Hsv { h: 0.0, s: 1.0, v: 1.0 }), [255, 0, 0]);
        assert_eq!(hsv_to_rgb_pixel(Hsv { h: 0.0, s: 0.0, v: 0.5 }), [128, 128, 128]);
        assert_eq!(hsv_to_rgb_pixel(Hsv { h: 240.0, s: 1.0, v: 1.0 }), [0, 0, 255]);
    }

    #[test]
    fn hue_stays_below_360() {
        // max == r with b slightly above g gives a hue just under 360.
        let p = rgb_to_hsv_pixel([255, 0, 1]);
        assert!(p.h < 360.0 && p.h > 359.0, "{p:?}");
    }

    #[test]
    fn histogram_of_constant_image() {
        let hist = v_histogram(&hsv_const(10, 10, 0.4));
        assert_eq!(hist.bins[102], 100);
        assert_eq!(hist.total(), 100);
    }

    #[test]
    fn histogram_of_two_level_image() {
        let mut levels = vec![51u8; 50];
        levels.extend(std::iter::repeat_n(204u8, 50));
        let hist = v_histogram(&hsv_levels(&levels));
        assert_eq!(hist.bins[51], 50);
        assert_eq!(hist.bins[204], 50);
        assert_eq!(hist.total(), 100);
    }

    #[test]
    fn equalize_constant_image_maps_to_zero() {
        let img = hsv_const(4, 4, 0.6);
        let eq = equalize_v(&img);
        assert!(eq.pixels().iter().all(|p| p.v == 0.0));
    }

    #[test]
    fn equalize_two_levels_stretches_to_extremes() {
        let mut levels = vec![51u8; 50];
        levels.extend(std::iter::repeat_n(204u8, 50));
        let eq = equalize_v(&hsv_levels(&levels));
        assert!(eq.pixels()[..50].iter().all(|p| p.level() == 0));
        assert!(eq.pixels()[50..].iter().all(|p| p.level() == 255));
        assert!(eq.pixels().iter().all(|p| p.h == 120.0 && p.s == 0.5));
    }

    #[test]
    fn equalize_ramp_is_near_identity() {
        let levels: Vec<u8> = (0..=255).collect();
        let eq = equalize_v(&hsv_levels(&levels));
        for (l, p) in levels.iter().zip(eq.pixels()) {
            assert!((*l as i32 - p.level() as i32).abs() <= 1);
        }
    }

    #[test]
    fn exposure_verdicts() {
        let black = hsv_const(2, 2, 0.0);
        let a = assess_exposure(&black, 0.25, 0.75).unwrap();
        assert_eq!((a.mean_v, a.verdict), (0.0, ExposureVerdict::Underexposed));
        let white = hsv_const(2, 2, 1.0);
        let a = assess_exposure(&white, 0.25, 0.75).unwrap();
        assert_eq!((a.mean_v, a.verdict), (1.0, ExposureVerdict::Overexposed));
        let half = hsv_levels(&[0, 0, 255, 255]);
        let a = assess_exposure(&half, 0.25, 0.75).unwrap();
        assert_eq!((a.mean_v, a.verdict), (0.5, ExposureVerdict::Normal));
    }

    #[test]
    fn exposure_rejects_bad_thresholds() {
        let img = hsv_const(1, 1, 0.5);
        for (lo, hi) in [(0.5, 0.5), (0.8, 0.2), (-0.1, 0.5), (0.2, 1.1)] {
            assert!(matches!(assess_exposure(&img, lo, hi), Err(Error::Config(_))));
        }
    }

    #[test]
    fn preprocess_constant_gray_stays_constant() {
        let img = RasterImage::filled(8, 8, [128, 128, 128]).unwrap();
        let out = preprocess(&img);
        let first = out.pixels()[0];
        assert!(out.pixels().iter().all(|&p| p == first));
    }

    #[test]
    fn preprocess_dark_two_level_image() {
        let mut pixels = vec![[51, 51, 51]; 32];
        pixels.extend(vec![[102, 102, 102]; 32]);
        let img = RasterImage::new(8, 8, pixels).unwrap();
        let out = preprocess(&img);
        assert!(out.pixels()[..32].iter().all(|&p| p == [0, 0, 0]));
        assert!(out.pixels()[32..].iter().all(|&p| p == [255, 255, 255]));
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(RasterImage::new(0, 1, vec![]).is_err());
        assert!(RasterImage::new(2, 2, vec![[0, 0, 0]; 3]).is_err());
    }

    #[test]
    fn crop_copies_block() {
        let pixels = (0..12u8).map(|i| [i, i, i]).collect();
        let img = RasterImage::new(4, 3, pixels).unwrap();
        let c = img.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.pixels(), &[[5, 5, 5], [6, 6, 6], [9, 9, 9], [10, 10, 10]]);
        assert!(img.crop(3, 0, 2, 1).is_err());
    }
}
