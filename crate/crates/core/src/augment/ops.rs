//! The fourteen primitive image operations shared by RandAugment and AugMix.
//!
//! Intensity levels run from 1 to 30. Geometric and tone-curve ops scale
//! linearly with `(level - 1) / 29`, so level 1 is their zero-magnitude
//! point. Enhancement ops use a blend factor of `1 ± 0.9 * level / 30`.

use std::fmt;
use std::str::FromStr;

use super::image::Image;
use crate::error::{Error, Result};

pub const MAX_LEVEL: u32 = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugOp {
    Identity,
    AutoContrast,
    Equalize,
    Rotate,
    Solarize,
    Color,
    Posterize,
    Contrast,
    Brightness,
    Sharpness,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
}

impl AugOp {
    pub const ALL: [AugOp; 14] = [
        AugOp::Identity,
        AugOp::AutoContrast,
        AugOp::Equalize,
        AugOp::Rotate,
        AugOp::Solarize,
        AugOp::Color,
        AugOp::Posterize,
        AugOp::Contrast,
        AugOp::Brightness,
        AugOp::Sharpness,
        AugOp::ShearX,
        AugOp::ShearY,
        AugOp::TranslateX,
        AugOp::TranslateY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugOp::Identity => "Identity",
            AugOp::AutoContrast => "AutoContrast",
            AugOp::Equalize => "Equalize",
            AugOp::Rotate => "Rotate",
            AugOp::Solarize => "Solarize",
            AugOp::Color => "Color",
            AugOp::Posterize => "Posterize",
            AugOp::Contrast => "Contrast",
            AugOp::Brightness => "Brightness",
            AugOp::Sharpness => "Sharpness",
            AugOp::ShearX => "ShearX",
            AugOp::ShearY => "ShearY",
            AugOp::TranslateX => "TranslateX",
            AugOp::TranslateY => "TranslateY",
        }
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AugOp::ALL
            .iter()
            .copied()
            .find(|op| op.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown augmentation op `{s}`")))
    }
}

/// Fraction of the full range used by geometric and tone-curve ops.
fn ramp(level: u32) -> f64 {
    (level - 1) as f64 / (MAX_LEVEL - 1) as f64
}

fn enhance_factor(level: u32, negate: bool) -> f64 {
    let d = 0.9 * level as f64 / MAX_LEVEL as f64;
    if negate {
        1.0 - d
    } else {
        1.0 + d
    }
}

fn signed(v: f64, negate: bool) -> f64 {
    if negate {
        -v
    } else {
        v
    }
}

/// Applies `op` at `level` (1..=30). `negate` flips the direction of signed
/// ops (rotation, shear, translation, enhancement factors) and is ignored by
/// the rest.
pub fn apply_op(x: &Image, op: AugOp, level: u32, negate: bool) -> Result<Image> {
    if !(1..=MAX_LEVEL).contains(&level) {
        return Err(Error::Config(format!(
            "intensity level {level} outside [1, {MAX_LEVEL}]"
        )));
    }
    let out = match op {
        AugOp::Identity => x.clone(),
        AugOp::AutoContrast => autocontrast(x),
        AugOp::Equalize => equalize(x),
        AugOp::Rotate => rotate(x, signed(30.0 * ramp(level), negate)),
        AugOp::Solarize => solarize(x, 1.0 - ramp(level)),
        AugOp::Color => blend_with(x, &gray_image(x), enhance_factor(level, negate)),
        AugOp::Posterize => posterize(x, 8 - (4.0 * ramp(level)).round() as u32),
        AugOp::Contrast => {
            let mean = x.grayscale().iter().sum::<f64>() / (x.height() * x.width()) as f64;
            blend_with(x, &Image::filled(x.channels(), x.height(), x.width(), mean), enhance_factor(level, negate))
        }
        AugOp::Brightness => {
            let black = Image::filled(x.channels(), x.height(), x.width(), 0.0);
            blend_with(x, &black, enhance_factor(level, negate))
        }
        AugOp::Sharpness => blend_with(x, &smooth(x), enhance_factor(level, negate)),
        AugOp::ShearX => affine(x, [1.0, signed(0.3 * ramp(level), negate), 0.0, 0.0, 1.0, 0.0]),
        AugOp::ShearY => affine(x, [1.0, 0.0, 0.0, signed(0.3 * ramp(level), negate), 1.0, 0.0]),
        AugOp::TranslateX => {
            let t = signed(ramp(level) * x.width() as f64 / 3.0, negate);
            affine(x, [1.0, 0.0, -t, 0.0, 1.0, 0.0])
        }
        AugOp::TranslateY => {
            let t = signed(ramp(level) * x.height() as f64 / 3.0, negate);
            affine(x, [1.0, 0.0, 0.0, 0.0, 1.0, -t])
        }
    };
    Ok(out)
}

fn autocontrast(x: &Image) -> Image {
    let mut out = x.clone();
    for c in 0..x.channels() {
        let plane = out.plane_mut(c);
        let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            for v in plane.iter_mut() {
                *v = (*v - lo) / (hi - lo);
            }
        }
    }
    out.clamp();
    out
}

/// Histogram equalization per channel on a 256-bin grid.
fn equalize(x: &Image) -> Image {
    let mut out = x.clone();
    for c in 0..x.channels() {
        let plane = out.plane_mut(c);
        let bins: Vec<usize> = plane.iter().map(|v| (v * 255.0).round() as usize).collect();
        let mut hist = [0usize; 256];
        for &b in &bins {
            hist[b] += 1;
        }
        let total = bins.len();
        let mut cdf = [0usize; 256];
        let mut acc = 0;
        for i in 0..256 {
            acc += hist[i];
            cdf[i] = acc;
        }
        let cdf_min = cdf.iter().copied().find(|&v| v > 0).unwrap_or(0);
        if total == cdf_min {
            continue;
        }
        for (v, &b) in plane.iter_mut().zip(&bins) {
            *v = (cdf[b] - cdf_min) as f64 / (total - cdf_min) as f64;
        }
    }
    out
}

fn solarize(x: &Image, threshold: f64) -> Image {
    x.with_data(
        x.data()
            .iter()
            .map(|&v| if v > threshold { 1.0 - v } else { v })
            .collect(),
    )
}

fn posterize(x: &Image, bits: u32) -> Image {
    let mask: u32 = !((1u32 << (8 - bits)) - 1) & 0xFF;
    x.with_data(
        x.data()
            .iter()
            .map(|&v| (((v * 255.0).round() as u32) & mask) as f64 / 255.0)
            .collect(),
    )
}

fn gray_image(x: &Image) -> Image {
    let g = x.grayscale();
    let mut data = Vec::with_capacity(x.data().len());
    for _ in 0..x.channels() {
        data.extend_from_slice(&g);
    }
    x.with_data(data)
}

/// `base + factor * (x - base)`, clamped.
fn blend_with(x: &Image, base: &Image, factor: f64) -> Image {
    x.with_data(
        x.data()
            .iter()
            .zip(base.data())
            .map(|(&v, &b)| b + factor * (v - b))
            .collect(),
    )
}

/// 3x3 smoothing with centre weight 5, edges left untouched.
fn smooth(x: &Image) -> Image {
    let mut out = x.clone();
    let (h, w) = (x.height(), x.width());
    if h < 3 || w < 3 {
        return out;
    }
    for c in 0..x.channels() {
        for y in 1..h - 1 {
            for xx in 1..w - 1 {
                let mut s = 4.0 * x.get(c, y, xx);
                for dy in 0..3 {
                    for dx in 0..3 {
                        s += x.get(c, y + dy - 1, xx + dx - 1);
                    }
                }
                out.set(c, y, xx, s / 13.0);
            }
        }
    }
    out
}

/// Inverse-mapped affine warp about the image centre. `m = [a, b, c, d, e, f]`
/// maps an output pixel `(x, y)` (centred) to the source position
/// `(a x + b y + c, d x + e y + f)`.
pub(crate) fn affine(x: &Image, m: [f64; 6]) -> Image {
    let (h, w) = (x.height(), x.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut data = Vec::with_capacity(x.data().len());
    for c in 0..x.channels() {
        for y in 0..h {
            for xx in 0..w {
                let (u, v) = (xx as f64 - cx, y as f64 - cy);
                let sx = m[0] * u + m[1] * v + m[2] + cx;
                let sy = m[3] * u + m[4] * v + m[5] + cy;
                data.push(x.bilinear(c, sy, sx));
            }
        }
    }
    x.with_data(data)
}

fn rotate(x: &Image, degrees: f64) -> Image {
    let t = degrees.to_radians();
    let (s, c) = t.sin_cos();
    // inverse rotation
    affine(x, [c, s, 0.0, -s, c, 0.0])
}
