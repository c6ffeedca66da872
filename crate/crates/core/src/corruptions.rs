//! Synthetic distribution shift: noise, blur and digital corruptions at five
//! severities.
//!
//! Severity parameters live in [`LADDER`]; bump [`LADDER_VERSION`] whenever a
//! value changes so manifests written by older builds stay interpretable.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal, Poisson};

use crate::augment::Image;
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::harness::Dataset;
use crate::rng::SeededRng;

pub const LADDER_VERSION: &str = "ladder-v1";

/// How the JPEG corruption is realized; recorded in every manifest.
pub const JPEG_METHOD: &str = "baseline JPEG encode/decode round trip at the ladder quality";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    GlassBlur,
    MotionBlur,
    ZoomBlur,
    Brightness,
    Contrast,
    Elastic,
    Pixelate,
    Jpeg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Noise,
    Blur,
    Digital,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 12] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ShotNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::DefocusBlur,
        CorruptionKind::GlassBlur,
        CorruptionKind::MotionBlur,
        CorruptionKind::ZoomBlur,
        CorruptionKind::Brightness,
        CorruptionKind::Contrast,
        CorruptionKind::Elastic,
        CorruptionKind::Pixelate,
        CorruptionKind::Jpeg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::GlassBlur => "glass_blur",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::ZoomBlur => "zoom_blur",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Elastic => "elastic",
            CorruptionKind::Pixelate => "pixelate",
            CorruptionKind::Jpeg => "jpeg",
        }
    }

    pub fn family(self) -> Family {
        use CorruptionKind::*;
        match self {
            GaussianNoise | ShotNoise | ImpulseNoise => Family::Noise,
            DefocusBlur | GlassBlur | MotionBlur | ZoomBlur => Family::Blur,
            Brightness | Contrast | Elastic | Pixelate | Jpeg => Family::Digital,
        }
    }

    fn index(self) -> u64 {
        CorruptionKind::ALL.iter().position(|&k| k == self).unwrap() as u64
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CorruptionKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unregistered corruption kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::Config(format!(
                "corruption severity {severity} outside [1, 5]"
            )));
        }
        Ok(CorruptionSpec { kind, severity })
    }

    fn stream_key(&self) -> u64 {
        self.kind.index() * 16 + self.severity as u64
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.kind, self.severity)
    }
}

/// Parses `kind@severity` (or a bare kind, meaning severity 5).
impl FromStr for CorruptionSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, sev) = match s.trim().split_once('@') {
            Some((k, v)) => (
                k,
                v.parse::<u8>()
                    .map_err(|_| Error::Config(format!("bad severity in `{s}`")))?,
            ),
            None => (s.trim(), 5),
        };
        CorruptionSpec::new(kind.parse()?, sev)
    }
}

/// Frozen severity ladders, indexed by `severity - 1`.
pub struct Ladder {
    pub gaussian_sigma: [f64; 5],
    pub shot_photons: [f64; 5],
    pub impulse_amount: [f64; 5],
    pub defocus_radius: [f64; 5],
    /// `(blur sigma, max pixel displacement, iterations)`.
    pub glass: [(f64, usize, usize); 5],
    pub motion_length: [f64; 5],
    pub zoom_max: [f64; 5],
    pub brightness_shift: [f64; 5],
    pub contrast_factor: [f64; 5],
    /// Standard deviation of the displacement field, in pixels.
    pub elastic_alpha: [f64; 5],
    pub elastic_sigma: f64,
    pub pixelate_block: [usize; 5],
    pub jpeg_quality: [u8; 5],
}

pub const LADDER: Ladder = Ladder {
    gaussian_sigma: [0.04, 0.06, 0.08, 0.09, 0.10],
    shot_photons: [60.0, 25.0, 12.0, 5.0, 3.0],
    impulse_amount: [0.01, 0.02, 0.03, 0.05, 0.07],
    defocus_radius: [1.0, 1.5, 2.0, 2.5, 3.0],
    glass: [(0.4, 1, 1), (0.5, 1, 2), (0.6, 2, 2), (0.7, 2, 3), (0.9, 2, 4)],
    motion_length: [3.0, 5.0, 7.0, 9.0, 11.0],
    zoom_max: [1.06, 1.11, 1.16, 1.21, 1.26],
    brightness_shift: [0.05, 0.1, 0.15, 0.2, 0.3],
    contrast_factor: [0.75, 0.5, 0.4, 0.3, 0.15],
    elastic_alpha: [0.5, 0.75, 1.0, 1.25, 1.5],
    elastic_sigma: 3.0,
    pixelate_block: [2, 3, 4, 5, 6],
    jpeg_quality: [80, 65, 58, 50, 40],
};

/// Applies one corruption. Deterministic in `(x, spec, rng state)`; output
/// clamped to `[0, 1]`.
pub fn corrupt(x: &Image, spec: CorruptionSpec, rng: &mut impl RngCore) -> Result<Image> {
    let s = spec.severity as usize - 1;
    let l = &LADDER;
    let out = match spec.kind {
        CorruptionKind::GaussianNoise => {
            let n = Normal::new(0.0, l.gaussian_sigma[s]).unwrap();
            x.with_data(x.data().iter().map(|v| v + n.sample(rng)).collect())
        }
        CorruptionKind::ShotNoise => {
            let c = l.shot_photons[s];
            x.with_data(
                x.data()
                    .iter()
                    .map(|&v| {
                        let lambda = v * c;
                        if lambda <= 0.0 {
                            0.0
                        } else {
                            Poisson::new(lambda).unwrap().sample(rng) / c
                        }
                    })
                    .collect(),
            )
        }
        CorruptionKind::ImpulseNoise => {
            let amount = l.impulse_amount[s];
            x.with_data(
                x.data()
                    .iter()
                    .map(|&v| {
                        if rng.random_bool(amount) {
                            if rng.random_bool(0.5) {
                                1.0
                            } else {
                                0.0
                            }
                        } else {
                            v
                        }
                    })
                    .collect(),
            )
        }
        CorruptionKind::DefocusBlur => filter_planes(x, &disk_kernel(l.defocus_radius[s])),
        CorruptionKind::GlassBlur => {
            let (sigma, delta, iterations) = l.glass[s];
            glass_blur(x, sigma, delta, iterations, rng)
        }
        CorruptionKind::MotionBlur => {
            let angle = rng.random_range(-45.0_f64..45.0).to_radians();
            motion_blur(x, l.motion_length[s], angle)
        }
        CorruptionKind::ZoomBlur => zoom_blur(x, l.zoom_max[s]),
        CorruptionKind::Brightness => brightness(x, l.brightness_shift[s]),
        CorruptionKind::Contrast => contrast(x, l.contrast_factor[s]),
        CorruptionKind::Elastic => elastic(x, l.elastic_alpha[s], l.elastic_sigma, rng),
        CorruptionKind::Pixelate => pixelate(x, l.pixelate_block[s]),
        CorruptionKind::Jpeg => jpeg_round_trip(x, l.jpeg_quality[s])?,
    };
    Ok(out)
}

/// Per-channel contrast scaling about the channel mean. A factor of 1 is
/// the identity.
pub fn contrast(x: &Image, factor: f64) -> Image {
    let mut out = x.clone();
    for c in 0..x.channels() {
        let p = out.plane_mut(c);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        for v in p.iter_mut() {
            *v = (*v - mean) * factor + mean;
        }
    }
    out.clamp();
    out
}

/// Raises the HSV value channel by `shift`, keeping hue and saturation.
fn brightness(x: &Image, shift: f64) -> Image {
    if x.channels() != 3 {
        return x.with_data(x.data().iter().map(|v| v + shift).collect());
    }
    let mut out = x.clone();
    let n = x.height() * x.width();
    for i in 0..n {
        let rgb = [x.data()[i], x.data()[n + i], x.data()[2 * n + i]];
        let v = rgb.iter().cloned().fold(0.0, f64::max);
        let v2 = (v + shift).min(1.0);
        for (c, &val) in rgb.iter().enumerate() {
            out.data_mut()[c * n + i] = if v > 0.0 { val * v2 / v } else { v2 };
        }
    }
    out.clamp();
    out
}

/// Replaces each `block x block` tile by its mean. Edge tiles may be smaller.
pub fn pixelate(x: &Image, block: usize) -> Image {
    let mut out = x.clone();
    let (h, w) = (x.height(), x.width());
    for c in 0..x.channels() {
        for by in (0..h).step_by(block) {
            for bx in (0..w).step_by(block) {
                let (y1, x1) = ((by + block).min(h), (bx + block).min(w));
                let mut s = 0.0;
                for y in by..y1 {
                    for xx in bx..x1 {
                        s += x.get(c, y, xx);
                    }
                }
                let mean = s / ((y1 - by) * (x1 - bx)) as f64;
                for y in by..y1 {
                    for xx in bx..x1 {
                        out.set(c, y, xx, mean);
                    }
                }
            }
        }
    }
    out
}

struct Kernel {
    radius: usize,
    weights: Vec<f64>,
}

fn disk_kernel(radius: f64) -> Kernel {
    let r = radius.ceil() as usize;
    let size = 2 * r + 1;
    let mut weights = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (dy, dx) = (y as f64 - r as f64, x as f64 - r as f64);
            if dy * dy + dx * dx <= radius * radius {
                weights[y * size + x] = 1.0;
            }
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Kernel { radius: r, weights }
}

fn gaussian_1d(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// 2-D filtering of every channel with edge replication.
fn filter_planes(x: &Image, k: &Kernel) -> Image {
    let (h, w) = (x.height(), x.width());
    let size = 2 * k.radius + 1;
    let r = k.radius as isize;
    let mut out = x.clone();
    for c in 0..x.channels() {
        for y in 0..h {
            for xx in 0..w {
                let mut s = 0.0;
                for ky in 0..size {
                    for kx in 0..size {
                        let wt = k.weights[ky * size + kx];
                        if wt != 0.0 {
                            let sy = clamp_idx(y as isize + ky as isize - r, h);
                            let sx = clamp_idx(xx as isize + kx as isize - r, w);
                            s += wt * x.get(c, sy, sx);
                        }
                    }
                }
                out.set(c, y, xx, s);
            }
        }
    }
    out.clamp();
    out
}

/// Separable Gaussian blur on a raw plane.
fn blur_plane(p: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_1d(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; p.len()];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, wt)| wt * p[y * w + clamp_idx(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; p.len()];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, wt)| wt * tmp[clamp_idx(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

fn gaussian_blur(x: &Image, sigma: f64) -> Image {
    let mut data = Vec::with_capacity(x.data().len());
    for c in 0..x.channels() {
        data.extend(blur_plane(x.plane(c), x.height(), x.width(), sigma));
    }
    x.with_data(data)
}

/// Blur, then locally shuffle pixels by swapping each with a random
/// neighbour up to `delta` away, then blur again.
fn glass_blur(x: &Image, sigma: f64, delta: usize, iterations: usize, rng: &mut impl RngCore) -> Image {
    let mut img = gaussian_blur(x, sigma);
    let (h, w) = (x.height(), x.width());
    let d = delta as i64;
    for _ in 0..iterations {
        for y in (d as usize..h.saturating_sub(d as usize)).rev() {
            for xx in (d as usize..w.saturating_sub(d as usize)).rev() {
                let dy = rng.random_range(-d..=d) as isize;
                let dx = rng.random_range(-d..=d) as isize;
                let (ny, nx) = ((y as isize + dy) as usize, (xx as isize + dx) as usize);
                for c in 0..x.channels() {
                    let a = img.get(c, y, xx);
                    let b = img.get(c, ny, nx);
                    img.set(c, y, xx, b);
                    img.set(c, ny, nx, a);
                }
            }
        }
    }
    gaussian_blur(&img, sigma)
}

/// Averages bilinear samples along a centred segment of `length` pixels at
/// `angle` radians.
fn motion_blur(x: &Image, length: f64, angle: f64) -> Image {
    let taps = length.round().max(1.0) as usize;
    let (dy, dx) = (angle.sin(), angle.cos());
    let half = (taps as f64 - 1.0) / 2.0;
    let (h, w) = (x.height(), x.width());
    let mut out = x.clone();
    for c in 0..x.channels() {
        for y in 0..h {
            for xx in 0..w {
                let mut s = 0.0;
                for t in 0..taps {
                    let off = t as f64 - half;
                    let sy = (y as f64 + off * dy).clamp(0.0, (h - 1) as f64);
                    let sx = (xx as f64 + off * dx).clamp(0.0, (w - 1) as f64);
                    s += x.bilinear(c, sy, sx);
                }
                out.set(c, y, xx, s / taps as f64);
            }
        }
    }
    out.clamp();
    out
}

/// Mean of the image and centre zooms by factors `1.01, 1.02, ..` up to
/// `max_zoom`.
fn zoom_blur(x: &Image, max_zoom: f64) -> Image {
    let mut acc = x.data().to_vec();
    let mut count = 1usize;
    let mut i = 1;
    loop {
        let z = 1.0 + 0.01 * i as f64;
        if z > max_zoom + 1e-9 {
            break;
        }
        let zoomed = crate::augment::affine(x, [1.0 / z, 0.0, 0.0, 0.0, 1.0 / z, 0.0]);
        for (a, v) in acc.iter_mut().zip(zoomed.data()) {
            *a += v;
        }
        count += 1;
        i += 1;
    }
    x.with_data(acc.into_iter().map(|v| v / count as f64).collect())
}

/// Resamples through a smooth random displacement field whose per-axis
/// standard deviation is `alpha` pixels.
fn elastic(x: &Image, alpha: f64, sigma: f64, rng: &mut impl RngCore) -> Image {
    let (h, w) = (x.height(), x.width());
    let field = |rng: &mut dyn RngCore| -> Vec<f64> {
        let raw: Vec<f64> = (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let smooth = blur_plane(&raw, h, w, sigma);
        let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
        let sd = (smooth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / smooth.len() as f64).sqrt();
        smooth
            .iter()
            .map(|v| if sd > 0.0 { (v - mean) / sd * alpha } else { 0.0 })
            .collect()
    };
    let fy = field(rng);
    let fx = field(rng);
    let mut out = x.clone();
    for c in 0..x.channels() {
        for y in 0..h {
            for xx in 0..w {
                let i = y * w + xx;
                let sy = (y as f64 + fy[i]).clamp(0.0, (h - 1) as f64);
                let sx = (xx as f64 + fx[i]).clamp(0.0, (w - 1) as f64);
                out.set(c, y, xx, x.bilinear(c, sy, sx));
            }
        }
    }
    out.clamp();
    out
}

fn jpeg_round_trip(x: &Image, quality: u8) -> Result<Image> {
    use image::codecs::jpeg::JpegEncoder;
    use image::{ExtendedColorType, ImageFormat};
    let (h, w) = (x.height(), x.width());
    let n = h * w;
    let color = match x.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(Error::Codec(format!("jpeg needs 1 or 3 channels, got {c}"))),
    };
    let mut raw = Vec::with_capacity(x.data().len());
    for i in 0..n {
        for c in 0..x.channels() {
            raw.push((x.data()[c * n + i] * 255.0).round() as u8);
        }
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(&raw, w as u32, h as u32, color)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let decoded = image::load(Cursor::new(&buf), ImageFormat::Jpeg).map_err(|e| Error::Codec(e.to_string()))?;
    let mut data = vec![0.0; x.data().len()];
    if x.channels() == 1 {
        let g = decoded.to_luma8();
        for (i, p) in g.pixels().enumerate() {
            data[i] = p.0[0] as f64 / 255.0;
        }
    } else {
        let rgb = decoded.to_rgb8();
        for (i, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = p.0[c] as f64 / 255.0;
            }
        }
    }
    Ok(x.with_data(data))
}

/// Provenance of a corrupted set.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub kind: String,
    pub severity: u8,
    pub seed: u64,
    pub ladder_version: String,
    pub images: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub ladder_version: String,
    pub jpeg_method: String,
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

/// One corrupted copy of a dataset per spec, in spec order.
#[derive(Clone, Debug)]
pub struct CorruptedSets {
    pub seed: u64,
    pub sets: Vec<(CorruptionSpec, Dataset)>,
}

/// Corrupts every image of `dataset` under each spec. Image `i` of spec `s`
/// draws from a stream keyed by `(seed, s, i)`, so results do not depend on
/// spec order or on which other specs are requested.
pub fn build_corrupted_set(dataset: &Dataset, specs: &[CorruptionSpec], seed: u64) -> Result<CorruptedSets> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot corrupt an empty dataset".into()));
    }
    let root = SeededRng::new(seed);
    let mut sets = Vec::with_capacity(specs.len());
    for spec in specs {
        let stream = root.substream(spec.stream_key());
        let mut images = Vec::with_capacity(dataset.len());
        for i in 0..dataset.len() {
            let mut rng = stream.substream(i as u64);
            images.push(corrupt(&dataset.image(i), *spec, &mut rng)?.to_tensor());
        }
        let images = Tensor::stack(&images)?;
        sets.push((*spec, dataset.with_images(images)?));
    }
    Ok(CorruptedSets { seed, sets })
}

impl CorruptedSets {
    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn manifest(&self, class_names: &[String]) -> Manifest {
        Manifest {
            ladder_version: LADDER_VERSION.into(),
            jpeg_method: JPEG_METHOD.into(),
            class_names: class_names.to_vec(),
            entries: self
                .sets
                .iter()
                .map(|(spec, d)| ManifestEntry {
                    kind: spec.kind.name().into(),
                    severity: spec.severity,
                    seed: self.seed,
                    ladder_version: LADDER_VERSION.into(),
                    images: d.len(),
                    file: format!("{}_s{}.bin", spec.kind, spec.severity),
                })
                .collect(),
        }
    }

    /// Writes each set in CIFAR binary layout plus `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Manifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let names = self
            .sets
            .first()
            .map(|(_, d)| d.class_names.clone())
            .unwrap_or_default();
        let manifest = self.manifest(&names);
        for ((_, d), entry) in self.sets.iter().zip(&manifest.entries) {
            crate::harness::write_cifar_binary(d, dir.join(&entry.file))?;
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: u64) -> Image {
        let mut rng = SeededRng::new(seed);
        let data = (0..3 * 32 * 32)
            .map(|i| {
                let (y, x) = ((i / 32) % 32, i % 32);
                0.5 + 0.3 * ((x as f64 * 0.7).sin() * (y as f64 * 0.4).cos()) + 0.05 * rng.random::<f64>()
            })
            .collect();
        Image::new(3, 32, 32, data).unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in CorruptionKind::ALL {
            assert_eq!(k.name().parse::<CorruptionKind>().unwrap(), k);
        }
        assert!(matches!("snow".parse::<CorruptionKind>(), Err(Error::Config(_))));
        assert_eq!(
            "jpeg@3".parse::<CorruptionSpec>().unwrap(),
            CorruptionSpec::new(CorruptionKind::Jpeg, 3).unwrap()
        );
        assert!(CorruptionSpec::new(CorruptionKind::Jpeg, 0).is_err());
        assert!(CorruptionSpec::new(CorruptionKind::Jpeg, 6).is_err());
    }

    #[test]
    fn every_kind_is_deterministic_and_in_range() {
        let x = textured(1);
        for k in CorruptionKind::ALL {
            for s in 1..=5 {
                let spec = CorruptionSpec::new(k, s).unwrap();
                let a = corrupt(&x, spec, &mut SeededRng::new(3)).unwrap();
                let b = corrupt(&x, spec, &mut SeededRng::new(3)).unwrap();
                assert_eq!(a, b, "{spec}");
                assert_eq!(a.shape(), x.shape());
                assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn unit_contrast_is_identity() {
        let x = textured(2);
        let y = contrast(&x, 1.0);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pixelate_is_blockwise_constant() {
        let x = textured(3);
        for s in 1..=5u8 {
            let f = LADDER.pixelate_block[s as usize - 1];
            let y = corrupt(&x, CorruptionSpec::new(CorruptionKind::Pixelate, s).unwrap(), &mut SeededRng::new(0)).unwrap();
            for c in 0..3 {
                for yy in 0..32 {
                    for xx in 0..32 {
                        let (by, bx) = (yy / f * f, xx / f * f);
                        assert_eq!(y.get(c, yy, xx), y.get(c, by, bx));
                    }
                }
            }
        }
    }

    #[test]
    fn gaussian_noise_std_matches_ladder() {
        // Mid-grey images keep clamping out of play.
        let x = Image::filled(3, 32, 32, 0.5);
        for s in 1..=5u8 {
            let sigma = LADDER.gaussian_sigma[s as usize - 1];
            let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, s).unwrap();
            let mut sum = 0.0;
            let mut sq = 0.0;
            let mut n = 0.0;
            for i in 0..100 {
                let y = corrupt(&x, spec, &mut SeededRng::new(i)).unwrap();
                for v in y.data() {
                    let d = v - 0.5;
                    sum += d;
                    sq += d * d;
                    n += 1.0;
                }
            }
            let sd = (sq / n - (sum / n).powi(2)).sqrt();
            assert!((sd - sigma).abs() / sigma < 0.05, "severity {s}: {sd} vs {sigma}");
        }
    }

    #[test]
    fn noise_and_blur_distortion_is_monotone() {
        let images: Vec<Image> = (0..8).map(textured).collect();
        for k in CorruptionKind::ALL.iter().filter(|k| k.family() != Family::Digital) {
            let mut last = 0.0;
            for s in 1..=5u8 {
                let spec = CorruptionSpec::new(*k, s).unwrap();
                let mut total = 0.0;
                for (i, x) in images.iter().enumerate() {
                    let mut rng = SeededRng::new(100 + i as u64);
                    total += corrupt(x, spec, &mut rng).unwrap().l2_distance(x);
                }
                let mean = total / images.len() as f64;
                assert!(mean >= last, "{spec}: {mean} < {last}");
                last = mean;
            }
        }
    }
}
