use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::Image;
use crate::engine::Tensor;
use crate::error::{Error, Result};

/// Labelled images stacked as `[N, C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Human-readable class names, index-aligned with labels.
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let names = (0..classes).map(|i| i.to_string()).collect();
        Dataset::with_names(images, labels, names)
    }

    pub fn with_names(images: Tensor, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::dim(
                "dataset",
                format!("images {:?} with {} labels", images.shape(), labels.len()),
            ));
        }
        let classes = class_names.len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Contract(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> Image {
        Image::from_tensor(&self.images.slice_outer(i)).expect("dataset images are valid")
    }

    /// Same labels, replacement pixels.
    pub fn with_images(&self, images: Tensor) -> Result<Dataset> {
        Dataset::with_names(images, self.labels.clone(), self.class_names.clone())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_outer(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            class_names: self.class_names.clone(),
        }
    }

    /// First `n` items (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Consecutive batches of at most `size` items, in order.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Dataset> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |start| {
            let idx: Vec<usize> = (start..(start + size).min(self.len())).collect();
            self.subset(&idx)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    /// Records of one label byte followed by 3x32x32 channel-planar bytes.
    CifarBinary,
    /// IDX image file (`[N, H, W]` u8) with a sibling labels file.
    Idx,
    /// One sub-directory per class holding PNG or JPEG files.
    ImageDir,
}

impl FromStr for DatasetFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar-binary" => Ok(DatasetFormat::CifarBinary),
            "idx" => Ok(DatasetFormat::Idx),
            "image-dir" => Ok(DatasetFormat::ImageDir),
            _ => Err(Error::Config(format!("unknown dataset format `{s}`"))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::CifarBinary => "cifar-binary",
            DatasetFormat::Idx => "idx",
            DatasetFormat::ImageDir => "image-dir",
        })
    }
}

pub const CIFAR_CLASSES: usize = 10;
const CIFAR_PIXELS: usize = 3 * 32 * 32;

fn data_err(path: &Path, offset: u64, detail: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        offset,
        detail: detail.into(),
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Dataset> {
    let path = path.as_ref();
    match format {
        DatasetFormat::CifarBinary => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            parse_cifar_binary(&bytes, path)
        }
        DatasetFormat::Idx => load_idx_pair(path),
        DatasetFormat::ImageDir => load_image_dir(path),
    }
}

pub fn parse_cifar_binary(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let rec = CIFAR_PIXELS + 1;
    if bytes.is_empty() {
        return Err(data_err(path, 0, "empty file"));
    }
    if !bytes.len().is_multiple_of(rec) {
        let offset = (bytes.len() / rec * rec) as u64;
        return Err(data_err(path, offset, format!("truncated record ({} of {rec} bytes)", bytes.len() % rec)));
    }
    let n = bytes.len() / rec;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, r) in bytes.chunks(rec).enumerate() {
        let label = r[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(data_err(path, (i * rec) as u64, format!("label {label} outside [0, {CIFAR_CLASSES})")));
        }
        labels.push(label);
        data.extend(r[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Dataset::new(Tensor::from_parts(vec![n, 3, 32, 32], data), labels, CIFAR_CLASSES)
}

/// Writes `dataset` in the CIFAR binary layout, quantizing to 8 bits.
pub fn write_cifar_binary(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if dataset.image_shape() != [3, 32, 32] || dataset.classes > 256 {
        return Err(Error::dim(
            "write_cifar_binary",
            format!("needs 3x32x32 images and at most 256 classes, got {:?}", dataset.image_shape()),
        ));
    }
    let mut out = Vec::with_capacity(dataset.len() * (CIFAR_PIXELS + 1));
    for (i, &label) in dataset.labels.iter().enumerate() {
        out.push(label as u8);
        let img = &dataset.images.data()[i * CIFAR_PIXELS..(i + 1) * CIFAR_PIXELS];
        out.extend(img.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A parsed IDX array of unsigned bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(data_err(path, 0, "missing IDX header"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(data_err(path, 0, "bad IDX magic"));
    }
    if bytes[2] != 0x08 {
        return Err(data_err(path, 2, format!("unsupported IDX element type 0x{:02x}", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(data_err(path, bytes.len() as u64, "truncated IDX dimension list"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return Err(data_err(
            path,
            bytes.len().min(header + count) as u64,
            format!("expected {} payload bytes, found {}", count, bytes.len() - header),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Encodes an IDX array of unsigned bytes.
pub fn encode_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend((d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// The labels file for an IDX image file: `images` in the file name becomes
/// `labels` and `idx3` becomes `idx1` (the MNIST convention).
pub fn idx_labels_path(images: &Path) -> Option<PathBuf> {
    let name = images.file_name()?.to_str()?;
    name.contains("images")
        .then(|| images.with_file_name(name.replacen("images", "labels", 1).replacen("idx3", "idx1", 1)))
}

fn load_idx_pair(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let imgs = parse_idx(&bytes, path)?;
    if imgs.dims.len() != 3 {
        return Err(data_err(path, 3, format!("expected a rank-3 image array, got rank {}", imgs.dims.len())));
    }
    let lpath = idx_labels_path(path)
        .ok_or_else(|| Error::Config(format!("cannot derive a labels file from {}", path.display())))?;
    let lbytes = std::fs::read(&lpath).map_err(|e| Error::io(&lpath, e))?;
    let labels = parse_idx(&lbytes, &lpath)?;
    if labels.dims != [imgs.dims[0]] {
        return Err(data_err(&lpath, 4, format!("{:?} labels for {} images", labels.dims, imgs.dims[0])));
    }
    let classes = labels.data.iter().copied().max().unwrap_or(0) as usize + 1;
    let (n, h, w) = (imgs.dims[0], imgs.dims[1], imgs.dims[2]);
    let data = imgs.data.iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(
        Tensor::from_parts(vec![n, 1, h, w], data),
        labels.data.iter().map(|&l| l as usize).collect(),
        classes.max(2),
    )
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Class names are the sorted sub-directory names; class `i` is the `i`-th.
fn load_image_dir(root: &Path) -> Result<Dataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(data_err(root, 0, "no class sub-directories"));
    }
    let mut names = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut dims: Option<(u32, u32)> = None;
    for (label, dir) in class_dirs.iter().enumerate() {
        names.push(dir.file_name().unwrap().to_string_lossy().into_owned());
        for file in sorted_entries(dir)? {
            let ext = file.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if !matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
                continue;
            }
            let img = image::open(&file).map_err(|e| data_err(&file, 0, e.to_string()))?.to_rgb8();
            let d = img.dimensions();
            if *dims.get_or_insert(d) != d {
                return Err(data_err(&file, 0, format!("image is {}x{}, expected {}x{}", d.0, d.1, dims.unwrap().0, dims.unwrap().1)));
            }
            let n = (d.0 * d.1) as usize;
            let mut planar = vec![0.0; 3 * n];
            for (i, p) in img.pixels().enumerate() {
                for c in 0..3 {
                    planar[c * n + i] = p.0[c] as f64 / 255.0;
                }
            }
            data.extend(planar);
            labels.push(label);
        }
    }
    let (w, h) = dims.ok_or_else(|| data_err(root, 0, "no PNG or JPEG images found"))?;
    let n = labels.len();
    Dataset::with_names(Tensor::from_parts(vec![n, 3, h as usize, w as usize], data), labels, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> Dataset {
        let images = Tensor::from_fn(&[n, 3, 32, 32], |i| ((i * 37) % 256) as f64 / 255.0);
        Dataset::new(images, (0..n).map(|i| i % 10).collect(), 10).unwrap()
    }

    #[test]
    fn cifar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        let d = tiny(3);
        write_cifar_binary(&d, &p).unwrap();
        let back = load_dataset(&p, DatasetFormat::CifarBinary).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn cifar_truncation_and_labels() {
        let p = Path::new("x.bin");
        let mut bytes = vec![0u8; 2 * 3073];
        assert_eq!(parse_cifar_binary(&bytes, p).unwrap().len(), 2);
        bytes.pop();
        match parse_cifar_binary(&bytes, p) {
            Err(Error::Data { offset, .. }) => assert_eq!(offset, 3073),
            other => panic!("{other:?}"),
        }
        let mut bytes = vec![0u8; 2 * 3073];
        bytes[3073] = 12;
        match parse_cifar_binary(&bytes, p) {
            Err(Error::Data { offset, .. }) => assert_eq!(offset, 3073),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn idx_pair_loads() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("t10k-images-idx3-ubyte");
        std::fs::write(&ip, encode_idx(&[2, 2, 3], &[0, 255, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6])).unwrap();
        std::fs::write(dir.path().join("t10k-labels-idx1-ubyte"), encode_idx(&[2], &[3, 1])).unwrap();
        let d = load_dataset(&ip, DatasetFormat::Idx).unwrap();
        assert_eq!(d.images.shape(), &[2, 1, 2, 3]);
        assert_eq!(d.labels, vec![3, 1]);
        assert_eq!(d.images.data()[1], 1.0);
    }

    #[test]
    fn idx_errors_carry_offsets() {
        let p = Path::new("a");
        assert!(matches!(parse_idx(&[0, 0, 0x0D, 1], p), Err(Error::Data { offset: 2, .. })));
        assert!(matches!(parse_idx(&[1, 0, 8, 1], p), Err(Error::Data { offset: 0, .. })));
        let mut b = encode_idx(&[4], &[1, 2, 3, 4]);
        b.pop();
        assert!(matches!(parse_idx(&b, p), Err(Error::Data { .. })));
    }

    #[test]
    fn image_dir_loads_sorted_classes() {
        let dir = tempfile::tempdir().unwrap();
        for (class, v) in [("cat", 10u8), ("ant", 200u8)] {
            std::fs::create_dir(dir.path().join(class)).unwrap();
            let img = image::RgbImage::from_pixel(4, 2, image::Rgb([v, v, v]));
            img.save(dir.path().join(class).join("a.png")).unwrap();
        }
        let d = load_dataset(dir.path(), DatasetFormat::ImageDir).unwrap();
        assert_eq!(d.class_names, vec!["ant", "cat"]);
        assert_eq!(d.labels, vec![0, 1]);
        assert_eq!(d.images.shape(), &[2, 3, 2, 4]);
        assert!((d.images.data()[0] - 200.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn batching_covers_everything_in_order() {
        let d = tiny(10);
        let sizes: Vec<usize> = d.batches(4).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let labels: Vec<usize> = d.batches(4).flat_map(|b| b.labels).collect();
        assert_eq!(labels, d.labels);
    }
}
