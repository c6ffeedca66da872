use crate::engine::Tensor;
use crate::error::{Error, Result};

/// A `[C, H, W]` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::dim(
                "image",
                format!("{channels}x{height}x{width} with {} values", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image construction".into()));
        }
        let mut img = Image {
            channels,
            height,
            width,
            data,
        };
        img.clamp();
        Ok(img)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); channels * height * width],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [c, h, w] => Image::new(c, h, w, t.data().to_vec()),
            ref s => Err(Error::dim("image", format!("expected [C, H, W], got {s:?}"))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.channels, self.height, self.width], self.data.clone())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Same geometry, new pixel values (clamped).
    pub fn with_data(&self, data: Vec<f64>) -> Image {
        debug_assert_eq!(data.len(), self.data.len());
        let mut img = Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
        };
        img.clamp();
        img
    }

    pub fn clamp(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear sample of channel `c` at fractional `(y, x)`; outside the
    /// canvas reads as 0.
    pub fn bilinear(&self, c: usize, y: f64, x: f64) -> f64 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let px = |yy: isize, xx: isize| -> f64 {
            if yy < 0 || xx < 0 || yy >= self.height as isize || xx >= self.width as isize {
                0.0
            } else {
                self.get(c, yy as usize, xx as usize)
            }
        };
        let mut v = (1.0 - fy) * (1.0 - fx) * px(y0, x0);
        if fx != 0.0 {
            v += (1.0 - fy) * fx * px(y0, x0 + 1);
        }
        if fy != 0.0 {
            v += fy * (1.0 - fx) * px(y0 + 1, x0);
            if fx != 0.0 {
                v += fy * fx * px(y0 + 1, x0 + 1);
            }
        }
        v
    }

    /// Luma plane (ITU-R 601 weights); single-channel images return their only
    /// plane.
    pub fn grayscale(&self) -> Vec<f64> {
        if self.channels < 3 {
            return self.plane(0).to_vec();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect()
    }

    pub fn l2_distance(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}
