//! Binary PPM (P6) images and CLIP-style preprocessing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_MEAN: f64 = 0.5;
pub const DEFAULT_STD: f64 = 0.5;

/// A 3-channel image stored channel-major (`c * h * w + y * w + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn zeros(height: usize, width: usize) -> Self {
        ImageTensor {
            height,
            width,
            data: vec![0.0; Self::CHANNELS * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    /// Interleaved 8-bit RGB from a channel-major 0–255 tensor. Values are
    /// rounded and clamped.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..Self::CHANNELS {
                    out.push(self.at(c, y, x).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        out
    }

    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Self {
        let mut img = ImageTensor::zeros(height, width);
        for (p, px) in rgb.chunks_exact(3).enumerate() {
            let (y, x) = (p / width, p % width);
            for (c, &v) in px.iter().enumerate() {
                *img.at_mut(c, y, x) = v as f64;
            }
        }
        img
    }
}

pub fn encode_ppm(height: usize, width: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn field(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::ImageFormat(format!("malformed PPM header: bad {what}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageTensor> {
    match bytes.get(..2) {
        Some(b"P6") => {}
        Some(m) if m[0] == b'P' => {
            return Err(Error::ImageFormat(format!(
                "unsupported PPM variant {}; only binary P6 is accepted",
                String::from_utf8_lossy(m)
            )))
        }
        _ => {
            return Err(Error::ImageFormat(
                "malformed PPM header: missing P6 magic".into(),
            ))
        }
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.field("width")?;
    let height = h.field("height")?;
    let maxval = h.field("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::ImageFormat(
            "malformed PPM header: zero dimension".into(),
        ));
    }
    if maxval != 255 {
        return Err(Error::ImageFormat(format!(
            "unsupported PPM maxval {maxval}; expected 255"
        )));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::ImageFormat(
            "malformed PPM header: no separator before payload".into(),
        ));
    }
    let payload = &bytes[h.pos + 1..];
    let need = width * height * 3;
    if payload.len() < need {
        return Err(Error::ImageFormat(format!(
            "truncated PPM payload: {} of {need} bytes",
            payload.len()
        )));
    }
    Ok(ImageTensor::from_rgb8(height, width, &payload[..need]))
}

/// Loads a P6 image with raw 0–255 values.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::ImageFormat(m) => Error::ImageFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_image(path: &Path, img: &ImageTensor) -> Result<()> {
    let bytes = encode_ppm(img.height, img.width, &img.to_rgb8());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Bilinear resize with half-pixel centers, clamped at the borders.
pub fn resize_bilinear(img: &ImageTensor, height: usize, width: usize) -> ImageTensor {
    if img.height == height && img.width == width {
        return img.clone();
    }
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let taps = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let mut out = ImageTensor::zeros(height, width);
    for y in 0..height {
        let (y0, y1, wy) = taps(y, sy, img.height);
        for x in 0..width {
            let (x0, x1, wx) = taps(x, sx, img.width);
            for c in 0..ImageTensor::CHANNELS {
                let top = img.at(c, y0, x0) * (1.0 - wx) + img.at(c, y0, x1) * wx;
                let bottom = img.at(c, y1, x0) * (1.0 - wx) + img.at(c, y1, x1) * wx;
                *out.at_mut(c, y, x) = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    out
}

/// Resize to `size`×`size`, scale to [0, 1], then standardize with `mean`/`std`.
pub fn preprocess_image(
    img: &ImageTensor,
    size: usize,
    mean: f64,
    std: f64,
) -> Result<ImageTensor> {
    if std == 0.0 || !std.is_finite() || !mean.is_finite() {
        return Err(Error::Config(format!(
            "normalization needs finite mean and non-zero std, got mean={mean}, std={std}"
        )));
    }
    if size == 0 {
        return Err(Error::Config("target image size must be positive".into()));
    }
    let mut out = resize_bilinear(img, size, size);
    for v in &mut out.data {
        *v = (*v / 255.0 - mean) / std;
    }
    if let Some(bad) = out.data.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("preprocessed pixel {bad}")));
    }
    Ok(out)
}
