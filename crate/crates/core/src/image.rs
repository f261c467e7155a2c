//! Raster images, the zero-mean/unit-norm normalization every dot product
//! relies on, and file I/O (binary PGM for inspection, raster JSON for
//! lossless persistence).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

/// Centered norms below this are treated as constant images.
pub const DEGENERATE_NORM: f64 = 1e-14;

/// Real-valued raster, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    #[serde(skip)]
    normalized: bool,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(mismatch(
                format!("{} values for {width}x{height}", width * height),
                data.len(),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::DegenerateImage(format!("non-finite value at {i}")));
        }
        Ok(Self { width, height, data, normalized: false })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height], normalized: false }
    }

    /// 1D signal as a `len x 1` raster.
    pub fn from_signal(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(n, 1, data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn check_dims(&self, other: &Image) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(mismatch(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ))
        }
    }

    /// Builds an image from values that are known to be a permutation of a
    /// normalized image's values, keeping the normalized flag.
    pub(crate) fn with_data(&self, data: Vec<f64>, normalized: bool) -> Image {
        debug_assert_eq!(data.len(), self.data.len());
        Image { width: self.width, height: self.height, data, normalized }
    }

    /// Marks values that were persisted after normalization as normalized,
    /// without recomputing them (recomputing would perturb the last bits).
    pub fn assume_normalized(mut self) -> Result<Image> {
        if self.mean().abs() > 1e-12 || (self.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::DegenerateImage(format!(
                "expected a normalized raster, got mean {:e} norm {}",
                self.mean(),
                self.norm()
            )));
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean distance between rasters of equal size.
    pub fn distance(&self, other: &Image) -> Result<f64> {
        self.check_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn add(&self, other: &Image) -> Result<Image> {
        self.check_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(self.with_data(data, false))
    }

    pub fn scaled(&self, s: f64) -> Image {
        self.with_data(self.data.iter().map(|v| v * s).collect(), false)
    }

    /// Zero-pads (or crops) around the center into a `width x height`
    /// raster. Padding a normalized image keeps it normalized.
    pub fn embed_centered(&self, width: usize, height: usize) -> Image {
        let mut out = Image::zeros(width, height);
        out.normalized = self.normalized && width >= self.width && height >= self.height;
        let ox = width as isize / 2 - self.width as isize / 2;
        let oy = height as isize / 2 - self.height as isize / 2;
        for y in 0..self.height {
            for x in 0..self.width {
                let tx = x as isize + ox;
                let ty = y as isize + oy;
                if tx >= 0 && ty >= 0 && (tx as usize) < width && (ty as usize) < height {
                    out.data[ty as usize * width + tx as usize] = self.get(x, y);
                }
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(mismatch(
                format!("crop inside {}x{}", self.width, self.height),
                format!("{w}x{h} at ({x0},{y0})"),
            ));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Image { width: w, height: h, data, normalized: false })
    }
}

/// Returns `(raw - mean) / ||raw - mean||`.
pub fn normalize(raw: &Image) -> Result<Image> {
    if raw.len() < 2 {
        return Err(Error::DegenerateImage("fewer than two pixels".into()));
    }
    if raw.normalized {
        return Ok(raw.clone());
    }
    let mean = raw.mean();
    let centered: Vec<f64> = raw.data.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= DEGENERATE_NORM) {
        return Err(Error::DegenerateImage(format!("centered norm {norm:e}")));
    }
    let data = centered.into_iter().map(|v| v / norm).collect();
    Ok(raw.with_data(data, true))
}

/// Inner product of two normalized images.
pub fn dot(a: &Image, b: &Image) -> Result<f64> {
    a.check_dims(b)?;
    Ok(dot_slices(&a.data, &b.data))
}

#[inline]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------- PGM

/// Reads a binary 8-bit PGM (P5). Values are returned unnormalized in [0, 255].
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pgm(&fs::read(path)?)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::MalformedFile("empty file".into()))?;
    match magic.as_slice() {
        b"P5" => {}
        b"P2" | b"P6" | b"P3" => {
            return Err(Error::UnsupportedFormat(String::from_utf8_lossy(&magic).into_owned()))
        }
        _ => return Err(Error::MalformedFile("missing P5 magic".into())),
    }
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::MalformedFile(format!("truncated header: no {name}")))?;
        *slot = std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedFile(format!("bad {name}")))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || width == 0 || height == 0 {
        return Err(Error::MalformedFile("zero dimension or maxval".into()));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval} (16-bit)")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::MalformedFile("truncated header".into()));
    }
    pos += 1;
    let n = width * height;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::MalformedFile(format!("expected {n} raster bytes")))?;
    Image::new(width, height, raster.iter().map(|&b| f64::from(b)).collect())
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| bytes[start..*pos].to_vec())
}

/// Writes a P5 preview. Images whose values are already integers in
/// [0, 255] are written unchanged; anything else is stretched affinely from
/// [min, max] onto [0, 255].
pub fn save_pgm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm(image))?;
    Ok(())
}

pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let is_byte = |v: f64| v.fract() == 0.0 && (0.0..=255.0).contains(&v);
    let pixels: Vec<u8> = if image.data.iter().all(|&v| is_byte(v)) {
        image.data.iter().map(|&v| v as u8).collect()
    } else {
        let lo = image.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = image.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        image
            .data
            .iter()
            .map(|&v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    };
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&pixels);
    out
}

// ---------------------------------------------------------------- raster JSON

pub fn to_raster_json(image: &Image) -> String {
    serde_json::to_string(image).expect("raster serialization cannot fail")
}

pub fn from_raster_json(s: &str) -> Result<Image> {
    let raw: Image = serde_json::from_str(s)?;
    Image::new(raw.width, raw.height, raw.data)
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<Image> {
    from_raster_json(&fs::read_to_string(path)?)
}

pub fn save_raster(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_raster_json(image))?;
    Ok(())
}
