//! RGB image buffer with PNG export and a float sidecar format.
//!
//! Pixel values are linear-light in [0, 1]. PNG export applies the standard
//! sRGB transfer curve and quantizes to 8 bits; the `.f64` sidecar keeps
//! the exact linear values (little-endian f64) for metric-grade comparisons.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples, length `width * height * 3`.
    pub data: Vec<f64>,
}

/// Linear -> sRGB transfer (IEC 61966-2-1).
pub fn srgb_encode(x: f64) -> f64 {
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

/// sRGB -> linear transfer.
pub fn srgb_decode(x: f64) -> f64 {
    if x <= 0.040_45 {
        x / 12.92
    } else {
        ((x + 0.055) / 1.055).powf(2.4)
    }
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> ImageRgb {
        ImageRgb {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> ImageRgb {
        let mut img = ImageRgb::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &ImageRgb) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean absolute difference over all channels.
    pub fn mean_abs_diff(&self, other: &ImageRgb) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Mean squared difference of horizontal and vertical neighbor pixels;
    /// a cheap high-frequency-energy measure used by the drift reports.
    pub fn high_frequency_energy(&self) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                let p = self.pixel(x, y);
                if x + 1 < self.width {
                    let q = self.pixel(x + 1, y);
                    acc += (0..3).map(|c| (p[c] - q[c]) * (p[c] - q[c])).sum::<f64>();
                    n += 3;
                }
                if y + 1 < self.height {
                    let q = self.pixel(x, y + 1);
                    acc += (0..3).map(|c| (p[c] - q[c]) * (p[c] - q[c])).sum::<f64>();
                    n += 3;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            acc / n as f64
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.data.len());
        for &v in &self.data {
            let s = srgb_encode(v.clamp(0.0, 1.0));
            bytes.push((s * 255.0).round() as u8);
        }
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
                .expect("buffer size matches dimensions");
        buf.save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn load_png(path: &Path) -> Result<ImageRgb> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img
            .into_raw()
            .into_iter()
            .map(|b| srgb_decode(b as f64 / 255.0))
            .collect();
        Ok(ImageRgb {
            width: w,
            height: h,
            data,
        })
    }

    /// Raw linear sidecar: magic, dimensions, then f64 LE samples.
    pub fn save_f64(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 8);
        out.extend_from_slice(b"IMF64\0\0\0");
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_f64(path: &Path) -> Result<ImageRgb> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 16 || &bytes[..8] != b"IMF64\0\0\0" {
            return Err(Error::Image(format!("{}: bad sidecar header", path.display())));
        }
        let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expect = 16 + w * h * 3 * 8;
        if bytes.len() != expect {
            return Err(Error::Image(format!("{}: truncated sidecar", path.display())));
        }
        let data = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ImageRgb {
            width: w,
            height: h,
            data,
        })
    }

    /// Loads the `.f64` sidecar when present, otherwise decodes the PNG.
    pub fn load_best(png_path: &Path) -> Result<ImageRgb> {
        let sidecar = sidecar_path(png_path);
        if sidecar.exists() {
            ImageRgb::load_f64(&sidecar)
        } else {
            ImageRgb::load_png(png_path)
        }
    }
}

pub fn sidecar_path(png_path: &Path) -> PathBuf {
    png_path.with_extension("f64")
}
