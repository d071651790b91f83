//! RGB images in `[0, 1]` and their on-disk formats (binary PPM, PNG,
//! 16-bit millimeter depth PNG).

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// Row-major `height x width x 3` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape("image", &[&[height, width, 3], &[data.len()]]));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, 3]
    }

    fn to_u8(v: f64) -> u8 {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }

    /// Crops out the `patch x patch` block at grid cell (`row`, `col`).
    pub fn patch(&self, row: usize, col: usize, patch: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(patch * patch * 3);
        for y in row * patch..(row + 1) * patch {
            let start = (y * self.width + col * patch) * 3;
            out.extend_from_slice(&self.data[start..start + patch * 3]);
        }
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| Self::to_u8(v)));
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut pos = 0;
        let mut header = Vec::new();
        let names = ["magic", "width", "height", "maxval"];
        while header.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::parse(path, names[header.len()], "unexpected end of header"));
            }
            header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if header[0] != "P6" {
            return Err(Error::parse(path, "magic", format!("expected P6, found `{}`", header[0])));
        }
        let num = |i: usize| -> Result<usize> {
            header[i]
                .parse()
                .map_err(|_| Error::parse(path, names[i], format!("not an integer: `{}`", header[i])))
        };
        let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::parse(path, "maxval", format!("unsupported maxval {maxval}")));
        }
        let n = w * h * 3;
        if bytes.len() < pos + n {
            return Err(Error::parse(path, "pixels", "truncated pixel data"));
        }
        let data = bytes[pos..pos + n].iter().map(|&b| b as f64 / maxval as f64).collect();
        Self::new(w, h, data)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.iter().map(|&v| Self::to_u8(v)).collect(),
        )
        .ok_or_else(|| Error::invalid("image buffer size"))?;
        buf.save(path.as_ref())?;
        Ok(())
    }

    /// Reads a PPM (by extension) or any format the `image` crate decodes.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "ppm") {
            return Self::read_ppm(path);
        }
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(
            w as usize,
            h as usize,
            img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect(),
        )
    }
}

/// Writes depth in meters as a 16-bit PNG of millimeters; 0 marks invalid.
pub fn write_depth_png(path: impl AsRef<Path>, depth: &[f64], width: usize, height: usize) -> Result<()> {
    if depth.len() != width * height {
        return Err(Error::shape("depth_png", &[&[height, width], &[depth.len()]]));
    }
    let mm: Vec<u16> = depth
        .iter()
        .map(|&d| if d > 0.0 { (d * 1000.0).round().clamp(0.0, 65535.0) as u16 } else { 0 })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, mm).ok_or_else(|| Error::invalid("depth buffer size"))?;
    buf.save(path.as_ref())?;
    Ok(())
}

/// Reads a 16-bit millimeter depth PNG, returning meters.
pub fn read_depth_png(path: impl AsRef<Path>) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path.as_ref())?.to_luma16();
    let (w, h) = img.dimensions();
    Ok((
        img.into_raw().into_iter().map(|v| v as f64 / 1000.0).collect(),
        w as usize,
        h as usize,
    ))
}

/// Reads raw little-endian `u16` millimeters.
pub fn read_depth_raw(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != width * height * 2 {
        return Err(Error::parse(
            path,
            "depth",
            format!("expected {} bytes, found {}", width * height * 2, bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as f64 / 1000.0)
        .collect())
}
