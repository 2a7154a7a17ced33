//! 8-bit RGB frames: binary PPM codec, optional compressed loaders, resizing
//! and box drawing.

use std::path::Path;

use super::{write_bytes, DataError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    /// Row-major interleaved RGB.
    pub data: Vec<u8>,
}

/// Largest accepted dimension for decoded images.
pub const MAX_SIDE: u32 = 1 << 14;

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize * 3],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Decodes a binary (`P6`) PPM with maxval 255.
    pub fn decode_ppm(bytes: &[u8]) -> Result<Self, DataError> {
        let bad = |m: &str| DataError::Invalid(format!("ppm: {m}"));
        let mut pos = 0;
        let token = |pos: &mut usize| -> Result<String, DataError> {
            // skip whitespace and comments
            loop {
                while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                    *pos += 1;
                }
                if *pos < bytes.len() && bytes[*pos] == b'#' {
                    while *pos < bytes.len() && bytes[*pos] != b'\n' {
                        *pos += 1;
                    }
                } else {
                    break;
                }
            }
            let start = *pos;
            while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
                *pos += 1;
            }
            if start == *pos {
                return Err(bad("truncated header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        };
        if token(&mut pos)? != "P6" {
            return Err(bad("missing P6 magic"));
        }
        let dim = |pos: &mut usize, what: &str| -> Result<u32, DataError> {
            token(pos)?
                .parse::<u32>()
                .map_err(|_| bad(&format!("bad {what}")))
        };
        let width = dim(&mut pos, "width")?;
        let height = dim(&mut pos, "height")?;
        let maxval = dim(&mut pos, "maxval")?;
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
            return Err(bad("dimensions out of range"));
        }
        // exactly one whitespace byte separates header and raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(bad("truncated header"));
        }
        pos += 1;
        let need = width as usize * height as usize * 3;
        if bytes.len() - pos < need {
            return Err(bad("truncated raster"));
        }
        Ok(Self {
            width,
            height,
            data: bytes[pos..pos + need].to_vec(),
        })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), DataError> {
        write_bytes(path, &self.encode_ppm())
    }

    /// Loads a frame. PPM always works; JPEG/PNG need the
    /// `compressed-images` feature.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let bytes = std::fs::read(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if bytes.starts_with(b"P6") {
            return Self::decode_ppm(&bytes);
        }
        decode_compressed(&bytes, path)
    }

    /// Bilinear resampling to `width × height`.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Self::new(width, height);
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as u32;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as u32;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let (a, b, c, d) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
                let mut px = [0u8; 3];
                for k in 0..3 {
                    let top = a[k] as f64 * (1.0 - tx) + b[k] as f64 * tx;
                    let bot = c[k] as f64 * (1.0 - tx) + d[k] as f64 * tx;
                    px[k] = (top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8;
                }
                out.put(x, y, px);
            }
        }
        out
    }

    /// Draws a rectangle outline of the given thickness, clipped to the image.
    pub fn draw_rect(&mut self, left: f64, top: f64, width: f64, height: f64, rgb: [u8; 3], thickness: u32) {
        let x0 = left.round().max(0.0) as i64;
        let y0 = top.round().max(0.0) as i64;
        let x1 = ((left + width).round() as i64).min(self.width as i64) - 1;
        let y1 = ((top + height).round() as i64).min(self.height as i64) - 1;
        if x1 < x0 || y1 < y0 {
            return;
        }
        let t = thickness as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if x - x0 < t || x1 - x < t || y - y0 < t || y1 - y < t {
                    self.put(x as u32, y as u32, rgb);
                }
            }
        }
    }
}

#[cfg(feature = "compressed-images")]
fn decode_compressed(bytes: &[u8], path: &Path) -> Result<RgbImage, DataError> {
    let img = image::load_from_memory(bytes)
        .map_err(|e| DataError::Invalid(format!("{}: {e}", path.display())))?
        .to_rgb8();
    Ok(RgbImage {
        width: img.width(),
        height: img.height(),
        data: img.into_raw(),
    })
}

#[cfg(not(feature = "compressed-images"))]
fn decode_compressed(_bytes: &[u8], path: &Path) -> Result<RgbImage, DataError> {
    Err(DataError::Invalid(format!(
        "{}: not a binary PPM (build with `compressed-images` for JPEG/PNG)",
        path.display()
    )))
}

/// Distinct saturated color for an identity.
pub fn identity_color(id: u32) -> [u8; 3] {
    let hue = (id as f64 * 0.618_033_988_749_895).fract();
    hsv_to_rgb(hue, 0.85, 0.95)
}

pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}
