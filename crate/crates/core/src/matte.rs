//! Soft foreground mattes.
//!
//! Files are binary PGM (`P5`, maxval 255); byte `k` maps to `k / 255`.

use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftMatte {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl SoftMatte {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid("matte dimensions must be positive".into()));
        }
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "matte {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("matte value {v} outside [0, 1]")));
        }
        Ok(SoftMatte { width, height, values })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Bilinear sample at sub-pixel `(x, y)`; zero outside `[0, w−1] × [0, h−1]`.
    pub fn sample(&self, x: f64, y: f64) -> f32 {
        let (w, h) = (self.width, self.height);
        if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
            return 0.0;
        }
        let x0 = (x.floor() as usize).min(w - 1);
        let y0 = (y.floor() as usize).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let p = |xx, yy| self.get(xx, yy) as f64;
        let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
        let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
        (top * (1.0 - fy) + bottom * fy) as f32
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.values.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        out
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(Error::Format("wrong magic number, expected P5".into()));
        }
        let mut pos = 2;
        let mut header = [0usize; 3];
        for field in header.iter_mut() {
            *field = read_header_int(bytes, &mut pos)?;
        }
        let [width, height, maxval] = header;
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}, expected 255")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Format("truncated payload".into()));
        }
        pos += 1;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
        let payload = &bytes[pos..];
        if payload.len() < n {
            return Err(Error::Format(format!(
                "truncated payload: expected {n} bytes, found {}",
                payload.len()
            )));
        }
        let values = payload[..n].iter().map(|&b| b as f32 / 255.0).collect();
        SoftMatte::new(width, height, values)
    }
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("malformed PGM header".into()))
}

pub fn load_matte(path: impl AsRef<Path>) -> Result<SoftMatte> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    SoftMatte::from_pgm_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_matte(matte: &SoftMatte, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, matte.to_pgm_bytes()).map_err(|e| Error::io(path, e))
}

/// File name of the matte for one camera in one frame.
pub fn matte_file_name(frame: usize, camera_id: &str) -> String {
    format!("{frame:05}_{camera_id}.pgm")
}
