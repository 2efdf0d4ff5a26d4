//! 8-bit rasters and binary PGM/PPM (P5/P6) encoding.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("pnm: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    /// 1 (gray) or 3 (RGB).
    pub channels: u8,
    /// Row-major, interleaved.
    pub data: Vec<u8>,
}

impl Raster {
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        let len = width as usize * height as usize * channels as usize;
        Self { width, height, channels, data: vec![value; len] }
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let stride = self.width as usize * self.channels as usize;
        &self.data[y as usize * stride..(y as usize + 1) * stride]
    }

    fn row_mut(&mut self, y: u32) -> &mut [u8] {
        let stride = self.width as usize * self.channels as usize;
        &mut self.data[y as usize * stride..(y as usize + 1) * stride]
    }

    /// `width × height` window at `(x0, y0)`; parts outside the raster are
    /// filled with `pad`. Returns the window and whether padding was used.
    pub fn crop_padded(&self, x0: u32, y0: u32, width: u32, height: u32, pad: u8) -> (Raster, bool) {
        let mut out = Raster::filled(width, height, self.channels, pad);
        let c = self.channels as usize;
        let copy_w = self.width.saturating_sub(x0).min(width);
        let copy_h = self.height.saturating_sub(y0).min(height);
        for dy in 0..copy_h {
            let src = &self.row(y0 + dy)[x0 as usize * c..(x0 + copy_w) as usize * c];
            out.row_mut(dy)[..copy_w as usize * c].copy_from_slice(src);
        }
        (out, copy_w < width || copy_h < height)
    }

    /// Copy `src` into `self` with its top-left corner at `(x0, y0)`,
    /// clipping at the border.
    pub fn blit(&mut self, src: &Raster, x0: u32, y0: u32) {
        assert_eq!(src.channels, self.channels);
        let c = self.channels as usize;
        let w = self.width.saturating_sub(x0).min(src.width) as usize;
        let h = self.height.saturating_sub(y0).min(src.height);
        for dy in 0..h {
            let dst_start = x0 as usize * c;
            self.row_mut(y0 + dy)[dst_start..dst_start + w * c].copy_from_slice(&src.row(dy)[..w * c]);
        }
    }

    pub fn encode_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_pnm(bytes: &[u8]) -> Result<Raster, RasterError> {
        let mut pos = 0;
        let mut token = || -> Result<String, RasterError> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(RasterError::Format("truncated header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let channels = match token()?.as_str() {
            "P5" => 1u8,
            "P6" => 3u8,
            m => return Err(RasterError::Format(format!("unsupported magic {m}"))),
        };
        let mut num = |what: &str| -> Result<u32, RasterError> {
            token()?.parse().map_err(|_| RasterError::Format(format!("bad {what}")))
        };
        let width = num("width")?;
        let height = num("height")?;
        let maxval = num("maxval")?;
        if width == 0 || height == 0 {
            return Err(RasterError::Format("zero-sized image".into()));
        }
        if maxval == 0 || maxval > 255 {
            return Err(RasterError::Format(format!("maxval {maxval} unsupported (8-bit only)")));
        }
        // Exactly one whitespace byte separates the header from the payload.
        let data_start = pos + 1;
        let len = width as usize * height as usize * channels as usize;
        if bytes.len() < data_start + len {
            return Err(RasterError::Format("truncated pixel data".into()));
        }
        Ok(Raster { width, height, channels, data: bytes[data_start..data_start + len].to_vec() })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Raster, RasterError> {
        Raster::decode_pnm(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.encode_pnm())?;
        f.flush()?;
        Ok(())
    }

    pub fn extension(&self) -> &'static str {
        if self.channels == 1 {
            "pgm"
        } else {
            "ppm"
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32, c: u8) -> Raster {
        let data = (0..w as usize * h as usize * c as usize).map(|i| (i % 251) as u8).collect();
        Raster { width: w, height: h, channels: c, data }
    }

    #[test]
    fn pnm_roundtrip() {
        for c in [1, 3] {
            let r = gradient(7, 5, c);
            assert_eq!(Raster::decode_pnm(&r.encode_pnm()).unwrap(), r);
        }
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20]);
        let r = Raster::decode_pnm(&bytes).unwrap();
        assert_eq!(r.data, vec![10, 20]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Raster::decode_pnm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(Raster::decode_pnm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(Raster::decode_pnm(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(Raster::decode_pnm(b"P5\n").is_err());
    }

    #[test]
    fn crop_pads_outside() {
        let r = gradient(3, 2, 1);
        let (c, padded) = r.crop_padded(1, 1, 4, 2, 9);
        assert!(padded);
        assert_eq!(c.row(0), &[r.pixel(1, 1)[0], r.pixel(2, 1)[0], 9, 9]);
        assert_eq!(c.row(1), &[9, 9, 9, 9]);
        let (full, padded) = r.crop_padded(0, 0, 3, 2, 0);
        assert!(!padded);
        assert_eq!(full, r);
    }
}
