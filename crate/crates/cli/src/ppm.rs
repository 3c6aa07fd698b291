//! Binary portable pixmaps (P6) and a small RGB canvas to draw them on.

use std::path::Path;

use gqnloc_world::Image;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB bytes.
    pub data: Vec<u8>,
}

pub const CYAN: [u8; 3] = [0, 255, 255];
pub const GREEN: [u8; 3] = [0, 255, 0];
pub const MAGENTA: [u8; 3] = [255, 0, 255];
pub const WHITE: [u8; 3] = [255, 255, 255];
pub const BLACK: [u8; 3] = [0, 0, 0];

impl Canvas {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Self { width, height, data: fill.repeat(width * height) }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Writes a pixel; coordinates outside the canvas are ignored.
    pub fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: usize, h: usize, c: [u8; 3]) {
        for dy in 0..h as i64 {
            for dx in 0..w as i64 {
                self.set(x + dx, y + dy, c);
            }
        }
    }

    /// One-pixel outline.
    pub fn outline_rect(&mut self, x: i64, y: i64, w: usize, h: usize, c: [u8; 3]) {
        let (w, h) = (w as i64, h as i64);
        for d in 0..w {
            self.set(x + d, y, c);
            self.set(x + d, y + h - 1, c);
        }
        for d in 0..h {
            self.set(x, y + d, c);
            self.set(x + w - 1, y + d, c);
        }
    }

    pub fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let n = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
        for s in 0..=n {
            let x = x0 + (x1 - x0) * s / n;
            let y = y0 + (y1 - y0) * s / n;
            self.set(x, y, c);
        }
    }

    /// Nearest-neighbour upscaled copy of `img` with its top-left at (x, y).
    pub fn blit(&mut self, img: &Image, x: usize, y: usize, scale: usize) {
        let bytes = img.to_bytes();
        for r in 0..img.size * scale {
            for col in 0..img.size * scale {
                let i = ((r / scale) * img.size + col / scale) * 3;
                self.set((x + col) as i64, (y + r) as i64, [bytes[i], bytes[i + 1], bytes[i + 2]]);
            }
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()).map_err(|e| CliError::io(path, e))
    }
}

/// Parses a P6 file with maxval 255, allowing comments in the header.
pub fn parse_ppm(buf: &[u8]) -> Option<Canvas> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&buf[start..pos]).ok()?.to_string());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return None;
    }
    let width: usize = fields[1].parse().ok()?;
    let height: usize = fields[2].parse().ok()?;
    let data = buf.get(pos..pos + width * height * 3)?.to_vec();
    if pos + data.len() != buf.len() {
        return None;
    }
    Some(Canvas { width, height, data })
}

/// Maps t in [0, 1] to black-red-yellow-white.
pub fn heat(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let ch = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_comment() {
        let mut c = Canvas::new(3, 2, BLACK);
        c.set(2, 1, MAGENTA);
        let bytes = c.to_ppm();
        assert_eq!(parse_ppm(&bytes), Some(c.clone()));
        let mut commented = b"P6\n# made here\n3 2\n255\n".to_vec();
        commented.extend_from_slice(&c.data);
        assert_eq!(parse_ppm(&commented), Some(c));
    }

    #[test]
    fn truncated_pixels_are_rejected() {
        let c = Canvas::new(4, 4, WHITE);
        let bytes = c.to_ppm();
        assert!(parse_ppm(&bytes[..bytes.len() - 1]).is_none());
    }

    #[test]
    fn heat_endpoints() {
        assert_eq!(heat(0.0), BLACK);
        assert_eq!(heat(1.0), WHITE);
        assert_eq!(heat(f64::NAN), BLACK);
    }
}
