//! Binary PPM (P6) decoding and the crop/resize used before inference.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB in `[0, 1]`, row-major.
    pub pixels: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpmError(pub String);

impl fmt::Display for PpmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid PPM: {}", self.0)
    }
}

impl std::error::Error for PpmError {}

fn err<T>(msg: impl Into<String>) -> Result<T, PpmError> {
    Err(PpmError(msg.into()))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, PpmError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return err(format!("missing {what}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .map_or_else(|| err(format!("bad {what}")), Ok)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Image, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return err("expected magic P6");
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return err("zero-sized image");
    }
    if maxval == 0 || maxval > 65535 {
        return err(format!("maxval {maxval} out of range"));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return err("missing separator before pixel data");
    }
    let data = &bytes[h.pos + 1..];
    let wide = maxval > 255;
    let samples = width * height * 3;
    let need = samples * if wide { 2 } else { 1 };
    if data.len() < need {
        return err(format!("pixel data truncated: {} of {need} bytes", data.len()));
    }
    let scale = 1.0 / maxval as f32;
    let pixels = if wide {
        data[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 * scale)
            .collect()
    } else {
        data[..need].iter().map(|&b| b as f32 * scale).collect()
    };
    Ok(Image { width, height, pixels })
}

pub const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Center square crop, nearest-neighbour resize to `size`, per-channel
/// normalization. Returns CHW data.
pub fn to_chw(img: &Image, size: usize) -> Vec<f32> {
    let side = img.width.min(img.height);
    let (x0, y0) = ((img.width - side) / 2, (img.height - side) / 2);
    let mut out = vec![0.0; 3 * size * size];
    for y in 0..size {
        let sy = y0 + ((2 * y + 1) * side) / (2 * size);
        for x in 0..size {
            let sx = x0 + ((2 * x + 1) * side) / (2 * size);
            for c in 0..3 {
                let v = img.pixels[(sy * img.width + sx) * 3 + c];
                out[(c * size + y) * size + x] = (v - MEAN[c]) / STD[c];
            }
        }
    }
    out
}
