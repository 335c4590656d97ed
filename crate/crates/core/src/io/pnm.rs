use std::path::{Path, PathBuf};

use crate::error::{Error, ParseError, Result};
use crate::tensor::{Shape, Tensor};

/// Upper bound on `width·height·channels`.
pub const MAX_PIXELS: usize = 1 << 28;

/// Decoded PGM/PPM image with values scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    /// Shape `(1, c, h, w)` with `c` 1 or 3.
    pub pixels: Tensor<f64>,
    pub path: PathBuf,
    pub maxval: u16,
}

impl ImageRecord {
    pub fn channels(&self) -> usize {
        self.pixels.shape().c
    }

    /// Bits per sample on disk.
    pub fn bit_depth(&self) -> u32 {
        16 - self.maxval.leading_zeros()
    }

    /// Single-channel view; colour images use BT.601 luma weights.
    pub fn to_gray(&self) -> Tensor<f64> {
        let s = self.pixels.shape();
        if s.c == 1 {
            return self.pixels.clone();
        }
        Tensor::from_fn(s.with_c(1), |n, _, y, x| {
            0.299 * self.pixels.at(n, 0, y, x) + 0.587 * self.pixels.at(n, 1, y, x) + 0.114 * self.pixels.at(n, 2, y, x)
        })
    }
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    maxval: u32,
    offset: usize,
}

fn skip_space_and_comments(b: &[u8], mut i: usize) -> usize {
    loop {
        while i < b.len() && b[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < b.len() && b[i] == b'#' {
            while i < b.len() && b[i] != b'\n' && b[i] != b'\r' {
                i += 1;
            }
            continue;
        }
        return i;
    }
}

fn header_number(b: &[u8], i: &mut usize, what: &str) -> std::result::Result<u32, ParseError> {
    *i = skip_space_and_comments(b, *i);
    let start = *i;
    while *i < b.len() && b[*i].is_ascii_digit() {
        *i += 1;
    }
    if start == *i {
        return Err(if *i >= b.len() {
            ParseError::Header(format!("missing {what}"))
        } else {
            ParseError::Header(format!("expected {what}, found byte 0x{:02x}", b[*i]))
        });
    }
    let text = std::str::from_utf8(&b[start..*i]).expect("ascii digits");
    text.parse::<u32>().map_err(|_| ParseError::DimOverflow(format!("{what} {text} does not fit in 32 bits")))
}

fn parse_header(b: &[u8]) -> std::result::Result<Header, ParseError> {
    let channels = match b.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(ParseError::BadMagic { found: b.iter().take(2).copied().collect(), expected: "P5 or P6" }),
    };
    let mut i = 2;
    if i < b.len() && !b[i].is_ascii_whitespace() && b[i] != b'#' {
        return Err(ParseError::Header("magic must be followed by whitespace".into()));
    }
    let width = header_number(b, &mut i, "width")? as usize;
    let height = header_number(b, &mut i, "height")? as usize;
    let maxval = header_number(b, &mut i, "maxval")?;
    if width == 0 || height == 0 {
        return Err(ParseError::Header(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ParseError::MaxVal(maxval));
    }
    match b.get(i) {
        Some(c) if c.is_ascii_whitespace() => i += 1,
        Some(_) => return Err(ParseError::Header("maxval must be followed by a single whitespace byte".into())),
        None => return Err(ParseError::Truncated { needed: i + 1, available: b.len() }),
    }
    width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .filter(|&v| v <= MAX_PIXELS)
        .ok_or_else(|| ParseError::DimOverflow(format!("{width}x{height}x{channels} exceeds {MAX_PIXELS} samples")))?;
    Ok(Header { channels, width, height, maxval, offset: i })
}

/// Decodes a binary PGM (P5) or PPM (P6) image; returns pixels and maxval.
pub fn parse_pnm(bytes: &[u8]) -> std::result::Result<(Tensor<f64>, u16), ParseError> {
    let h = parse_header(bytes)?;
    let samples = h.width * h.height * h.channels;
    let bps = if h.maxval > 255 { 2 } else { 1 };
    let needed = h.offset + samples * bps;
    if bytes.len() < needed {
        return Err(ParseError::Truncated { needed, available: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(ParseError::Trailing(bytes.len() - needed));
    }
    let payload = &bytes[h.offset..needed];
    let scale = 1.0 / h.maxval as f64;
    let (hh, ww, cc) = (h.height, h.width, h.channels);
    // interleaved (y, x, c) on disk, planar (c, y, x) in memory
    let mut planar = vec![0.0; samples];
    for k in 0..samples {
        let raw = if bps == 2 { u16::from_be_bytes([payload[2 * k], payload[2 * k + 1]]) as u32 } else { payload[k] as u32 };
        if raw > h.maxval {
            return Err(ParseError::SampleRange { value: raw, maxval: h.maxval });
        }
        let (pix, c) = (k / cc, k % cc);
        planar[c * hh * ww + pix] = raw as f64 * scale;
    }
    let t = Tensor::from_vec(Shape::new(1, cc, hh, ww), planar).expect("sized");
    Ok((t, h.maxval as u16))
}

/// 8-bit quantization, round half up, clamped to `[0, 255]`.
pub fn quantize_u8(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Encodes a `(1, c, h, w)` tensor (c = 1 or 3) as 8-bit P5/P6.
pub fn encode_pnm(pixels: &Tensor<f64>) -> Result<Vec<u8>> {
    let s = pixels.shape();
    if s.n != 1 || (s.c != 1 && s.c != 3) {
        return Err(Error::shape("encode_pnm", format!("expects (1, 1|3, h, w), got {s}")));
    }
    let magic = if s.c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", s.w, s.h).into_bytes();
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..s.c {
                out.push(quantize_u8(pixels.at(0, c, y, x)));
            }
        }
    }
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<ImageRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (pixels, maxval) = parse_pnm(&bytes).map_err(|k| Error::parse(path, k))?;
    Ok(ImageRecord { pixels, path: path.to_path_buf(), maxval })
}

pub fn save_image(pixels: &Tensor<f64>, path: &Path) -> Result<()> {
    let bytes = encode_pnm(pixels)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
