//! Grayscale image ingestion: PGM (P2/P5) decoding and encoding, bilinear
//! resizing and the single-level Haar approximation band used as the working
//! image of the recognizer.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Dense grayscale image, row-major, real-valued intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pixels: Array2<f64>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::arg(format!("image dims must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::arg(format!(
                "image data has {} samples, expected {rows}x{cols} = {}",
                data.len(),
                rows * cols
            )));
        }
        let pixels = Array2::from_shape_vec((rows, cols), data).expect("length checked above");
        Ok(GrayImage { pixels })
    }

    pub fn from_array(pixels: Array2<f64>) -> Result<Self> {
        if pixels.nrows() == 0 || pixels.ncols() == 0 {
            return Err(Error::arg("image dims must be positive"));
        }
        Ok(GrayImage { pixels })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        GrayImage::new(rows, cols, vec![value; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn cols(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.pixels.dim()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[[row, col]]
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_array(self) -> Array2<f64> {
        self.pixels
    }

    /// Row-major copy of the samples.
    pub fn to_vec(&self) -> Vec<f64> {
        self.pixels.iter().copied().collect()
    }

    pub fn mean(&self) -> f64 {
        self.pixels.sum() / self.pixels.len() as f64
    }

    pub fn transpose(&self) -> GrayImage {
        GrayImage { pixels: self.pixels.t().to_owned() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage { pixels: self.pixels.mapv(f) }
    }

    /// Checks the minimum geometry for anything entering the feature pipeline.
    pub fn ensure_pipeline_ready(&self) -> Result<()> {
        if self.rows() < 2 || self.cols() < 2 {
            return Err(Error::arg(format!(
                "image must be at least 2x2, got {}x{}",
                self.rows(),
                self.cols()
            )));
        }
        Ok(())
    }
}

/// Byte cursor over a Netpbm header.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Decode { offset: self.pos, message: message.into() }
    }

    /// Skips whitespace and `#` comments (which run to end of line).
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<u64> {
        self.skip_separators();
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(u64::from(b - b'0')))
                .ok_or_else(|| self.err(format!("{what} overflows")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(match self.bytes.get(self.pos) {
                None => self.err(format!("unexpected end of data, expected {what}")),
                Some(_) => self.err(format!("expected decimal {what}")),
            });
        }
        Ok(value)
    }
}

/// Decodes a binary (P5) or ASCII (P2) PGM image. Samples are returned as
/// stored, without rescaling by maxval.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 {
        return Err(Error::Decode { offset: 0, message: "missing PGM magic".into() });
    }
    let binary = match &bytes[..2] {
        b"P5" => true,
        b"P2" => false,
        other => {
            return Err(Error::Decode {
                offset: 0,
                message: format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            })
        }
    };
    let mut reader = HeaderReader { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(reader.err("expected whitespace after magic"));
    }
    let width = reader.read_uint("width")? as usize;
    let height = reader.read_uint("height")? as usize;
    if width == 0 || height == 0 {
        return Err(reader.err(format!("zero image dimension {width}x{height}")));
    }
    let maxval = reader.read_uint("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(reader.err(format!("maxval {maxval} outside 1..=65535")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| reader.err("image dimensions overflow"))?;

    let mut data = Vec::with_capacity(count.min(1 << 24));
    if binary {
        // Exactly one whitespace byte separates maxval from the raster.
        match bytes.get(reader.pos) {
            Some(b) if b.is_ascii_whitespace() => reader.pos += 1,
            Some(_) => return Err(reader.err("expected single whitespace before raster")),
            None => return Err(reader.err("truncated before raster")),
        }
        let sample_bytes = if maxval > 255 { 2 } else { 1 };
        let needed = count * sample_bytes;
        let raster = &bytes[reader.pos..];
        if raster.len() < needed {
            return Err(Error::Decode {
                offset: bytes.len(),
                message: format!("truncated raster: need {needed} bytes, have {}", raster.len()),
            });
        }
        for i in 0..count {
            let value = if sample_bytes == 2 {
                u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u64
            } else {
                raster[i] as u64
            };
            if value > maxval {
                return Err(Error::Decode {
                    offset: reader.pos + i * sample_bytes,
                    message: format!("sample {value} exceeds maxval {maxval}"),
                });
            }
            data.push(value as f64);
        }
    } else {
        for _ in 0..count {
            let at = reader.pos;
            let value = reader.read_uint("sample")?;
            if value > maxval {
                return Err(Error::Decode {
                    offset: at,
                    message: format!("sample {value} exceeds maxval {maxval}"),
                });
            }
            data.push(value as f64);
        }
    }
    GrayImage::new(height, width, data)
}

/// Encodes as binary PGM. Samples are rounded and clamped to `0..=65535`;
/// maxval is 255 when every sample fits in a byte, 65535 otherwise.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let samples: Vec<u16> = img
        .pixels()
        .iter()
        .map(|&v| v.round().clamp(0.0, 65535.0) as u16)
        .collect();
    let wide = samples.iter().any(|&s| s > 255);
    let maxval = if wide { 65535 } else { 255 };
    let mut out = format!("P5\n{} {}\n{}\n", img.cols(), img.rows(), maxval).into_bytes();
    out.reserve(samples.len() * if wide { 2 } else { 1 });
    for s in samples {
        if wide {
            out.extend_from_slice(&s.to_be_bytes());
        } else {
            out.push(s as u8);
        }
    }
    out
}

/// Bilinear resize with corner-aligned sampling and edge clamping: output
/// corners land exactly on input corners.
pub fn resize_to(img: &GrayImage, rows: usize, cols: usize) -> Result<GrayImage> {
    if rows == 0 || cols == 0 {
        return Err(Error::arg(format!("resize target must be positive, got {rows}x{cols}")));
    }
    if img.dims() == (rows, cols) {
        return Ok(img.clone());
    }
    let (src_rows, src_cols) = img.dims();
    let src = img.pixels();
    let sample_axis = |dst: usize, src_len: usize| -> Vec<(usize, usize, f64)> {
        (0..dst)
            .map(|i| {
                let pos = if dst == 1 || src_len == 1 {
                    0.0
                } else {
                    (i * (src_len - 1)) as f64 / (dst - 1) as f64
                };
                let lo = (pos.floor() as usize).min(src_len - 1);
                let hi = (lo + 1).min(src_len - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = sample_axis(rows, src_rows);
    let xs = sample_axis(cols, src_cols);
    let out = Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (y0, y1, fy) = ys[r];
        let (x0, x1, fx) = xs[c];
        let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
        let bottom = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    });
    GrayImage::from_array(out)
}

/// Approximation (LL) band of a one-level 2D Haar transform, normalized as
/// the mean of each disjoint 2x2 block.
pub fn haar_dwt_ll(img: &GrayImage) -> Result<GrayImage> {
    let (rows, cols) = img.dims();
    if rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::arg(format!(
            "Haar LL band needs even dimensions, got {rows}x{cols}; resize first"
        )));
    }
    let src = img.pixels();
    let out = Array2::from_shape_fn((rows / 2, cols / 2), |(r, c)| {
        let (y, x) = (2 * r, 2 * c);
        (src[[y, x]] + src[[y, x + 1]] + src[[y + 1, x]] + src[[y + 1, x + 1]]) / 4.0
    });
    GrayImage::from_array(out)
}
