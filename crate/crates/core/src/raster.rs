//! RGB rasters, binary PPM I/O and the float intermediate domain.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    ZeroDimension { width: usize, height: usize },
    #[error("pixel buffer has {actual} values, expected {expected} for a {width}x{height} RGB image")]
    BufferLength {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("NaN channel value at index {index}")]
    NotANumber { index: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum PpmError {
    #[error("bad magic number, expected P6")]
    BadMagic,
    #[error("malformed PPM header: {0}")]
    MalformedHeader(&'static str),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("truncated pixel payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("{0} unexpected bytes after pixel payload")]
    TrailingData(usize),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Errors from loading an image file of any supported format.
#[derive(Debug, Error)]
pub enum ImageFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Ppm { path: String, source: PpmError },
    #[error("{path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<(), ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::ZeroDimension { width, height });
    }
    let expected = width * height * 3;
    if len != expected {
        return Err(ImageError::BufferLength {
            width,
            height,
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// 8-bit-per-channel RGB raster, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        check_dims(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, ImageError> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Exact conversion to the float domain.
    pub fn to_float(&self) -> ImageF64 {
        ImageF64 {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Real-valued RGB raster used between pipeline stages; values are unbounded.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageF64 {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageF64 {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        check_dims(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Clamps every channel to `[0, 255]` and rounds half away from zero.
    ///
    /// Infinities saturate; NaN is rejected.
    pub fn clamp_round(&self) -> Result<ImageRgb, ImageError> {
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(index, &v)| clamp_round_channel(v).ok_or(ImageError::NotANumber { index }))
            .collect::<Result<Vec<_>, _>>()?;
        ImageRgb::new(self.width, self.height, data)
    }
}

/// Single-channel version of [`ImageF64::clamp_round`]; `None` for NaN.
pub fn clamp_round_channel(v: f64) -> Option<u8> {
    if v.is_nan() {
        return None;
    }
    // f64::round is half-away-from-zero.
    Some(v.clamp(0.0, 255.0).round() as u8)
}

/// Parses a binary P6 PPM with maxval 255. Comments in the header are accepted.
pub fn load_ppm(bytes: &[u8]) -> Result<ImageRgb, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(PpmError::BadMagic);
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (n, field) in fields.iter_mut().enumerate() {
        // at least one whitespace byte must separate tokens
        if pos >= bytes.len() || !(bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            return Err(PpmError::MalformedHeader("missing separator"));
        }
        skip_whitespace_and_comments(bytes, &mut pos);
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(PpmError::MalformedHeader(match n {
                0 => "missing width",
                1 => "missing height",
                _ => "missing maxval",
            }));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| PpmError::MalformedHeader("numeric field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval));
    }
    // exactly one whitespace byte before the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PpmError::MalformedHeader("missing separator before pixel data")),
    }
    let (width, height) = (width as usize, height as usize);
    if width == 0 || height == 0 {
        return Err(ImageError::ZeroDimension { width, height }.into());
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or(PpmError::MalformedHeader("dimensions overflow"))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(PpmError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(PpmError::TrailingData(payload.len() - expected));
    }
    Ok(ImageRgb::new(width, height, payload.to_vec())?)
}

fn skip_whitespace_and_comments(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b'#' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => *pos += 1,
            _ => break,
        }
    }
}

/// Canonical P6 encoding: `P6\n<w> <h>\n255\n` followed by the raw raster.
pub fn save_ppm(img: &ImageRgb) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.data);
    out
}

/// Loads an image from disk. `.ppm` goes through [`load_ppm`]; PNG and JPEG
/// are decoded and converted to 8-bit RGB.
pub fn load_image_file(path: &Path) -> Result<ImageRgb, ImageFileError> {
    let display = path.display().to_string();
    let is_ppm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        let bytes = std::fs::read(path).map_err(|source| ImageFileError::Io {
            path: display.clone(),
            source,
        })?;
        return load_ppm(&bytes).map_err(|source| ImageFileError::Ppm {
            path: display,
            source,
        });
    }
    let decoded = image::open(path).map_err(|source| ImageFileError::Decode {
        path: display.clone(),
        source,
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    ImageRgb::new(w, h, rgb.into_raw()).map_err(|e| ImageFileError::Ppm {
        path: display,
        source: e.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_legal_file() {
        let mut bytes = b"P6 1 1 255 ".to_vec();
        bytes.extend_from_slice(&[0, 0, 0]);
        let img = load_ppm(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.pixel(0, 0), [0, 0, 0]);
    }

    #[test]
    fn hand_written_two_by_two() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        let pixels = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 255]];
        for p in pixels {
            bytes.extend_from_slice(&p);
        }
        let img = load_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
        assert_eq!(img.pixel(1, 0), [0, 255, 0]);
        assert_eq!(img.pixel(0, 1), [0, 0, 255]);
        assert_eq!(img.pixel(1, 1), [255, 255, 255]);
        assert_eq!(save_ppm(&img), bytes);
    }

    #[test]
    fn canonical_white_pixel() {
        let img = ImageRgb::filled(1, 1, [255, 255, 255]).unwrap();
        assert_eq!(save_ppm(&img), b"P6\n1 1\n255\n\xff\xff\xff".to_vec());
    }

    #[test]
    fn header_comments_are_canonicalised_away() {
        let mut bytes = b"P6 # made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        let img = load_ppm(&bytes).unwrap();
        let canon = save_ppm(&img);
        assert_eq!(canon, b"P6\n1 1\n255\n\x01\x02\x03".to_vec());
        assert_eq!(save_ppm(&load_ppm(&canon).unwrap()), canon);
    }

    #[test]
    fn parse_errors_are_distinct() {
        assert_eq!(load_ppm(b"P3\n1 1\n255\n\0\0\0"), Err(PpmError::BadMagic));
        assert_eq!(
            load_ppm(b"P6\n1 1\n65535\n\0\0\0"),
            Err(PpmError::UnsupportedMaxval(65535))
        );
        assert_eq!(
            load_ppm(b"P6\n2 1\n255\n\0\0\0"),
            Err(PpmError::Truncated {
                expected: 6,
                actual: 3
            })
        );
        assert_eq!(
            load_ppm(b"P6\n1 1\n255\n\0\0\0\0"),
            Err(PpmError::TrailingData(1))
        );
        assert!(matches!(
            load_ppm(b"P6\nx 1\n255\n"),
            Err(PpmError::MalformedHeader(_))
        ));
        assert!(matches!(
            load_ppm(b"P6\n1 1\n255"),
            Err(PpmError::MalformedHeader(_))
        ));
        assert!(matches!(
            load_ppm(b"P6\n0 1\n255\n"),
            Err(PpmError::Image(ImageError::ZeroDimension { .. }))
        ));
    }

    #[test]
    fn clamp_round_rules() {
        assert_eq!(clamp_round_channel(-3.2), Some(0));
        assert_eq!(clamp_round_channel(255.7), Some(255));
        assert_eq!(clamp_round_channel(127.5), Some(128));
        assert_eq!(clamp_round_channel(127.49), Some(127));
        assert_eq!(clamp_round_channel(f64::INFINITY), Some(255));
        assert_eq!(clamp_round_channel(f64::NEG_INFINITY), Some(0));
        assert_eq!(clamp_round_channel(f64::NAN), None);
    }

    #[test]
    fn clamp_round_rejects_nan() {
        let img = ImageF64::new(1, 1, vec![1.0, f64::NAN, 3.0]).unwrap();
        assert_eq!(img.clamp_round(), Err(ImageError::NotANumber { index: 1 }));
    }

    #[test]
    fn constructors_check_length() {
        assert!(matches!(
            ImageRgb::new(2, 2, vec![0; 11]),
            Err(ImageError::BufferLength { expected: 12, .. })
        ));
        assert!(ImageF64::new(0, 3, vec![]).is_err());
    }
}
