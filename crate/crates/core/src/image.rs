use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Row-major `height x width x channels` image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Contract(format!(
                "image buffer has {} values, expected {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: &[f32]) -> Self {
        let data = value.iter().copied().cycle().take(width * height * value.len()).collect();
        Self {
            width,
            height,
            channels: value.len(),
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Single-channel float map, row-major, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Binary PPM (`P6`, maxval 255), each channel stored as `round(255 v)`.
pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    if img.channels != 3 {
        return Err(Error::Contract(format!("PPM needs 3 channels, got {}", img.channels)));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    fs::write(path, encode_ppm(img)?).map_err(|e| Error::io(path, e))
}

/// Header tokenizer shared by the PPM and PFM readers.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Header<'a> {
    fn skip_space(&mut self) {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    fn token(&mut self) -> Result<(usize, &'a str)> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(self.path, start, "unexpected end of header"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::parse(self.path, start, "header is not ASCII"))?;
        Ok((start, text))
    }

    fn number<N: std::str::FromStr>(&mut self, what: &str) -> Result<N> {
        let (at, text) = self.token()?;
        text.parse()
            .map_err(|_| Error::parse(self.path, at, format!("invalid {what} {text:?}")))
    }

    fn magic(&mut self, expected: &str) -> Result<()> {
        if !self.bytes.starts_with(expected.as_bytes()) {
            return Err(Error::parse(self.path, 0, format!("expected magic {expected:?}")));
        }
        self.pos = expected.len();
        Ok(())
    }

    /// Consumes the single whitespace byte ending the header.
    fn end(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::parse(self.path, self.pos, "header must end with whitespace")),
        }
    }
}

pub fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let mut h = Header { bytes, pos: 0, path };
    h.magic("P6")?;
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    let at = {
        h.skip_space();
        h.pos
    };
    let maxval: u32 = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::parse(path, at, format!("maxval must be 255, got {maxval}")));
    }
    let start = h.end()?;
    let n = width * height * 3;
    let body = bytes.get(start..start + n).ok_or_else(|| {
        Error::parse(path, bytes.len(), format!("pixel data truncated, need {n} bytes after offset {start}"))
    })?;
    Image::new(width, height, 3, body.iter().map(|&b| b as f32 / 255.0).collect())
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(path, &bytes)
}

/// Grayscale PFM (`Pf`, little-endian, scale -1.0), rows stored bottom to top.
pub fn encode_pfm(map: &FloatMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    for row in map.data.chunks_exact(map.width.max(1)).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(path: &Path, map: &FloatMap) -> Result<()> {
    fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

pub fn decode_pfm(path: &Path, bytes: &[u8]) -> Result<FloatMap> {
    let mut h = Header { bytes, pos: 0, path };
    h.magic("Pf")?;
    let width: usize = h.number("width")?;
    let height: usize = h.number("height")?;
    h.skip_space();
    let at = h.pos;
    let scale: f64 = h.number("scale")?;
    if scale >= 0.0 {
        return Err(Error::parse(path, at, "only little-endian PFM (negative scale) is supported"));
    }
    let start = h.end()?;
    let n = width * height;
    let body = bytes
        .get(start..start + 4 * n)
        .ok_or_else(|| Error::parse(path, bytes.len(), format!("float data truncated, need {} bytes", 4 * n)))?;
    let mut data = vec![0.0f32; n];
    for (i, c) in body.chunks_exact(4).enumerate() {
        let (row, col) = (height - 1 - i / width, i % width);
        data[row * width + col] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    }
    Ok(FloatMap { width, height, data })
}

pub fn read_pfm(path: &Path) -> Result<FloatMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Image {
        let data = (0..4 * 3 * 3).map(|i| i as f32 / 35.0).collect();
        Image::new(4, 3, 3, data).unwrap()
    }

    #[test]
    fn ppm_header_is_exact() {
        let bytes = encode_ppm(&sample()).unwrap();
        assert!(bytes.starts_with(b"P6\n4 3\n255\n"));
        assert_eq!(bytes.len(), 11 + 36);
    }

    #[test]
    fn ppm_round_trip_within_quantization() {
        let img = sample();
        let back = decode_ppm(Path::new("x.ppm"), &encode_ppm(&img).unwrap()).unwrap();
        assert!(back.same_dims(&img));
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        let again = encode_ppm(&back).unwrap();
        assert_eq!(again, encode_ppm(&img).unwrap());
    }

    #[test]
    fn ppm_rejects_other_maxval() {
        let mut bytes = b"P6\n1 1\n65535\n".to_vec();
        bytes.extend([0u8; 6]);
        match decode_ppm(Path::new("bad.ppm"), &bytes) {
            Err(Error::Parse { offset, path, .. }) => {
                assert_eq!(offset, 7);
                assert_eq!(path, Path::new("bad.ppm"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ppm_rejects_wrong_magic() {
        assert!(matches!(
            decode_ppm(Path::new("a"), b"P3\n1 1\n255\n000"),
            Err(Error::Parse { offset: 0, .. })
        ));
    }

    #[test]
    fn pfm_round_trip_is_exact_and_bottom_up() {
        let map = FloatMap {
            width: 2,
            height: 2,
            data: vec![1.0, 2.0, 3.0, 4.5],
        };
        let bytes = encode_pfm(&map);
        assert!(bytes.starts_with(b"Pf\n2 2\n-1.0\n"));
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, 3.0);
        assert_eq!(decode_pfm(Path::new("d.pfm"), &bytes).unwrap(), map);
    }
}
