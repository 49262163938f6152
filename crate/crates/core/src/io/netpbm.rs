//! Binary NetPBM: P6 (RGB) and P5 (grey), 8- or 16-bit, samples big-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmKind {
    /// P5
    Gray,
    /// P6
    Rgb,
}

impl PnmKind {
    fn channels(self) -> usize {
        match self {
            PnmKind::Gray => 1,
            PnmKind::Rgb => 3,
        }
    }

    fn magic(self) -> &'static str {
        match self {
            PnmKind::Gray => "P5",
            PnmKind::Rgb => "P6",
        }
    }
}

/// A decoded image; `samples` is row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated NetPBM header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Format("non-ASCII NetPBM header".into()))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Format(format!("bad NetPBM {what}: {tok:?}")))
    }
}

pub fn decode(bytes: &[u8], expected: PnmKind) -> Result<Pnm> {
    let mut h = Header { bytes, pos: 0 };
    let magic = h.token()?;
    if magic != expected.magic() {
        return Err(Error::Format(format!(
            "expected {} image, found magic {magic:?}",
            expected.magic()
        )));
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!(
            "invalid NetPBM geometry {width}x{height} maxval {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = h.pos + 1;
    let wide = maxval > 255;
    let count = width * height * expected.channels();
    let need = count * if wide { 2 } else { 1 };
    let raster = bytes.get(start..).unwrap_or_default();
    if raster.len() < need {
        return Err(Error::Format(format!(
            "NetPBM raster truncated: {} of {need} bytes",
            raster.len()
        )));
    }
    let samples = if wide {
        raster[..need]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    } else {
        raster[..need].iter().map(|&b| b as u16).collect()
    };
    Ok(Pnm {
        kind: expected,
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode(img: &Pnm) -> Vec<u8> {
    let mut out = format!("{}\n{} {}\n{}\n", img.kind.magic(), img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        for s in &img.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(img.samples.iter().map(|&s| s as u8));
    }
    out
}

pub fn read(path: &Path, kind: PnmKind) -> Result<Pnm> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode(&bytes, kind).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, img: &Pnm) -> Result<()> {
    fs::write(path, encode(img)).map_err(|e| Error::file(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_bit_gray_is_big_endian() {
        let img = Pnm {
            kind: PnmKind::Gray,
            width: 2,
            height: 1,
            maxval: 65535,
            samples: vec![1500, 258],
        };
        let bytes = encode(&img);
        assert!(bytes.starts_with(b"P5\n2 1\n65535\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0x05, 0xDC, 0x01, 0x02]);
        assert_eq!(decode(&bytes, PnmKind::Gray).unwrap(), img);
    }

    #[test]
    fn header_comments_and_magic_check() {
        let bytes = b"P6 # rgb\n# size next\n1 1\n255\n\x01\x02\x03";
        let img = decode(bytes, PnmKind::Rgb).unwrap();
        assert_eq!(img.samples, vec![1, 2, 3]);
        assert!(matches!(decode(bytes, PnmKind::Gray), Err(Error::Format(_))));
        assert!(matches!(
            decode(b"P6\n2 2\n255\n\x00", PnmKind::Rgb),
            Err(Error::Format(_))
        ));
    }
}
