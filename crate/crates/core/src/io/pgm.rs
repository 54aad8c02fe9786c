//! Binary PGM (P5) for 16-bit depth and 8-bit masks.

use std::path::Path;

use crate::error::{Location, ParseError, ParseErrorKind, Result};
use crate::geometry::Grid;

fn header(width: usize, height: usize, maxval: u32) -> Vec<u8> {
    format!("P5\n{width} {height}\n{maxval}\n").into_bytes()
}

pub fn encode_u16(grid: &Grid<u16>) -> Vec<u8> {
    let mut out = header(grid.width(), grid.height(), 65535);
    out.reserve(grid.as_slice().len() * 2);
    for v in grid.as_slice() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn encode_u8(grid: &Grid<u8>) -> Vec<u8> {
    let mut out = header(grid.width(), grid.height(), 255);
    out.extend_from_slice(grid.as_slice());
    out
}

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8], file: &Path) -> Result<Header, ParseError> {
    let err = |at: usize, kind, msg: String| ParseError::new(file, Location::Byte(at as u64), kind, msg);
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err(
            0,
            ParseErrorKind::MalformedHeader,
            "missing P5 magic number".into(),
        ));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (i, name) in ["width", "height", "maxval"].into_iter().enumerate() {
        // Whitespace and comments up to the next token.
        let mut saw_space = false;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => {
                    saw_space = true;
                    pos += 1;
                }
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => {
                    return Err(err(
                        pos,
                        ParseErrorKind::Truncated,
                        format!("header ends before {name}"),
                    ))
                }
            }
        }
        if !saw_space {
            return Err(err(
                pos,
                ParseErrorKind::MalformedHeader,
                format!("expected whitespace before {name}"),
            ));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let token = std::str::from_utf8(&bytes[start..pos]).unwrap_or_default();
        fields[i] = token.parse().map_err(|_| {
            err(
                start,
                ParseErrorKind::MalformedHeader,
                format!("{name} is not a decimal number"),
            )
        })?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        Some(_) => {
            return Err(err(
                pos,
                ParseErrorKind::MalformedHeader,
                "maxval must be followed by one whitespace byte".into(),
            ))
        }
        None => return Err(err(pos, ParseErrorKind::Truncated, "header ends after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || width > 1 << 16 || height > 1 << 16 {
        return Err(err(
            0,
            ParseErrorKind::MalformedHeader,
            format!("unsupported size {width}x{height}"),
        ));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval: maxval.min(u64::from(u32::MAX)) as u32,
        data_start: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, sample_bytes: usize, file: &Path) -> Result<&'a [u8], ParseError> {
    let need = h.width * h.height * sample_bytes;
    let have = bytes.len() - h.data_start;
    if have < need {
        return Err(ParseError::new(
            file,
            Location::Byte(bytes.len() as u64),
            ParseErrorKind::Truncated,
            format!("expected {need} payload bytes, found {have}"),
        ));
    }
    if have > need {
        return Err(ParseError::new(
            file,
            Location::Byte((h.data_start + need) as u64),
            ParseErrorKind::MalformedHeader,
            format!("{} trailing bytes after the payload", have - need),
        ));
    }
    Ok(&bytes[h.data_start..])
}

fn check_maxval(h: &Header, want: u32, file: &Path) -> Result<(), ParseError> {
    if h.maxval != want {
        return Err(ParseError::new(
            file,
            Location::File,
            ParseErrorKind::MalformedHeader,
            format!("maxval {} where {want} is required", h.maxval),
        ));
    }
    Ok(())
}

/// Decodes a P5 image with maxval 65535 (big-endian samples).
pub fn decode_u16(bytes: &[u8], file: &Path) -> Result<Grid<u16>, ParseError> {
    let h = parse_header(bytes, file)?;
    check_maxval(&h, 65535, file)?;
    let data = payload(bytes, &h, 2, file)?;
    let values = data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok(Grid::from_vec(h.width, h.height, values).expect("size checked"))
}

/// Decodes a P5 image with maxval 255.
pub fn decode_u8(bytes: &[u8], file: &Path) -> Result<Grid<u8>, ParseError> {
    let h = parse_header(bytes, file)?;
    check_maxval(&h, 255, file)?;
    let data = payload(bytes, &h, 1, file)?;
    Ok(Grid::from_vec(h.width, h.height, data.to_vec()).expect("size checked"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("x.pgm")
    }

    #[test]
    fn round_trips() {
        let g = Grid::from_vec(3, 2, vec![0u16, 1, 256, 65535, 4660, 7]).unwrap();
        let bytes = encode_u16(&g);
        assert_eq!(&bytes[..15], b"P5\n3 2\n65535\n\x00\x00");
        // 0x1234 is stored high byte first.
        assert_eq!(&bytes[21..23], &[0x12, 0x34]);
        assert_eq!(decode_u16(&bytes, p()).unwrap(), g);
        let m = Grid::from_vec(2, 2, vec![0u8, 3, 255, 1]).unwrap();
        assert_eq!(decode_u8(&encode_u8(&m), p()).unwrap(), m);
    }

    #[test]
    fn accepts_comments_in_header() {
        let bytes = b"P5\n# made by hand\n2 1 # size\n255\n\x01\x02";
        assert_eq!(decode_u8(bytes, p()).unwrap().as_slice(), &[1, 2]);
    }

    #[test]
    fn errors_are_classified() {
        let kind = |r: Result<Grid<u16>, ParseError>| r.unwrap_err().kind;
        assert_eq!(
            kind(decode_u16(b"P2\n1 1\n65535\n00", p())),
            ParseErrorKind::MalformedHeader
        );
        assert_eq!(
            kind(decode_u16(b"P5\n1 1\n255\n\x00\x00", p())),
            ParseErrorKind::MalformedHeader
        );
        assert_eq!(
            kind(decode_u16(b"P5\n1 1\n65535\n\x00", p())),
            ParseErrorKind::Truncated
        );
        assert_eq!(kind(decode_u16(b"P5\n1 1", p())), ParseErrorKind::Truncated);
        assert_eq!(
            kind(decode_u16(b"P5\nx 1\n65535\n\x00\x00", p())),
            ParseErrorKind::MalformedHeader
        );
        let e = decode_u16(b"P5\n2 2\n65535\n\x00\x00", p()).unwrap_err();
        assert_eq!(e.location, Location::Byte(15));
    }
}
