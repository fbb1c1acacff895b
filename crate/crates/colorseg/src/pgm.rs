//! Binary PGM (P5) reading and writing, 8-bit and 16-bit.
//!
//! This is the interchange format for images and label maps: trivial to
//! parse anywhere and bit-exact. 16-bit samples are big-endian on disk, as
//! the format requires. Headers may carry `#` comments between tokens.

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PgmData {
    Eight(Vec<u8>),
    Sixteen(Vec<u16>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub data: PgmData,
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(CliError::Shape(format!(
            "{}x{width} PGM needs {} samples, got {}",
            height,
            width * height,
            data.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(data);
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_pgm16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    if data.len() != width * height {
        return Err(CliError::Shape(format!(
            "{}x{width} PGM needs {} samples, got {}",
            height,
            width * height,
            data.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n65535\n").into_bytes();
    bytes.reserve(data.len() * 2);
    for &v in data {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    if *pos >= bytes.len() {
        return None;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    Some(bytes[start..*pos].to_vec())
}

fn parse_dim(token: Option<Vec<u8>>, what: &str, path: &Path) -> Result<usize> {
    let t = token.ok_or_else(|| {
        CliError::Format(format!("{}: header ended before {what}", path.display()))
    })?;
    std::str::from_utf8(&t)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| CliError::Format(format!("{}: bad {what} in header", path.display())))
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut pos = 0usize;
    let magic = next_token(&bytes, &mut pos);
    if magic.as_deref() != Some(b"P5") {
        return Err(CliError::Format(format!(
            "{}: not a binary PGM (P5) file",
            path.display()
        )));
    }
    let width = parse_dim(next_token(&bytes, &mut pos), "width", path)?;
    let height = parse_dim(next_token(&bytes, &mut pos), "height", path)?;
    let maxval = parse_dim(next_token(&bytes, &mut pos), "maxval", path)?;
    if width == 0 || height == 0 {
        return Err(CliError::Format(format!(
            "{}: zero image dimension",
            path.display()
        )));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| CliError::Format(format!("{}: dimension overflow", path.display())))?;
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(CliError::Format(format!(
            "{}: missing sample separator",
            path.display()
        )));
    }
    pos += 1;
    let body = &bytes[pos..];
    let data = match maxval {
        1..=255 => {
            if body.len() != n {
                return Err(CliError::Format(format!(
                    "{}: expected {n} samples, file holds {}",
                    path.display(),
                    body.len()
                )));
            }
            PgmData::Eight(body.to_vec())
        }
        256..=65535 => {
            if body.len() != 2 * n {
                return Err(CliError::Format(format!(
                    "{}: expected {} bytes of 16-bit samples, file holds {}",
                    path.display(),
                    2 * n,
                    body.len()
                )));
            }
            PgmData::Sixteen(
                body.chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]))
                    .collect(),
            )
        }
        _ => {
            return Err(CliError::Format(format!(
                "{}: maxval {maxval} out of range",
                path.display()
            )))
        }
    };
    Ok(Pgm {
        width,
        height,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use colorseg_core::rng::Rng;
    use tempfile::tempdir;

    #[test]
    fn eight_bit_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let mut rng = Rng::new(1);
        let data: Vec<u8> = (0..35).map(|_| rng.below(256) as u8).collect();
        write_pgm8(&path, 7, 5, &data).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.width, 7);
        assert_eq!(back.height, 5);
        assert_eq!(back.data, PgmData::Eight(data));
    }

    #[test]
    fn sixteen_bit_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.pgm");
        let mut rng = Rng::new(2);
        let data: Vec<u16> = (0..24).map(|_| rng.below(65536) as u16).collect();
        write_pgm16(&path, 4, 6, &data).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back.data, PgmData::Sixteen(data));
        // And the bytes on disk are big-endian: re-read manually.
        let bytes = std::fs::read(&path).unwrap();
        let body = &bytes[bytes.len() - 48..];
        let first = u16::from_be_bytes([body[0], body[1]]);
        match back.data {
            PgmData::Sixteen(v) => assert_eq!(v[0], first),
            _ => unreachable!(),
        }
    }

    #[test]
    fn comments_in_headers_are_skipped() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        std::fs::write(&path, b"P5 # magic\n# a comment line\n2 # width\n2\n255\n\x01\x02\x03\x04").unwrap();
        let pgm = read_pgm(&path).unwrap();
        assert_eq!((pgm.width, pgm.height), (2, 2));
        assert_eq!(pgm.data, PgmData::Eight(vec![1, 2, 3, 4]));
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempdir().unwrap();
        let bad = |name: &str, bytes: &[u8]| {
            let path = dir.path().join(name);
            std::fs::write(&path, bytes).unwrap();
            let err = read_pgm(&path).unwrap_err();
            assert!(matches!(err, CliError::Format(_)), "{name}: {err}");
        };
        bad("magic.pgm", b"P6\n2 2\n255\n\x00\x00\x00\x00");
        bad("truncated.pgm", b"P5\n2 2\n255\n\x00\x00");
        bad("overlong.pgm", b"P5\n2 2\n255\n\x00\x00\x00\x00\x00");
        bad("maxval.pgm", b"P5\n2 2\n70000\n\x00\x00\x00\x00");
        bad("nowidth.pgm", b"P5\n");
        bad("zerodim.pgm", b"P5\n0 2\n255\n");
    }

    #[test]
    fn wrong_sample_count_is_a_shape_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        let err = write_pgm8(&path, 3, 3, &[0u8; 4]).unwrap_err();
        assert!(matches!(err, CliError::Shape(_)));
    }
}
