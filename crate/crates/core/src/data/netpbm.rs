//! Binary PGM (`P5`) and PPM (`P6`) images with maxval 255.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Row-major, interleaved channels.
    pub pixels: Vec<u8>,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format(format!("netpbm header: missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("netpbm header: bad {what}")))
}

pub fn parse_netpbm(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < 2 {
        return Err(Error::Format("netpbm: file too short".into()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(Error::Format(format!(
                "netpbm: unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("netpbm: maxval {maxval} is not 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("netpbm: zero image extent".into()));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Format("netpbm: header not terminated by whitespace".into()));
    }
    pos += 1;
    let need = width * height * channels;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Format(format!("netpbm: expected {need} raster bytes")))?;
    Ok(Raster {
        width,
        height,
        channels,
        pixels: raster.to_vec(),
    })
}

pub fn encode_netpbm(r: &Raster) -> Result<Vec<u8>> {
    let magic = match r.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Format(format!("netpbm cannot store {c} channels"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", r.width, r.height).into_bytes();
    out.extend_from_slice(&r.pixels);
    Ok(out)
}
