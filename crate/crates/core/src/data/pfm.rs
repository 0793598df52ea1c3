//! Portable float map codec. Scanlines are stored bottom row first; a
//! negative scale marks little-endian samples.

use super::DataError;

/// Decoded PFM: `channels` is 1 (`Pf`) or 3 (`PF`); `data` is row-major,
/// top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn encode_pfm(map: &FloatMap) -> Vec<u8> {
    let tag = if map.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    let row = map.width * map.channels;
    out.reserve(map.data.len() * 4);
    for v in (0..map.height).rev() {
        for x in &map.data[v * row..(v + 1) * row] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok().filter(|s| !s.is_empty())
}

pub fn decode_pfm(bytes: &[u8]) -> Result<FloatMap, DataError> {
    let bad = |msg: &str| DataError::Format(format!("pfm: {msg}"));
    let mut pos = 0;
    let channels = match next_token(bytes, &mut pos) {
        Some("Pf") => 1,
        Some("PF") => 3,
        _ => return Err(bad("missing Pf/PF header")),
    };
    let mut number = |what: &str| next_token(bytes, &mut pos).ok_or_else(|| bad(what)).map(str::to_owned);
    let width: usize = number("width")?.parse().map_err(|_| bad("width"))?;
    let height: usize = number("height")?.parse().map_err(|_| bad("height"))?;
    let scale: f64 = number("scale")?.parse().map_err(|_| bad("scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("zero scale"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    pos += 1;
    let row = width * channels;
    let need = row * height * 4;
    let body = bytes.get(pos..).filter(|b| b.len() >= need).ok_or_else(|| bad("truncated samples"))?;
    let little = scale < 0.0;
    let mut data = vec![0.0f32; row * height];
    for (i, chunk) in body[..need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let value = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (stored_row, col) = (i / row, i % row);
        data[(height - 1 - stored_row) * row + col] = value;
    }
    Ok(FloatMap {
        width,
        height,
        channels,
        data,
    })
}
