//! Portable float map (PFM) codec.
//!
//! Header: `PF` (three channels) or `Pf` (one channel), then `width height`,
//! then a scale whose sign gives the byte order (negative = little-endian).
//! Rows are stored bottom-to-top. Files are always written little-endian
//! with scale `-1.0`.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded PFM payload with rows in top-to-bottom order.
#[derive(Debug, Clone, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn encode(&self, out: &mut impl Write) -> std::io::Result<()> {
        let tag = if self.channels == 3 { "PF" } else { "Pf" };
        write!(out, "{tag}\n{} {}\n-1.0\n", self.width, self.height)?;
        let row_len = self.width * self.channels;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for row in self.data.chunks_exact(row_len).rev() {
            for v in row {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)
    }

    pub fn decode(input: &mut impl BufRead) -> std::result::Result<Self, String> {
        let mut tokens = Vec::with_capacity(4);
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            let n = input.read_line(&mut line).map_err(|e| e.to_string())?;
            if n == 0 {
                return Err("truncated header".into());
            }
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        if tokens.len() != 4 {
            return Err("malformed header".into());
        }
        let channels = match tokens[0].as_str() {
            "PF" => 3,
            "Pf" => 1,
            other => return Err(format!("bad magic '{other}'")),
        };
        let width: usize = tokens[1].parse().map_err(|_| format!("bad width '{}'", tokens[1]))?;
        let height: usize = tokens[2].parse().map_err(|_| format!("bad height '{}'", tokens[2]))?;
        let scale: f32 = tokens[3].parse().map_err(|_| format!("bad scale '{}'", tokens[3]))?;
        if width == 0 || height == 0 {
            return Err("zero-sized image".into());
        }
        if scale == 0.0 || !scale.is_finite() {
            return Err(format!("invalid scale {scale}"));
        }
        let little = scale < 0.0;

        let count = width * height * channels;
        let mut raw = vec![0u8; count * 4];
        input
            .read_exact(&mut raw)
            .map_err(|_| format!("expected {} bytes of samples", count * 4))?;
        let mut samples: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| {
                let b = [b[0], b[1], b[2], b[3]];
                if little {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                }
            })
            .collect();

        let row_len = width * channels;
        let mut data = Vec::with_capacity(count);
        for row in samples.chunks_exact_mut(row_len).rev() {
            data.extend_from_slice(row);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);
    Pfm::decode(&mut reader).map_err(|m| Error::format(path, m))
}

pub fn write_pfm(path: &Path, pfm: &Pfm) -> Result<()> {
    let mut buf = Vec::new();
    pfm.encode(&mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
