//! Netpbm grayscale I/O (P5 binary and P2 ASCII, 8-bit and 16-bit) and frame
//! directory handling.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// `frame_000042.pgm`.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::InvalidInput(format!("{}: {msg}", path.display()))
}

struct Header<'a> {
    rest: &'a [u8],
}

impl<'a> Header<'a> {
    fn skip_space(&mut self) {
        loop {
            while let [c, tail @ ..] = self.rest {
                if c.is_ascii_whitespace() {
                    self.rest = tail;
                } else {
                    break;
                }
            }
            if let [b'#', ..] = self.rest {
                let end = self
                    .rest
                    .iter()
                    .position(|&c| c == b'\n')
                    .unwrap_or(self.rest.len());
                self.rest = &self.rest[end..];
            } else {
                return;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space();
        let len = self.rest.iter().take_while(|c| c.is_ascii_digit()).count();
        if len == 0 {
            return None;
        }
        let text = std::str::from_utf8(&self.rest[..len]).ok()?;
        self.rest = &self.rest[len..];
        text.parse().ok()
    }
}

/// Parses a grayscale PGM held in memory. Values keep their raw scale, so
/// 8-bit files land in `[0, 255]`. Color formats are rejected.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Frame> {
    let magic = bytes.get(..2).ok_or_else(|| bad(path, "file too short"))?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        b"P6" | b"P3" => {
            return Err(bad(
                path,
                "color images are not supported; convert to grayscale",
            ))
        }
        _ => return Err(bad(path, "not a PGM file")),
    };
    let mut header = Header { rest: &bytes[2..] };
    let width = header.number().ok_or_else(|| bad(path, "missing width"))?;
    let height = header.number().ok_or_else(|| bad(path, "missing height"))?;
    let maxval = header.number().ok_or_else(|| bad(path, "missing maxval"))?;
    if width == 0 || height == 0 {
        return Err(bad(path, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(bad(path, format!("unsupported maxval {maxval}")));
    }
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let raster = header
            .rest
            .get(1..)
            .ok_or_else(|| bad(path, "missing raster"))?;
        let bpp = if maxval < 256 { 1 } else { 2 };
        if raster.len() < n * bpp {
            return Err(bad(path, "truncated raster"));
        }
        if bpp == 1 {
            data.extend(raster[..n].iter().map(|&b| b as f64));
        } else {
            data.extend(
                raster[..2 * n]
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64),
            );
        }
    } else {
        for _ in 0..n {
            let v = header
                .number()
                .ok_or_else(|| bad(path, "truncated raster"))?;
            data.push(v as f64);
        }
    }
    if data.iter().any(|&v| v > maxval as f64) {
        return Err(bad(path, "sample exceeds maxval"));
    }
    Frame::from_vec(width, height, data)
}

pub fn read_pgm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

/// Encodes as binary 8-bit P5, rounding and clamping to `[0, 255]`.
pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(
        frame
            .data()
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8),
    );
    out
}

pub fn write_pgm(path: &Path, frame: &Frame) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_pgm(frame))
        .map_err(|e| Error::io(path, e))
}

/// All `*.pgm` files in `dir`, sorted lexicographically by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_pgm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        if is_pgm && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no .pgm frames found",
            dir.display()
        )));
    }
    Ok(files)
}

/// Maps a signed response map onto 8 bits: `pixel = round(v · scale)`,
/// `scale = 255 / max|v|`, negative values clamp to 0. Returns the scale
/// (0 for an all-zero map).
pub fn rescale_for_display(map: &Frame) -> (Frame, f64) {
    let peak = map.max_abs();
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    (map.map(|v| (v * scale).round().clamp(0.0, 255.0)), scale)
}

/// Writes the rescaled map as PGM plus a `<name>.scale` text file holding the
/// multiplier that was applied.
pub fn write_response_map(path: &Path, map: &Frame) -> Result<()> {
    let (img, scale) = rescale_for_display(map);
    write_pgm(path, &img)?;
    let sidecar = path.with_extension("scale");
    fs::write(&sidecar, format!("{scale:.9e}\n")).map_err(|e| Error::io(&sidecar, e))
}
