//! Binary PPM (P6) and PGM (P5) writers, 8 bits per sample.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::networks::VideoClip;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn to_byte(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Encodes a `(3, H, W)` frame in [−1, 1] as P6.
pub fn encode_ppm<T: Scalar>(frame: &Tensor<T>) -> Result<Vec<u8>> {
    let s = frame.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape("encode_ppm", s, &[3, 0, 0]));
    }
    let (h, w) = (s[1], s[2]);
    let d = frame.data();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for p in 0..h * w {
        for c in 0..3 {
            out.push(to_byte(d[c * h * w + p].as_f64()));
        }
    }
    Ok(out)
}

/// Encodes an `(H, W)` map as P5, min-max normalised; a constant map is mid-grey.
pub fn encode_pgm<T: Scalar>(map: &Tensor<T>) -> Result<Vec<u8>> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::shape("encode_pgm", s, &[0, 0]));
    }
    let v: Vec<f64> = map.data().iter().map(|x| x.as_f64()).collect();
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(v.iter().map(|&x| {
        if hi > lo {
            ((x - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            128
        }
    }));
    Ok(out)
}

/// Parses a P6 image back into `(width, height, rgb bytes)`.
pub fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = || Error::Invalid("malformed PPM".into());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let data = bytes.get(pos + 1..).ok_or_else(bad)?;
    if data.len() != 3 * w * h {
        return Err(bad());
    }
    Ok((w, h, data.to_vec()))
}

/// Writes `frame_%06d.ppm` for every frame of the clip; returns the paths.
pub fn write_clip<T: Scalar>(clip: &VideoClip<T>, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    (0..clip.len())
        .map(|i| {
            let path = dir.join(format!("frame_{i:06}.ppm"));
            write(&path, &encode_ppm(&clip.frame(i)?)?)?;
            Ok(path)
        })
        .collect()
}

pub fn write_pgm<T: Scalar>(map: &Tensor<T>, path: &Path) -> Result<()> {
    write(path, &encode_pgm(map)?)
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Tiles frame `i` of every clip into one `(3, rows·H, cols·W)` image.
pub fn tile_frame<T: Scalar>(grid: &[Vec<VideoClip<T>>], i: usize) -> Result<Tensor<T>> {
    let first = grid.first().and_then(|r| r.first()).ok_or_else(|| Error::Invalid("empty grid".into()))?;
    let s = first.frames.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let (rows, cols) = (grid.len(), grid[0].len());
    let (th, tw) = (rows * h, cols * w);
    let mut out = vec![T::zero(); c * th * tw];
    for (r, row) in grid.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Invalid("ragged grid".into()));
        }
        for (q, clip) in row.iter().enumerate() {
            let f = clip.frame(i)?;
            let d = f.data();
            for ch in 0..c {
                for y in 0..h {
                    let src = &d[(ch * h + y) * w..(ch * h + y + 1) * w];
                    let dst = (ch * th + r * h + y) * tw + q * w;
                    out[dst..dst + w].copy_from_slice(src);
                }
            }
        }
    }
    Tensor::new(vec![c, th, tw], out)
}

/// Writes the tiled grid as a `frame_%06d.ppm` sequence.
pub fn write_grid<T: Scalar>(grid: &[Vec<VideoClip<T>>], dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let n = grid.first().and_then(|r| r.first()).map_or(0, |c| c.len());
    (0..n)
        .map(|i| {
            let path = dir.join(format!("frame_{i:06}.ppm"));
            write(&path, &encode_ppm(&tile_frame(grid, i)?)?)?;
            Ok(path)
        })
        .collect()
}
