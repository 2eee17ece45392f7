//! PGM images, mask images and the text histogram format.
//!
//! Histogram files look like
//!
//! ```text
//! k 3
//! 0 0.25
//! 0.5 0.5
//! 1 0.25
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use restore_core::{Histogram, Image, LevelGrid};

use crate::error::{CliError, CliResult};

/// Maxval used for every written PGM.
pub const WRITE_MAXVAL: u32 = 65535;
/// Allowed distance between a level in a histogram file and the grid.
pub const LEVEL_TOL: f64 = 1e-9;
/// Allowed deviation of histogram file masses from a unit sum.
pub const MASS_TOL: f64 = 1e-6;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn skip_space(&mut self) {
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

    fn token(&mut self) -> CliResult<(usize, &'a str)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(CliError::parse(self.path, start, "unexpected end of file"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| CliError::parse(self.path, start, "non-ASCII header token"))?;
        Ok((start, text))
    }

    fn number(&mut self, what: &str) -> CliResult<u32> {
        let (at, text) = self.token()?;
        text.parse()
            .map_err(|_| CliError::parse(self.path, at, format!("expected {what}, found {text:?}")))
    }
}

/// Parses PGM bytes (`P2` or `P5`, maxval up to 65535).
pub fn parse_pgm(bytes: &[u8], path: &Path) -> CliResult<Image> {
    let mut cur = Cursor { bytes, pos: 0, path };
    let (at, magic) = cur.token()?;
    let binary = match magic {
        "P5" => true,
        "P2" => false,
        other => return Err(CliError::parse(path, at, format!("unsupported magic {other:?}"))),
    };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let header_end = cur.pos;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(CliError::parse(path, header_end, "empty image"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(CliError::parse(path, header_end, format!("maxval {maxval} out of range")));
    }
    let n = width * height;
    let mut raw = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = cur.pos + 1;
        let wide = maxval > 255;
        let need = n * if wide { 2 } else { 1 };
        if bytes.len() < start + need {
            return Err(CliError::parse(
                path,
                bytes.len(),
                format!("raster truncated: need {need} bytes after offset {start}"),
            ));
        }
        let data = &bytes[start..start + need];
        if wide {
            raw.extend(data.chunks_exact(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]]))));
        } else {
            raw.extend(data.iter().map(|&b| u32::from(b)));
        }
    } else {
        for _ in 0..n {
            raw.push(cur.number("sample")?);
        }
    }
    if let Some(i) = raw.iter().position(|&v| v > maxval) {
        return Err(CliError::parse(path, header_end, format!("sample {i} exceeds maxval {maxval}")));
    }
    let scale = f64::from(maxval);
    Ok(Image::new(width, height, raw.iter().map(|&v| f64::from(v) / scale).collect())?)
}

/// Binary PGM with 16-bit samples.
pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), WRITE_MAXVAL).into_bytes();
    let scale = f64::from(WRITE_MAXVAL);
    for &v in image.data() {
        let q = (v * scale).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn read_image(path: &Path) -> CliResult<Image> {
    if is_png(path) {
        return read_png(path);
    }
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_pgm(&bytes, path)
}

pub fn write_image(path: &Path, image: &Image) -> CliResult<()> {
    if is_png(path) {
        return write_png(path, image);
    }
    fs::write(path, encode_pgm(image)).map_err(|e| CliError::io(path, e))
}

#[cfg(feature = "png")]
fn read_png(path: &Path) -> CliResult<Image> {
    let img = image::open(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .into_luma16();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| f64::from(p.0[0]) / 65535.0).collect();
    Ok(Image::new(w as usize, h as usize, data)?)
}

#[cfg(feature = "png")]
fn write_png(path: &Path, image: &Image) -> CliResult<()> {
    let data: Vec<u16> = image.data().iter().map(|&v| (v * 65535.0).round() as u16).collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        image.width() as u32,
        image.height() as u32,
        data,
    )
    .expect("buffer length matches dimensions");
    buf.save(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[cfg(not(feature = "png"))]
fn read_png(path: &Path) -> CliResult<Image> {
    Err(CliError::Input(format!(
        "{}: PNG support is disabled (build with --features png)",
        path.display()
    )))
}

#[cfg(not(feature = "png"))]
fn write_png(path: &Path, _image: &Image) -> CliResult<()> {
    read_png(path).map(|_| ())
}

/// Reads a mask image; pixels brighter than one half are unknown.
pub fn read_mask(path: &Path) -> CliResult<(usize, usize, Vec<bool>)> {
    let img = read_image(path)?;
    let mask = img.data().iter().map(|&v| v > 0.5).collect();
    Ok((img.width(), img.height(), mask))
}

pub fn mask_image(width: usize, height: usize, mask: &[bool]) -> Image {
    Image::new(width, height, mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect())
        .expect("mask values are 0 or 1")
}

pub fn format_histogram(h: &Histogram) -> String {
    let grid = h.grid();
    let mut out = format!("k {}\n", grid.k());
    for (i, m) in h.mass().iter().enumerate() {
        writeln!(out, "{} {}", grid.level(i), m).expect("writing to a String");
    }
    out
}

/// Parses the text histogram format. Masses must sum to one within
/// [`MASS_TOL`] and are then renormalized exactly.
pub fn parse_histogram(text: &str, path: &Path) -> CliResult<Histogram> {
    let mut lines = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            lines.push((offset, trimmed));
        }
        offset += line.len();
    }
    let Some(&(at, header)) = lines.first() else {
        return Err(CliError::parse(path, 0, "empty histogram file"));
    };
    let k: usize = header
        .strip_prefix("k ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| CliError::parse(path, at, format!("expected `k <int>`, found {header:?}")))?;
    let grid = LevelGrid::new(k).map_err(|e| CliError::parse(path, at, e.to_string()))?;
    if lines.len() != k + 1 {
        return Err(CliError::parse(
            path,
            text.len(),
            format!("expected {k} level lines, found {}", lines.len() - 1),
        ));
    }
    let mut mass = Vec::with_capacity(k);
    for (i, &(at, line)) in lines[1..].iter().enumerate() {
        let mut parts = line.split_whitespace();
        let (Some(level), Some(m), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(CliError::parse(path, at, format!("expected `<level> <mass>`, found {line:?}")));
        };
        let level: f64 = level
            .parse()
            .map_err(|_| CliError::parse(path, at, format!("bad level {level:?}")))?;
        let m: f64 = m
            .parse()
            .map_err(|_| CliError::parse(path, at, format!("bad mass {m:?}")))?;
        if (level - grid.level(i)).abs() > LEVEL_TOL {
            return Err(CliError::parse(
                path,
                at,
                format!("level {level} does not match grid level {}", grid.level(i)),
            ));
        }
        if !(m >= 0.0) || !m.is_finite() {
            return Err(CliError::parse(path, at, format!("mass {m} is negative")));
        }
        mass.push(m);
    }
    let total: f64 = mass.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(CliError::parse(path, text.len(), format!("masses sum to {total}, not 1")));
    }
    Ok(Histogram::normalized(grid, mass)?)
}

pub fn read_histogram(path: &Path) -> CliResult<Histogram> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_histogram(&text, path)
}

pub fn write_histogram(path: &Path, h: &Histogram) -> CliResult<()> {
    fs::write(path, format_histogram(h)).map_err(|e| CliError::io(path, e))
}
