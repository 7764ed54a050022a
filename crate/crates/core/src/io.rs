//! Reading pictures and writing reports.
//!
//! Grayscale input comes as PGM (ASCII `P2` or binary `P5`, any maxval up to
//! 65535) or as a CSV of comma-separated reals, one image row per line. PGM
//! samples map to `s / maxval`, or `1 - s / maxval` with `invert`, so that
//! black objects end up near 1.
//!
//! Reports are canonical JSON: keys sorted, two-space indentation, trailing
//! newline. Every file is written to a temporary sibling and renamed into
//! place.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::cluster::ClusterLabeling;
use crate::error::{Error, Result};
use crate::experiment::RunRecord;
use crate::lattice::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    FloatCsv,
}

impl ImageFormat {
    /// Guesses the format from the file extension; anything but `.csv` and
    /// `.txt` is treated as PGM.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "csv" || ext == "txt" => ImageFormat::FloatCsv,
            _ => ImageFormat::Pgm,
        }
    }
}

impl std::str::FromStr for ImageFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pgm" => Ok(ImageFormat::Pgm),
            "float-csv" | "csv" => Ok(ImageFormat::FloatCsv),
            other => Err(format!("unknown image format {other:?}, expected pgm or float-csv")),
        }
    }
}

pub fn read_image(path: impl AsRef<Path>, format: ImageFormat, invert: bool) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let parsed = match format {
        ImageFormat::Pgm => parse_pgm(&bytes, invert),
        ImageFormat::FloatCsv => std::str::from_utf8(&bytes)
            .map_err(|e| format!("not UTF-8: {e}"))
            .and_then(parse_float_csv),
    };
    parsed.map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmCursor<'a> {
    fn line(&self) -> usize {
        1 + self.bytes[..self.pos.min(self.bytes.len())]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
    }

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

    fn token(&mut self, what: &str) -> std::result::Result<&'a [u8], String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#' {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("line {}: unexpected end of file, expected {what}", self.line()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, String> {
        let tok = self.token(what)?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| {
                format!(
                    "line {}: invalid {what} {:?}",
                    self.line(),
                    String::from_utf8_lossy(tok)
                )
            })
    }
}

/// Parses a PGM file. Errors name the line (header, ASCII raster) or the byte
/// offset (binary raster).
pub fn parse_pgm(bytes: &[u8], invert: bool) -> std::result::Result<GrayImage, String> {
    let mut cur = PgmCursor { bytes, pos: 0 };
    let magic = cur.token("magic number")?;
    let binary = match magic {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(format!(
                "line 1: unsupported magic number {:?}, expected P2 or P5",
                String::from_utf8_lossy(other)
            ))
        }
    };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("line {}: image dimensions must be positive, got {width}x{height}", cur.line()));
    }
    if maxval == 0 || maxval > 65_535 {
        return Err(format!("line {}: maxval {maxval} outside 1..=65535", cur.line()));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| format!("image {width}x{height} too large"))?;
    let scale = maxval as f64;
    let convert = |s: usize| {
        let v = s as f64 / scale;
        if invert {
            1.0 - v
        } else {
            v
        }
    };
    let mut values = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(format!("byte {}: missing whitespace after maxval", cur.pos));
        }
        let start = cur.pos + 1;
        let sample_bytes = if maxval < 256 { 1 } else { 2 };
        let needed = count * sample_bytes;
        let available = bytes.len() - start;
        if available < needed {
            return Err(format!(
                "byte {}: truncated raster, expected {needed} bytes from offset {start}, found {available}",
                bytes.len()
            ));
        }
        for i in 0..count {
            let at = start + i * sample_bytes;
            let s = if sample_bytes == 1 {
                bytes[at] as usize
            } else {
                u16::from_be_bytes([bytes[at], bytes[at + 1]]) as usize
            };
            if s > maxval {
                return Err(format!("byte {at}: sample {s} exceeds maxval {maxval}"));
            }
            values.push(convert(s));
        }
    } else {
        for _ in 0..count {
            let s = cur.number("sample")?;
            if s > maxval {
                return Err(format!("line {}: sample {s} exceeds maxval {maxval}", cur.line()));
            }
            values.push(convert(s));
        }
        cur.skip_space_and_comments();
        if cur.pos < bytes.len() {
            return Err(format!("line {}: trailing data after {count} samples", cur.line()));
        }
    }
    GrayImage::new(width, height, values).map_err(|e| e.to_string())
}

/// Parses rows of comma-separated reals. Blank lines are ignored.
pub fn parse_float_csv(text: &str) -> std::result::Result<GrayImage, String> {
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let start = values.len();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| format!("line {}, column {}: {field:?}: {e}", idx + 1, col + 1))?;
            if !v.is_finite() {
                return Err(format!("line {}, column {}: non-finite value {field:?}", idx + 1, col + 1));
            }
            values.push(v);
        }
        let row_len = values.len() - start;
        match width {
            None => width = Some(row_len),
            Some(w) if w != row_len => {
                return Err(format!("line {}: row has {row_len} values, expected {w}", idx + 1));
            }
            _ => {}
        }
        height += 1;
    }
    let width = width.ok_or("no data rows")?;
    GrayImage::new(width, height, values).map_err(|e| e.to_string())
}

pub fn float_csv_string(image: &GrayImage) -> String {
    let mut out = String::new();
    for row in image.values().chunks(image.width()) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Binary PGM with samples `round(clamp(v, 0, 1) * maxval)`.
pub fn pgm_bytes(image: &GrayImage, maxval: u16, invert: bool) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::invalid("maxval must be positive"));
    }
    let mut out = format!("P5\n{} {}\n{}\n", image.width(), image.height(), maxval).into_bytes();
    let scale = f64::from(maxval);
    for &v in image.values() {
        let v = if invert { 1.0 - v } else { v };
        let s = (v.clamp(0.0, 1.0) * scale).round() as u16;
        if maxval < 256 {
            out.push(s as u8);
        } else {
            out.extend_from_slice(&s.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn write_image(image: &GrayImage, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::FloatCsv => float_csv_string(image).into_bytes(),
        ImageFormat::Pgm => pgm_bytes(image, 255, false)?,
    };
    write_atomic(path, &bytes)
}

/// Writes `bytes` to a temporary file next to `path` and renames it over
/// `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Canonical JSON text: sorted keys, pretty-printed, newline-terminated.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    // serde_json's map type is ordered by key
    let tree = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&tree)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json_atomic<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, to_canonical_json(value)?.as_bytes())
}

/// Writes a detection, calibration or experiment report.
pub fn write_report<T: Serialize + ?Sized>(report: &T, path: impl AsRef<Path>) -> Result<()> {
    write_json_atomic(report, path)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// `label,size,min_row,min_col,max_row,max_col`, plus a `pixels` column of
/// `row:col` pairs separated by `;` when `with_pixels` is set.
pub fn clusters_csv(labeling: &ClusterLabeling, with_pixels: bool) -> String {
    let mut out = String::from("label,size,min_row,min_col,max_row,max_col");
    if with_pixels {
        out.push_str(",pixels");
    }
    out.push('\n');
    for c in &labeling.clusters {
        let b = c.bbox;
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            c.id, c.size, b.min_row, b.min_col, b.max_row, b.max_col
        ));
        if with_pixels {
            let pixels = c
                .pixels
                .as_deref()
                .unwrap_or_default()
                .iter()
                .map(|(r, col)| format!("{r}:{col}"))
                .collect::<Vec<_>>()
                .join(";");
            out.push(',');
            out.push_str(&pixels);
        }
        out.push('\n');
    }
    out
}

/// One-column CSV of null maxima for plotting.
pub fn samples_csv(samples: &[usize]) -> String {
    let mut out = String::from("max_cluster\n");
    for s in samples {
        out.push_str(&format!("{s}\n"));
    }
    out
}

/// `run_index,detected,max_cluster,elapsed_ms` per experiment run.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("run_index,detected,max_cluster,elapsed_ms\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            r.run_index,
            u8::from(r.detected),
            r.max_cluster,
            r.elapsed_ms
        ));
    }
    out
}
