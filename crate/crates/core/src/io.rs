//! Images and weight files.
//!
//! Images load as channel-major vectors with values in `[0, 1]`:
//!
//! * netpbm `P2`/`P5` (grey, one channel) and `P3`/`P6` (RGB, three
//!   channels), scaled by `1/maxval`; binary samples are one byte when
//!   `maxval < 256` and two big-endian bytes otherwise;
//! * CSV: the literal header `h,w,c`, a line with the three sizes, then
//!   `c·h` lines of `w` comma-separated reals (channel 0 rows first). CSV
//!   values are taken as-is, so a CSV dump reloads without loss.
//!
//! A weights file is a JSON index
//! `{"layers": [{"shape": [rows, cols], "offset": o, "len": n}, ...]}`
//! describing each parameter matrix in network order (span-2 residual
//! blocks contribute two entries). `offset` and `len` count 64-bit reals in
//! a little-endian blob stored next to the index with extension `.bin`, or
//! at the path named by an optional `"blob"` field, relative to the index.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{NetworkSpec, Shape, Weights};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

/// Byte cursor over a netpbm header.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
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

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(self.path, start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| parse_err(self.path, start, format!("{what} out of range")))
    }
}

/// Decode netpbm bytes; `path` only labels errors.
pub fn parse_netpbm(bytes: &[u8], path: &Path) -> Result<(Vec<f64>, Shape)> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(parse_err(path, 0, "missing netpbm magic"));
    }
    let (channels, ascii) = match bytes[1] {
        b'2' => (1, true),
        b'5' => (1, false),
        b'3' => (3, true),
        b'6' => (3, false),
        _ => return Err(parse_err(path, 1, "unsupported netpbm variant")),
    };
    let mut cur = Cursor { bytes, pos: 2, path };
    let w = cur.number("width")?;
    let h = cur.number("height")?;
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if w == 0 || h == 0 {
        return Err(parse_err(path, maxval_at, "image has zero size"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(path, maxval_at, "maxval must be in 1..=65535"));
    }
    let count = w * h * channels;
    let mut raw = Vec::with_capacity(count);
    if ascii {
        for _ in 0..count {
            cur.skip_space();
            let at = cur.pos;
            let v = cur.number("sample")?;
            if v > maxval {
                return Err(parse_err(path, at, format!("sample {v} exceeds maxval {maxval}")));
            }
            raw.push(v);
        }
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(parse_err(path, cur.pos, "expected whitespace before raster"));
        }
        let start = cur.pos + 1;
        let width = if maxval < 256 { 1 } else { 2 };
        let end = start + count * width;
        if bytes.len() < end {
            return Err(parse_err(path, bytes.len(), "raster is truncated"));
        }
        for (j, chunk) in bytes[start..end].chunks(width).enumerate() {
            let v = chunk.iter().fold(0usize, |acc, &b| acc * 256 + b as usize);
            if v > maxval {
                return Err(parse_err(path, start + j * width, "sample exceeds maxval"));
            }
            raw.push(v);
        }
    }
    let shape = Shape::new(channels, h, w);
    let scale = maxval as f64;
    let mut out = vec![0.0; count];
    // Interleaved pixels to channel-major planes.
    for (j, &v) in raw.iter().enumerate() {
        let (pix, c) = (j / channels, j % channels);
        out[c * h * w + pix] = v as f64 / scale;
    }
    Ok((out, shape))
}

/// Decode the CSV image layout.
pub fn parse_csv_image(text: &str, path: &Path) -> Result<(Vec<f64>, Shape)> {
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n').map(|l| {
        let at = offset;
        offset += l.len();
        (at, l.trim())
    });
    let mut next = |what: &str| {
        lines
            .by_ref()
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| parse_err(path, text.len(), format!("missing {what}")))
    };
    let (at, header) = next("header")?;
    if header.replace(' ', "") != "h,w,c" {
        return Err(parse_err(path, at, "expected header line `h,w,c`"));
    }
    let (at, dims) = next("dimensions")?;
    let dims: Vec<usize> = dims
        .split(',')
        .map(|v| v.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, at, "dimensions must be three integers"))?;
    let [h, w, c] = dims[..] else {
        return Err(parse_err(path, at, "dimensions must be three integers"));
    };
    if h == 0 || w == 0 || c == 0 {
        return Err(parse_err(path, at, "image has zero size"));
    }
    let mut out = Vec::with_capacity(h * w * c);
    for _ in 0..c * h {
        let (at, line) = next("pixel row")?;
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(path, at, "pixel row holds a non-number"))?;
        if row.len() != w || row.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, at, format!("pixel row must hold {w} finite values")));
        }
        out.extend(row);
    }
    if let Some((at, _)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(parse_err(path, at, "trailing data after the last row"));
    }
    Ok((out, Shape::new(c, h, w)))
}

/// Load an image by extension: `.csv` or netpbm otherwise.
pub fn load_image(path: &Path) -> Result<(Vec<f64>, Shape)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| parse_err(path, e.valid_up_to(), "CSV is not UTF-8"))?;
        parse_csv_image(text, path)
    } else {
        parse_netpbm(&bytes, path)
    }
}

/// Binary netpbm (`P5` for one channel, `P6` for three) of `x` clipped to
/// `[0, 1]` and rounded to bytes.
pub fn encode_netpbm(x: &[f64], shape: Shape) -> Result<Vec<u8>> {
    let magic = match shape.c {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::invalid(format!("netpbm needs 1 or 3 channels, got {c}"))),
    };
    if x.len() != shape.len() {
        return Err(Error::invalid("image length does not match shape"));
    }
    let mut out = format!("{magic}\n{} {}\n255\n", shape.w, shape.h).into_bytes();
    let plane = shape.h * shape.w;
    for pix in 0..plane {
        for c in 0..shape.c {
            let v = x[c * plane + pix];
            let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn encode_csv_image(x: &[f64], shape: Shape) -> Result<String> {
    if x.len() != shape.len() {
        return Err(Error::invalid("image length does not match shape"));
    }
    let mut out = format!("h,w,c\n{},{},{}\n", shape.h, shape.w, shape.c);
    for row in x.chunks(shape.w) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_netpbm(path: &Path, x: &[f64], shape: Shape) -> Result<()> {
    fs::write(path, encode_netpbm(x, shape)?).map_err(|e| io_err(path, e))
}

pub fn write_csv_image(path: &Path, x: &[f64], shape: Shape) -> Result<()> {
    fs::write(path, encode_csv_image(x, shape)?).map_err(|e| io_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsIndex {
    layers: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    blob: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn blob_path(index: &Path, blob: Option<&str>) -> PathBuf {
    match blob {
        Some(name) => index.parent().unwrap_or(Path::new(".")).join(name),
        None => index.with_extension("bin"),
    }
}

/// Read weights for `net` from an index file and its blob.
pub fn load_weights(path: &Path, net: &NetworkSpec) -> Result<Weights> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let index: WeightsIndex = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let bin = blob_path(path, index.blob.as_deref());
    let bytes = fs::read(&bin).map_err(|e| io_err(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(parse_err(&bin, bytes.len(), "blob length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut entries = index.layers.iter();
    let mut layers = Vec::with_capacity(net.depth());
    for (i, layer) in net.layers.iter().enumerate() {
        let mut params = Vec::new();
        for m in layer.maps() {
            let e = entries.next().ok_or_else(|| {
                Error::invalid(format!("{}: too few tensors for layer {i}", path.display()))
            })?;
            if e.shape != [m.out_channels, m.param_cols()] || e.len != m.n_params() {
                return Err(Error::invalid(format!(
                    "{}: layer {i} tensor has shape {:?}, expected [{}, {}]",
                    path.display(),
                    e.shape,
                    m.out_channels,
                    m.param_cols()
                )));
            }
            let end = e.offset.checked_add(e.len).filter(|&end| end <= values.len());
            let Some(end) = end else {
                return Err(Error::invalid(format!(
                    "{}: layer {i} tensor lies outside the blob",
                    path.display()
                )));
            };
            params.push(Matrix::from_row_major(
                m.out_channels,
                m.param_cols(),
                values[e.offset..end].to_vec(),
            )?);
        }
        layers.push(params);
    }
    if entries.next().is_some() {
        return Err(Error::invalid(format!("{}: more tensors than the network has", path.display())));
    }
    let w = Weights { layers };
    w.check(net)?;
    Ok(w)
}

/// Write `weights` as an index at `path` plus a `.bin` blob beside it.
pub fn save_weights(path: &Path, weights: &Weights) -> Result<()> {
    let mut entries = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    for m in weights.layers.iter().flatten() {
        entries.push(TensorEntry {
            shape: vec![m.rows(), m.cols()],
            offset,
            len: m.data().len(),
        });
        offset += m.data().len();
        for v in m.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let index = WeightsIndex {
        layers: entries,
        blob: None,
    };
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    let bin = blob_path(path, None);
    fs::write(&bin, blob).map_err(|e| io_err(&bin, e))
}
