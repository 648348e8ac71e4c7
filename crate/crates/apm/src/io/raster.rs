//! Raster container files.
//!
//! Layout of an `.apmr` file:
//!
//! ```text
//! b"APMR" | u32 LE version | u64 LE header length | JSON header
//!        | f32 LE payload, band-major, row-major | packed mask bits (LSB first)
//! ```
//!
//! Masked cells carry the nodata value in the payload; the mask bitmap is
//! authoritative. Round trips of `RasterGrid<f32>` are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use apm_core::{GeoTransform, RasterGrid, Sample};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 4] = b"APMR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    width: usize,
    height: usize,
    bands: usize,
    band_names: Vec<String>,
    geotransform: GeoTransform,
    /// `None` encodes a NaN fill value.
    nodata: Option<f64>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Serializes `grid` as `f32`. Fails if an unmasked value overflows `f32`.
pub fn encode_raster<T: Sample>(grid: &RasterGrid<T>) -> apm_core::Result<Vec<u8>> {
    let header = Header {
        width: grid.width(),
        height: grid.height(),
        bands: grid.bands(),
        band_names: grid.band_names().to_vec(),
        geotransform: *grid.geotransform(),
        nodata: Some(grid.nodata()).filter(|v| v.is_finite()),
        metadata: grid.metadata().clone(),
    };
    let json = serde_json::to_vec(&header).expect("raster header serializes");
    let n = grid.pixel_count();
    let mut out = Vec::with_capacity(16 + json.len() + 4 * grid.data().len() + n.div_ceil(8));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let fill = grid.nodata() as f32;
    for (k, v) in grid.data().iter().enumerate() {
        let x = if grid.is_masked(k % n) { fill } else { v.to_f64() as f32 };
        if !grid.is_masked(k % n) && !x.is_finite() {
            return Err(apm_core::Error::NonFinite(format!(
                "value {} at band {}, pixel {} does not fit in f32",
                v.to_f64(),
                k / n,
                k % n
            )));
        }
        out.extend_from_slice(&x.to_le_bytes());
    }
    let mut bits = vec![0u8; n.div_ceil(8)];
    for (i, m) in grid.mask().iter().enumerate() {
        if *m {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    Ok(out)
}

pub fn decode_raster(bytes: &[u8]) -> std::result::Result<RasterGrid<f32>, String> {
    let take = |at: usize, len: usize| -> std::result::Result<&[u8], String> {
        bytes
            .get(at..at + len)
            .ok_or_else(|| format!("truncated file: need {} bytes, have {}", at + len, bytes.len()))
    };
    if take(0, 4)? != MAGIC {
        return Err("not an APMR raster (bad magic)".into());
    }
    let version = u32::from_le_bytes(take(4, 4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format!("unsupported raster format version {version}"));
    }
    let hlen = u64::from_le_bytes(take(8, 8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(16, hlen)?).map_err(|e| format!("bad header: {e}"))?;
    let n = header
        .width
        .checked_mul(header.height)
        .ok_or("raster dimensions overflow")?;
    let count = n.checked_mul(header.bands).ok_or("raster dimensions overflow")?;
    let mut at = 16 + hlen;
    let payload = take(at, 4 * count)?;
    at += 4 * count;
    let bits = take(at, n.div_ceil(8))?;
    at += n.div_ceil(8);
    if at != bytes.len() {
        return Err(format!("{} trailing bytes after raster payload", bytes.len() - at));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mask: Vec<bool> = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
    let mut grid = RasterGrid::from_parts(header.width, header.height, header.bands, header.geotransform, data, mask)
        .map_err(|e| e.to_string())?;
    grid.set_band_names(header.band_names).map_err(|e| e.to_string())?;
    grid.set_nodata(header.nodata.unwrap_or(f64::NAN));
    grid.set_metadata(header.metadata);
    Ok(grid)
}

pub fn write_raster<T: Sample>(path: impl AsRef<Path>, grid: &RasterGrid<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_raster(grid)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

/// Reads an `.apmr` raster, or an ESRI ASCII grid when the extension is `.asc`.
pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterGrid<f32>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("asc")) {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        return parse_ascii_grid(&text).map_err(|m| AppError::format(path, m));
    }
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode_raster(&bytes).map_err(|m| AppError::format(path, m))
}

/// Parses a single-band ESRI ASCII grid. Cells equal to `NODATA_value` are
/// masked.
pub fn parse_ascii_grid(text: &str) -> std::result::Result<RasterGrid<f32>, String> {
    let mut tokens = text.split_ascii_whitespace().peekable();
    let mut keys: BTreeMap<String, f64> = BTreeMap::new();
    while let Some(t) = tokens.peek() {
        if t.parse::<f64>().is_ok() {
            break;
        }
        let key = tokens.next().unwrap().to_ascii_lowercase();
        let value = tokens
            .next()
            .ok_or_else(|| format!("missing value for `{key}`"))?
            .parse::<f64>()
            .map_err(|e| format!("bad value for `{key}`: {e}"))?;
        keys.insert(key, value);
    }
    let get = |k: &str| keys.get(k).copied();
    let ncols = get("ncols").ok_or("missing ncols")? as usize;
    let nrows = get("nrows").ok_or("missing nrows")? as usize;
    let (dx, dy) = match (get("cellsize"), get("dx"), get("dy")) {
        (Some(c), _, _) => (c, c),
        (None, Some(dx), Some(dy)) => (dx, dy),
        _ => return Err("missing cellsize".into()),
    };
    let x0 = match (get("xllcorner"), get("xllcenter")) {
        (Some(x), _) => x,
        (None, Some(x)) => x - dx / 2.0,
        _ => return Err("missing xllcorner".into()),
    };
    let y0 = match (get("yllcorner"), get("yllcenter")) {
        (Some(y), _) => y,
        (None, Some(y)) => y - dy / 2.0,
        _ => return Err("missing yllcorner".into()),
    };
    let nodata = get("nodata_value");
    let mut data = Vec::with_capacity(ncols * nrows);
    let mut mask = Vec::with_capacity(ncols * nrows);
    for t in tokens {
        let v: f64 = t.parse().map_err(|e| format!("bad cell value `{t}`: {e}"))?;
        let masked = nodata == Some(v) || !v.is_finite();
        mask.push(masked);
        data.push(v as f32);
    }
    if data.len() != ncols * nrows {
        return Err(format!("expected {} cells, found {}", ncols * nrows, data.len()));
    }
    let gt = GeoTransform::new(x0, y0 + nrows as f64 * dy, dx, -dy);
    let mut grid = RasterGrid::from_parts(ncols, nrows, 1, gt, data, mask).map_err(|e| e.to_string())?;
    if let Some(nd) = nodata {
        grid.set_nodata(nd);
    }
    Ok(grid)
}

/// Band 0 of `grid` as ESRI ASCII grid text.
pub fn format_ascii_grid<T: Sample>(grid: &RasterGrid<T>) -> std::result::Result<String, String> {
    let gt = grid.geotransform();
    if gt.dx() != gt.dy() || gt.pixel_size_y > 0.0 {
        return Err("ESRI ASCII grids need square, north-up pixels".into());
    }
    let (x0, _, _, y0) = grid.extent();
    let mut s = format!(
        "ncols {}\nnrows {}\nxllcorner {}\nyllcorner {}\ncellsize {}\nNODATA_value {}\n",
        grid.width(),
        grid.height(),
        x0,
        y0,
        gt.dx(),
        grid.nodata()
    );
    for r in 0..grid.height() {
        let row: Vec<String> = (0..grid.width())
            .map(|c| match grid.value(0, r, c) {
                Some(v) => format!("{v}"),
                None => format!("{}", grid.nodata()),
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    Ok(s)
}
