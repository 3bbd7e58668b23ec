//! Point cloud files: CSV with an `x1..xN` header, the `AFPC1` binary
//! format, a JSON provenance sidecar and an SVG scatter for planar clouds.
//!
//! `AFPC1` layout, little-endian: the five magic bytes, `u32` dimension,
//! `u64` point count, then `f64` coordinates row-major.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::{PointCloud, Provenance};

pub const MAGIC: &[u8; 5] = b"AFPC1";
const HEADER_LEN: u64 = 5 + 4 + 8;

pub fn write_csv(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = (1..=cloud.dim).map(|j| format!("x{j}")).collect();
    w.write_record(&header).map_err(csv_error)?;
    let mut row: Vec<String> = vec![String::new(); cloud.dim];
    for p in cloud.points() {
        for (cell, x) in row.iter_mut().zip(p) {
            cell.clear();
            // shortest representation that round-trips
            write!(cell, "{x:?}").expect("writing to a String");
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<PointCloud> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = r.headers().map_err(csv_error)?.clone();
    let dim = header.len();
    for (j, h) in header.iter().enumerate() {
        if h.trim() != format!("x{}", j + 1) {
            return Err(Error::Format {
                offset: 0,
                message: format!("CSV header must be x1..x{dim}, found {h:?} in column {}", j + 1),
            });
        }
    }
    let mut coords = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let offset = rec.position().map_or(0, |p| p.byte());
        if rec.len() != dim {
            return Err(Error::Format {
                offset,
                message: format!("expected {dim} fields, found {}", rec.len()),
            });
        }
        for field in rec.iter() {
            let x: f64 = field.trim().parse().map_err(|_| Error::Format {
                offset,
                message: format!("not a number: {field:?}"),
            })?;
            if !x.is_finite() {
                return Err(Error::Format {
                    offset,
                    message: format!("non-finite coordinate {field:?}"),
                });
            }
            coords.push(x);
        }
    }
    PointCloud::new(dim, coords)
}

fn csv_error(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        other => Error::Format {
            offset,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_binary(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_binary(cloud, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn encode_binary<W: Write>(cloud: &PointCloud, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(cloud.dim as u32).to_le_bytes())?;
    w.write_all(&(cloud.len() as u64).to_le_bytes())?;
    for x in &cloud.coords {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<PointCloud> {
    decode_binary(BufReader::new(File::open(path)?))
}

pub fn decode_binary<R: Read>(mut r: R) -> Result<PointCloud> {
    let mut offset = 0u64;
    let mut magic = [0u8; 5];
    read_exact_at(&mut r, &mut magic, &mut offset, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected \"AFPC1\""),
        });
    }
    let mut b4 = [0u8; 4];
    read_exact_at(&mut r, &mut b4, &mut offset, "dimension")?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    read_exact_at(&mut r, &mut b8, &mut offset, "point count")?;
    let count = u64::from_le_bytes(b8);
    if dim == 0 {
        return Err(Error::Format {
            offset: 5,
            message: "AFPC1 dimension must be positive".into(),
        });
    }
    let total = count.checked_mul(dim as u64).ok_or_else(|| Error::Format {
        offset: 9,
        message: "AFPC1 point count overflows".into(),
    })?;
    let mut coords = Vec::with_capacity(total.min(1 << 27) as usize);
    for _ in 0..total {
        read_exact_at(&mut r, &mut b8, &mut offset, "coordinate")?;
        coords.push(f64::from_le_bytes(b8));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format {
            offset: HEADER_LEN + total * 8,
            message: "trailing bytes after AFPC1 payload".into(),
        });
    }
    PointCloud::new(dim, coords)
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64, what: &str) -> Result<()> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(Error::Format {
                    offset: *offset + got as u64,
                    message: format!("truncated AFPC1 file while reading {what}"),
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    *offset += buf.len() as u64;
    Ok(())
}

/// Contents of the JSON file written next to a cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dim: usize,
    pub count: usize,
    pub truncation_error: f64,
    pub provenance: Provenance,
}

pub fn write_sidecar(cloud: &PointCloud, path: &Path) -> Result<()> {
    let sidecar = Sidecar {
        dim: cloud.dim,
        count: cloud.len(),
        truncation_error: cloud.truncation_error,
        provenance: cloud.provenance.clone(),
    };
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        message: format!("sidecar: {e}"),
    })
}

/// Reads a cloud by extension (`.csv`, otherwise binary) and picks up a
/// `<path>.json` sidecar when present.
pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let mut cloud = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path)?,
        _ => read_binary(path)?,
    };
    let side = sidecar_path(path);
    if side.exists() {
        let s = read_sidecar(&side)?;
        cloud.truncation_error = s.truncation_error;
        cloud.provenance = s.provenance;
    }
    Ok(cloud)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Planar scatter of at most `max_points` points (the first ones).
pub fn render_svg(cloud: &PointCloud, max_points: usize) -> Result<String> {
    if cloud.dim != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: cloud.dim,
        });
    }
    let (lo, hi) = cloud.bounds().ok_or(Error::EmptyCloud)?;
    let size = 800.0;
    let pad = 10.0;
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300);
    let scale = (size - 2.0 * pad) / span;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(out, r##"<g fill="#1f3b73" fill-opacity="0.5">"##).unwrap();
    for p in cloud.points().take(max_points) {
        let x = pad + (p[0] - lo[0]) * scale;
        let y = size - pad - (p[1] - lo[1]) * scale;
        writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="0.6"/>"#).unwrap();
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}
