use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GridSpec, PeriodicField};
use crate::error::{invalid, Result};

pub const LAYOUT: &str = "row-major, fiber-fastest";

/// JSON header stored next to a raw field dump.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FieldHeader {
    pub grid: GridSpec,
    pub fiber_dim: usize,
    pub layout: String,
    pub dtype: String,
    pub data: String,
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `prefix.json` and `prefix.bin` (little-endian f64).
pub fn dump_field(field: &PeriodicField, prefix: &Path) -> Result<FieldHeader> {
    let bin = with_ext(prefix, ".bin");
    let header = FieldHeader {
        grid: *field.grid(),
        fiber_dim: field.fiber_dim(),
        layout: LAYOUT.to_string(),
        dtype: "<f8".to_string(),
        data: bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut bytes = Vec::with_capacity(field.values().len() * 8);
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin, bytes)?;
    fs::write(with_ext(prefix, ".json"), serde_json::to_string_pretty(&header)?)?;
    Ok(header)
}

/// Reads a dump written by [`dump_field`]; `path` is the header file.
pub fn load_field(path: &Path) -> Result<PeriodicField> {
    let header: FieldHeader = serde_json::from_str(&fs::read_to_string(path)?)?;
    if header.layout != LAYOUT || header.dtype != "<f8" {
        return Err(invalid("unsupported field layout or dtype"));
    }
    let bin = path.parent().unwrap_or(Path::new(".")).join(&header.data);
    let bytes = fs::read(bin)?;
    if bytes.len() % 8 != 0 {
        return Err(invalid("field data is not a whole number of f64 values"));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    PeriodicField::new(header.grid, header.fiber_dim, values)
}

/// CSV export: all points for 1-D and 2-D grids, the slice at `x3 index = slice` for 3-D.
pub fn write_csv_slice<W: Write>(field: &PeriodicField, slice: usize, mut w: W) -> Result<()> {
    let g = field.grid();
    let n = g.dim_n;
    let axes = ["x1", "x2", "x3"];
    let mut head: Vec<String> = axes[..n.min(2)].iter().map(|s| s.to_string()).collect();
    head.extend((0..field.fiber_dim()).map(|c| format!("v{c}")));
    writeln!(w, "{}", head.join(","))?;
    for idx in 0..g.len() {
        let ijk = g.unflatten(idx);
        if n == 3 && ijk[2] != slice % g.points_per_axis {
            continue;
        }
        let x = g.point(idx);
        let mut row: Vec<String> = x[..n.min(2)].iter().map(|v| format!("{v}")).collect();
        row.extend(field.at(idx).iter().map(|v| format!("{v}")));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::unit(2, 8).unwrap();
        let f = PeriodicField::random_band_limited(g, 3, 2, 4);
        let prefix = dir.path().join("field");
        dump_field(&f, &prefix).unwrap();
        let back = load_field(&dir.path().join("field.json")).unwrap();
        assert_eq!(back.values(), f.values());
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let g = GridSpec::unit(2, 8).unwrap();
        let f = PeriodicField::constant(g, &[1.0, 2.0]);
        let mut out = Vec::new();
        write_csv_slice(&f, 0, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 65);
        assert!(text.starts_with("x1,x2,v0,v1"));
    }
}
