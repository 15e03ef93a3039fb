//! ASCII PGM (P2) and `i,j,value` CSV for density fields.
//!
//! Image row `r`, column `c` is cell `(c, ny - 1 - r)`, so images appear with
//! y pointing up.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid2D};

/// Raw pixel data before a grid is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct RawField {
    pub nx: usize,
    pub ny: usize,
    /// Flat `i * ny + j` order.
    pub values: Vec<f64>,
}

impl RawField {
    /// Places the values on a centered grid. With `normalize`, the cell size
    /// is chosen so the total mass is 1 and `cell_size` is ignored.
    pub fn into_field(self, cell_size: f64, normalize: bool) -> Result<DensityField> {
        let cs = if normalize {
            let s: f64 = self.values.iter().sum();
            if !(s > 0.0) {
                return Err(Error::InvalidGrid("cannot normalize an empty field".into()));
            }
            (1.0 / s).sqrt()
        } else {
            cell_size
        };
        DensityField::new(Grid2D::centered(self.nx, self.ny, cs)?, self.values)
    }
}

fn tokens(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
}

/// Parses a P2 image; any nonzero pixel becomes density 1.
pub fn parse_pgm(text: &str, ctx: &str) -> Result<RawField> {
    let mut it = tokens(text);
    let magic = it.next().ok_or_else(|| Error::parse(ctx, "empty file"))?;
    if magic != "P2" {
        return Err(Error::parse(ctx, format!("expected P2 header, got {magic:?}")));
    }
    let mut num = |what: &str| -> Result<u64> {
        let t = it
            .next()
            .ok_or_else(|| Error::parse(ctx, format!("missing {what}")))?;
        t.parse()
            .map_err(|_| Error::parse(ctx, format!("bad {what}: {t:?}")))
    };
    let w = num("width")? as usize;
    let h = num("height")? as usize;
    let maxval = num("maxval")?;
    if w == 0 || h == 0 || maxval == 0 {
        return Err(Error::parse(ctx, "zero width, height or maxval"));
    }
    let mut values = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let p = num("pixel")?;
            if p > maxval {
                return Err(Error::parse(ctx, format!("pixel {p} above maxval {maxval}")));
            }
            values[c * h + (h - 1 - r)] = if p > 0 { 1.0 } else { 0.0 };
        }
    }
    Ok(RawField {
        nx: w,
        ny: h,
        values,
    })
}

pub fn read_pgm(path: &Path) -> Result<RawField> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&text, &path.display().to_string())
}

/// P2 text with maxval 255; values are scaled and rounded.
pub fn format_pgm(f: &DensityField) -> String {
    let (nx, ny) = (f.grid().nx(), f.grid().ny());
    let mut s = String::with_capacity(nx * ny * 2 + 32);
    let _ = writeln!(s, "P2\n{nx} {ny}\n255");
    for r in 0..ny {
        let row: Vec<String> = (0..nx)
            .map(|c| ((f.get(c, ny - 1 - r) * 255.0).round() as u32).to_string())
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_pgm(path: &Path, f: &DensityField) -> Result<()> {
    std::fs::write(path, format_pgm(f)).map_err(|e| Error::io(path, e))
}

/// Parses `i,j,value` rows. Without explicit dimensions the grid spans the
/// largest listed indices.
pub fn parse_csv(text: &str, ctx: &str, dims: Option<(usize, usize)>) -> Result<RawField> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::parse(ctx, "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["i", "j", "value"] {
        return Err(Error::parse(ctx, format!("expected header i,j,value, got {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = || Error::parse(ctx, format!("row {}: {line:?}", n + 2));
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let i: usize = parts[0].parse().map_err(|_| bad())?;
        let j: usize = parts[1].parse().map_err(|_| bad())?;
        let v: f64 = parts[2].parse().map_err(|_| bad())?;
        rows.push((i, j, v));
    }
    let (nx, ny) = match dims {
        Some(d) => d,
        None => (
            rows.iter().map(|r| r.0 + 1).max().unwrap_or(0),
            rows.iter().map(|r| r.1 + 1).max().unwrap_or(0),
        ),
    };
    if nx == 0 || ny == 0 {
        return Err(Error::parse(ctx, "no cells"));
    }
    let mut values = vec![0.0; nx * ny];
    for (i, j, v) in rows {
        if i >= nx || j >= ny {
            return Err(Error::parse(ctx, format!("cell ({i}, {j}) outside {nx} x {ny}")));
        }
        values[i * ny + j] = v;
    }
    Ok(RawField { nx, ny, values })
}

pub fn read_csv(path: &Path, dims: Option<(usize, usize)>) -> Result<RawField> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, &path.display().to_string(), dims)
}

/// Nonzero cells only.
pub fn format_csv(f: &DensityField) -> String {
    let mut s = String::from("i,j,value\n");
    for (k, &v) in f.values().iter().enumerate() {
        if v != 0.0 {
            let (i, j) = f.grid().coords(k);
            let _ = writeln!(s, "{i},{j},{v}");
        }
    }
    s
}

/// Dispatches on the extension (`.pgm` or `.csv`).
pub fn read_field(path: &Path, dims: Option<(usize, usize)>) -> Result<RawField> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("csv") => read_csv(path, dims),
        _ => Err(Error::parse(
            path.display().to_string(),
            "unknown input format (expected .pgm or .csv)",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_orientation_and_round_trip() {
        let text = "P2\n# comment\n3 2\n255\n0 9 0\n255 0 0\n";
        let raw = parse_pgm(text, "t").unwrap();
        assert_eq!((raw.nx, raw.ny), (3, 2));
        // top row is j = 1
        assert_eq!(raw.values[1 * 2 + 1], 1.0);
        assert_eq!(raw.values[0 * 2 + 0], 1.0);
        assert_eq!(raw.values.iter().sum::<f64>(), 2.0);
        let f = raw.clone().into_field(1.0, false).unwrap();
        let back = parse_pgm(&format_pgm(&f), "t").unwrap();
        assert_eq!(back, raw);
    }

    #[test]
    fn normalization_sets_unit_mass() {
        let raw = parse_pgm("P2 4 4 1\n1 1 0 0\n1 1 0 0\n0 0 0 0\n0 1 0 0\n", "t").unwrap();
        let f = raw.into_field(1.0, true).unwrap();
        assert!((crate::grid::mass(&f) - 1.0).abs() < 1e-15);
        assert!(f.is_binary());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let raw = parse_csv("i,j,value\n0,1,0.5\n2,0,1\n", "t", None).unwrap();
        assert_eq!((raw.nx, raw.ny), (3, 2));
        let f = raw.clone().into_field(0.5, false).unwrap();
        assert_eq!(parse_csv(&format_csv(&f), "t", Some((3, 2))).unwrap(), raw);
        assert!(parse_csv("x,y,z\n", "t", None).is_err());
        assert!(parse_csv("i,j,value\n5,5,1\n", "t", Some((2, 2))).is_err());
        assert!(parse_pgm("P5 1 1 1 0", "t").is_err());
        assert!(parse_pgm("P2 2 2 1\n1 1 1\n", "t").is_err());
    }
}
