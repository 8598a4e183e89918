//! ASCII PLY point clouds.
//!
//! Only the `x y z` properties of the `vertex` element are read. Other scalar
//! properties and elements are skipped; list properties are rejected.

use std::fmt::Write as _;
use std::path::Path;

use eqgs_core::geometry::{PointCloud, Vec3};

use crate::error::{CliError, Result};

const SCALAR_TYPES: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16", "uint16", "int32", "uint32",
    "float32", "float64",
];

struct Element {
    name: String,
    count: usize,
    props: Vec<String>,
}

/// Parses PLY text; `origin` only labels errors.
pub fn parse_ply(text: &str, origin: &Path) -> Result<PointCloud> {
    let err = |line: usize, msg: String| CliError::parse(origin, line, msg);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));

    match lines.next() {
        Some((_, "ply")) => {}
        Some((n, _)) => return Err(err(n, "missing 'ply' magic".into())),
        None => return Err(err(1, "empty file".into())),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    let mut header_end = None;
    for (n, line) in lines.by_ref() {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", "1.0"] => saw_format = true,
            ["format", f, ..] => return Err(err(n, format!("unsupported format '{f}', only ascii 1.0 is read"))),
            ["element", name, count] => {
                let count = count.parse().map_err(|_| err(n, format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", ..] => return Err(err(n, "list properties are not supported".into())),
            ["property", ty, name] => {
                if !SCALAR_TYPES.contains(ty) {
                    return Err(err(n, format!("unknown property type '{ty}'")));
                }
                let el = elements.last_mut().ok_or_else(|| err(n, "property before any element".into()))?;
                el.props.push(name.to_string());
            }
            ["end_header"] => {
                header_end = Some(n);
                break;
            }
            _ => return Err(err(n, format!("unrecognized header line '{line}'"))),
        }
    }
    let header_end = header_end.ok_or_else(|| err(text.lines().count().max(1), "missing end_header".into()))?;
    if !saw_format {
        return Err(err(header_end, "missing format line".into()));
    }
    let vertex = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err(header_end, "no vertex element".into()))?;
    let col = |name: &str| {
        elements[vertex]
            .props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| err(header_end, format!("vertex element lacks property '{name}'")))
    };
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);

    let mut body = lines.filter(|(_, l)| !l.is_empty());
    let mut points = Vec::new();
    for (ei, el) in elements.iter().enumerate() {
        for _ in 0..el.count {
            let (n, line) = body
                .next()
                .ok_or_else(|| err(text.lines().count(), format!("file ends before {} '{}' rows were read", el.count, el.name)))?;
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != el.props.len() {
                return Err(err(n, format!("expected {} values, found {}", el.props.len(), vals.len())));
            }
            if ei == vertex {
                let f = |c: usize| -> Result<f64> {
                    let v: f64 = vals[c].parse().map_err(|_| err(n, format!("bad number '{}'", vals[c])))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(err(n, format!("non-finite coordinate '{}'", vals[c])))
                    }
                };
                points.push(Vec3::new(f(cx)?, f(cy)?, f(cz)?));
            }
        }
    }
    if let Some((n, _)) = body.next() {
        return Err(err(n, "unexpected data after the last element".into()));
    }
    PointCloud::new(points).map_err(|e| CliError::format(origin, e.to_string()))
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_ply(&text, path)
}

/// Writes `x y z` as `double` with 17 significant digits so a read returns
/// the same bits.
pub fn format_ply(pc: &PointCloud) -> String {
    let mut s = String::with_capacity(64 * pc.len() + 128);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", pc.len());
    s.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in pc.points() {
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z);
    }
    s
}

pub fn write_ply(path: &Path, pc: &PointCloud) -> Result<()> {
    std::fs::write(path, format_ply(pc)).map_err(|e| CliError::io(path, e))
}
