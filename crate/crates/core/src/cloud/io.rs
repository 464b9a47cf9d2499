//! ASCII PLY (`x y z [nx ny nz]`) and XYZN (six floats per line) readers
//! and writers. Numbers are written rounded to 9 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};

/// Rounds to 9 significant digits and prints the shortest representation
/// of the rounded value, so save → load → save is textually stable.
pub fn format_sig9(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    format!("{rounded}")
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Dispatches on extension: `.ply`, otherwise XYZN.
pub fn load(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    if is_ply(path) {
        load_ply(&text)
    } else {
        load_xyzn(&text)
    }
}

pub fn save(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let text = if is_ply(path) { save_ply(cloud) } else { save_xyzn(cloud)? };
    fs::write(path, text)?;
    Ok(())
}

fn is_ply(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}

pub fn save_ply(cloud: &PointCloud) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.has_normals() {
        out.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    out.push_str("end_header\n");
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let _ = write!(out, "{} {} {}", format_sig9(p.x), format_sig9(p.y), format_sig9(p.z));
        if let Some(ns) = &cloud.normals {
            let n = ns[i];
            let _ = write!(out, " {} {} {}", format_sig9(n.x), format_sig9(n.y), format_sig9(n.z));
        }
        out.push('\n');
    }
    out
}

pub fn save_xyzn(cloud: &PointCloud) -> Result<String> {
    let ns = cloud.normals_or_err()?;
    let mut out = String::new();
    for (p, n) in cloud.positions.iter().zip(ns) {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            format_sig9(p.x),
            format_sig9(p.y),
            format_sig9(p.z),
            format_sig9(n.x),
            format_sig9(n.y),
            format_sig9(n.z)
        );
    }
    Ok(out)
}

/// Normals within the unit tolerance are kept as written, so save → load →
/// save is stable; others are re-normalized.
fn finish(positions: Vec<Vector3<f64>>, normals: Option<Vec<Vector3<f64>>>) -> Result<PointCloud> {
    match normals {
        Some(ns) => {
            let ns = ns
                .into_iter()
                .enumerate()
                .map(|(i, n)| {
                    let len = n.norm();
                    if len == 0.0 || !len.is_finite() {
                        Err(Error::InvalidArgument(format!("normal {i} has zero length")))
                    } else if (len - 1.0).abs() <= super::UNIT_TOL {
                        Ok(n)
                    } else {
                        Ok(n / len)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            PointCloud::with_normals(positions, ns)
        }
        None => PointCloud::new(positions),
    }
}

pub fn load_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    if lines.next().map(|(_, l)| l) != Some("ply") {
        return Err(parse_err(1, "missing 'ply' magic"));
    }
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut header_done = false;
    for (ln, line) in lines.by_ref() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(parse_err(ln, "only ascii PLY is supported"));
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err(ln, "element without name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_err(ln, "element without valid count"))?;
                in_vertex = name == "vertex";
                if in_vertex {
                    vertex_count = Some(count);
                } else if count > 0 {
                    return Err(parse_err(ln, format!("unsupported element '{name}'")));
                }
            }
            Some("property") => {
                if in_vertex {
                    let name = tok.last().ok_or_else(|| parse_err(ln, "property without name"))?;
                    props.push(name.to_string());
                }
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => return Err(parse_err(ln, format!("unexpected header keyword '{other}'"))),
        }
    }
    if !header_done {
        return Err(parse_err(text.lines().count(), "missing end_header"));
    }
    let count = vertex_count.ok_or_else(|| parse_err(1, "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(1, "vertex element lacks x/y/z")),
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };

    let mut positions = Vec::with_capacity(count);
    let mut normals = normal_cols.map(|_| Vec::with_capacity(count));
    let mut last_line = 0;
    for (ln, line) in lines {
        last_line = ln;
        if line.is_empty() {
            continue;
        }
        if positions.len() == count {
            return Err(parse_err(ln, format!("more vertex lines than the declared {count}")));
        }
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, format!("invalid number '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != props.len() {
            return Err(parse_err(ln, format!("expected {} values, found {}", props.len(), values.len())));
        }
        positions.push(Vector3::new(values[ix], values[iy], values[iz]));
        if let (Some(ns), Some((a, b, c))) = (normals.as_mut(), normal_cols) {
            ns.push(Vector3::new(values[a], values[b], values[c]));
        }
    }
    if positions.len() != count {
        return Err(parse_err(
            last_line,
            format!("header declares {count} vertices, found {}", positions.len()),
        ));
    }
    finish(positions, normals)
}

pub fn load_xyzn(text: &str) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(ln, format!("invalid number '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != 6 {
            return Err(parse_err(ln, format!("expected 6 values, found {}", v.len())));
        }
        positions.push(Vector3::new(v[0], v[1], v[2]));
        normals.push(Vector3::new(v[3], v[4], v[5]));
    }
    if positions.is_empty() {
        return Err(parse_err(1, "no points"));
    }
    finish(positions, Some(normals))
}
