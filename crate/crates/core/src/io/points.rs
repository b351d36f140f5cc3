//! ASCII point clouds with colors, used to seed initialization.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

pub fn write_points_ply(path: &Path, points: &[Vec3], colors: &[Vec3]) -> Result<()> {
    if points.len() != colors.len() {
        return Err(Error::ShapeMismatch(format!("{} points, {} colors", points.len(), colors.len())));
    }
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        points.len()
    );
    for (p, c) in points.iter().zip(colors) {
        let q = c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, q.x, q.y, q.z);
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads the vertex block of an ASCII PLY; colors default to mid grey.
pub fn read_points_ply(path: &Path) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let text = std::fs::read_to_string(path)?;
    let bad = |what: &str| Error::Format(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut count = None;
    let mut properties = Vec::new();
    for line in lines.by_ref() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad("only ascii point clouds are supported")),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad("bad vertex count"))?),
            ["element", ..] if count.is_some() => break,
            ["property", _, name] if count.is_some() => properties.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element"))?;
    let column = |name: &str| properties.iter().position(|p| p == name);
    let (x, y, z) = match (column("x"), column("y"), column("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex positions missing")),
    };
    let rgb = [column("red"), column("green"), column("blue")];
    let mut points = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    for line in lines.filter(|l| !l.trim().is_empty()).take(count) {
        let vals: Vec<f64> = line.split_whitespace().map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad vertex row"))?;
        let get = |i: usize| vals.get(i).copied().ok_or_else(|| bad("short vertex row"));
        points.push(Vec3::new(get(x)?, get(y)?, get(z)?));
        colors.push(match rgb {
            [Some(r), Some(g), Some(b)] => Vec3::new(get(r)?, get(g)?, get(b)?) / 255.0,
            _ => Vec3::repeat(0.5),
        });
    }
    if points.len() != count {
        return Err(bad("fewer vertex rows than declared"));
    }
    Ok((points, colors))
}
