//! Indexed triangle meshes, topology statistics and OBJ/PLY codecs.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub colors: Option<Vec<Vec3>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Area-weighted mean of triangle centroids.
    pub fn centroid(&self) -> Option<Vec3> {
        let mut acc = Vec3::zeros();
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let area = self.triangle_area(t);
            acc += (a + b + c) * (area / 3.0);
            total += area;
        }
        (total > 0.0).then(|| acc / total)
    }

    /// Signed enclosed volume; positive when faces wind counter-clockwise seen from outside.
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Edges used by exactly one triangle.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<_> = self.edge_counts().into_iter().filter(|(_, c)| *c == 1).map(|(e, _)| e).collect();
        edges.sort_unstable();
        edges
    }

    /// Largest number of triangles sharing one edge.
    pub fn max_edge_valence(&self) -> usize {
        self.edge_counts().values().copied().max().unwrap_or(0)
    }

    /// Number of connected loops formed by boundary edges (one per hole).
    pub fn hole_count(&self) -> usize {
        let edges = self.boundary_edges();
        let mut uf = UnionFind::new(self.vertices.len());
        let mut used = vec![false; self.vertices.len()];
        for (a, b) in &edges {
            uf.union(*a, *b);
            used[*a] = true;
            used[*b] = true;
        }
        (0..self.vertices.len()).filter(|&v| used[v] && uf.find(v) == v).count()
    }

    /// Number of vertex-connected triangle groups.
    pub fn connected_components(&self) -> usize {
        let mut uf = UnionFind::new(self.vertices.len());
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            uf.union(t[0], t[1]);
            uf.union(t[1], t[2]);
            for v in t {
                used[*v] = true;
            }
        }
        (0..self.vertices.len()).filter(|&v| used[v] && uf.find(v) == v).count()
    }

    /// Drops connected pieces with fewer than `min_triangles` faces, then unused vertices.
    pub fn remove_small_components(&self, min_triangles: usize) -> TriangleMesh {
        let mut uf = UnionFind::new(self.vertices.len());
        for t in &self.triangles {
            uf.union(t[0], t[1]);
            uf.union(t[1], t[2]);
        }
        let mut counts = HashMap::new();
        for t in &self.triangles {
            *counts.entry(uf.find(t[0])).or_insert(0usize) += 1;
        }
        let kept: Vec<[usize; 3]> = self.triangles.iter().copied().filter(|t| counts[&uf.find(t[0])] >= min_triangles).collect();
        TriangleMesh { triangles: kept, ..self.clone() }.compacted()
    }

    /// Removes vertices that no triangle references.
    pub fn compacted(mut self) -> TriangleMesh {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut colors = Vec::new();
        for t in self.triangles.iter_mut() {
            for v in t.iter_mut() {
                if remap[*v] == usize::MAX {
                    remap[*v] = vertices.len();
                    vertices.push(self.vertices[*v]);
                    if let Some(c) = &self.colors {
                        colors.push(c[*v]);
                    }
                }
                *v = remap[*v];
            }
        }
        self.colors = self.colors.map(|_| colors);
        self.vertices = vertices;
        self
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for (i, v) in self.vertices.iter().enumerate() {
            match &self.colors {
                Some(c) => writeln!(w, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[i].x, c[i].y, c[i].z)?,
                None => writeln!(w, "v {} {} {}", v.x, v.y, v.z)?,
            }
        }
        for t in &self.triangles {
            writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads vertices and faces of an OBJ file; polygons are fan-triangulated.
    pub fn read_obj(path: &Path) -> Result<Self> {
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut mesh = TriangleMesh::default();
        let mut colors = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let bad = |what: &str| Error::Format(format!("{}:{}: {what}", path.display(), n + 1));
            match parts.next() {
                Some("v") => {
                    let vals: Vec<f64> = parts.map(|p| p.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad vertex"))?;
                    if vals.len() < 3 {
                        return Err(bad("vertex needs three coordinates"));
                    }
                    mesh.vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                    if vals.len() >= 6 {
                        colors.push(Vec3::new(vals[3], vals[4], vals[5]));
                    }
                }
                Some("f") => {
                    let idx: Vec<usize> = parts
                        .map(|p| p.split('/').next().unwrap_or("").parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("bad face"))?;
                    if idx.len() < 3 || idx.iter().any(|i| *i == 0 || *i > mesh.vertices.len()) {
                        return Err(bad("face index out of range"));
                    }
                    for k in 1..idx.len() - 1 {
                        mesh.triangles.push([idx[0] - 1, idx[k] - 1, idx[k + 1] - 1]);
                    }
                }
                _ => {}
            }
        }
        if !colors.is_empty() && colors.len() == mesh.vertices.len() {
            mesh.colors = Some(colors);
        }
        Ok(mesh)
    }

    /// Binary little-endian PLY with 8-bit vertex colors (grey when absent).
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        write!(
            w,
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
            self.vertices.len(),
            self.triangles.len()
        )?;
        for (i, v) in self.vertices.iter().enumerate() {
            for c in v.iter() {
                w.write_all(&(*c as f32).to_le_bytes())?;
            }
            let col = self.colors.as_ref().map_or(Vec3::repeat(0.7), |c| c[i]);
            for c in col.iter() {
                w.write_all(&[(c.clamp(0.0, 1.0) * 255.0).round() as u8])?;
            }
        }
        for t in &self.triangles {
            w.write_all(&[3u8])?;
            for i in t {
                w.write_all(&(*i as i32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}
