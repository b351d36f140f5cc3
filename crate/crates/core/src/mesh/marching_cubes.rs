//! Marching cubes over a fused TSDF volume.

use std::collections::HashMap;

use rayon::prelude::*;

use super::tables::{EDGE_TABLE, TRIANGLE_TABLE};
use super::trimesh::TriangleMesh;
use super::tsdf::TsdfVolume;
use crate::math::Vec3;

const CORNERS: [[usize; 3]; 8] = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]];
const EDGES: [(usize, usize); 12] = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4), (0, 4), (1, 5), (2, 6), (3, 7)];

/// Identity of an output vertex shared between neighbouring cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum VertexKey {
    Edge(usize, u8),
    Corner(usize),
}

type CellTriangles = Vec<([VertexKey; 3], [(Vec3, Vec3); 3])>;

/// Extracts the `iso` level set. Only cells whose eight corners were all observed emit faces.
pub fn marching_cubes(volume: &TsdfVolume, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = volume.dims;
    if nx < 2 || ny < 2 || nz < 2 {
        return TriangleMesh::default();
    }
    let eps = 1e-12 * volume.truncation.max(1.0);
    let slabs: Vec<CellTriangles> = (0..nz - 1)
        .into_par_iter()
        .map(|k| {
            let mut out = Vec::new();
            for j in 0..ny - 1 {
                for i in 0..nx - 1 {
                    let idx = CORNERS.map(|c| volume.index(i + c[0], j + c[1], k + c[2]));
                    if idx.iter().any(|&v| !(volume.weight[v] > 0.0)) {
                        continue;
                    }
                    let vals = idx.map(|v| volume.sdf[v]);
                    let case = (0..8).filter(|&c| vals[c] < iso).fold(0usize, |acc, c| acc | (1 << c));
                    if EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    let mut verts: [Option<(VertexKey, Vec3, Vec3)>; 12] = [None; 12];
                    for (e, &(a, b)) in EDGES.iter().enumerate() {
                        if EDGE_TABLE[case] & (1 << e) == 0 {
                            continue;
                        }
                        let pa = volume.position(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                        let pb = volume.position(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                        let (ca, cb) = (volume.color[idx[a]], volume.color[idx[b]]);
                        let (da, db) = (vals[a] - iso, vals[b] - iso);
                        verts[e] = Some(if da.abs() <= eps {
                            (VertexKey::Corner(idx[a]), pa, ca)
                        } else if db.abs() <= eps {
                            (VertexKey::Corner(idx[b]), pb, cb)
                        } else {
                            let s = da / (da - db);
                            let axis = (0..3).find(|&ax| CORNERS[a][ax] != CORNERS[b][ax]).unwrap_or(0);
                            (VertexKey::Edge(idx[a].min(idx[b]), axis as u8), pa + (pb - pa) * s, ca + (cb - ca) * s)
                        });
                    }
                    for tri in TRIANGLE_TABLE[case].chunks(3) {
                        if tri[0] < 0 {
                            break;
                        }
                        let v = [tri[0], tri[1], tri[2]].map(|e| verts[e as usize].expect("edge table and triangle table agree"));
                        out.push((v.map(|x| x.0), v.map(|x| (x.1, x.2))));
                    }
                }
            }
            out
        })
        .collect();

    let mut lookup: HashMap<VertexKey, usize> = HashMap::new();
    let mut mesh = TriangleMesh { colors: Some(Vec::new()), ..Default::default() };
    for (keys, data) in slabs.into_iter().flatten() {
        let tri = [0, 1, 2].map(|c| {
            *lookup.entry(keys[c]).or_insert_with(|| {
                mesh.vertices.push(data[c].0);
                mesh.colors.as_mut().expect("colors allocated").push(data[c].1);
                mesh.vertices.len() - 1
            })
        });
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            continue;
        }
        // Bourke's ordering winds clockwise around outward normals when inside is `< iso`.
        mesh.triangles.push([tri[0], tri[2], tri[1]]);
        if mesh.triangle_area(mesh.triangles.len() - 1) <= 0.0 {
            mesh.triangles.pop();
        }
    }
    mesh.compacted()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(res: usize) -> TsdfVolume {
        TsdfVolume::from_fn(Vec3::repeat(-0.7), Vec3::repeat(0.7), res, 4.0, |p| p.norm() - 0.5).unwrap()
    }

    #[test]
    fn uniform_field_is_empty() {
        let v = TsdfVolume::from_fn(Vec3::zeros(), Vec3::repeat(1.0), 8, 4.0, |_| 1.0).unwrap();
        assert!(marching_cubes(&v, 0.0).is_empty());
    }

    #[test]
    fn sphere_radii_and_topology() {
        let v = sphere(64);
        let m = marching_cubes(&v, 0.0);
        assert!(!m.is_empty());
        let worst = m.vertices.iter().map(|p| (p.norm() - 0.5).abs()).fold(0.0, f64::max);
        assert!(worst < 1.5 * v.voxel_size, "worst {worst}");
        assert!(m.max_edge_valence() <= 2);
        assert!(m.boundary_edges().is_empty());
        assert_eq!(m.connected_components(), 1);
        assert!(m.signed_volume() > 0.0);
        let expected = 4.0 / 3.0 * std::f64::consts::PI * 0.125;
        assert!((m.signed_volume() - expected).abs() < 0.02 * expected);
    }

    #[test]
    fn unobserved_cells_are_skipped() {
        let mut v = sphere(16);
        for k in 0..v.dims[2] {
            for j in 0..v.dims[1] {
                let idx = v.index(v.dims[0] / 2, j, k);
                v.weight[idx] = 0.0;
            }
        }
        let m = marching_cubes(&v, 0.0);
        assert!(!m.boundary_edges().is_empty());
        assert_eq!(m.connected_components(), 2);
    }

    #[test]
    fn exact_corner_hits_are_shared() {
        // Plane through grid vertices: many interpolated points coincide with corners.
        let v = TsdfVolume::from_fn(Vec3::zeros(), Vec3::repeat(1.0), 8, 4.0, |p| p.z - 0.5).unwrap();
        let m = marching_cubes(&v, 0.0);
        assert!(m.max_edge_valence() <= 2);
        for t in 0..m.triangles.len() {
            assert!(m.triangle_area(t) > 0.0);
        }
    }
}
