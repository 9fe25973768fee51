//! Triangle surface meshes and the spatial machinery built on them.
//!
//! A [`Mesh`] is an indexed triangle list plus the subdivision level it was
//! produced at. Connectivity-only data (edges, one-rings, face adjacency) is
//! factored into [`Topology`] so the deformation network can reuse it while
//! vertex positions change every step.

mod bvh;
mod intersect;
pub mod io;
mod kdtree;
mod sample;
mod subdivide;
mod template;

use std::collections::HashMap;

pub(crate) use bvh::closest_on_triangle;
pub use bvh::{ClosestPoint, TriangleIndex};
pub use intersect::{
    count_self_intersecting_faces, self_intersecting_faces, self_intersecting_faces_brute,
    triangles_intersect,
};
pub use kdtree::PointIndex;
pub use sample::{sample_surface, sample_surface_masked, SurfaceSamples};
pub use subdivide::{subdivide, Hierarchy, SubdivisionMap};
pub use template::{build_template, fibonacci_sphere};

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub level: u32,
}

impl Mesh {
    /// Builds a mesh after checking index ranges and rejecting faces that
    /// repeat a vertex. Manifoldness is checked separately by
    /// [`Mesh::check_closed_manifold`].
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, level: u32) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex out of range ({f:?}, {n} vertices)"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        if let Some(i) = vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::NonFinite(format!("vertex {i}")));
        }
        Ok(Mesh {
            vertices,
            faces,
            level,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Unique undirected edges `(a, b)` with `a < b`, in first-seen face order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        unique_edges(&self.faces)
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.edges().len() as i64 + self.n_faces() as i64
    }

    /// Verifies the mesh is closed, edge-manifold with consistent winding and
    /// has Euler characteristic 2.
    pub fn check_closed_manifold(&self) -> Result<()> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(self.faces.len() * 3);
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                if directed.insert((a, b), fi).is_some() {
                    return Err(Error::InvalidMesh(format!(
                        "directed edge ({a},{b}) used twice; inconsistent winding or non-manifold"
                    )));
                }
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return Err(Error::InvalidMesh(format!("edge ({a},{b}) is on an open boundary")));
            }
        }
        let used = {
            let mut seen = vec![false; self.n_vertices()];
            for f in &self.faces {
                for &v in f {
                    seen[v] = true;
                }
            }
            seen.iter().all(|&s| s)
        };
        if !used {
            return Err(Error::InvalidMesh("mesh has unreferenced vertices".into()));
        }
        let chi = self.euler_characteristic();
        if chi != 2 {
            return Err(Error::InvalidMesh(format!(
                "Euler characteristic {chi}, expected 2 for a genus-0 surface"
            )));
        }
        Ok(())
    }

    pub fn face_area(&self, fi: usize) -> f64 {
        let [a, b, c] = self.face_points(fi);
        0.5 * vec3::norm(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
    }

    pub fn face_areas(&self) -> Vec<f64> {
        (0..self.n_faces()).map(|f| self.face_area(f)).collect()
    }

    #[inline]
    pub fn face_points(&self, fi: usize) -> [Vec3; 3] {
        let f = self.faces[fi];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    /// Unit normal per face using right-hand winding.
    pub fn face_normals(&self) -> Result<Vec<Vec3>> {
        (0..self.n_faces())
            .map(|fi| {
                let [a, b, c] = self.face_points(fi);
                vec3::normalize(vec3::cross(vec3::sub(b, a), vec3::sub(c, a)))
                    .ok_or(Error::DegenerateFace(fi))
            })
            .collect()
    }

    /// Area-weighted (unnormalized) vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut out = vec![[0.0; 3]; self.n_vertices()];
        for f in &self.faces {
            let n = vec3::cross(
                vec3::sub(self.vertices[f[1]], self.vertices[f[0]]),
                vec3::sub(self.vertices[f[2]], self.vertices[f[0]]),
            );
            for &v in f {
                out[v] = vec3::add(out[v], n);
            }
        }
        out
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    pub fn max_edge_length(&self) -> f64 {
        self.edges()
            .iter()
            .map(|e| vec3::dist2(self.vertices[e[0]], self.vertices[e[1]]).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Mesh {
        assert_eq!(vertices.len(), self.vertices.len());
        Mesh {
            vertices,
            faces: self.faces.clone(),
            level: self.level,
        }
    }

    pub fn scaled(&self, s: f64) -> Mesh {
        self.with_vertices(self.vertices.iter().map(|&v| vec3::scale(v, s)).collect())
    }

    pub fn translated(&self, t: Vec3) -> Mesh {
        self.with_vertices(self.vertices.iter().map(|&v| vec3::add(v, t)).collect())
    }

    /// Applies a 4x4 row-major affine to every vertex.
    pub fn transformed(&self, affine: &[[f64; 4]; 4]) -> Mesh {
        self.with_vertices(
            self.vertices
                .iter()
                .map(|v| crate::volume::apply_affine(affine, *v))
                .collect(),
        )
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self.n_vertices(), &self.faces)
    }
}

pub(crate) fn unique_edges(faces: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut seen: HashMap<(usize, usize), ()> = HashMap::with_capacity(faces.len() * 3 / 2);
    let mut out = Vec::with_capacity(faces.len() * 3 / 2);
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            if seen.insert(key, ()).is_none() {
                out.push([key.0, key.1]);
            }
        }
    }
    out
}

/// Connectivity shared by every mesh with the same faces.
#[derive(Debug, Clone)]
pub struct Topology {
    pub n_vertices: usize,
    pub faces: Vec<[usize; 3]>,
    pub edges: Vec<[usize; 2]>,
    /// CSR one-ring: neighbors of `v` are `nbr_idx[nbr_off[v]..nbr_off[v+1]]`, sorted.
    pub nbr_off: Vec<usize>,
    pub nbr_idx: Vec<usize>,
    /// Pairs of faces sharing an edge, each unordered pair once.
    pub face_pairs: Vec<[usize; 2]>,
}

impl Topology {
    pub fn new(n_vertices: usize, faces: &[[usize; 3]]) -> Self {
        let edges = unique_edges(faces);
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n_vertices];
        for e in &edges {
            nbrs[e[0]].push(e[1]);
            nbrs[e[1]].push(e[0]);
        }
        let mut nbr_off = Vec::with_capacity(n_vertices + 1);
        let mut nbr_idx = Vec::with_capacity(edges.len() * 2);
        nbr_off.push(0);
        for list in &mut nbrs {
            list.sort_unstable();
            nbr_idx.extend_from_slice(list);
            nbr_off.push(nbr_idx.len());
        }

        let mut edge_faces: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let mut face_pairs = Vec::with_capacity(edges.len());
        for e in &edges {
            let fs = &edge_faces[&(e[0], e[1])];
            for i in 0..fs.len() {
                for j in i + 1..fs.len() {
                    face_pairs.push([fs[i], fs[j]]);
                }
            }
        }
        Topology {
            n_vertices,
            faces: faces.to_vec(),
            edges,
            nbr_off,
            nbr_idx,
            face_pairs,
        }
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.nbr_idx[self.nbr_off[v]..self.nbr_off[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.nbr_off[v + 1] - self.nbr_off[v]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tetrahedron() -> Mesh {
        let s = 1.0 / 3f64.sqrt();
        Mesh::new(
            vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]],
            vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
            0,
        )
        .unwrap()
    }

    #[test]
    fn tetrahedron_is_closed_genus_zero() {
        let t = tetrahedron();
        t.check_closed_manifold().unwrap();
        assert_eq!(t.edges().len(), 6);
        assert_eq!(t.euler_characteristic(), 2);
    }

    #[test]
    fn rejects_out_of_range_and_degenerate_faces() {
        assert!(Mesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 3]], 0).is_err());
        assert!(Mesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 1]], 0).is_err());
    }

    #[test]
    fn open_mesh_fails_manifold_check() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            0,
        )
        .unwrap();
        assert!(m.check_closed_manifold().is_err());
    }

    #[test]
    fn ccw_triangle_normal_points_up() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            0,
        )
        .unwrap();
        assert_eq!(m.face_normals().unwrap()[0], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_area_face_names_index() {
        let m = Mesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [2.0, 0.0, 0.0]],
            vec![[0, 1, 2], [0, 1, 3]],
            0,
        )
        .unwrap();
        match m.face_normals() {
            Err(Error::DegenerateFace(1)) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn topology_face_pairs_cover_every_edge_once() {
        let t = tetrahedron().topology();
        assert_eq!(t.face_pairs.len(), 6);
        assert!(t.neighbors(0).len() == 3);
    }
}
