//! Signed distance volumes (positive inside) from closed triangle meshes.
//!
//! Magnitudes are exact point-to-triangle distances; signs come from ray
//! parity along each grid row.

use rayon::prelude::*;

use crate::mesh::{Mesh, TriangleIndex};
use crate::vec3::{self, Vec3};
use crate::volume::{Grid, Volume};

#[derive(Debug, Clone)]
pub struct SignedDistanceVolume {
    pub volume: Volume<f64>,
    /// Set when part of the mesh lies outside the grid; distances are still valid.
    pub mesh_outside_grid: bool,
}

/// Ray-triangle crossing parameter along an infinite line (Moller-Trumbore).
pub(crate) fn line_triangle(origin: Vec3, dir: Vec3, t: &[Vec3; 3]) -> Option<f64> {
    let e1 = vec3::sub(t[1], t[0]);
    let e2 = vec3::sub(t[2], t[0]);
    let p = vec3::cross(dir, e2);
    let det = vec3::dot(e1, p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = vec3::sub(origin, t[0]);
    let u = vec3::dot(s, p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = vec3::cross(s, e1);
    let v = vec3::dot(dir, q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(vec3::dot(e2, q) * inv)
}

// Sub-voxel offset keeping rays off mesh edges and vertices that sit on
// grid-aligned coordinates.
const RAY_JITTER: [f64; 2] = [3.1415926e-7, 2.7182818e-7];

pub fn signed_distance_volume(m: &Mesh, grid: &Grid) -> SignedDistanceVolume {
    let index = TriangleIndex::new(m);
    let tris: Vec<[Vec3; 3]> = (0..m.n_faces()).map(|f| m.face_points(f)).collect();
    let [nx, ny, nz] = grid.dims;
    let a = grid.affine;
    let dir = [a[0][0], a[1][0], a[2][0]];
    let step = vec3::norm(dir);
    let unit = vec3::scale(dir, 1.0 / step);
    let perp1 = [a[0][1], a[1][1], a[2][1]];
    let perp2 = [a[0][2], a[1][2], a[2][2]];

    let (mlo, mhi) = m.bounding_box();
    let g0 = grid.world(0, 0, 0);
    let g1 = grid.world(nx - 1, ny - 1, nz - 1);
    let mesh_outside_grid = (0..3).any(|k| {
        let (lo, hi) = (g0[k].min(g1[k]), g0[k].max(g1[k]));
        mlo[k] < lo || mhi[k] > hi
    });

    let rows: Vec<Vec<f64>> = (0..ny * nz)
        .into_par_iter()
        .map(|row| {
            let (j, k) = (row % ny, row / ny);
            let base = grid.world(0, j, k);
            let origin = vec3::add(
                base,
                vec3::add(vec3::scale(perp1, RAY_JITTER[0]), vec3::scale(perp2, RAY_JITTER[1])),
            );
            let mut crossings: Vec<f64> = tris
                .iter()
                .filter_map(|t| line_triangle(origin, unit, t))
                .collect();
            crossings.sort_by(f64::total_cmp);
            let mut out = Vec::with_capacity(nx);
            let mut c = 0;
            for i in 0..nx {
                let p = grid.world(i, j, k);
                let t = i as f64 * step;
                while c < crossings.len() && crossings[c] < t {
                    c += 1;
                }
                let inside = c % 2 == 1;
                let d = index.distance(p).unwrap_or(f64::INFINITY);
                out.push(if inside { d } else { -d });
            }
            out
        })
        .collect();
    let mut data = vec![0.0; grid.len()];
    for (row, vals) in rows.into_iter().enumerate() {
        let off = row * nx;
        data[off..off + nx].copy_from_slice(&vals);
    }
    SignedDistanceVolume {
        volume: Volume {
            dims: grid.dims,
            affine: grid.affine,
            data,
        },
        mesh_outside_grid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_template, subdivide};

    fn sphere(radius: f64, level: u32) -> Mesh {
        let mut m = build_template(62).unwrap();
        for _ in 0..level {
            m = subdivide(&m).unwrap();
        }
        let v = m
            .vertices
            .iter()
            .map(|p| vec3::scale(vec3::normalize(*p).unwrap(), radius))
            .collect();
        m.with_vertices(v)
    }

    /// Independent sign oracle: brute-force parity along +z from the voxel.
    fn parity_z(tris: &[[Vec3; 3]], p: Vec3) -> bool {
        let origin = vec3::add(p, [1.1e-7, -0.7e-7, 0.0]);
        tris.iter()
            .filter_map(|t| line_triangle(origin, [0.0, 0.0, 1.0], t))
            .filter(|&t| t > 0.0)
            .count()
            % 2
            == 1
    }

    #[test]
    fn center_of_sphere() {
        let m = sphere(10.0, 3);
        let grid = Grid::centered([25, 25, 25], 1.0);
        let sdf = signed_distance_volume(&m, &grid);
        let c = *sdf.volume.get(12, 12, 12);
        assert!((c - 10.0).abs() <= 0.5 * 3f64.sqrt(), "{c}");
        assert!(!sdf.mesh_outside_grid);
    }

    #[test]
    fn sign_matches_parity_oracle() {
        let m = sphere(9.0, 2).translated([0.3, -0.4, 0.2]);
        let grid = Grid::centered([32, 32, 32], 0.75);
        let sdf = signed_distance_volume(&m, &grid);
        let tris: Vec<[Vec3; 3]> = (0..m.n_faces()).map(|f| m.face_points(f)).collect();
        for k in 0..32 {
            for j in 0..32 {
                for i in 0..32 {
                    let inside = parity_z(&tris, grid.world(i, j, k));
                    assert_eq!(*sdf.volume.get(i, j, k) > 0.0, inside, "voxel {i},{j},{k}");
                }
            }
        }
    }

    #[test]
    fn surface_voxels_are_close_and_sign_flips_once() {
        let m = sphere(6.0, 3);
        let grid = Grid::centered([21, 21, 21], 1.0);
        let sdf = signed_distance_volume(&m, &grid);
        let max_edge = m.max_edge_length();
        let row: Vec<f64> = (0..21).map(|i| *sdf.volume.get(i, 10, 10)).collect();
        let flips = row.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count();
        assert_eq!(flips, 2); // enters and leaves
        let half: Vec<f64> = row[10..].to_vec();
        assert_eq!(half.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count(), 1);
        // Voxel (16,10,10) sits on the sphere.
        assert!(sdf.volume.get(16, 10, 10).abs() < max_edge);
    }

    #[test]
    fn flags_mesh_outside_grid() {
        let m = sphere(10.0, 1);
        let sdf = signed_distance_volume(&m, &Grid::centered([8, 8, 8], 1.0));
        assert!(sdf.mesh_outside_grid);
    }
}
