use std::collections::HashMap;

use crate::error::Result;
use crate::vec3;

use super::{Mesh, Topology};

/// How a fine mesh was derived from a coarse one by midpoint subdivision.
/// Fine vertex `n_coarse + k` is the midpoint of `edges[k]`; the first
/// `n_coarse` fine vertices are the coarse vertices themselves.
#[derive(Debug, Clone)]
pub struct SubdivisionMap {
    pub n_coarse: usize,
    pub edges: Vec<[usize; 2]>,
    pub fine_faces: Vec<[usize; 3]>,
}

impl SubdivisionMap {
    pub fn new(faces: &[[usize; 3]], n_coarse: usize) -> Self {
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3 / 2);
        let mut edges = Vec::with_capacity(faces.len() * 3 / 2);
        let mut mid = |a: usize, b: usize, edges: &mut Vec<[usize; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *edge_ids.entry(key).or_insert_with(|| {
                edges.push([key.0, key.1]);
                n_coarse + edges.len() - 1
            })
        };
        let mut fine_faces = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in faces {
            let ab = mid(a, b, &mut edges);
            let bc = mid(b, c, &mut edges);
            let ca = mid(c, a, &mut edges);
            fine_faces.push([a, ab, ca]);
            fine_faces.push([ab, b, bc]);
            fine_faces.push([ca, bc, c]);
            fine_faces.push([ab, bc, ca]);
        }
        SubdivisionMap {
            n_coarse,
            edges,
            fine_faces,
        }
    }

    pub fn n_fine(&self) -> usize {
        self.n_coarse + self.edges.len()
    }
}

/// Midpoint subdivision: one vertex per edge, every face split into four.
/// Input vertices keep their indices.
pub fn subdivide(m: &Mesh) -> Result<Mesh> {
    m.check_closed_manifold()?;
    let map = SubdivisionMap::new(&m.faces, m.n_vertices());
    let mut vertices = m.vertices.clone();
    vertices.reserve(map.edges.len());
    for e in &map.edges {
        vertices.push(vec3::midpoint(m.vertices[e[0]], m.vertices[e[1]]));
    }
    Ok(Mesh {
        vertices,
        faces: map.fine_faces,
        level: m.level + 1,
    })
}

/// Subdivision hierarchy of a template: connectivity and parent maps for
/// levels `0..=max_level`, plus the template positions at every level.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub topologies: Vec<Topology>,
    /// `maps[l]` takes level `l` to level `l + 1`.
    pub maps: Vec<SubdivisionMap>,
    pub meshes: Vec<Mesh>,
}

impl Hierarchy {
    pub fn new(template: &Mesh, max_level: u32) -> Result<Self> {
        template.check_closed_manifold()?;
        let mut meshes = vec![template.clone()];
        let mut maps = Vec::new();
        for _ in 0..max_level {
            let cur = meshes.last().unwrap();
            maps.push(SubdivisionMap::new(&cur.faces, cur.n_vertices()));
            let next = subdivide(cur)?;
            meshes.push(next);
        }
        let topologies = meshes.iter().map(|m| m.topology()).collect();
        Ok(Hierarchy {
            topologies,
            maps,
            meshes,
        })
    }

    pub fn max_level(&self) -> u32 {
        (self.meshes.len() - 1) as u32
    }

    /// Vertex-pooling neighborhoods from level `l` down to `l - 1`: coarse
    /// vertex `i` pools itself and its fine one-ring.
    pub fn pool_groups(&self, fine_level: usize) -> Vec<Vec<usize>> {
        let coarse_n = self.topologies[fine_level - 1].n_vertices;
        let topo = &self.topologies[fine_level];
        (0..coarse_n)
            .map(|i| {
                let mut g = vec![i];
                g.extend_from_slice(topo.neighbors(i));
                g
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_template;

    #[test]
    fn tetrahedron_subdivides_to_ten_vertices() {
        let s = 1.0 / 3f64.sqrt();
        let t = Mesh::new(
            vec![[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]],
            vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
            0,
        )
        .unwrap();
        let f = subdivide(&t).unwrap();
        assert_eq!(f.n_vertices(), 10);
        assert_eq!(f.n_faces(), 16);
        assert_eq!(f.level, 1);
        f.check_closed_manifold().unwrap();
        assert_eq!(&f.vertices[..4], &t.vertices[..]);
    }

    #[test]
    fn vertex_recursion_from_62() {
        let mut m = build_template(62).unwrap();
        let mut counts = vec![m.n_vertices()];
        for _ in 0..4 {
            m = subdivide(&m).unwrap();
            m.check_closed_manifold().unwrap();
            counts.push(m.n_vertices());
        }
        assert_eq!(counts, vec![62, 242, 962, 3842, 15362]);
    }

    #[test]
    fn non_manifold_input_rejected() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            0,
        )
        .unwrap();
        assert!(subdivide(&m).is_err());
    }

    #[test]
    fn hierarchy_maps_match_subdivide() {
        let t = build_template(62).unwrap();
        let h = Hierarchy::new(&t, 2).unwrap();
        assert_eq!(h.maps[0].n_fine(), 242);
        assert_eq!(h.maps[1].fine_faces, h.meshes[2].faces);
        let groups = h.pool_groups(1);
        assert_eq!(groups.len(), 62);
        assert!(groups.iter().all(|g| g.len() >= 6));
    }
}
