use crate::error::{Error, Result};
use crate::mesh::{Mesh, Topology};
use crate::vec3::{self, Vec3};

fn laplacian_step(topo: &Topology, v: &[Vec3], factor: f64) -> Vec<Vec3> {
    (0..v.len())
        .map(|i| {
            let nb = topo.neighbors(i);
            if nb.is_empty() {
                return v[i];
            }
            let mut mean = [0.0; 3];
            for &j in nb {
                mean = vec3::add(mean, v[j]);
            }
            let mean = vec3::scale(mean, 1.0 / nb.len() as f64);
            vec3::add(v[i], vec3::scale(vec3::sub(mean, v[i]), factor))
        })
        .collect()
}

/// Taubin lambda|mu smoothing with uniform Laplacian weights. One iteration
/// is a shrinking step with `lambda` followed by an inflating step with `mu`.
pub fn taubin_smooth(m: &Mesh, lambda: f64, mu: f64, iterations: usize) -> Result<Mesh> {
    if !(lambda > 0.0 && mu < 0.0 && mu.abs() > lambda) {
        return Err(Error::invalid(format!(
            "Taubin factors need 0 < lambda < |mu| with mu < 0 (got {lambda}, {mu})"
        )));
    }
    if iterations == 0 {
        return Ok(m.clone());
    }
    let topo = m.topology();
    let mut v = m.vertices.clone();
    for _ in 0..iterations {
        v = laplacian_step(&topo, &v, lambda);
        v = laplacian_step(&topo, &v, mu);
    }
    Ok(m.with_vertices(v))
}
