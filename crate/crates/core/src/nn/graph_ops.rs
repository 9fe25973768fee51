//! Operations on per-vertex features stored as `[N, C]` matrices.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{SubdivisionMap, Topology};

use super::tape::{Tape, Tensor, Var};

fn rows_cols(t: &Tape, x: Var, rows: usize, op: &str) -> Result<usize> {
    match t.shape(x) {
        [n, c] if *n == rows => Ok(*c),
        s => Err(Error::ShapeMismatch(format!("{op}: expected [{rows}, C], got {s:?}"))),
    }
}

/// Argmax indices left behind by [`Tape::mesh_pool`], consumed by
/// [`Tape::mesh_unpool`].
#[derive(Debug, Clone)]
pub struct PoolIndices {
    pub n_fine: usize,
    pub channels: usize,
    /// Fine vertex selected for each `(coarse vertex, channel)` pair.
    pub argmax: Vec<usize>,
}

impl Tape {
    /// Mean of each vertex's neighbor features.
    pub fn neighbor_mean(&mut self, x: Var, topo: &Arc<Topology>) -> Result<Var> {
        let c = rows_cols(self, x, topo.n_vertices, "neighbor_mean")?;
        let xs = self.data(x);
        let mut out = vec![0.0; xs.len()];
        for v in 0..topo.n_vertices {
            let nb = topo.neighbors(v);
            if nb.is_empty() {
                continue;
            }
            let inv = 1.0 / nb.len() as f64;
            let row = &mut out[v * c..(v + 1) * c];
            for &u in nb {
                for (o, s) in row.iter_mut().zip(&xs[u * c..(u + 1) * c]) {
                    *o += s * inv;
                }
            }
        }
        let topo = Arc::clone(topo);
        Ok(self.push(
            Tensor {
                shape: vec![topo.n_vertices, c],
                data: out,
            },
            &[x],
            Box::new(move |_, g, gr| {
                let gx = gr.of(x);
                for v in 0..topo.n_vertices {
                    let nb = topo.neighbors(v);
                    if nb.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / nb.len() as f64;
                    for &u in nb {
                        for k in 0..c {
                            gx[u * c + k] += g[v * c + k] * inv;
                        }
                    }
                }
            }),
        ))
    }

    /// Channel-wise max over each group of fine vertices.
    pub fn mesh_pool(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<(Var, Arc<PoolIndices>)> {
        let (n_fine, c) = match self.shape(x) {
            [n, c] => (*n, *c),
            s => return Err(Error::ShapeMismatch(format!("mesh_pool: expected [N, C], got {s:?}"))),
        };
        let xs = self.data(x);
        let mut out = Vec::with_capacity(groups.len() * c);
        let mut argmax = Vec::with_capacity(groups.len() * c);
        for grp in groups {
            if grp.is_empty() || grp.iter().any(|&u| u >= n_fine) {
                return Err(Error::invalid("mesh_pool: empty or out-of-range group"));
            }
            for k in 0..c {
                let mut best = grp[0];
                for &u in &grp[1..] {
                    if xs[u * c + k] > xs[best * c + k] {
                        best = u;
                    }
                }
                out.push(xs[best * c + k]);
                argmax.push(best);
            }
        }
        let idx = Arc::new(PoolIndices {
            n_fine,
            channels: c,
            argmax,
        });
        let back_idx = Arc::clone(&idx);
        let v = self.push(
            Tensor {
                shape: vec![groups.len(), c],
                data: out,
            },
            &[x],
            Box::new(move |_, g, gr| {
                let gx = gr.of(x);
                for (j, &u) in back_idx.argmax.iter().enumerate() {
                    gx[u * c + j % c] += g[j];
                }
            }),
        );
        Ok((v, idx))
    }

    /// Scatters coarse features back to the fine vertices they were pooled
    /// from; all other entries are zero.
    pub fn mesh_unpool(&mut self, x: Var, idx: &Arc<PoolIndices>) -> Result<Var> {
        let n_coarse = idx.argmax.len() / idx.channels.max(1);
        let c = rows_cols(self, x, n_coarse, "mesh_unpool")?;
        if c != idx.channels {
            return Err(Error::ShapeMismatch(format!("mesh_unpool: {c} channels, pooled {}", idx.channels)));
        }
        let xs = self.data(x);
        let mut out = vec![0.0; idx.n_fine * c];
        for (j, &u) in idx.argmax.iter().enumerate() {
            out[u * c + j % c] += xs[j];
        }
        let idx = Arc::clone(idx);
        Ok(self.push(
            Tensor {
                shape: vec![idx.n_fine, c],
                data: out,
            },
            &[x],
            Box::new(move |_, g, gr| {
                let gx = gr.of(x);
                for (j, &u) in idx.argmax.iter().enumerate() {
                    gx[j] += g[u * c + j % c];
                }
            }),
        ))
    }

    /// Lifts coarse per-vertex values to the subdivided mesh: coarse vertices
    /// keep theirs and each edge midpoint takes the mean of its endpoints.
    pub fn midpoint_upsample(&mut self, x: Var, map: &Arc<SubdivisionMap>) -> Result<Var> {
        let c = rows_cols(self, x, map.n_coarse, "midpoint_upsample")?;
        let xs = self.data(x);
        let mut out = Vec::with_capacity(map.n_fine() * c);
        out.extend_from_slice(xs);
        for &[a, b] in &map.edges {
            for k in 0..c {
                out.push(0.5 * (xs[a * c + k] + xs[b * c + k]));
            }
        }
        let map = Arc::clone(map);
        Ok(self.push(
            Tensor {
                shape: vec![map.n_fine(), c],
                data: out,
            },
            &[x],
            Box::new(move |_, g, gr| {
                let gx = gr.of(x);
                let nc = map.n_coarse * c;
                for (d, s) in gx.iter_mut().zip(&g[..nc]) {
                    *d += s;
                }
                for (e, &[a, b]) in map.edges.iter().enumerate() {
                    for k in 0..c {
                        let h = 0.5 * g[nc + e * c + k];
                        gx[a * c + k] += h;
                        gx[b * c + k] += h;
                    }
                }
            }),
        ))
    }
}
