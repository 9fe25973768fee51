//! Dense and volumetric operations. Volumes are `[C, Z, Y, X]` with X fastest.

use crate::error::{Error, Result};
use crate::vec3::Vec3;
use crate::volume::Affine;

use super::gemm::{gemm, View};
use super::tape::{Tape, Tensor, Var};

fn same_shape(t: &Tape, a: Var, b: Var, op: &str) -> Result<()> {
    if t.shape(a) != t.shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{op}: {:?} vs {:?}",
            t.shape(a),
            t.shape(b)
        )));
    }
    Ok(())
}

fn spatial(shape: &[usize]) -> Result<(usize, [usize; 3])> {
    match shape {
        [c, z, y, x] => Ok((*c, [*z, *y, *x])),
        other => Err(Error::ShapeMismatch(format!("expected [C, Z, Y, X], got {other:?}"))),
    }
}

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.axpy(a, 1.0, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.axpy(a, -1.0, b)
    }

    /// `a + alpha * b`.
    pub fn axpy(&mut self, a: Var, alpha: f64, b: Var) -> Result<Var> {
        same_shape(self, a, b, "axpy")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + alpha * y).collect();
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        Ok(self.push(
            value,
            &[a, b],
            Box::new(move |t, g, gr| {
                if t.needs_grad(a) {
                    gr.accumulate(a, g);
                }
                if t.needs_grad(b) {
                    for (d, &x) in gr.of(b).iter_mut().zip(g) {
                        *d += alpha * x;
                    }
                }
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.data(a).iter().map(|x| x * s).collect(),
        };
        self.push(
            value,
            &[a],
            Box::new(move |_, g, gr| {
                for (d, &x) in gr.of(a).iter_mut().zip(g) {
                    *d += s * x;
                }
            }),
        )
    }

    /// Elementwise product.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "hadamard")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        Ok(self.push(
            value,
            &[a, b],
            Box::new(move |t, g, gr| {
                if t.needs_grad(a) {
                    let bd = t.data(b);
                    for ((d, &x), &y) in gr.of(a).iter_mut().zip(g).zip(bd) {
                        *d += x * y;
                    }
                }
                if t.needs_grad(b) {
                    let ad = t.data(a);
                    for ((d, &x), &y) in gr.of(b).iter_mut().zip(g).zip(ad) {
                        *d += x * y;
                    }
                }
            }),
        ))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data: self.data(a).iter().map(|x| x * x).collect(),
        };
        self.push(
            value,
            &[a],
            Box::new(move |t, g, gr| {
                let ad = t.data(a);
                for ((d, &x), &v) in gr.of(a).iter_mut().zip(g).zip(ad) {
                    *d += 2.0 * v * x;
                }
            }),
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(
            Tensor::scalar(s),
            &[a],
            Box::new(move |_, g, gr| {
                for d in gr.of(a) {
                    *d += g[0];
                }
            }),
        )
    }

    /// `sum_i w_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::ShapeMismatch("weighted_sum takes scalars".into()));
            }
            s += w * self.data(v)[0];
        }
        let terms = terms.to_vec();
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        Ok(self.push(
            Tensor::scalar(s),
            &parents,
            Box::new(move |t, g, gr| {
                for &(v, w) in &terms {
                    if t.needs_grad(v) {
                        gr.of(v)[0] += w * g[0];
                    }
                }
            }),
        ))
    }

    /// Parametric ReLU with a single learnable negative slope `slope` (shape [1]).
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.value(slope).len() != 1 {
            return Err(Error::ShapeMismatch("PReLU slope must have one element".into()));
        }
        let a = self.data(slope)[0];
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data: self.data(x).iter().map(|&v| if v > 0.0 { v } else { a * v }).collect(),
        };
        Ok(self.push(
            value,
            &[x, slope],
            Box::new(move |t, g, gr| {
                let xs = t.data(x);
                let a = t.data(slope)[0];
                if t.needs_grad(x) {
                    for ((d, &v), &gv) in gr.of(x).iter_mut().zip(xs).zip(g) {
                        *d += if v > 0.0 { gv } else { a * gv };
                    }
                }
                if t.needs_grad(slope) {
                    let s: f64 = xs.iter().zip(g).filter(|(v, _)| **v <= 0.0).map(|(v, gv)| v * gv).sum();
                    gr.of(slope)[0] += s;
                }
            }),
        ))
    }

    /// `x W + b` for `x: [N, Cin]`, `w: [Cin, Cout]`, `b: [Cout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, cin) = match self.shape(x) {
            [n, c] => (*n, *c),
            s => return Err(Error::ShapeMismatch(format!("linear input must be [N, C], got {s:?}"))),
        };
        let cout = match self.shape(w) {
            [ci, co] if *ci == cin => *co,
            s => return Err(Error::ShapeMismatch(format!("linear weight {s:?} for input width {cin}"))),
        };
        let mut out = vec![0.0; n * cout];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::ShapeMismatch(format!("linear bias {:?}, expected [{cout}]", self.shape(b))));
            }
            let bd = self.data(b);
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(bd);
            }
        }
        gemm(
            n,
            cin,
            cout,
            self.data(x),
            View::row_major(0, cin),
            self.data(w),
            View::row_major(0, cout),
            1.0,
            &mut out,
            View::row_major(0, cout),
        );
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(
            Tensor {
                shape: vec![n, cout],
                data: out,
            },
            &parents,
            Box::new(move |t, g, gr| {
                if t.needs_grad(x) {
                    // dX = G W^T
                    let wd = t.data(w);
                    gemm(n, cout, cin, g, View::row_major(0, cout), wd, View::col_major(0, cout), 1.0, gr.of(x), View::row_major(0, cin));
                }
                if t.needs_grad(w) {
                    // dW = X^T G
                    let xd = t.data(x);
                    gemm(cin, n, cout, xd, View::col_major(0, cin), g, View::row_major(0, cout), 1.0, gr.of(w), View::row_major(0, cout));
                }
                if let Some(b) = b {
                    if t.needs_grad(b) {
                        let gb = gr.of(b);
                        for row in g.chunks_exact(cout) {
                            for (d, v) in gb.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    }
                }
            }),
        ))
    }

    /// Concatenation along the first axis (channels of a volume, rows of a matrix).
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(Error::ShapeMismatch(format!("concat0: {s:?} vs {first:?}")));
            }
            rows += s[0];
            sizes.push(self.value(p).len());
            data.extend_from_slice(self.data(p));
        }
        let mut shape = first;
        shape[0] = rows;
        let parts = parts.to_vec();
        let parents = parts.clone();
        Ok(self.push(
            Tensor { shape, data },
            &parents,
            Box::new(move |t, g, gr| {
                let mut off = 0;
                for (&p, &n) in parts.iter().zip(&sizes) {
                    if t.needs_grad(p) {
                        gr.accumulate(p, &g[off..off + n]);
                    }
                    off += n;
                }
            }),
        ))
    }

    /// Concatenation of `[N, Ca]` and `[N, Cb]` matrices along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, cb) = match (self.shape(a), self.shape(b)) {
            ([n, ca], [m, cb]) if n == m => (*n, *ca, *cb),
            (sa, sb) => return Err(Error::ShapeMismatch(format!("concat_cols: {sa:?} vs {sb:?}"))),
        };
        let c = ca + cb;
        let mut data = Vec::with_capacity(n * c);
        for r in 0..n {
            data.extend_from_slice(&self.data(a)[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&self.data(b)[r * cb..(r + 1) * cb]);
        }
        Ok(self.push(
            Tensor { shape: vec![n, c], data },
            &[a, b],
            Box::new(move |t, g, gr| {
                if t.needs_grad(a) {
                    let ga = gr.of(a);
                    for r in 0..n {
                        for k in 0..ca {
                            ga[r * ca + k] += g[r * c + k];
                        }
                    }
                }
                if t.needs_grad(b) {
                    let gb = gr.of(b);
                    for r in 0..n {
                        for k in 0..cb {
                            gb[r * cb + k] += g[r * c + ca + k];
                        }
                    }
                }
            }),
        ))
    }

    /// Instance normalization of `[C, ...]` data: each channel standardized
    /// over its remaining axes.
    pub fn instance_norm_channels_first(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::ShapeMismatch(format!("instance norm needs [C, ...], got {shape:?}")));
        }
        let c = shape[0];
        let n = self.value(x).len() / c;
        if n == 0 {
            return Err(Error::ShapeMismatch("instance norm over empty spatial axes".into()));
        }
        let xs = self.data(x);
        let mut out = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let src = &xs[ch * n..(ch + 1) * n];
            let (mean, inv) = moments(src.iter().copied(), n, eps);
            inv_std[ch] = inv;
            for (o, &v) in out[ch * n..(ch + 1) * n].iter_mut().zip(src) {
                *o = (v - mean) * inv;
            }
        }
        let y = out.clone();
        Ok(self.push(
            Tensor { shape, data: out },
            &[x],
            Box::new(move |_, g, gr| {
                let gx = gr.of(x);
                for ch in 0..c {
                    let r = ch * n..(ch + 1) * n;
                    norm_backward(&y[r.clone()], &g[r.clone()], inv_std[ch], &mut gx[r], 1);
                }
            }),
        ))
    }

    /// Instance normalization of `[N, C]` data: each column standardized
    /// over the rows.
    pub fn instance_norm_channels_last(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (n, c) = match self.shape(x) {
            [n, c] if *n > 0 => (*n, *c),
            s => return Err(Error::ShapeMismatch(format!("instance norm needs non-empty [N, C], got {s:?}"))),
        };
        let xs = self.data(x);
        let mut out = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, inv) = moments((0..n).map(|r| xs[r * c + ch]), n, eps);
            inv_std[ch] = inv;
            for r in 0..n {
                out[r * c + ch] = (xs[r * c + ch] - mean) * inv;
            }
        }
        let y = out.clone();
        Ok(self.push(
            Tensor {
                shape: vec![n, c],
                data: out,
            },
            &[x],
            Box::new(move |_, g, gr| {
                let gx = gr.of(x);
                for ch in 0..c {
                    let (mut mg, mut mgy) = (0.0, 0.0);
                    for r in 0..n {
                        mg += g[r * c + ch];
                        mgy += g[r * c + ch] * y[r * c + ch];
                    }
                    mg /= n as f64;
                    mgy /= n as f64;
                    for r in 0..n {
                        let i = r * c + ch;
                        gx[i] += inv_std[ch] * (g[i] - mg - y[i] * mgy);
                    }
                }
            }),
        ))
    }

    /// 3x3x3 convolution with zero padding 1: `x: [Cin, Z, Y, X]`,
    /// `w: [Cout, Cin, 3, 3, 3]`, `b: [Cout]`.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (cin, [nz, ny, nx]) = spatial(self.shape(x))?;
        let cout = match self.shape(w) {
            [co, ci, 3, 3, 3] if *ci == cin => *co,
            s => return Err(Error::ShapeMismatch(format!("conv3d weight {s:?} for {cin} input channels"))),
        };
        if self.shape(b) != [cout] {
            return Err(Error::ShapeMismatch(format!("conv3d bias {:?}", self.shape(b))));
        }
        let geo = PaddedGeometry::new([nz, ny, nx]);
        let xp = geo.pad(self.data(x), cin);
        let mut op = vec![0.0; cout * geo.len];
        for (k, off) in geo.offsets.iter().enumerate() {
            gemm(
                cout,
                cin,
                geo.span,
                self.data(w),
                View { offset: k, rs: cin * 27, cs: 27 },
                &xp,
                View::row_major((geo.p0 as isize + off) as usize, geo.len),
                1.0,
                &mut op,
                View::row_major(geo.p0, geo.len),
            );
        }
        let mut out = geo.unpad(&op, cout);
        let n = nz * ny * nx;
        for (ch, &bv) in self.data(b).iter().enumerate() {
            for v in &mut out[ch * n..(ch + 1) * n] {
                *v += bv;
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![cout, nz, ny, nx],
                data: out,
            },
            &[x, w, b],
            Box::new(move |t, g, gr| {
                let gp = geo.pad(g, cout);
                if t.needs_grad(x) {
                    let mut gxp = vec![0.0; cin * geo.len];
                    for (k, off) in geo.offsets.iter().enumerate() {
                        gemm(
                            cin,
                            cout,
                            geo.span,
                            t.data(w),
                            View { offset: k, rs: 27, cs: cin * 27 },
                            &gp,
                            View::row_major(geo.p0, geo.len),
                            1.0,
                            &mut gxp,
                            View::row_major((geo.p0 as isize + off) as usize, geo.len),
                        );
                    }
                    let gx = geo.unpad(&gxp, cin);
                    gr.accumulate(x, &gx);
                }
                if t.needs_grad(w) {
                    let xp = geo.pad(t.data(x), cin);
                    let gw = gr.of(w);
                    for (k, off) in geo.offsets.iter().enumerate() {
                        gemm(
                            cout,
                            geo.span,
                            cin,
                            &gp,
                            View::row_major(geo.p0, geo.len),
                            &xp,
                            View { offset: (geo.p0 as isize + off) as usize, rs: 1, cs: geo.len },
                            1.0,
                            gw,
                            View { offset: k, rs: cin * 27, cs: 27 },
                        );
                    }
                }
                if t.needs_grad(b) {
                    let gb = gr.of(b);
                    let n = nz * ny * nx;
                    for ch in 0..cout {
                        gb[ch] += g[ch * n..(ch + 1) * n].iter().sum::<f64>();
                    }
                }
            }),
        ))
    }

    /// 2x2x2 max pooling; spatial sizes must be even.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (c, [nz, ny, nx]) = spatial(self.shape(x))?;
        if nz % 2 + ny % 2 + nx % 2 != 0 {
            return Err(Error::ShapeMismatch(format!("maxpool2 needs even sizes, got {:?}", [nz, ny, nx])));
        }
        let (oz, oy, ox) = (nz / 2, ny / 2, nx / 2);
        let xs = self.data(x);
        let mut out = Vec::with_capacity(c * oz * oy * ox);
        let mut arg = Vec::with_capacity(c * oz * oy * ox);
        for ch in 0..c {
            let base = ch * nz * ny * nx;
            for z in 0..oz {
                for y in 0..oy {
                    for xx in 0..ox {
                        let mut best = f64::NEG_INFINITY;
                        let mut bi = 0;
                        for dz in 0..2 {
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let i = base + ((2 * z + dz) * ny + 2 * y + dy) * nx + 2 * xx + dx;
                                    if xs[i] > best {
                                        best = xs[i];
                                        bi = i;
                                    }
                                }
                            }
                        }
                        out.push(best);
                        arg.push(bi);
                    }
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![c, oz, oy, ox],
                data: out,
            },
            &[x],
            Box::new(move |_, g, gr| {
                let gx = gr.of(x);
                for (&i, &v) in arg.iter().zip(g) {
                    gx[i] += v;
                }
            }),
        ))
    }

    /// Nearest-neighbor upsampling by 2 along every spatial axis.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, [nz, ny, nx]) = spatial(self.shape(x))?;
        let (oz, oy, ox) = (2 * nz, 2 * ny, 2 * nx);
        let xs = self.data(x);
        let mut out = Vec::with_capacity(c * oz * oy * ox);
        for ch in 0..c {
            for z in 0..oz {
                for y in 0..oy {
                    let row = ch * nz * ny * nx + ((z / 2) * ny + y / 2) * nx;
                    for xx in 0..ox {
                        out.push(xs[row + xx / 2]);
                    }
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![c, oz, oy, ox],
                data: out,
            },
            &[x],
            Box::new(move |_, g, gr| {
                let gx = gr.of(x);
                let mut i = 0;
                for ch in 0..c {
                    for z in 0..oz {
                        for y in 0..oy {
                            let row = ch * nz * ny * nx + ((z / 2) * ny + y / 2) * nx;
                            for xx in 0..ox {
                                gx[row + xx / 2] += g[i];
                                i += 1;
                            }
                        }
                    }
                }
            }),
        ))
    }

    /// Zero-pads the spatial axes at their high ends up to `size`.
    pub fn pad_spatial(&mut self, x: Var, size: [usize; 3]) -> Result<Var> {
        let (c, from) = spatial(self.shape(x))?;
        if (0..3).any(|k| size[k] < from[k]) {
            return Err(Error::ShapeMismatch(format!("cannot pad {from:?} to {size:?}")));
        }
        let out = copy_box(self.data(x), c, from, size, from);
        Ok(self.push(
            Tensor {
                shape: vec![c, size[0], size[1], size[2]],
                data: out,
            },
            &[x],
            Box::new(move |_, g, gr| {
                let back = copy_box(g, c, size, from, from);
                gr.accumulate(x, &back);
            }),
        ))
    }

    /// Keeps the low corner of the spatial axes, of extent `size`.
    pub fn crop_spatial(&mut self, x: Var, size: [usize; 3]) -> Result<Var> {
        let (c, from) = spatial(self.shape(x))?;
        if (0..3).any(|k| size[k] > from[k]) {
            return Err(Error::ShapeMismatch(format!("cannot crop {from:?} to {size:?}")));
        }
        let out = copy_box(self.data(x), c, from, size, size);
        Ok(self.push(
            Tensor {
                shape: vec![c, size[0], size[1], size[2]],
                data: out,
            },
            &[x],
            Box::new(move |_, g, gr| {
                let back = copy_box(g, c, size, from, size);
                gr.accumulate(x, &back);
            }),
        ))
    }

    /// Trilinear sampling of `feat: [C, Z, Y, X]` at world points `pts: [N, 3]`
    /// mapped to voxel coordinates by `world_to_voxel`. Output `[N, C]`.
    /// Coordinates outside the grid clamp to the border.
    pub fn trilinear_sample(&mut self, feat: Var, pts: Var, world_to_voxel: &Affine) -> Result<Var> {
        let (c, dims_zyx) = spatial(self.shape(feat))?;
        let n = match self.shape(pts) {
            [n, 3] => *n,
            s => return Err(Error::ShapeMismatch(format!("sample points must be [N, 3], got {s:?}"))),
        };
        let dims = [dims_zyx[2], dims_zyx[1], dims_zyx[0]];
        let a = *world_to_voxel;
        let ps = self.data(pts);
        let fs = self.data(feat);
        let cells: Vec<Cell> = (0..n)
            .map(|i| {
                let p = [ps[3 * i], ps[3 * i + 1], ps[3 * i + 2]];
                Cell::locate(&a, p, dims)
            })
            .collect();
        let stride = dims[0] * dims[1] * dims[2];
        let mut out = vec![0.0; n * c];
        for (i, cell) in cells.iter().enumerate() {
            let w = cell.weights();
            for (corner, &wt) in w.iter().enumerate() {
                if wt == 0.0 {
                    continue;
                }
                let vi = cell.corner_index(corner, dims);
                for ch in 0..c {
                    out[i * c + ch] += wt * fs[ch * stride + vi];
                }
            }
        }
        Ok(self.push(
            Tensor {
                shape: vec![n, c],
                data: out,
            },
            &[feat, pts],
            Box::new(move |t, g, gr| {
                if t.needs_grad(feat) {
                    let gf = gr.of(feat);
                    for (i, cell) in cells.iter().enumerate() {
                        let w = cell.weights();
                        for (corner, &wt) in w.iter().enumerate() {
                            if wt == 0.0 {
                                continue;
                            }
                            let vi = cell.corner_index(corner, dims);
                            for ch in 0..c {
                                gf[ch * stride + vi] += wt * g[i * c + ch];
                            }
                        }
                    }
                }
                if t.needs_grad(pts) {
                    let fs = t.data(feat);
                    let gp = gr.of(pts);
                    for (i, cell) in cells.iter().enumerate() {
                        let dw = cell.weight_gradients();
                        // d out / d voxel coordinate, contracted with g.
                        let mut gv = [0.0; 3];
                        for (corner, dwc) in dw.iter().enumerate() {
                            let vi = cell.corner_index(corner, dims);
                            let mut s = 0.0;
                            for ch in 0..c {
                                s += fs[ch * stride + vi] * g[i * c + ch];
                            }
                            for k in 0..3 {
                                gv[k] += dwc[k] * s;
                            }
                        }
                        // Chain through the linear part of the affine.
                        for (r, gvr) in gv.iter().enumerate() {
                            for k in 0..3 {
                                gp[3 * i + k] += gvr * a[r][k];
                            }
                        }
                    }
                }
            }),
        ))
    }
}

fn moments(values: impl Iterator<Item = f64> + Clone, n: usize, eps: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, 1.0 / (var + eps).sqrt())
}

fn norm_backward(y: &[f64], g: &[f64], inv_std: f64, gx: &mut [f64], _stride: usize) {
    let n = y.len() as f64;
    let mg = g.iter().sum::<f64>() / n;
    let mgy = g.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
    for ((d, &gv), &yv) in gx.iter_mut().zip(g).zip(y) {
        *d += inv_std * (gv - mg - yv * mgy);
    }
}

/// Copies the `extent` low-corner box between two `[C, ...]` layouts.
fn copy_box(src: &[f64], c: usize, from: [usize; 3], to: [usize; 3], extent: [usize; 3]) -> Vec<f64> {
    let mut out = vec![0.0; c * to[0] * to[1] * to[2]];
    for ch in 0..c {
        for z in 0..extent[0] {
            for y in 0..extent[1] {
                let s = ((ch * from[0] + z) * from[1] + y) * from[2];
                let d = ((ch * to[0] + z) * to[1] + y) * to[2];
                out[d..d + extent[2]].copy_from_slice(&src[s..s + extent[2]]);
            }
        }
    }
    out
}

/// Layout of a volume padded by one voxel on every side, flattened, so that
/// each of the 27 stencil offsets is a constant shift in the flat index.
#[derive(Clone)]
struct PaddedGeometry {
    dims: [usize; 3],
    len: usize,
    p0: usize,
    span: usize,
    offsets: Vec<isize>,
}

impl PaddedGeometry {
    fn new(dims: [usize; 3]) -> Self {
        let [nz, ny, nx] = dims;
        let (sy, sz) = (nx + 2, (nx + 2) * (ny + 2));
        let len = sz * (nz + 2);
        let p0 = sz + sy + 1;
        let last = nz * sz + ny * sy + nx;
        let mut offsets = Vec::with_capacity(27);
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    offsets.push(dz * sz as isize + dy * sy as isize + dx);
                }
            }
        }
        PaddedGeometry {
            dims,
            len,
            p0,
            span: last + 1 - p0,
            offsets,
        }
    }

    fn pad(&self, src: &[f64], c: usize) -> Vec<f64> {
        let [nz, ny, nx] = self.dims;
        let mut out = vec![0.0; c * self.len];
        for ch in 0..c {
            for z in 0..nz {
                for y in 0..ny {
                    let s = ((ch * nz + z) * ny + y) * nx;
                    let d = ch * self.len + ((z + 1) * (ny + 2) + y + 1) * (nx + 2) + 1;
                    out[d..d + nx].copy_from_slice(&src[s..s + nx]);
                }
            }
        }
        out
    }

    fn unpad(&self, src: &[f64], c: usize) -> Vec<f64> {
        let [nz, ny, nx] = self.dims;
        let mut out = Vec::with_capacity(c * nz * ny * nx);
        for ch in 0..c {
            for z in 0..nz {
                for y in 0..ny {
                    let s = ch * self.len + ((z + 1) * (ny + 2) + y + 1) * (nx + 2) + 1;
                    out.extend_from_slice(&src[s..s + nx]);
                }
            }
        }
        out
    }
}

/// Trilinear cell of a sample point: lower corner and fractional offsets
/// (voxel axes x, y, z), with clamped axes flagged.
#[derive(Clone, Copy)]
struct Cell {
    base: [usize; 3],
    frac: [f64; 3],
    live: [bool; 3],
    step: [usize; 3],
}

impl Cell {
    fn locate(a: &Affine, p: Vec3, dims: [usize; 3]) -> Cell {
        let mut base = [0; 3];
        let mut frac = [0.0; 3];
        let mut live = [false; 3];
        let mut step = [0; 3];
        for r in 0..3 {
            let v = a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + a[r][3];
            let n = dims[r];
            if n == 1 {
                continue;
            }
            step[r] = 1;
            let hi = (n - 1) as f64;
            let inside = (0.0..=hi).contains(&v);
            let x = v.clamp(0.0, hi);
            let b = (x.floor() as usize).min(n - 2);
            base[r] = b;
            frac[r] = x - b as f64;
            live[r] = inside;
        }
        Cell { base, frac, live, step }
    }

    #[inline]
    fn corner_index(&self, corner: usize, dims: [usize; 3]) -> usize {
        let x = self.base[0] + (corner & 1) * self.step[0];
        let y = self.base[1] + ((corner >> 1) & 1) * self.step[1];
        let z = self.base[2] + ((corner >> 2) & 1) * self.step[2];
        (z * dims[1] + y) * dims[0] + x
    }

    fn axis_weights(&self, r: usize) -> [f64; 2] {
        [1.0 - self.frac[r], self.frac[r]]
    }

    fn weights(&self) -> [f64; 8] {
        let (wx, wy, wz) = (self.axis_weights(0), self.axis_weights(1), self.axis_weights(2));
        let mut w = [0.0; 8];
        for (c, wc) in w.iter_mut().enumerate() {
            *wc = wx[c & 1] * wy[(c >> 1) & 1] * wz[(c >> 2) & 1];
        }
        w
    }

    /// Derivative of each corner weight with respect to the voxel coordinates.
    fn weight_gradients(&self) -> [[f64; 3]; 8] {
        let w = [self.axis_weights(0), self.axis_weights(1), self.axis_weights(2)];
        let dw = |r: usize| -> [f64; 2] {
            if self.live[r] && self.step[r] == 1 {
                [-1.0, 1.0]
            } else {
                [0.0, 0.0]
            }
        };
        let d = [dw(0), dw(1), dw(2)];
        let mut out = [[0.0; 3]; 8];
        for (c, o) in out.iter_mut().enumerate() {
            let b = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            o[0] = d[0][b[0]] * w[1][b[1]] * w[2][b[2]];
            o[1] = w[0][b[0]] * d[1][b[1]] * w[2][b[2]];
            o[2] = w[0][b[0]] * w[1][b[1]] * d[2][b[2]];
        }
        out
    }
}
