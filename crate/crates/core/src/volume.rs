//! 3D scalar grids with a voxel-to-world affine.
//!
//! Data is stored x-fastest (`index = x + nx * (y + ny * z)`), matching the
//! NIfTI on-disk order.

use crate::error::{Error, Result};
use crate::vec3::Vec3;

pub type Affine = [[f64; 4]; 4];

pub const IDENTITY: Affine = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T = f64> {
    pub dims: [usize; 3],
    pub affine: Affine,
    pub data: Vec<T>,
}

/// Grid description without data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub affine: Affine,
}

impl Grid {
    /// 1 mm isotropic grid centered on the world origin.
    pub fn centered(dims: [usize; 3], spacing: f64) -> Self {
        let mut affine = IDENTITY;
        for k in 0..3 {
            affine[k][k] = spacing;
            affine[k][3] = -spacing * (dims[k] as f64 - 1.0) / 2.0;
        }
        Grid { dims, affine }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; 3] {
        spacing_of(&self.affine)
    }

    #[inline]
    pub fn world(&self, i: usize, j: usize, k: usize) -> Vec3 {
        apply_affine(&self.affine, [i as f64, j as f64, k as f64])
    }

    pub fn filled<T: Clone>(&self, v: T) -> Volume<T> {
        Volume {
            dims: self.dims,
            affine: self.affine,
            data: vec![v; self.len()],
        }
    }
}

impl<T: Clone> Volume<T> {
    pub fn new(dims: [usize; 3], affine: Affine, data: Vec<T>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::ShapeMismatch(format!(
                "volume dims {dims:?} need {} values, got {}",
                dims[0] * dims[1] * dims[2],
                data.len()
            )));
        }
        Ok(Volume { dims, affine, data })
    }

    pub fn grid(&self) -> Grid {
        Grid {
            dims: self.dims,
            affine: self.affine,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> &T {
        &self.data[self.index(i, j, k)]
    }

    pub fn spacing(&self) -> [f64; 3] {
        spacing_of(&self.affine)
    }

    pub fn map<U, F: Fn(&T) -> U>(&self, f: F) -> Volume<U> {
        Volume {
            dims: self.dims,
            affine: self.affine,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_grid<U>(&self, other: &Volume<U>) -> bool {
        self.dims == other.dims && self.affine == other.affine
    }
}

impl Volume<f64> {
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Rescales to [0, 1]; a constant volume maps to all zeros.
    pub fn min_max_normalized(&self) -> Volume<f64> {
        let (lo, hi) = self.min_max();
        let range = hi - lo;
        if !(range > 0.0) {
            return self.map(|_| 0.0);
        }
        self.map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
    }

    /// True when every axis has 1 mm spacing (within 1e-6).
    pub fn is_one_mm(&self) -> bool {
        self.spacing().iter().all(|s| (s - 1.0).abs() < 1e-6)
    }
}

pub fn spacing_of(a: &Affine) -> [f64; 3] {
    let mut s = [0.0; 3];
    for (k, sk) in s.iter_mut().enumerate() {
        *sk = (a[0][k] * a[0][k] + a[1][k] * a[1][k] + a[2][k] * a[2][k]).sqrt();
    }
    s
}

#[inline]
pub fn apply_affine(a: &Affine, p: Vec3) -> Vec3 {
    [
        a[0][0] * p[0] + a[0][1] * p[1] + a[0][2] * p[2] + a[0][3],
        a[1][0] * p[0] + a[1][1] * p[1] + a[1][2] * p[2] + a[1][3],
        a[2][0] * p[0] + a[2][1] * p[1] + a[2][2] * p[2] + a[2][3],
    ]
}

pub fn compose(a: &Affine, b: &Affine) -> Affine {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Inverse of an affine whose last row is `[0, 0, 0, 1]`.
pub fn invert_affine(a: &Affine) -> Result<Affine> {
    let m = [
        [a[0][0], a[0][1], a[0][2]],
        [a[1][0], a[1][1], a[1][2]],
        [a[2][0], a[2][1], a[2][2]],
    ];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-300 || !det.is_finite() {
        return Err(Error::Degenerate("affine is singular".into()));
    }
    let inv_det = 1.0 / det;
    let mut r = [[0.0; 3]; 3];
    r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    let t = [a[0][3], a[1][3], a[2][3]];
    let mut out = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = r[i][j];
        }
        out[i][3] = -(r[i][0] * t[0] + r[i][1] * t[1] + r[i][2] * t[2]);
    }
    Ok(out)
}

/// Parses a 4x4 whitespace-separated affine (four lines of four numbers).
pub fn parse_affine(text: &str) -> Result<Affine> {
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::invalid(format!("affine: {e}")))?;
    if nums.len() != 16 {
        return Err(Error::invalid(format!("affine needs 16 numbers, got {}", nums.len())));
    }
    let mut a = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = nums[i * 4 + j];
        }
    }
    if a[3] != [0.0, 0.0, 0.0, 1.0] {
        return Err(Error::invalid("affine last row must be 0 0 0 1"));
    }
    Ok(a)
}

/// Trilinear interpolation at continuous voxel coordinates, clamped to the grid.
pub fn sample_trilinear(v: &Volume<f64>, p: Vec3) -> f64 {
    let mut i0 = [0usize; 3];
    let mut t = [0.0; 3];
    for k in 0..3 {
        let n = v.dims[k];
        let x = p[k].clamp(0.0, (n - 1) as f64);
        let f = x.floor();
        let base = (f as usize).min(n.saturating_sub(2));
        i0[k] = base;
        t[k] = if n == 1 { 0.0 } else { x - base as f64 };
    }
    let step = |k: usize| if v.dims[k] > 1 { 1 } else { 0 };
    let (sx, sy, sz) = (step(0), step(1), step(2));
    let mut acc = 0.0;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - t[2] } else { t[2] };
        if wz == 0.0 {
            continue;
        }
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - t[1] } else { t[1] };
            if wy == 0.0 {
                continue;
            }
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - t[0] } else { t[0] };
                if wx == 0.0 {
                    continue;
                }
                acc += wx * wy * wz * v.get(i0[0] + dx * sx, i0[1] + dy * sy, i0[2] + dz * sz);
            }
        }
    }
    acc
}
