use crate::volume::Volume;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for w in &mut k {
        *w /= s;
    }
    k
}

fn blur_axis(v: &mut Volume<f64>, axis: usize, sigma: f64) {
    if sigma <= 1e-6 || v.dims[axis] < 2 {
        return;
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let dims = v.dims;
    let n = dims[axis] as isize;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let mut line = vec![0.0; dims[axis]];
    let (o1, o2) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    for b in 0..dims[o2] {
        for a in 0..dims[o1] {
            let mut idx = [0usize; 3];
            idx[o1] = a;
            idx[o2] = b;
            let base = v.index(idx[0], idx[1], idx[2]);
            for (i, l) in line.iter_mut().enumerate() {
                *l = v.data[base + i * stride];
            }
            for i in 0..n {
                let mut acc = 0.0;
                for (t, w) in k.iter().enumerate() {
                    let j = (i + t as isize - r).clamp(0, n - 1) as usize;
                    acc += w * line[j];
                }
                v.data[base + i as usize * stride] = acc;
            }
        }
    }
}

/// Separable Gaussian blur with per-axis std in voxels; borders replicate.
pub fn gaussian_blur(v: &Volume<f64>, sigma_vox: [f64; 3]) -> Volume<f64> {
    let mut out = v.clone();
    for (axis, &s) in sigma_vox.iter().enumerate() {
        blur_axis(&mut out, axis, s);
    }
    out
}

/// Trilinear upsampling of an `n^3` control grid (x-fastest) whose corner
/// points sit on the corner voxels of `dims`.
pub fn upsample_control_grid(controls: &[f64], n: usize, dims: [usize; 3]) -> Vec<f64> {
    let ctl = Volume {
        dims: [n, n, n],
        affine: crate::volume::IDENTITY,
        data: controls.to_vec(),
    };
    let scale = |k: usize, i: usize| {
        if dims[k] > 1 {
            i as f64 * (n - 1) as f64 / (dims[k] - 1) as f64
        } else {
            0.0
        }
    };
    let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                out.push(crate::volume::sample_trilinear(&ctl, [scale(0, x), scale(1, y), scale(2, z)]));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    #[test]
    fn blur_preserves_constant_and_mass() {
        let g = Grid::centered([9, 10, 11], 1.0);
        let c = g.filled(3.5);
        let b = gaussian_blur(&c, [1.0, 0.5, 2.0]);
        assert!(b.data.iter().all(|x| (x - 3.5).abs() < 1e-12));

        let mut d = g.filled(0.0);
        let i = d.index(4, 5, 5);
        d.data[i] = 1.0;
        let b = gaussian_blur(&d, [0.8, 0.8, 0.8]);
        let mass: f64 = b.data.iter().sum();
        assert!((mass - 1.0).abs() < 1e-9);
        assert!(*b.get(4, 5, 5) < 1.0 && *b.get(5, 5, 5) > 0.0);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let g = Grid::centered([4, 4, 4], 1.0);
        let mut v = g.filled(0.0);
        for (i, x) in v.data.iter_mut().enumerate() {
            *x = i as f64;
        }
        assert_eq!(gaussian_blur(&v, [0.0; 3]).data, v.data);
    }

    #[test]
    fn control_grid_corners_and_linearity() {
        let n = 2;
        let ctl: Vec<f64> = (0..8).map(|i| (i & 1) as f64).collect(); // value = x index
        let up = upsample_control_grid(&ctl, n, [5, 3, 3]);
        for (i, v) in up.iter().enumerate() {
            let x = i % 5;
            assert!((v - x as f64 / 4.0).abs() < 1e-12);
        }
    }
}
