use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mesh::{build_template, Hierarchy};
use crate::volume::Affine;

const TOL: f64 = 1e-6;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts an output with fixed random weights so every entry matters.
fn project(t: &mut Tape, v: Var, seed: u64) -> Result<Var, crate::Error> {
    let w = random(t.shape(v), seed ^ 0xabc);
    let w = t.constant(w);
    let p = t.hadamard(v, w)?;
    Ok(t.sum(p))
}

fn check<F>(f: F, inputs: &[(&str, Tensor)])
where
    F: Fn(&mut Tape, &[Var]) -> crate::Result<Var>,
{
    let report = gradient_check(f, inputs, 40, 7).unwrap();
    for g in &report.groups {
        assert!(g.passes(TOL), "{}: relative error {}", g.name, g.relative_error());
    }
}

fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (cin, nz, ny, nx) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let cout = w.shape[0];
    let mut out = vec![0.0; cout * nz * ny * nx];
    for co in 0..cout {
        for z in 0..nz {
            for y in 0..ny {
                for xx in 0..nx {
                    let mut s = b.data[co];
                    for ci in 0..cin {
                        for dz in 0..3 {
                            for dy in 0..3 {
                                for dx in 0..3 {
                                    let (zz, yy, xq) = (z + dz, y + dy, xx + dx);
                                    if zz < 1 || yy < 1 || xq < 1 || zz > nz || yy > ny || xq > nx {
                                        continue;
                                    }
                                    let xi = ((ci * nz + zz - 1) * ny + yy - 1) * nx + xq - 1;
                                    let wi = (((co * cin + ci) * 3 + dz) * 3 + dy) * 3 + dx;
                                    s += w.data[wi] * x.data[xi];
                                }
                            }
                        }
                    }
                    out[((co * nz + z) * ny + y) * nx + xx] = s;
                }
            }
        }
    }
    out
}

#[test]
fn conv_matches_direct_loop() {
    let x = random(&[3, 4, 5, 6], 1);
    let w = random(&[2, 3, 3, 3, 3], 2);
    let b = random(&[2], 3);
    let mut t = Tape::inference();
    let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
    let y = t.conv3d(xv, wv, bv).unwrap();
    let want = naive_conv(&x, &w, &b);
    for (a, e) in t.data(y).iter().zip(&want) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn conv_gradients() {
    check(
        |t, v| {
            let y = t.conv3d(v[0], v[1], v[2])?;
            project(t, y, 11)
        },
        &[
            ("x", random(&[2, 3, 4, 5], 4)),
            ("w", random(&[3, 2, 3, 3, 3], 5)),
            ("b", random(&[3], 6)),
        ],
    );
}

#[test]
fn elementwise_gradients() {
    check(
        |t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sub(a, v[1])?;
            let s = t.scale(s, 1.5);
            let p = t.hadamard(s, v[1])?;
            let q = t.axpy(p, -0.3, v[0])?;
            project(t, q, 1)
        },
        &[("a", random(&[4, 3], 1)), ("b", random(&[4, 3], 2))],
    );
}

#[test]
fn weighted_sum_and_square_gradients() {
    check(
        |t, v| {
            let a = t.square(v[0]);
            let a = t.sum(a);
            let b = t.sum(v[1]);
            t.weighted_sum(&[(a, 0.7), (b, -2.0)])
        },
        &[("a", random(&[5], 3)), ("b", random(&[2, 2], 4))],
    );
}

#[test]
fn prelu_gradients() {
    check(
        |t, v| {
            let y = t.prelu(v[0], v[1])?;
            project(t, y, 2)
        },
        &[("x", random(&[6, 4], 8)), ("slope", Tensor::new(vec![1], vec![0.25]).unwrap())],
    );
}

#[test]
fn linear_gradients() {
    check(
        |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y, 3)
        },
        &[
            ("x", random(&[5, 3], 9)),
            ("w", random(&[3, 4], 10)),
            ("b", random(&[4], 11)),
        ],
    );
}

#[test]
fn concat_gradients() {
    check(
        |t, v| {
            let a = t.concat0(&[v[0], v[1]])?;
            let b = t.concat_cols(v[2], v[3])?;
            let pa = project(t, a, 4)?;
            let pb = project(t, b, 5)?;
            t.add(pa, pb)
        },
        &[
            ("a0", random(&[2, 3, 2, 2], 1)),
            ("a1", random(&[1, 3, 2, 2], 2)),
            ("b0", random(&[4, 2], 3)),
            ("b1", random(&[4, 3], 4)),
        ],
    );
}

#[test]
fn instance_norm_gradients() {
    check(
        |t, v| {
            let a = t.instance_norm_channels_first(v[0], 1e-5)?;
            let b = t.instance_norm_channels_last(v[1], 1e-5)?;
            let pa = project(t, a, 6)?;
            let pb = project(t, b, 7)?;
            t.add(pa, pb)
        },
        &[("vol", random(&[2, 2, 3, 2], 5)), ("rows", random(&[7, 3], 6))],
    );
}

#[test]
fn instance_norm_standardizes() {
    let mut t = Tape::inference();
    let x = t.constant(random(&[2, 3, 3, 3], 12));
    let y = t.instance_norm_channels_first(x, 0.0).unwrap();
    for ch in t.data(y).chunks(27) {
        let m = ch.iter().sum::<f64>() / 27.0;
        let v = ch.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 27.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
    }
}

#[test]
fn pool_upsample_pad_crop_gradients() {
    check(
        |t, v| {
            let p = t.maxpool2(v[0])?;
            let u = t.upsample2(p)?;
            let padded = t.pad_spatial(u, [5, 4, 6])?;
            let c = t.crop_spatial(padded, [3, 4, 2])?;
            project(t, c, 8)
        },
        &[("x", random(&[2, 4, 4, 2], 13))],
    );
}

#[test]
fn maxpool_and_upsample_values() {
    let mut t = Tape::inference();
    let x = t.constant(Tensor::new(vec![1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap());
    let p = t.maxpool2(x).unwrap();
    assert_eq!(t.data(p), &[7.0]);
    let u = t.upsample2(p).unwrap();
    assert_eq!(t.shape(u), &[1, 2, 2, 2]);
    assert!(t.data(u).iter().all(|&v| v == 7.0));
}

fn shear_affine() -> Affine {
    [
        [0.9, 0.1, 0.0, 1.7],
        [0.0, 1.1, -0.2, 2.1],
        [0.05, 0.0, 0.8, 1.4],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

#[test]
fn trilinear_gradients() {
    let a = shear_affine();
    // Points kept strictly inside cells so the sample is smooth.
    let pts = Tensor::new(vec![3, 3], vec![0.31, 0.42, 0.27, 1.13, 0.58, 0.71, -0.44, 0.36, 0.92]).unwrap();
    check(
        move |t, v| {
            let s = t.trilinear_sample(v[0], v[1], &a)?;
            project(t, s, 9)
        },
        &[("feat", random(&[2, 4, 5, 4], 14)), ("pts", pts)],
    );
}

#[test]
fn trilinear_reproduces_linear_fields() {
    let a = shear_affine();
    let (nz, ny, nx) = (4, 5, 6);
    let mut data = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                data.push(2.0 * x as f64 - y as f64 + 0.5 * z as f64);
            }
        }
    }
    let mut t = Tape::inference();
    let f = t.constant(Tensor::new(vec![1, nz, ny, nx], data).unwrap());
    let p = [0.7, 1.2, 0.9];
    let pts = t.constant(Tensor::new(vec![1, 3], p.to_vec()).unwrap());
    let s = t.trilinear_sample(f, pts, &a).unwrap();
    let v = crate::volume::apply_affine(&a, p);
    let want = 2.0 * v[0] - v[1] + 0.5 * v[2];
    assert!((t.data(s)[0] - want).abs() < 1e-12);
}

#[test]
fn trilinear_clamps_outside() {
    let a: Affine = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let mut t = Tape::new();
    let f = t.constant(Tensor::new(vec![1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap());
    let pts = t.variable(Tensor::new(vec![1, 3], vec![-3.0, 0.5, 0.5]).unwrap());
    let s = t.trilinear_sample(f, pts, &a).unwrap();
    assert!((t.data(s)[0] - 3.0).abs() < 1e-12);
    let loss = t.sum(s);
    let g = t.backward(loss).unwrap();
    // Clamped along x, so only y and z carry a gradient.
    let gp = g.get(pts).unwrap();
    assert_eq!(gp[0], 0.0);
    assert!(gp[1].abs() > 0.0 && gp[2].abs() > 0.0);
}

fn hierarchy() -> Hierarchy {
    Hierarchy::new(&build_template(12).unwrap(), 1).unwrap()
}

#[test]
fn graph_op_gradients() {
    let h = hierarchy();
    let topo = Arc::new(h.topologies[1].clone());
    let map = Arc::new(h.maps[0].clone());
    let groups = h.pool_groups(1);
    let nf = topo.n_vertices;
    let nc = map.n_coarse;
    check(
        move |t, v| {
            let m = t.neighbor_mean(v[0], &topo)?;
            let (p, idx) = t.mesh_pool(m, &groups)?;
            let u = t.mesh_unpool(p, &idx)?;
            let up = t.midpoint_upsample(v[1], &map)?;
            let s = t.add(u, up)?;
            project(t, s, 10)
        },
        &[("fine", random(&[nf, 3], 15)), ("coarse", random(&[nc, 3], 16))],
    );
}

#[test]
fn neighbor_mean_of_constant_is_constant() {
    let h = hierarchy();
    let topo = Arc::new(h.topologies[1].clone());
    let mut t = Tape::inference();
    let x = t.constant(Tensor::new(vec![topo.n_vertices, 1], vec![2.5; topo.n_vertices]).unwrap());
    let y = t.neighbor_mean(x, &topo).unwrap();
    assert!(t.data(y).iter().all(|&v| (v - 2.5).abs() < 1e-14));
}

#[test]
fn midpoint_upsample_matches_subdivision() {
    let h = hierarchy();
    let map = Arc::new(h.maps[0].clone());
    let coarse = &h.meshes[0];
    let mut t = Tape::inference();
    let flat: Vec<f64> = coarse.vertices.iter().flatten().copied().collect();
    let x = t.constant(Tensor::new(vec![coarse.n_vertices(), 3], flat).unwrap());
    let y = t.midpoint_upsample(x, &map).unwrap();
    let fine: Vec<f64> = h.meshes[1].vertices.iter().flatten().copied().collect();
    assert_eq!(t.data(y), &fine[..]);
}

#[test]
fn gradient_check_detects_corrupted_gradient() {
    let report = gradient_check(
        |t, v| {
            let y = t.linear(v[0], v[1], None)?;
            project(t, y, 12)
        },
        &[("x", random(&[3, 2], 20)), ("w", random(&[2, 2], 21))],
        40,
        1,
    )
    .unwrap();
    assert!(report.passes(TOL));
    let mut bad = report.groups[1].clone();
    for a in &mut bad.analytic {
        *a *= 1.01;
    }
    assert!(bad.relative_error() > TOL);
    assert!(relative_error(&bad.analytic, &report.groups[1].numeric) > 5e-3);
}

#[test]
fn gradient_check_rejects_non_finite_objective() {
    let r = gradient_check(
        |t, v| {
            let s = t.scale(v[0], f64::NAN);
            Ok(t.sum(s))
        },
        &[("x", random(&[2], 1))],
        10,
        0,
    );
    assert!(matches!(r, Err(crate::Error::NonFinite(_))));
}

#[test]
fn inference_tape_refuses_backward() {
    let mut t = Tape::inference();
    let x = t.variable(Tensor::scalar(1.0));
    assert!(t.backward(x).is_err());
}

#[test]
fn shape_mismatch_is_reported() {
    let mut t = Tape::new();
    let a = t.variable(Tensor::zeros(&[2, 3]));
    let b = t.variable(Tensor::zeros(&[3, 2]));
    assert!(t.add(a, b).is_err());
    assert!(t.linear(a, a, None).is_err());
}
