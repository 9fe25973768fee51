use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::gradient_check_with_step;
use crate::volume::Grid;

fn volume(n: usize, seed: u64) -> Volume<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Grid::centered([n, n, n], 1.0).filled(0.0);
    for x in &mut v.data {
        *x = rng.random_range(0.0..1.0);
    }
    v
}

fn tiny() -> ModelConfig {
    ModelConfig {
        encoder_channels: vec![2, 3, 3],
        decoder_channels: vec![3, 2],
        gcn_channels: 3,
        max_level: 2,
        template_radius: 4.0,
        gray_hidden: 3,
        white_steps: 2,
        gray_steps: 3,
        ..ModelConfig::desk()
    }
}

/// Gives the zero-initialized displacement heads small random values.
fn randomize_heads(m: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = m.params.names().to_vec();
    for (name, t) in names.iter().zip(m.params.tensors_mut()) {
        if name.contains(".out.") || name.starts_with("gray.l2") {
            for x in &mut t.data {
                *x = rng.random_range(-0.3..0.3);
            }
        }
    }
}

#[test]
fn desk_feature_shape() {
    let m = Model::new(ModelConfig::desk(), 1).unwrap();
    let mut t = Tape::inference();
    let p = m.params.bind(&mut t);
    let f = m.unet_features(&mut t, &p, &volume(32, 2)).unwrap();
    assert_eq!(t.shape(f.var), &[8, 32, 32, 32]);
}

#[test]
fn odd_sizes_are_padded_and_cropped() {
    let m = Model::new(tiny(), 1).unwrap();
    let mut t = Tape::inference();
    let p = m.params.bind(&mut t);
    let img = volume(10, 3);
    let f = m.unet_features(&mut t, &p, &img).unwrap();
    assert_eq!(t.shape(f.var), &[2, 10, 10, 10]);
}

#[test]
fn non_unit_spacing_is_rejected() {
    let m = Model::new(tiny(), 1).unwrap();
    let mut t = Tape::inference();
    let p = m.params.bind(&mut t);
    let img = Grid::centered([8, 8, 8], 2.0).filled(0.0);
    assert!(m.unet_features(&mut t, &p, &img).is_err());
}

#[test]
fn zero_weights_give_zero_features() {
    let mut m = Model::new(tiny(), 1).unwrap();
    for t in m.params.tensors_mut() {
        t.data.iter_mut().for_each(|x| *x = 0.0);
    }
    let mut t = Tape::inference();
    let p = m.params.bind(&mut t);
    let f = m.unet_features(&mut t, &p, &volume(8, 4)).unwrap();
    assert!(t.data(f.var).iter().all(|&x| x == 0.0));
}

#[test]
fn untrained_model_returns_subdivided_template() {
    let m = Model::new(ModelConfig::desk(), 5).unwrap();
    let (wm, gm) = m.reconstruct(&volume(32, 6), &IDENTITY).unwrap();
    let want = &m.template.hierarchy.meshes[3];
    assert_eq!(wm.n_vertices(), 3842);
    assert_eq!(wm.faces, want.faces);
    for (a, b) in wm.vertices.iter().zip(&want.vertices) {
        assert_eq!(a, b);
    }
    assert_eq!(gm.vertices, wm.vertices);
}

#[test]
fn level_vertex_counts() {
    let m = Model::new(ModelConfig::desk(), 0).unwrap();
    let mut t = Tape::inference();
    let p = m.params.bind(&mut t);
    let r = m.forward(&mut t, &p, &volume(32, 1), &IDENTITY).unwrap();
    let counts: Vec<usize> = r.white_levels.iter().map(|&v| t.shape(v)[0]).collect();
    assert_eq!(counts, vec![62, 242, 962, 3842]);
}

#[test]
fn template_affine_positions_start() {
    let m = Model::new(tiny(), 0).unwrap();
    let mut a = IDENTITY;
    a[0][3] = 1.5;
    let mut t = Tape::inference();
    let v = m.template_positions(&mut t, &a).unwrap();
    assert_eq!(t.data(v)[0], m.template.template().vertices[0][0] + 1.5);
}

#[test]
fn deform_white_rejects_fine_start() {
    let m = Model::new(tiny(), 0).unwrap();
    let mut t = Tape::inference();
    let p = m.params.bind(&mut t);
    let f = m.unet_features(&mut t, &p, &volume(8, 1)).unwrap();
    let bad = t.constant(Tensor::zeros(&[242, 3]));
    assert!(m.deform_white(&mut t, &p, &f, bad).is_err());
}

#[test]
fn constant_head_bias_moves_by_its_value() {
    // Zero weights and a bias c in the gray head: ten steps of c/10 each.
    let mut m = Model::new(tiny(), 0).unwrap();
    let i = m.params.position("gray.l2.b").unwrap();
    m.params.tensors_mut()[i].data = vec![0.5, -0.25, 1.0];
    let (wm, gm) = m.reconstruct(&volume(8, 2), &IDENTITY).unwrap();
    for (a, b) in wm.vertices.iter().zip(&gm.vertices) {
        for (k, d) in [0.5, -0.25, 1.0].iter().enumerate() {
            assert!((b[k] - a[k] - d).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let mut m = Model::new(tiny(), 3).unwrap();
    randomize_heads(&mut m, 1);
    let img = volume(8, 9);
    let a = m.reconstruct(&img, &IDENTITY).unwrap();
    let b = m.reconstruct(&img, &IDENTITY).unwrap();
    assert_eq!(a, b);
}

#[test]
fn white_pipeline_gradient_check() {
    let mut m = Model::new(tiny(), 11).unwrap();
    randomize_heads(&mut m, 2);
    let img = volume(16, 12);
    let names: Vec<String> = m.params.names().to_vec();
    let inputs: Vec<(&str, Tensor)> = names.iter().map(|n| n.as_str()).zip(m.params.tensors().iter().cloned()).collect();
    let model = &m;
    // Hundreds of vertices move with every weight, so some trilinear cell
    // boundary is always near; a finer step keeps the differences on one side.
    let report = gradient_check_with_step(
        |t, vars| {
            let p = model.params.bound_from(vars.to_vec());
            let r = model.forward(t, &p, &img, &IDENTITY)?;
            let w = t.constant(Tensor::new(
                t.shape(r.gray).to_vec(),
                (0..t.value(r.gray).len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect(),
            )?);
            let a = t.hadamard(r.gray, w)?;
            let b = t.hadamard(r.white(), w)?;
            let s = t.add(a, b)?;
            Ok(t.sum(s))
        },
        &inputs,
        6,
        3,
        1e-6,
    )
    .unwrap();
    for g in &report.groups {
        assert!(g.passes(1e-4), "{}: {}", g.name, g.relative_error());
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut m = Model::new(tiny(), 4).unwrap();
    randomize_heads(&mut m, 3);
    m.params.round_to_f32();
    let mut ck = Checkpoint::from_model(&m);
    ck.iteration = 17;
    let mut opt = OptimizerState::zeros(&m.params);
    opt.step = 17;
    opt.m[0][0] = 0.125;
    ck.optimizer = Some(opt);
    ck.state = serde_json::json!({"best": 1.5});
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
}

#[test]
fn checkpoint_rejects_wrong_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = Model::new(tiny(), 4).unwrap();
    let mut ck = Checkpoint::from_model(&m);
    ck.config.gcn_channels = 5;
    save_checkpoint(&path, &ck).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::ShapeMismatch(_))));
}

#[test]
fn truncated_checkpoint_is_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = Model::new(tiny(), 4).unwrap();
    save_checkpoint(&path, &Checkpoint::from_model(&m)).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Malformed { .. })));
}
