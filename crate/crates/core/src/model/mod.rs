//! The reconstruction networks: a volumetric UNet producing image features,
//! per-level graph UNets that deform the template into the white surface,
//! and a small per-vertex block that pushes the white surface out to the
//! gray surface.

mod checkpoint;
mod params;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{build_template, Hierarchy, Mesh, SubdivisionMap, Topology};
use crate::nn::{Tape, Tensor, Var};
use crate::volume::{apply_affine, invert_affine, Affine, Volume};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptimizerState};
pub use params::{Bound, ParamStore};
use params::Init;

pub const IDENTITY: Affine = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Architecture hyperparameters; stored in every checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub gcn_channels: usize,
    /// Maximum number of resolution levels in each graph UNet.
    pub gcn_depth: usize,
    /// Finest template level; the white surface has this many subdivisions.
    pub max_level: u32,
    pub template_vertices: usize,
    /// Template sphere radius in mm, before the template affine.
    pub template_radius: f64,
    pub white_steps: usize,
    pub gray_steps: usize,
    pub gray_hidden: usize,
    pub prelu_init: f64,
    pub norm_eps: f64,
}

impl ModelConfig {
    /// Channel plan and depth at the published scale.
    pub fn full() -> Self {
        ModelConfig {
            encoder_channels: vec![16, 32, 64, 96, 128],
            decoder_channels: vec![96, 64, 64, 32],
            gcn_channels: 64,
            gcn_depth: 4,
            max_level: 6,
            template_vertices: 62,
            template_radius: 60.0,
            white_steps: 2,
            gray_steps: 10,
            gray_hidden: 32,
            prelu_init: 0.25,
            norm_eps: 1e-5,
        }
    }

    /// Quarter channels, levels 0..3, sized for 32³ phantoms.
    pub fn desk() -> Self {
        ModelConfig {
            encoder_channels: vec![4, 8, 16, 24, 32],
            decoder_channels: vec![24, 16, 16, 8],
            gcn_channels: 16,
            max_level: 3,
            template_radius: 10.0,
            gray_hidden: 8,
            ..Self::full()
        }
    }

    pub fn from_profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::invalid(format!("unknown profile {other:?} (expected desk or full)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder_channels;
        if e.is_empty() || self.decoder_channels.len() + 1 != e.len() {
            return Err(Error::invalid("decoder must have one stage fewer than the encoder"));
        }
        if e.iter().chain(&self.decoder_channels).any(|&c| c == 0) || self.gcn_channels == 0 || self.gray_hidden == 0 {
            return Err(Error::invalid("channel counts must be positive"));
        }
        if self.gcn_depth == 0 || self.white_steps == 0 || self.gray_steps == 0 {
            return Err(Error::invalid("depth and step counts must be positive"));
        }
        if !(self.template_radius > 0.0) || !(self.norm_eps > 0.0) {
            return Err(Error::invalid("template radius and norm eps must be positive"));
        }
        Ok(())
    }

    /// Feature channels handed to the deformation networks.
    pub fn feature_channels(&self) -> usize {
        *self.decoder_channels.last().unwrap_or(&self.encoder_channels[0])
    }

    /// Spatial sizes are padded to a multiple of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.encoder_channels.len() - 1)
    }

    /// Graph UNet depth used at template level `n`.
    pub fn gcn_depth_at(&self, n: usize) -> usize {
        self.gcn_depth.min(n + 1)
    }
}

/// Template connectivity and parent maps, shared by every forward pass.
#[derive(Debug)]
pub struct TemplateHierarchy {
    pub hierarchy: Hierarchy,
    pub topologies: Vec<Arc<Topology>>,
    pub maps: Vec<Arc<SubdivisionMap>>,
    /// `pool_groups[l]` pools level `l` into level `l - 1` (empty at 0).
    pub pool_groups: Vec<Vec<Vec<usize>>>,
}

impl TemplateHierarchy {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let template = build_template(config.template_vertices)?.scaled(config.template_radius);
        let hierarchy = Hierarchy::new(&template, config.max_level)?;
        for t in &hierarchy.topologies {
            if (0..t.n_vertices).any(|v| t.degree(v) == 0) {
                return Err(Error::InvalidMesh("template has an isolated vertex".into()));
            }
        }
        let topologies = hierarchy.topologies.iter().cloned().map(Arc::new).collect();
        let maps = hierarchy.maps.iter().cloned().map(Arc::new).collect();
        let pool_groups = (0..hierarchy.meshes.len())
            .map(|l| if l == 0 { Vec::new() } else { hierarchy.pool_groups(l) })
            .collect();
        Ok(TemplateHierarchy {
            hierarchy,
            topologies,
            maps,
            pool_groups,
        })
    }

    pub fn template(&self) -> &Mesh {
        &self.hierarchy.meshes[0]
    }

    pub fn faces(&self, level: usize) -> &[[usize; 3]] {
        &self.hierarchy.meshes[level].faces
    }
}

/// Image features on the image grid, with the world-to-voxel map used to
/// sample them.
#[derive(Debug, Clone, Copy)]
pub struct FeatureVolume {
    pub var: Var,
    pub world_to_voxel: Affine,
}

/// Result of a full forward pass.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub features: FeatureVolume,
    /// White-surface vertex positions `[N, 3]` after each level.
    pub white_levels: Vec<Var>,
    pub gray: Var,
}

impl Reconstruction {
    pub fn white(&self) -> Var {
        *self.white_levels.last().expect("at least one level")
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub template: TemplateHierarchy,
}

impl Model {
    /// Freshly initialized network. Displacement heads start at zero so the
    /// untrained model returns the subdivided template.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed)?;
        Self::with_params(config, params)
    }

    pub fn with_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        check_param_shapes(&config, &params)?;
        let template = TemplateHierarchy::new(&config)?;
        Ok(Model { config, params, template })
    }

    /// Feature extraction on a 1 mm single-channel volume.
    pub fn unet_features(&self, tape: &mut Tape, p: &Bound, img: &Volume<f64>) -> Result<FeatureVolume> {
        if !img.is_one_mm() {
            return Err(Error::invalid(format!(
                "network input must be 1 mm isotropic, got spacing {:?}",
                img.spacing()
            )));
        }
        let [nx, ny, nz] = img.dims;
        let size = [nz, ny, nx];
        let m = self.config.size_multiple();
        let padded = size.map(|s| s.div_ceil(m) * m);
        let x = tape.constant(Tensor::new(vec![1, nz, ny, nx], img.data.clone())?);
        let mut x = if padded != size { tape.pad_spatial(x, padded)? } else { x };

        let levels = self.config.encoder_channels.len();
        let mut skips = Vec::with_capacity(levels);
        for i in 0..levels {
            if i > 0 {
                x = tape.maxpool2(x)?;
            }
            x = self.conv_block(tape, p, &format!("unet.enc{i}"), x)?;
            skips.push(x);
        }
        skips.pop();
        for j in 0..self.config.decoder_channels.len() {
            let up = tape.upsample2(x)?;
            let skip = skips.pop().expect("one skip per decoder stage");
            let cat = tape.concat0(&[up, skip])?;
            x = self.conv_block(tape, p, &format!("unet.dec{j}"), cat)?;
        }
        if padded != size {
            x = tape.crop_spatial(x, size)?;
        }
        Ok(FeatureVolume {
            var: x,
            world_to_voxel: invert_affine(&img.affine)?,
        })
    }

    fn conv_block(&self, tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
        let y = tape.conv3d(x, p.get(&format!("{name}.w"))?, p.get(&format!("{name}.b"))?)?;
        let y = tape.instance_norm_channels_first(y, self.config.norm_eps)?;
        tape.prelu(y, p.get(&format!("{name}.slope"))?)
    }

    /// Graph convolution: each vertex maps the concatenation of its own
    /// features and its neighbors' mean through a linear layer.
    fn graph_conv(&self, tape: &mut Tape, p: &Bound, name: &str, x: Var, level: usize) -> Result<Var> {
        let nb = tape.neighbor_mean(x, &self.template.topologies[level])?;
        let cat = tape.concat_cols(x, nb)?;
        tape.linear(cat, p.get(&format!("{name}.w"))?, Some(p.get(&format!("{name}.b"))?))
    }

    fn graph_block(&self, tape: &mut Tape, p: &Bound, name: &str, x: Var, level: usize) -> Result<Var> {
        let y = self.graph_conv(tape, p, name, x, level)?;
        let y = tape.instance_norm_channels_last(y, self.config.norm_eps)?;
        tape.prelu(y, p.get(&format!("{name}.slope"))?)
    }

    /// Displacement field `[N, 3]` predicted by the graph UNet of level `n`.
    fn graph_unet(&self, tape: &mut Tape, p: &Bound, n: usize, input: Var) -> Result<Var> {
        let depth = self.config.gcn_depth_at(n);
        let mut x = self.graph_block(tape, p, &format!("gcn{n}.enc0"), input, n)?;
        let mut skips = vec![x];
        let mut pools = Vec::with_capacity(depth);
        for d in 1..depth {
            let fine = n + 1 - d;
            let (pooled, idx) = tape.mesh_pool(x, &self.template.pool_groups[fine])?;
            pools.push(idx);
            x = self.graph_block(tape, p, &format!("gcn{n}.enc{d}"), pooled, fine - 1)?;
            skips.push(x);
        }
        skips.pop();
        for d in (1..depth).rev() {
            let idx = pools.pop().expect("one pool per decoder stage");
            let up = tape.mesh_unpool(x, &idx)?;
            let skip = skips.pop().expect("one skip per decoder stage");
            let cat = tape.concat_cols(up, skip)?;
            x = self.graph_block(tape, p, &format!("gcn{n}.dec{}", d - 1), cat, n + 1 - d)?;
        }
        self.graph_conv(tape, p, &format!("gcn{n}.out"), x, n)
    }

    /// Template vertices at level 0 placed by `affine`, as a constant `[N, 3]`.
    pub fn template_positions(&self, tape: &mut Tape, affine: &Affine) -> Result<Var> {
        let v: Vec<f64> = self
            .template
            .template()
            .vertices
            .iter()
            .flat_map(|&q| apply_affine(affine, q))
            .collect();
        Ok(tape.constant(Tensor::new(vec![v.len() / 3, 3], v)?))
    }

    /// Template deformation into the white surface: at each level, Euler
    /// steps along the graph UNet's field, then midpoint subdivision.
    /// Returns the positions after every level.
    pub fn deform_white(&self, tape: &mut Tape, p: &Bound, feat: &FeatureVolume, template: Var) -> Result<Vec<Var>> {
        let n0 = self.template.template().n_vertices();
        if tape.shape(template) != [n0, 3] {
            return Err(Error::invalid(format!(
                "deformation starts from the level-0 template ({n0} vertices), got {:?}",
                tape.shape(template)
            )));
        }
        let h = 1.0 / self.config.white_steps as f64;
        let mut v = template;
        let mut levels = Vec::new();
        for n in 0..=self.config.max_level as usize {
            if n > 0 {
                v = tape.midpoint_upsample(v, &self.template.maps[n - 1])?;
            }
            for _ in 0..self.config.white_steps {
                let s = tape.trilinear_sample(feat.var, v, &feat.world_to_voxel)?;
                let d = self.graph_unet(tape, p, n, s)?;
                v = tape.axpy(v, h, d)?;
            }
            levels.push(v);
        }
        Ok(levels)
    }

    /// Gray surface from the white surface by Euler steps along a shared
    /// per-vertex block; vertex correspondence is preserved.
    pub fn deform_gray(&self, tape: &mut Tape, p: &Bound, feat: &FeatureVolume, white: Var) -> Result<Var> {
        let h = 1.0 / self.config.gray_steps as f64;
        let (w1, b1) = (p.get("gray.l1.w")?, p.get("gray.l1.b")?);
        let (w2, b2) = (p.get("gray.l2.w")?, p.get("gray.l2.b")?);
        let slope = p.get("gray.slope")?;
        let mut v = white;
        for _ in 0..self.config.gray_steps {
            let s = tape.trilinear_sample(feat.var, v, &feat.world_to_voxel)?;
            let y = tape.linear(s, w1, Some(b1))?;
            let y = tape.prelu(y, slope)?;
            let d = tape.linear(y, w2, Some(b2))?;
            v = tape.axpy(v, h, d)?;
        }
        Ok(v)
    }

    /// Full pipeline: features, white surface, gray surface.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, img: &Volume<f64>, affine: &Affine) -> Result<Reconstruction> {
        let features = self.unet_features(tape, p, img)?;
        let start = self.template_positions(tape, affine)?;
        let white_levels = self.deform_white(tape, p, &features, start)?;
        let gray = self.deform_gray(tape, p, &features, *white_levels.last().expect("levels"))?;
        Ok(Reconstruction {
            features,
            white_levels,
            gray,
        })
    }

    /// Inference: the white and gray meshes for `img`.
    pub fn reconstruct(&self, img: &Volume<f64>, affine: &Affine) -> Result<(Mesh, Mesh)> {
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape);
        let r = self.forward(&mut tape, &p, img, affine)?;
        let level = self.config.max_level as usize;
        let wm = self.mesh_from(&tape, r.white(), level)?;
        let gm = self.mesh_from(&tape, r.gray, level)?;
        Ok((wm, gm))
    }

    /// Builds a mesh from an `[N, 3]` node on template level `level`.
    pub fn mesh_from(&self, tape: &Tape, v: Var, level: usize) -> Result<Mesh> {
        let faces = self.template.faces(level).to_vec();
        let vertices = tape.data(v).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Mesh::new(vertices, faces, level as u32)
    }
}

/// Checks that `params` holds exactly the tensors `config` calls for.
pub fn check_param_shapes(config: &ModelConfig, params: &ParamStore) -> Result<()> {
    config.validate()?;
    let reference = init_params(config, 0)?;
    if reference.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} parameter tensors, got {}",
            reference.len(),
            params.len()
        )));
    }
    for (name, t) in reference.iter() {
        match params.get(name) {
            Some(p) if p.shape == t.shape => {}
            Some(p) => {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name}: expected {:?}, got {:?}",
                    t.shape, p.shape
                )))
            }
            None => return Err(Error::ShapeMismatch(format!("missing parameter {name}"))),
        }
    }
    Ok(())
}

fn init_params(c: &ModelConfig, seed: u64) -> Result<ParamStore> {
    let mut rng = ParamStore::rng(seed);
    let mut ps = ParamStore::new();
    let mut conv = |ps: &mut ParamStore, name: String, cin: usize, cout: usize| -> Result<()> {
        let fan = cin * 27;
        ps.init(format!("{name}.w"), &[cout, cin, 3, 3, 3], Init::FanIn(fan), &mut rng)?;
        ps.init(format!("{name}.b"), &[cout], Init::FanIn(fan), &mut rng)?;
        ps.init(format!("{name}.slope"), &[1], Init::Constant(c.prelu_init), &mut rng)
    };
    let enc = &c.encoder_channels;
    let mut cin = 1;
    for (i, &co) in enc.iter().enumerate() {
        conv(&mut ps, format!("unet.enc{i}"), cin, co)?;
        cin = co;
    }
    for (j, &co) in c.decoder_channels.iter().enumerate() {
        let skip = enc[enc.len() - 2 - j];
        conv(&mut ps, format!("unet.dec{j}"), cin + skip, co)?;
        cin = co;
    }

    let mut rng = ParamStore::rng(seed.wrapping_add(1));
    let mut gconv = |ps: &mut ParamStore, name: String, cin: usize, cout: usize, init_zero: bool, slope: bool| -> Result<()> {
        let fan = 2 * cin;
        let init = if init_zero { Init::Zeros } else { Init::FanIn(fan) };
        ps.init(format!("{name}.w"), &[2 * cin, cout], init, &mut rng)?;
        ps.init(format!("{name}.b"), &[cout], init, &mut rng)?;
        if slope {
            ps.init(format!("{name}.slope"), &[1], Init::Constant(c.prelu_init), &mut rng)?;
        }
        Ok(())
    };
    let f = c.feature_channels();
    let g = c.gcn_channels;
    for n in 0..=c.max_level as usize {
        let depth = c.gcn_depth_at(n);
        gconv(&mut ps, format!("gcn{n}.enc0"), f, g, false, true)?;
        for d in 1..depth {
            gconv(&mut ps, format!("gcn{n}.enc{d}"), g, g, false, true)?;
        }
        for d in 0..depth - 1 {
            gconv(&mut ps, format!("gcn{n}.dec{d}"), 2 * g, g, false, true)?;
        }
        gconv(&mut ps, format!("gcn{n}.out"), g, 3, true, false)?;
    }

    let mut rng = ParamStore::rng(seed.wrapping_add(2));
    ps.init("gray.l1.w", &[f, c.gray_hidden], Init::FanIn(f), &mut rng)?;
    ps.init("gray.l1.b", &[c.gray_hidden], Init::FanIn(f), &mut rng)?;
    ps.init("gray.slope", &[1], Init::Constant(c.prelu_init), &mut rng)?;
    ps.init("gray.l2.w", &[c.gray_hidden, 3], Init::Zeros, &mut rng)?;
    ps.init("gray.l2.b", &[3], Init::Zeros, &mut rng)?;
    Ok(ps)
}

#[cfg(test)]
mod tests;
