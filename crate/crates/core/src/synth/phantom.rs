//! In-silico subjects: nested closed surfaces in template topology, their
//! signed distance volumes and a label map.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{signed_distance_volume, SignedDistanceVolume};
use crate::mesh::{fibonacci_sphere, Mesh};
use crate::vec3::{self, Vec3};
use crate::volume::{Affine, Grid, Volume};

use super::filters::gaussian_blur;
use super::kmeans::kmeans_labels;
use super::labels;

/// Width of the CSF band outside the GM surface (mm).
pub const CSF_SHELL_MM: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PhantomSpec {
    /// Concentric spheres with WM radius `r_wm` and GM radius `r_gm` (mm).
    TwoSphere { r_wm: f64, r_gm: f64, center: Vec3 },
    /// Sphere with a random low-order spherical-harmonic radial perturbation
    /// and a smoothly varying thickness, all drawn from `seed`.
    Blob { seed: u64 },
}

impl PhantomSpec {
    pub fn two_sphere(r_wm: f64, r_gm: f64) -> Self {
        PhantomSpec::TwoSphere {
            r_wm,
            r_gm,
            center: [0.0; 3],
        }
    }
}

impl fmt::Display for PhantomSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhantomSpec::TwoSphere { r_wm, r_gm, center } => {
                write!(f, "two-sphere:r={r_wm},{r_gm}")?;
                if *center != [0.0; 3] {
                    write!(f, ";c={},{},{}", center[0], center[1], center[2])?;
                }
                Ok(())
            }
            PhantomSpec::Blob { seed } => write!(f, "blob:seed={seed}"),
        }
    }
}

fn parse_numbers(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number {t:?} for {key}")))
        })
        .collect()
}

impl FromStr for PhantomSpec {
    type Err = Error;

    /// Accepts `two-sphere:r=8,10.5[;c=x,y,z]` and `blob:seed=3`; a space may
    /// replace the colon and semicolons.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = match s.find([':', ' ']) {
            Some(i) => (&s[..i], &s[i + 1..]),
            None => (s, ""),
        };
        let mut kv = Vec::new();
        for part in rest.split([';', ' ']).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got {part:?}")))?;
            kv.push((k.trim(), v.trim()));
        }
        match name {
            "two-sphere" => {
                let mut radii = None;
                let mut center = [0.0; 3];
                for (k, v) in kv {
                    match k {
                        "r" => {
                            let r = parse_numbers(k, v)?;
                            if r.len() != 2 {
                                return Err(Error::invalid("two-sphere needs r=<wm>,<gm>"));
                            }
                            radii = Some((r[0], r[1]));
                        }
                        "c" => {
                            let c = parse_numbers(k, v)?;
                            if c.len() != 3 {
                                return Err(Error::invalid("center needs c=<x>,<y>,<z>"));
                            }
                            center = [c[0], c[1], c[2]];
                        }
                        other => return Err(Error::invalid(format!("unknown two-sphere key {other:?}"))),
                    }
                }
                let (r_wm, r_gm) = radii.ok_or_else(|| Error::invalid("two-sphere needs r=<wm>,<gm>"))?;
                if !(r_wm > 0.0 && r_gm > r_wm) {
                    return Err(Error::invalid(format!("need 0 < r_wm < r_gm, got {r_wm}, {r_gm}")));
                }
                Ok(PhantomSpec::TwoSphere { r_wm, r_gm, center })
            }
            "blob" => {
                let mut seed = 0;
                for (k, v) in kv {
                    match k {
                        "seed" => {
                            seed = v
                                .parse()
                                .map_err(|_| Error::invalid(format!("bad blob seed {v:?}")))?;
                        }
                        other => return Err(Error::invalid(format!("unknown blob key {other:?}"))),
                    }
                }
                Ok(PhantomSpec::Blob { seed })
            }
            other => Err(Error::invalid(format!(
                "unknown phantom {other:?} (expected two-sphere or blob)"
            ))),
        }
    }
}

/// Unnormalized real spherical harmonics of degree 1..=3 at a unit vector.
fn harmonics(u: Vec3) -> [f64; 15] {
    let [x, y, z] = u;
    [
        x,
        y,
        z,
        x * y,
        y * z,
        x * z,
        x * x - y * y,
        3.0 * z * z - 1.0,
        x * (x * x - 3.0 * y * y),
        y * (3.0 * x * x - y * y),
        x * y * z,
        x * (5.0 * z * z - 1.0),
        y * (5.0 * z * z - 1.0),
        z * (5.0 * z * z - 3.0),
        z * (x * x - y * y),
    ]
}

/// Random smooth field on the sphere with max |value| equal to `amplitude`.
#[derive(Clone)]
struct RadialField {
    coef: [f64; 15],
    amplitude: f64,
    norm: f64,
}

impl RadialField {
    fn random(rng: &mut ChaCha8Rng, amplitude: f64) -> Self {
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut coef = [0.0; 15];
        for (i, c) in coef.iter_mut().enumerate() {
            let degree = if i < 3 { 1.0 } else if i < 8 { 2.0 } else { 3.0 };
            *c = n.sample(rng) / degree;
        }
        let raw = |u: Vec3| harmonics(u).iter().zip(&coef).map(|(h, c)| h * c).sum::<f64>();
        let norm = fibonacci_sphere(2000)
            .into_iter()
            .map(|u| raw(u).abs())
            .fold(0.0, f64::max)
            .max(1e-12);
        RadialField { coef, amplitude, norm }
    }

    fn eval(&self, u: Vec3) -> f64 {
        let raw: f64 = harmonics(u).iter().zip(&self.coef).map(|(h, c)| h * c).sum();
        self.amplitude * raw / self.norm
    }
}

/// Radial surfaces `r_wm(u)` and `r_gm(u)` around a center.
struct Shape {
    center: Vec3,
    wm: Box<dyn Fn(Vec3) -> f64>,
    gm: Box<dyn Fn(Vec3) -> f64>,
}

fn shape(spec: &PhantomSpec) -> Shape {
    match *spec {
        PhantomSpec::TwoSphere { r_wm, r_gm, center } => Shape {
            center,
            wm: Box::new(move |_| r_wm),
            gm: Box::new(move |_| r_gm),
        },
        PhantomSpec::Blob { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb10b_5eed);
            let base = rng.random_range(6.5..8.5);
            let thick = rng.random_range(2.0..3.0);
            let shape_amp = rng.random_range(0.06..0.12);
            let center = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let f_wm = RadialField::random(&mut rng, shape_amp);
            let f_t = RadialField::random(&mut rng, 0.15);
            let wm = move |u: Vec3| base * (1.0 + f_wm.eval(u));
            let wm2 = wm.clone();
            let gm = move |u: Vec3| wm2(u) + thick * (1.0 + f_t.eval(u));
            Shape {
                center,
                wm: Box::new(wm),
                gm: Box::new(gm),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SubjectSample {
    pub spec: PhantomSpec,
    pub labels: Volume<u8>,
    pub wm_sdf: SignedDistanceVolume,
    pub gm_sdf: SignedDistanceVolume,
    pub wm: Mesh,
    pub gm: Mesh,
}

impl SubjectSample {
    pub fn grid(&self) -> Grid {
        self.labels.grid()
    }

    /// Label codes present in the label map, ascending.
    pub fn label_set(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels.data {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Similarity transform that places a template sphere of radius
    /// `template_radius` over the brain: centered on the centroid of the
    /// WM and GM labels and scaled to the radius of a ball of the same
    /// volume. Plays the role of the per-subject affine co-registration of
    /// the template; it sees the tissue mask, not the surfaces.
    pub fn template_affine(&self, template_radius: f64) -> Result<Affine> {
        let grid = self.grid();
        let [nx, ny, nz] = grid.dims;
        let (mut count, mut sum) = (0usize, [0.0; 3]);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let l = *self.labels.get(i, j, k);
                    if l == labels::WM || l == labels::GM {
                        count += 1;
                        sum = vec3::add(sum, grid.world(i, j, k));
                    }
                }
            }
        }
        if count == 0 || !(template_radius > 0.0) {
            return Err(Error::invalid("template placement needs brain voxels and a positive template radius"));
        }
        let sp = grid.spacing();
        let volume = count as f64 * sp[0] * sp[1] * sp[2];
        let radius = (3.0 * volume / (4.0 * std::f64::consts::PI)).cbrt();
        let s = radius / template_radius;
        let c = vec3::scale(sum, 1.0 / count as f64);
        Ok([
            [s, 0.0, 0.0, c[0]],
            [0.0, s, 0.0, c[1]],
            [0.0, 0.0, s, c[2]],
            [0.0, 0.0, 0.0, 1.0],
        ])
    }
}

/// Ground-truth WM and GM meshes: the unit-sphere template at any level with
/// each vertex moved along its direction onto the phantom surfaces.
pub fn phantom_meshes(spec: &PhantomSpec, template: &Mesh) -> Result<(Mesh, Mesh)> {
    let sh = shape(spec);
    let mut wm = Vec::with_capacity(template.n_vertices());
    let mut gm = Vec::with_capacity(template.n_vertices());
    for &p in &template.vertices {
        let u = vec3::normalize(p).ok_or_else(|| Error::invalid("template vertex at the origin"))?;
        wm.push(vec3::add(sh.center, vec3::scale(u, (sh.wm)(u))));
        gm.push(vec3::add(sh.center, vec3::scale(u, (sh.gm)(u))));
    }
    Ok((template.with_vertices(wm), template.with_vertices(gm)))
}

/// Builds the full subject on a 1 mm grid of `dims` centered on the origin.
pub fn build_subject(spec: &PhantomSpec, template: &Mesh, dims: [usize; 3]) -> Result<SubjectSample> {
    let (wm, gm) = phantom_meshes(spec, template)?;
    let grid = Grid::centered(dims, 1.0);
    let wm_sdf = signed_distance_volume(&wm, &grid);
    let gm_sdf = signed_distance_volume(&gm, &grid);
    if gm_sdf.mesh_outside_grid {
        return Err(Error::invalid(format!("phantom {spec} does not fit in a {dims:?} grid")));
    }
    let mut lab = grid.filled(0u8);
    let mut outside = grid.filled(false);
    for i in 0..grid.len() {
        let (dw, dg) = (wm_sdf.volume.data[i], gm_sdf.volume.data[i]);
        lab.data[i] = if dw > 0.0 {
            labels::WM
        } else if dg > 0.0 {
            labels::GM
        } else if dg > -CSF_SHELL_MM {
            labels::CSF
        } else {
            outside.data[i] = true;
            0
        };
    }
    if outside.data.iter().any(|&o| o) {
        // Non-brain tissue: cluster a radial, noisy head profile into two
        // classes, the way real scans are split by intensity.
        let mut rng = ChaCha8Rng::seed_from_u64(spec_seed(spec));
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut field = grid.filled(0.0);
        for v in &mut field.data {
            *v = noise.sample(&mut rng);
        }
        let field = gaussian_blur(&field, [1.5; 3]);
        let mut head = grid.filled(0.0);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let idx = head.index(i, j, k);
                    head.data[idx] = -gm_sdf.volume.data[idx] + 2.0 * field.data[idx];
                }
            }
        }
        let clusters = kmeans_labels(&head, &outside, 2, spec_seed(spec))
            .or_else(|_| kmeans_labels(&head, &outside, 1, 0))?;
        for (l, &c) in lab.data.iter_mut().zip(&clusters.data) {
            if c > 0 {
                *l = labels::EXTRA_1 + (c - 1);
            }
        }
    }
    Ok(SubjectSample {
        spec: spec.clone(),
        labels: lab,
        wm_sdf,
        gm_sdf,
        wm,
        gm,
    })
}

fn spec_seed(spec: &PhantomSpec) -> u64 {
    match spec {
        PhantomSpec::Blob { seed } => *seed,
        PhantomSpec::TwoSphere { r_wm, r_gm, .. } => r_wm.to_bits() ^ r_gm.to_bits().rotate_left(17),
    }
}
