//! C ABI over the cortexflow library.
//!
//! Objects cross the boundary as opaque handles created by `cf_*_read`,
//! `cf_*_load` or `cf_*_new` functions and released with the matching
//! `cf_*_free`. Every fallible call returns a [`CfStatus`]; on failure the
//! message is available from [`cf_last_error`] on the same thread.
//! Panics never unwind into the caller: they are reported as
//! [`CfStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cortexflow::eval::{evaluate_pair, EvalOptions};
use cortexflow::mesh::{self, build_template, count_self_intersecting_faces, subdivide};
use cortexflow::model::{load_checkpoint, Model, IDENTITY};
use cortexflow::{nifti, synth, Error, Mesh, Volume};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    UnsupportedFormat = 4,
    Malformed = 5,
    ShapeMismatch = 6,
    InvalidMesh = 7,
    NonFinite = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

impl From<&Error> for CfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Infeasible(_) => CfStatus::InvalidArgument,
            Error::InvalidMesh(_) | Error::DegenerateFace(_) | Error::Degenerate(_) => CfStatus::InvalidMesh,
            Error::ShapeMismatch(_) => CfStatus::ShapeMismatch,
            Error::NonFinite(_) => CfStatus::NonFinite,
            Error::UnsupportedFormat(_) => CfStatus::UnsupportedFormat,
            Error::Malformed { .. } | Error::Json(_) => CfStatus::Malformed,
            Error::Io { .. } => CfStatus::Io,
        }
    }
}

/// Triangle mesh handle.
pub struct CfMesh(Mesh);

/// Scan handle (values as read, any spacing).
pub struct CfVolume(Volume<f64>);

/// Trained network handle; safe to share between threads for inference.
pub struct CfModel(Model);

/// Surface metrics of a predicted pair against ground truth.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CfMetrics {
    pub ssd_wm: f64,
    pub ssd_gm: f64,
    pub hd90_wm: f64,
    pub hd90_gm: f64,
    pub thickness_error: f64,
    pub mean_thickness: f64,
    pub sif_wm: f64,
    pub sif_gm: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: CfStatus, msg: impl Into<String>) -> CfStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, clearing the last error first and converting errors and
/// panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), CfStatus>) -> CfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(CfStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

fn lib<T>(r: cortexflow::Result<T>) -> Result<T, CfStatus> {
    r.map_err(|e| fail(CfStatus::from(&e), e.to_string()))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, CfStatus> {
    if p.is_null() {
        return Err(fail(CfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, CfStatus> {
    p.as_ref().ok_or_else(|| fail(CfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, CfStatus> {
    p.as_mut().ok_or_else(|| fail(CfStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next cortexflow call on the same thread.
#[no_mangle]
pub extern "C" fn cf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a PLY or OFF mesh.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_read(path: *const c_char, out: *mut *mut CfMesh) -> CfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = lib(mesh::io::read_mesh(path_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(CfMesh(m)));
        Ok(())
    })
}

/// Writes a mesh; the format follows the extension (`.ply` or `.off`).
///
/// # Safety
/// `mesh` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_write(mesh: *const CfMesh, path: *const c_char) -> CfStatus {
    guard(|| {
        let m = handle(mesh, "mesh")?;
        lib(mesh::io::write_mesh(&m.0, path_arg(path, "path")?))
    })
}

/// Builds a mesh from `n_vertices` xyz triples and `n_faces` index triples.
///
/// # Safety
/// `vertices` must hold `3 * n_vertices` doubles and `faces`
/// `3 * n_faces` indices.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_new(
    vertices: *const f64,
    n_vertices: usize,
    faces: *const u32,
    n_faces: usize,
    out: *mut *mut CfMesh,
) -> CfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if vertices.is_null() || faces.is_null() {
            return Err(fail(CfStatus::NullPointer, "vertex or face array is null"));
        }
        let v = std::slice::from_raw_parts(vertices, 3 * n_vertices);
        let f = std::slice::from_raw_parts(faces, 3 * n_faces);
        let verts = v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let tris = f.chunks_exact(3).map(|c| [c[0] as usize, c[1] as usize, c[2] as usize]).collect();
        let m = lib(Mesh::new(verts, tris, 0))?;
        *out = Box::into_raw(Box::new(CfMesh(m)));
        Ok(())
    })
}

/// The genus-0 template with `n_vertices` points, subdivided `levels` times.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_template(n_vertices: usize, levels: u32, out: *mut *mut CfMesh) -> CfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let mut m = lib(build_template(n_vertices))?;
        for _ in 0..levels {
            m = lib(subdivide(&m))?;
        }
        *out = Box::into_raw(Box::new(CfMesh(m)));
        Ok(())
    })
}

/// One step of midpoint subdivision into a new handle.
///
/// # Safety
/// `mesh` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_subdivide(mesh: *const CfMesh, out: *mut *mut CfMesh) -> CfStatus {
    guard(|| {
        let m = handle(mesh, "mesh")?;
        let out = out_ptr(out, "out")?;
        let s = lib(subdivide(&m.0))?;
        *out = Box::into_raw(Box::new(CfMesh(s)));
        Ok(())
    })
}

/// Vertex count, or 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_vertex_count(mesh: *const CfMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.n_vertices())
}

/// Face count, or 0 for a null handle.
///
/// # Safety
/// `mesh` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_face_count(mesh: *const CfMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.n_faces())
}

/// Copies the vertices as xyz triples into `buf` of `len` doubles.
///
/// # Safety
/// `mesh` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_vertices(mesh: *const CfMesh, buf: *mut f64, len: usize) -> CfStatus {
    guard(|| {
        let m = handle(mesh, "mesh")?;
        let need = 3 * m.0.n_vertices();
        if buf.is_null() {
            return Err(fail(CfStatus::NullPointer, "buffer is null"));
        }
        if len < need {
            return Err(fail(CfStatus::BufferTooSmall, format!("need {need} doubles, got {len}")));
        }
        let out = std::slice::from_raw_parts_mut(buf, need);
        for (o, v) in out.iter_mut().zip(m.0.vertices.iter().flatten()) {
            *o = *v;
        }
        Ok(())
    })
}

/// Copies the faces as index triples into `buf` of `len` entries.
///
/// # Safety
/// `mesh` must be a live handle and `buf` writable for `len` entries.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_faces(mesh: *const CfMesh, buf: *mut u32, len: usize) -> CfStatus {
    guard(|| {
        let m = handle(mesh, "mesh")?;
        let need = 3 * m.0.n_faces();
        if buf.is_null() {
            return Err(fail(CfStatus::NullPointer, "buffer is null"));
        }
        if len < need {
            return Err(fail(CfStatus::BufferTooSmall, format!("need {need} indices, got {len}")));
        }
        let out = std::slice::from_raw_parts_mut(buf, need);
        for (o, &v) in out.iter_mut().zip(m.0.faces.iter().flatten()) {
            *o = u32::try_from(v).map_err(|_| fail(CfStatus::InvalidMesh, "vertex index exceeds 32 bits"))?;
        }
        Ok(())
    })
}

/// Euler characteristic V - E + F.
///
/// # Safety
/// `mesh` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_euler_characteristic(mesh: *const CfMesh, out: *mut i64) -> CfStatus {
    guard(|| {
        *out_ptr(out, "out")? = handle(mesh, "mesh")?.0.euler_characteristic();
        Ok(())
    })
}

/// Fraction of faces intersecting a non-adjacent face.
///
/// # Safety
/// `mesh` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_sif_fraction(mesh: *const CfMesh, out: *mut f64) -> CfStatus {
    guard(|| {
        *out_ptr(out, "out")? = count_self_intersecting_faces(&handle(mesh, "mesh")?.0);
        Ok(())
    })
}

/// Releases a mesh; null is ignored.
///
/// # Safety
/// `mesh` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cf_mesh_free(mesh: *mut CfMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Reads a NIfTI-1 scan (`.nii` or `.nii.gz`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_volume_read(path: *const c_char, out: *mut *mut CfVolume) -> CfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let v = lib(nifti::read_volume(path_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(CfVolume(v)));
        Ok(())
    })
}

/// Grid size `(nx, ny, nz)` into `dims[3]`.
///
/// # Safety
/// `volume` must be a live handle and `dims` writable for three entries.
#[no_mangle]
pub unsafe extern "C" fn cf_volume_dims(volume: *const CfVolume, dims: *mut usize) -> CfStatus {
    guard(|| {
        let v = handle(volume, "volume")?;
        if dims.is_null() {
            return Err(fail(CfStatus::NullPointer, "dims is null"));
        }
        std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&v.0.dims);
        Ok(())
    })
}

/// Releases a volume; null is ignored.
///
/// # Safety
/// `volume` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cf_volume_free(volume: *mut CfVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Loads a trained network from a checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_model_load(path: *const c_char, out: *mut *mut CfModel) -> CfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ck = lib(load_checkpoint(path_arg(path, "path")?.as_ref()))?;
        let m = lib(ck.into_model())?;
        *out = Box::into_raw(Box::new(CfModel(m)));
        Ok(())
    })
}

/// Reconstructs WM and GM surfaces. The scan is resampled to 1 mm and
/// min-max normalized first. `affine` is a row-major 4x4 template-to-scanner
/// transform, or null for identity.
///
/// # Safety
/// Handles must be live, `affine` null or readable for 16 doubles, and
/// `out_wm`/`out_gm` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cf_model_reconstruct(
    model: *const CfModel,
    volume: *const CfVolume,
    affine: *const f64,
    out_wm: *mut *mut CfMesh,
    out_gm: *mut *mut CfMesh,
) -> CfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let v = handle(volume, "volume")?;
        let (ow, og) = (out_ptr(out_wm, "out_wm")?, out_ptr(out_gm, "out_gm")?);
        let a = if affine.is_null() {
            IDENTITY
        } else {
            let s = std::slice::from_raw_parts(affine, 16);
            let mut a = [[0.0; 4]; 4];
            for (i, row) in a.iter_mut().enumerate() {
                row.copy_from_slice(&s[4 * i..4 * i + 4]);
            }
            a
        };
        let img = lib(synth::conform(&v.0))?;
        let (wm, gm) = lib(m.0.reconstruct(&img, &a))?;
        *ow = Box::into_raw(Box::new(CfMesh(wm)));
        *og = Box::into_raw(Box::new(CfMesh(gm)));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cf_model_free(model: *mut CfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Scores a predicted WM/GM pair against ground truth with `n_samples`
/// points per surface.
///
/// # Safety
/// All handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cf_evaluate_pair(
    pred_wm: *const CfMesh,
    pred_gm: *const CfMesh,
    gt_wm: *const CfMesh,
    gt_gm: *const CfMesh,
    n_samples: usize,
    out: *mut CfMetrics,
) -> CfStatus {
    guard(|| {
        let (pw, pg) = (handle(pred_wm, "pred_wm")?, handle(pred_gm, "pred_gm")?);
        let (gw, gg) = (handle(gt_wm, "gt_wm")?, handle(gt_gm, "gt_gm")?);
        let out = out_ptr(out, "out")?;
        let opts = EvalOptions {
            n_samples,
            ..Default::default()
        };
        let m = lib(evaluate_pair(&pw.0, &pg.0, &gw.0, &gg.0, None, &opts))?;
        *out = CfMetrics {
            ssd_wm: m.ssd_wm,
            ssd_gm: m.ssd_gm,
            hd90_wm: m.hd90_wm,
            hd90_gm: m.hd90_gm,
            thickness_error: m.thickness_error,
            mean_thickness: m.mean_thickness,
            sif_wm: m.sif_wm,
            sif_gm: m.sif_gm,
        };
        Ok(())
    })
}
