use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use cortexflow::model::{save_checkpoint, Checkpoint, Model, ModelConfig};
use cortexflow::nifti::{write_volume, DataType};
use cortexflow::Grid;
use cortexflow_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = cf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn template_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&dir.path().join("t.ply"));
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(cf_template(62, 2, &mut t), CfStatus::Ok);
        assert_eq!(cf_mesh_vertex_count(t), 962);
        let mut chi = 0;
        assert_eq!(cf_mesh_euler_characteristic(t, &mut chi), CfStatus::Ok);
        assert_eq!(chi, 2);
        assert_eq!(cf_mesh_write(t, path.as_ptr()), CfStatus::Ok);

        let mut back = ptr::null_mut();
        assert_eq!(cf_mesh_read(path.as_ptr(), &mut back), CfStatus::Ok);
        let n = 3 * cf_mesh_vertex_count(back);
        let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
        assert_eq!(cf_mesh_vertices(t, a.as_mut_ptr(), n), CfStatus::Ok);
        assert_eq!(cf_mesh_vertices(back, b.as_mut_ptr(), n), CfStatus::Ok);
        // PLY stores float32 coordinates.
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x as f32, *y as f32);
        }
        let mut sub = ptr::null_mut();
        assert_eq!(cf_mesh_subdivide(back, &mut sub), CfStatus::Ok);
        assert_eq!(cf_mesh_vertex_count(sub), 3842);
        let mut sif = 1.0;
        assert_eq!(cf_mesh_sif_fraction(sub, &mut sif), CfStatus::Ok);
        assert_eq!(sif, 0.0);
        cf_mesh_free(t);
        cf_mesh_free(back);
        cf_mesh_free(sub);
    }
}

#[test]
fn mesh_from_arrays_and_buffers() {
    let v = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let f = [0u32, 2, 1, 0, 1, 3, 0, 3, 2, 1, 2, 3];
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(cf_mesh_new(v.as_ptr(), 4, f.as_ptr(), 4, &mut m), CfStatus::Ok);
        let mut out = [0u32; 12];
        assert_eq!(cf_mesh_faces(m, out.as_mut_ptr(), 12), CfStatus::Ok);
        assert_eq!(out, f);
        assert_eq!(cf_mesh_faces(m, out.as_mut_ptr(), 5), CfStatus::BufferTooSmall);
        assert!(last_error().contains("need 12"));
        cf_mesh_free(m);

        let bad = [0u32, 1, 9];
        let mut m = ptr::null_mut();
        assert_eq!(cf_mesh_new(v.as_ptr(), 4, bad.as_ptr(), 1, &mut m), CfStatus::InvalidMesh);
        assert!(m.is_null());
    }
}

#[test]
fn errors_have_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cstr(&dir.path().join("absent.ckpt"));
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(cf_model_load(missing.as_ptr(), &mut m), CfStatus::Io);
        assert!(last_error().contains("absent.ckpt"));
        assert_eq!(cf_mesh_read(ptr::null(), &mut ptr::null_mut()), CfStatus::NullPointer);
        assert_eq!(cf_template(62, 0, ptr::null_mut()), CfStatus::NullPointer);
        assert_eq!(cf_template(3, 0, &mut ptr::null_mut()), CfStatus::InvalidArgument);
        let mut ok = ptr::null_mut();
        assert_eq!(cf_template(62, 0, &mut ok), CfStatus::Ok);
        assert!(cf_last_error().is_null());
        cf_mesh_free(ok);
        cf_mesh_free(ptr::null_mut());
        assert_eq!(cf_mesh_vertex_count(ptr::null()), 0);
    }
    let big_endian = dir.path().join("be.nii");
    let mut bytes = vec![0u8; 352];
    bytes[..4].copy_from_slice(&348i32.to_be_bytes());
    std::fs::write(&big_endian, bytes).unwrap();
    unsafe {
        let mut v = ptr::null_mut();
        let s = cf_volume_read(cstr(&big_endian).as_ptr(), &mut v);
        assert!(matches!(s, CfStatus::UnsupportedFormat | CfStatus::Malformed), "{s:?}");
    }
}

#[test]
fn reconstruct_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    save_checkpoint(&ck, &Checkpoint::from_model(&Model::new(ModelConfig::desk(), 1).unwrap())).unwrap();
    let vol = dir.path().join("v.nii.gz");
    let mut img = Grid::centered([20, 20, 20], 1.0).filled(0.0);
    for (i, x) in img.data.iter_mut().enumerate() {
        *x = (i % 7) as f64;
    }
    write_volume(&img, &vol, DataType::F32).unwrap();
    unsafe {
        let (mut model, mut v) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(cf_model_load(cstr(&ck).as_ptr(), &mut model), CfStatus::Ok);
        assert_eq!(cf_volume_read(cstr(&vol).as_ptr(), &mut v), CfStatus::Ok);
        let mut dims = [0usize; 3];
        assert_eq!(cf_volume_dims(v, dims.as_mut_ptr()), CfStatus::Ok);
        assert_eq!(dims, [20, 20, 20]);
        let (mut wm, mut gm) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(cf_model_reconstruct(model, v, ptr::null(), &mut wm, &mut gm), CfStatus::Ok);
        assert_eq!(cf_mesh_vertex_count(wm), 3842);
        let mut metrics = CfMetrics::default();
        assert_eq!(cf_evaluate_pair(wm, gm, wm, gm, 2000, &mut metrics), CfStatus::Ok);
        assert!(metrics.ssd_wm < 1e-9 && metrics.thickness_error < 1e-9);
        assert_eq!(cf_evaluate_pair(wm, gm, ptr::null(), gm, 10, &mut metrics), CfStatus::NullPointer);
        for m in [wm, gm] {
            cf_mesh_free(m);
        }
        cf_volume_free(v);
        cf_model_free(model);
    }
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/cortexflow.h")).unwrap();
    for name in [
        "cf_last_error",
        "cf_mesh_read",
        "cf_model_reconstruct",
        "cf_evaluate_pair",
        "CF_STATUS_BUFFER_TOO_SMALL",
        "typedef struct CfMesh CfMesh",
    ] {
        assert!(h.contains(name), "{name}");
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = target_dir().join("libcortexflow_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "cortexflow.h"
int main(void) {
    CfMesh *m = NULL;
    if (cf_template(62, 3, &m) != CF_STATUS_OK) return 1;
    size_t n = cf_mesh_vertex_count(m);
    cf_mesh_free(m);
    if (cf_template(62, 0, NULL) != CF_STATUS_NULL_POINTER) return 2;
    if (cf_last_error() == NULL) return 3;
    printf("%zu %s\n", n, cf_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("demo");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("3842 {}", env!("CARGO_PKG_VERSION")));
}
