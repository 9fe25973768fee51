//! Mesh files: binary little-endian PLY (float32 vertices, int32 indices)
//! and ASCII OFF.

use std::fs;
use std::io::{BufRead, Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};

use super::Mesh;

pub fn encode_ply(m: &Mesh) -> Vec<u8> {
    let header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment level {}\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\nelement face {}\n\
         property list uchar int vertex_indices\nend_header\n",
        m.level,
        m.n_vertices(),
        m.n_faces()
    );
    let mut out = Vec::with_capacity(header.len() + m.n_vertices() * 12 + m.n_faces() * 13);
    out.extend_from_slice(header.as_bytes());
    for v in &m.vertices {
        for &c in v {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for f in &m.faces {
        out.push(3u8);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

pub fn write_ply(m: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ply(m)).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ply(&bytes).map_err(|reason| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn decode_ply(bytes: &[u8]) -> std::result::Result<Mesh, String> {
    let mut cur = Cursor::new(bytes);
    let mut line = String::new();
    let mut next_line = |cur: &mut Cursor<&[u8]>| -> std::result::Result<String, String> {
        line.clear();
        let n = cur.read_line(&mut line).map_err(|e| e.to_string())?;
        if n == 0 {
            return Err("unexpected end of header".into());
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut cur)? != "ply" {
        return Err("missing 'ply' magic".into());
    }
    let mut n_vertices = None;
    let mut n_faces = None;
    let mut level = 0u32;
    let mut vertex_props = Vec::new();
    let mut current = "";
    loop {
        let l = next_line(&mut cur)?;
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(format!("unsupported PLY format '{other}'")),
            ["comment", "level", n] => level = n.parse().map_err(|_| "bad level comment")?,
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                n_vertices = Some(n.parse::<usize>().map_err(|_| "bad vertex count")?);
                current = "vertex";
            }
            ["element", "face", n] => {
                n_faces = Some(n.parse::<usize>().map_err(|_| "bad face count")?);
                current = "face";
            }
            ["element", name, _] => return Err(format!("unsupported element '{name}'")),
            ["property", "float", name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["property", "list", "uchar", "int", _] if current == "face" => {}
            ["property", ..] => return Err(format!("unsupported property line '{l}'")),
            ["end_header"] => break,
            [] => {}
            _ => return Err(format!("unexpected header line '{l}'")),
        }
    }
    if vertex_props != ["x", "y", "z"] {
        return Err(format!("expected float x,y,z vertex properties, got {vertex_props:?}"));
    }
    let nv = n_vertices.ok_or("missing vertex element")?;
    let nf = n_faces.ok_or("missing face element")?;
    let mut vertices = Vec::with_capacity(nv);
    let mut buf4 = [0u8; 4];
    for _ in 0..nv {
        let mut v = [0.0; 3];
        for c in &mut v {
            cur.read_exact(&mut buf4).map_err(|_| "truncated vertex data")?;
            *c = f32::from_le_bytes(buf4) as f64;
        }
        vertices.push(v);
    }
    let mut faces = Vec::with_capacity(nf);
    for fi in 0..nf {
        let mut cnt = [0u8; 1];
        cur.read_exact(&mut cnt).map_err(|_| "truncated face data")?;
        if cnt[0] != 3 {
            return Err(format!("face {fi} has {} vertices; only triangles supported", cnt[0]));
        }
        let mut f = [0usize; 3];
        for i in &mut f {
            cur.read_exact(&mut buf4).map_err(|_| "truncated face data")?;
            let v = i32::from_le_bytes(buf4);
            if v < 0 {
                return Err(format!("face {fi} has negative index"));
            }
            *i = v as usize;
        }
        faces.push(f);
    }
    if (cur.position() as usize) != bytes.len() {
        return Err("trailing bytes after face data".into());
    }
    Mesh::new(vertices, faces, level).map_err(|e| e.to_string())
}

pub fn write_off(m: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "OFF\n{} {} 0", m.n_vertices(), m.n_faces());
    for v in &m.vertices {
        let _ = writeln!(s, "{} {} {}", v[0], v[1], v[2]);
    }
    for f in &m.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    let path = path.as_ref();
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_off(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("OFF") {
        return Err(bad("missing OFF magic"));
    }
    let mut num = || -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad count"))
    };
    let (nv, nf, _ne) = (num()?, num()?, num()?);
    let mut rest = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace)
        .skip(4);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut v = [0.0; 3];
        for c in &mut v {
            *c = rest
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| bad("bad vertex coordinate"))?;
        }
        vertices.push(v);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let k: usize = rest.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad face"))?;
        if k != 3 {
            return Err(bad("only triangle faces are supported"));
        }
        let mut f = [0usize; 3];
        for i in &mut f {
            *i = rest.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad face index"))?;
        }
        faces.push(f);
    }
    Mesh::new(vertices, faces, 0)
}

/// Dispatches on extension: `.ply` or `.off`.
pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("off") | Some("OFF") => read_off(path),
        _ => read_ply(path),
    }
}

pub fn write_mesh(m: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("off") | Some("OFF") => write_off(m, path),
        _ => write_ply(m, path),
    }
}
