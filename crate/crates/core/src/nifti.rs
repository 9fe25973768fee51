//! Minimal NIfTI-1 single-file (`.nii` / `.nii.gz`) reader and writer.
//!
//! Supported: little-endian, 3D (or 4D with a singleton fourth axis),
//! datatypes uint8 (2), int16 (4) and float32 (16), sform affine via `srow_*`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{Volume, IDENTITY};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I16,
    F32,
}

impl DataType {
    fn code(self) -> i16 {
        match self {
            DataType::U8 => 2,
            DataType::I16 => 4,
            DataType::F32 => 16,
        }
    }

    fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(DataType::U8),
            4 => Ok(DataType::I16),
            16 => Ok(DataType::F32),
            other => Err(Error::UnsupportedFormat(format!(
                "NIfTI datatype code {other} (supported: 2 uint8, 4 int16, 16 float32)"
            ))),
        }
    }

    fn bytes(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::F32 => 4,
        }
    }
}

fn rd_i16(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn rd_f32(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<Volume<f64>> {
    let raw;
    let bytes = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::UnsupportedFormat(format!("gzip stream: {e}")))?;
        raw = out;
        &raw[..]
    } else {
        bytes
    };
    if bytes.len() < HEADER_SIZE {
        return Err(Error::UnsupportedFormat("file shorter than a NIfTI-1 header".into()));
    }
    let sizeof_hdr = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if sizeof_hdr != HEADER_SIZE as i32 {
        if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
            return Err(Error::UnsupportedFormat("big-endian NIfTI files are not supported".into()));
        }
        return Err(Error::UnsupportedFormat(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    if &bytes[344..347] != b"n+1" {
        return Err(Error::UnsupportedFormat("magic is not 'n+1' (single-file NIfTI-1)".into()));
    }
    let ndim = rd_i16(bytes, 40);
    let dim: Vec<i16> = (0..8).map(|k| rd_i16(bytes, 40 + 2 * k)).collect();
    if !(3..=4).contains(&ndim) || (ndim == 4 && dim[4] != 1) {
        return Err(Error::UnsupportedFormat(format!("dimensionality {ndim} (dims {dim:?})")));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(Error::Malformed {
            path: "<nifti>".into(),
            reason: format!("non-positive dims {:?}", &dim[1..4]),
        });
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let dtype = DataType::from_code(rd_i16(bytes, 70))?;
    let vox_offset = rd_f32(bytes, 108) as usize;
    let slope = rd_f32(bytes, 112) as f64;
    let inter = rd_f32(bytes, 116) as f64;
    let n = dims[0] * dims[1] * dims[2];
    let expected = vox_offset + n * dtype.bytes();
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "header dims {dims:?} imply {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let sform = rd_i16(bytes, 254);
    let affine = if sform > 0 {
        let mut a = IDENTITY;
        for (r, off) in [280usize, 296, 312].into_iter().enumerate() {
            for c in 0..4 {
                a[r][c] = rd_f32(bytes, off + 4 * c) as f64;
            }
        }
        a
    } else {
        let mut a = IDENTITY;
        for k in 0..3 {
            a[k][k] = rd_f32(bytes, 80 + 4 * k) as f64;
        }
        a
    };
    let body = &bytes[vox_offset..];
    let mut data: Vec<f64> = match dtype {
        DataType::U8 => body.iter().map(|&b| b as f64).collect(),
        DataType::I16 => body.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        DataType::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    };
    if slope != 0.0 && (slope != 1.0 || inter != 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Volume::new(dims, affine, data)
}

pub fn encode(v: &Volume<f64>, dtype: DataType) -> Result<Vec<u8>> {
    let mut h = vec![0u8; VOX_OFFSET];
    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let dim: [i16; 8] = [
        3,
        i16::try_from(v.dims[0]).map_err(|_| Error::invalid("dimension exceeds i16"))?,
        i16::try_from(v.dims[1]).map_err(|_| Error::invalid("dimension exceeds i16"))?,
        i16::try_from(v.dims[2]).map_err(|_| Error::invalid("dimension exceeds i16"))?,
        1,
        1,
        1,
        1,
    ];
    for (k, d) in dim.iter().enumerate() {
        h[40 + 2 * k..42 + 2 * k].copy_from_slice(&d.to_le_bytes());
    }
    h[70..72].copy_from_slice(&dtype.code().to_le_bytes());
    h[72..74].copy_from_slice(&((dtype.bytes() * 8) as i16).to_le_bytes());
    let sp = v.spacing();
    let pixdim = [1.0f32, sp[0] as f32, sp[1] as f32, sp[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (k, p) in pixdim.iter().enumerate() {
        h[76 + 4 * k..80 + 4 * k].copy_from_slice(&p.to_le_bytes());
    }
    h[108..112].copy_from_slice(&(VOX_OFFSET as f32).to_le_bytes());
    h[112..116].copy_from_slice(&1.0f32.to_le_bytes());
    h[123] = 2; // mm
    h[254..256].copy_from_slice(&1i16.to_le_bytes());
    for (r, off) in [280usize, 296, 312].into_iter().enumerate() {
        for c in 0..4 {
            h[off + 4 * c..off + 4 * c + 4].copy_from_slice(&(v.affine[r][c] as f32).to_le_bytes());
        }
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h.reserve(v.len() * dtype.bytes());
    for &x in &v.data {
        match dtype {
            DataType::U8 => h.push(x.round().clamp(0.0, 255.0) as u8),
            DataType::I16 => h.extend_from_slice(&(x.round().clamp(-32768.0, 32767.0) as i16).to_le_bytes()),
            DataType::F32 => h.extend_from_slice(&(x as f32).to_le_bytes()),
        }
    }
    Ok(h)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Malformed { reason, .. } => Error::Malformed {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

/// Writes `path`, gzip-compressing when it ends in `.gz`.
pub fn write_volume(v: &Volume<f64>, path: impl AsRef<Path>, dtype: DataType) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(v, dtype)?;
    let out = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        bytes
    };
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
