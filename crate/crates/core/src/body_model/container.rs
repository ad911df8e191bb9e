//! Binary body model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "STGBODY\0"
//! version  u32      1
//! count    u32      number of buffers
//! buffer*  name_len u16, name (utf-8), dtype u8 (1 = f64, 2 = i32),
//!          ndim u8, dims u32 x ndim, data (product(dims) elements)
//! ```
//!
//! Buffers: `template_vertices` f64 [V,3], `faces` i32 [F,3],
//! `skinning_weights` f64 [V,J], `kinematic_tree` i32 [J] (root = -1),
//! `joint_regressor_native` f64 [J,V], `joint_regressor_openpose` f64 [K,V],
//! and optionally `shape_blendshapes` f64 [V,3,B]. Unknown buffers are ignored.

use super::{BodyModelData, DenseMatrix, ModelError, ShapeBlendshapes};
use nalgebra::Point3;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"STGBODY\0";
pub const VERSION: u32 = 1;

const DTYPE_F64: u8 = 1;
const DTYPE_I32: u8 = 2;

enum Buffer {
    F64 { dims: Vec<usize>, data: Vec<f64> },
    I32 { dims: Vec<usize>, data: Vec<i32> },
}

fn malformed(msg: impl Into<String>) -> ModelError {
    ModelError::Malformed(msg.into())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], ModelError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| malformed(format!("truncated container: {e}")))?;
    Ok(buf)
}

pub fn load_body_model(path: impl AsRef<Path>) -> Result<BodyModelData, ModelError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_body_model(&mut std::io::BufReader::new(file))
}

pub fn read_body_model(r: &mut impl Read) -> Result<BodyModelData, ModelError> {
    let magic: [u8; 8] = read_exact(r)?;
    if &magic != MAGIC {
        return Err(malformed("bad magic bytes"));
    }
    let version = u32::from_le_bytes(read_exact(r)?);
    if version != VERSION {
        return Err(malformed(format!("unsupported container version {version}")));
    }
    let count = u32::from_le_bytes(read_exact(r)?);
    let mut buffers = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact(r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| malformed(format!("truncated buffer name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| malformed("buffer name is not utf-8"))?;
        let [dtype] = read_exact::<1>(r)?;
        let [ndim] = read_exact::<1>(r)?;
        let dims = (0..ndim)
            .map(|_| Ok(u32::from_le_bytes(read_exact(r)?) as usize))
            .collect::<Result<Vec<_>, ModelError>>()?;
        let n: usize = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| malformed(format!("buffer {name} is too large")))?;
        let elem = match dtype {
            DTYPE_F64 => 8,
            DTYPE_I32 => 4,
            other => return Err(malformed(format!("buffer {name} has unknown dtype {other}"))),
        };
        let mut raw = vec![0u8; n * elem];
        r.read_exact(&mut raw)
            .map_err(|_| malformed(format!("buffer {name} is truncated")))?;
        let buffer = if dtype == DTYPE_F64 {
            Buffer::F64 {
                dims,
                data: raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            }
        } else {
            Buffer::I32 {
                dims,
                data: raw
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            }
        };
        buffers.insert(name, buffer);
    }
    let model = assemble(buffers)?;
    model.validate()?;
    Ok(model)
}

fn take_f64<'a>(
    buffers: &'a BTreeMap<String, Buffer>,
    name: &str,
    ndim: usize,
) -> Result<(&'a [usize], &'a [f64]), ModelError> {
    match buffers.get(name) {
        Some(Buffer::F64 { dims, data }) if dims.len() == ndim => Ok((dims, data)),
        Some(_) => Err(malformed(format!("buffer {name} must be f64 with {ndim} dims"))),
        None => Err(malformed(format!("missing buffer {name}"))),
    }
}

fn take_i32<'a>(
    buffers: &'a BTreeMap<String, Buffer>,
    name: &str,
    ndim: usize,
) -> Result<(&'a [usize], &'a [i32]), ModelError> {
    match buffers.get(name) {
        Some(Buffer::I32 { dims, data }) if dims.len() == ndim => Ok((dims, data)),
        Some(_) => Err(malformed(format!("buffer {name} must be i32 with {ndim} dims"))),
        None => Err(malformed(format!("missing buffer {name}"))),
    }
}

fn assemble(buffers: BTreeMap<String, Buffer>) -> Result<BodyModelData, ModelError> {
    let (dims, data) = take_f64(&buffers, "template_vertices", 2)?;
    if dims[1] != 3 {
        return Err(malformed("template_vertices must be [V,3]"));
    }
    let template_vertices = data
        .chunks_exact(3)
        .map(|c| Point3::new(c[0], c[1], c[2]))
        .collect();

    let (dims, data) = take_i32(&buffers, "faces", 2)?;
    if dims[1] != 3 {
        return Err(malformed("faces must be [F,3]"));
    }
    let faces = data
        .chunks_exact(3)
        .map(|c| {
            let mut f = [0u32; 3];
            for (dst, src) in f.iter_mut().zip(c) {
                *dst = u32::try_from(*src)
                    .map_err(|_| ModelError::invariant("faces", "negative vertex index"))?;
            }
            Ok(f)
        })
        .collect::<Result<Vec<_>, ModelError>>()?;

    let matrix = |name: &str| -> Result<DenseMatrix, ModelError> {
        let (dims, data) = take_f64(&buffers, name, 2)?;
        DenseMatrix::from_rows(dims[0], dims[1], data.to_vec())
    };
    let skinning_weights = matrix("skinning_weights")?;
    let joint_regressor_native = matrix("joint_regressor_native")?;
    let joint_regressor_openpose = matrix("joint_regressor_openpose")?;

    let (_, tree) = take_i32(&buffers, "kinematic_tree", 1)?;
    let parents = tree
        .iter()
        .map(|&p| if p < 0 { None } else { Some(p as usize) })
        .collect();

    let shape_blendshapes = match buffers.get("shape_blendshapes") {
        None => None,
        Some(_) => {
            let (dims, data) = take_f64(&buffers, "shape_blendshapes", 3)?;
            if dims[1] != 3 {
                return Err(malformed("shape_blendshapes must be [V,3,B]"));
            }
            Some(ShapeBlendshapes {
                num_coeffs: dims[2],
                data: data.to_vec(),
            })
        }
    };

    Ok(BodyModelData {
        template_vertices,
        faces,
        skinning_weights,
        parents,
        joint_regressor_native,
        joint_regressor_openpose,
        shape_blendshapes,
    })
}

fn write_header(w: &mut impl Write, name: &str, dtype: u8, dims: &[usize]) -> std::io::Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[dtype, dims.len() as u8])?;
    for d in dims {
        w.write_all(&(*d as u32).to_le_bytes())?;
    }
    Ok(())
}

fn write_f64(w: &mut impl Write, name: &str, dims: &[usize], data: &[f64]) -> std::io::Result<()> {
    write_header(w, name, DTYPE_F64, dims)?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_i32(w: &mut impl Write, name: &str, dims: &[usize], data: &[i32]) -> std::io::Result<()> {
    write_header(w, name, DTYPE_I32, dims)?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Writes the container as-is; invariants are enforced on load.
pub fn write_body_model(w: &mut impl Write, model: &BodyModelData) -> Result<(), ModelError> {
    let io = |source| ModelError::Io {
        path: "<writer>".into(),
        source,
    };
    let count = 6 + u32::from(model.shape_blendshapes.is_some());
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&count.to_le_bytes()).map_err(io)?;

    let v = model.num_vertices();
    let verts: Vec<f64> = model
        .template_vertices
        .iter()
        .flat_map(|p| [p.x, p.y, p.z])
        .collect();
    write_f64(w, "template_vertices", &[v, 3], &verts).map_err(io)?;
    let faces: Vec<i32> = model
        .faces
        .iter()
        .flat_map(|f| f.map(|i| i as i32))
        .collect();
    write_i32(w, "faces", &[model.faces.len(), 3], &faces).map_err(io)?;
    let sw = &model.skinning_weights;
    write_f64(w, "skinning_weights", &[sw.rows, sw.cols], &sw.data).map_err(io)?;
    let tree: Vec<i32> = model
        .parents
        .iter()
        .map(|p| p.map_or(-1, |p| p as i32))
        .collect();
    write_i32(w, "kinematic_tree", &[tree.len()], &tree).map_err(io)?;
    for (name, m) in [
        ("joint_regressor_native", &model.joint_regressor_native),
        ("joint_regressor_openpose", &model.joint_regressor_openpose),
    ] {
        write_f64(w, name, &[m.rows, m.cols], &m.data).map_err(io)?;
    }
    if let Some(s) = &model.shape_blendshapes {
        write_f64(w, "shape_blendshapes", &[v, 3, s.num_coeffs], &s.data).map_err(io)?;
    }
    Ok(())
}

pub fn save_body_model(path: impl AsRef<Path>, model: &BodyModelData) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_body_model(&mut buf, model)?;
    std::fs::write(path, buf).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}
