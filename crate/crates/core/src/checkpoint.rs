//! Binary checkpoint format.
//!
//! Little-endian layout, bitwise lossless round-trip:
//!
//! ```text
//! magic    8 bytes  "BFTCKPT1"
//! config   vocab u32, context u32, embed u32, layers u32, heads u32, seed u64
//! count    u32 parameter tensors, then per tensor:
//!   name   u32 length + utf-8 bytes
//!   shape  u32 rank + u64 per dimension
//!   data   f64 per element, row-major
//! ```
//!
//! Optimizer state ("BFTADAM1") stores the step counter plus first/second
//! moment vectors per parameter in the same order.

use crate::error::ModelError;
use crate::model::{Model, ModelConfig, Param, ParamSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BFTCKPT1";
pub const OPTIM_MAGIC: &[u8; 8] = b"BFTADAM1";

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn save_model(path: &Path, model: &Model) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    let c = &model.config;
    put_u32(&mut w, c.vocab_size as u32)?;
    put_u32(&mut w, c.context_length as u32)?;
    put_u32(&mut w, c.embed_dim as u32)?;
    put_u32(&mut w, c.layer_count as u32)?;
    put_u32(&mut w, c.head_count as u32)?;
    put_u64(&mut w, c.seed)?;
    put_u32(&mut w, model.params.len() as u32)?;
    for p in model.params.iter() {
        put_u32(&mut w, p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        put_u32(&mut w, p.shape.len() as u32)?;
        for &d in &p.shape {
            put_u64(&mut w, d as u64)?;
        }
        put_f64s(&mut w, &p.values)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad magic {magic:?} in {}",
            path.display()
        )));
    }
    let config = ModelConfig {
        vocab_size: get_u32(&mut r)? as usize,
        context_length: get_u32(&mut r)? as usize,
        embed_dim: get_u32(&mut r)? as usize,
        layer_count: get_u32(&mut r)? as usize,
        head_count: get_u32(&mut r)? as usize,
        seed: get_u64(&mut r)?,
    };
    config.validate()?;
    let count = get_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = get_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| ModelError::Checkpoint(format!("bad parameter name: {e}")))?;
        let rank = get_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(get_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let values = get_f64s(&mut r, numel)?;
        params.push(Param { name, shape, values });
    }
    let expected = Model::parameter_count(&config);
    let set = ParamSet::from_params(params);
    if set.total_elements() != expected {
        return Err(ModelError::Checkpoint(format!(
            "parameter count {} does not match config ({expected})",
            set.total_elements()
        )));
    }
    Ok(Model { config, params: set })
}

/// Adam moment vectors, serialized alongside a checkpoint so training can
/// resume bitwise-identically.
pub struct OptimSnapshot {
    pub step: u64,
    pub moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

pub fn save_optim(path: &Path, snap: &OptimSnapshot) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(OPTIM_MAGIC)?;
    put_u64(&mut w, snap.step)?;
    put_u32(&mut w, snap.moments.len() as u32)?;
    for (name, m, v) in &snap.moments {
        put_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        put_u64(&mut w, m.len() as u64)?;
        put_f64s(&mut w, m)?;
        put_f64s(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_optim(path: &Path) -> Result<OptimSnapshot, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != OPTIM_MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad optimizer magic {magic:?} in {}",
            path.display()
        )));
    }
    let step = get_u64(&mut r)?;
    let count = get_u32(&mut r)? as usize;
    let mut moments = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = get_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| ModelError::Checkpoint(format!("bad parameter name: {e}")))?;
        let n = get_u64(&mut r)? as usize;
        let m = get_f64s(&mut r, n)?;
        let v = get_f64s(&mut r, n)?;
        moments.push((name, m, v));
    }
    Ok(OptimSnapshot { step, moments })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model {
        Model::init(ModelConfig {
            vocab_size: 12,
            context_length: 6,
            embed_dim: 8,
            layer_count: 1,
            head_count: 2,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn model_round_trip_is_bitwise_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = tiny();
        save_model(&path, &model).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.params.checksum(), model.params.checksum());
        // save -> load -> save is byte-identical
        let path2 = dir.path().join("m2.ckpt");
        save_model(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPT plus junk").unwrap();
        assert!(load_model(&path).is_err());
    }

    #[test]
    fn optim_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.bin");
        let snap = OptimSnapshot {
            step: 42,
            moments: vec![("w".into(), vec![0.5, -0.25], vec![0.1, 0.2])],
        };
        save_optim(&path, &snap).unwrap();
        let loaded = load_optim(&path).unwrap();
        assert_eq!(loaded.step, 42);
        assert_eq!(loaded.moments.len(), 1);
        assert_eq!(loaded.moments[0].1, vec![0.5, -0.25]);
        assert_eq!(loaded.moments[0].2, vec![0.1, 0.2]);
    }
}
