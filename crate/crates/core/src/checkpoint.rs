//! Binary checkpoints of backbone parameters (and optionally Adam state).
//!
//! Layout, little-endian: magic `MDCK`, u32 version, u32 model tag
//! (0 = mf, 1 = vbpr), u32 users, u32 items, u32 d, u32 d', u32 modality
//! count, one u32 `d_m` per modality, u32 optimizer flag, then every tensor
//! as f32 in declaration order (user_embed, item_embed, then per modality
//! transform, bias, user_pref). With the flag set, a u64 step count follows,
//! then first and second moments for every tensor in the same order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::backbone::{BackboneParams, ModelKind};
use crate::optim::Adam;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("unknown model tag {0}")]
    ModelTag(u32),
}

fn put_u32<W: Write>(w: &mut W, x: u32) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn put_tensor<T: Scalar, W: Write>(w: &mut W, xs: &[T]) -> std::io::Result<()> {
    for &x in xs {
        w.write_all(&(x.to_f64_lossy() as f32).to_le_bytes())?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_tensor<T: Scalar, R: Read>(r: &mut R, out: &mut [T]) -> std::io::Result<()> {
    let mut buf = vec![0u8; out.len() * 4];
    r.read_exact(&mut buf)?;
    for (o, c) in out.iter_mut().zip(buf.chunks_exact(4)) {
        *o = T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64);
    }
    Ok(())
}

pub fn write_checkpoint<T: Scalar, W: Write>(
    params: &BackboneParams<T>,
    optimizer: Option<&Adam<T>>,
    mut w: W,
) -> Result<(), CheckpointError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(&mut w, CHECKPOINT_VERSION)?;
    put_u32(&mut w, params.kind.tag())?;
    put_u32(&mut w, params.num_users() as u32)?;
    put_u32(&mut w, params.num_items() as u32)?;
    put_u32(&mut w, params.embed_dim() as u32)?;
    put_u32(&mut w, params.shared_dim() as u32)?;
    put_u32(&mut w, params.num_modalities() as u32)?;
    for dm in params.modality_dims() {
        put_u32(&mut w, dm as u32)?;
    }
    put_u32(&mut w, u32::from(optimizer.is_some()))?;
    for t in params.tensors() {
        put_tensor(&mut w, t)?;
    }
    if let Some(opt) = optimizer {
        w.write_all(&opt.step.to_le_bytes())?;
        for m in &opt.m {
            put_tensor(&mut w, m)?;
        }
        for v in &opt.v {
            put_tensor(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Adam step count, first moments, second moments.
pub type OptimizerState<T> = (u64, Vec<Vec<T>>, Vec<Vec<T>>);

/// Returns the parameters and the stored optimizer state, if any.
pub fn read_checkpoint<T: Scalar, R: Read>(
    mut r: R,
) -> Result<(BackboneParams<T>, Option<OptimizerState<T>>), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = get_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let tag = get_u32(&mut r)?;
    let kind = ModelKind::from_tag(tag).ok_or(CheckpointError::ModelTag(tag))?;
    let nu = get_u32(&mut r)? as usize;
    let ni = get_u32(&mut r)? as usize;
    let d = get_u32(&mut r)? as usize;
    let dp = get_u32(&mut r)? as usize;
    let m = get_u32(&mut r)? as usize;
    let dims = (0..m)
        .map(|_| get_u32(&mut r).map(|x| x as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let has_opt = get_u32(&mut r)? != 0;
    let mut params = BackboneParams {
        kind,
        user_embed: Array2::zeros((nu, d)),
        item_embed: Array2::zeros((ni, d)),
        transforms: dims.iter().map(|&dm| Array2::zeros((dp, dm))).collect(),
        biases: dims.iter().map(|_| Array1::zeros(dp)).collect(),
        user_pref: dims.iter().map(|_| Array2::zeros((nu, dp))).collect(),
    };
    for t in params.tensors_mut() {
        get_tensor(&mut r, t)?;
    }
    let opt = if has_opt {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let step = u64::from_le_bytes(b);
        let sizes = params.tensor_sizes();
        let mut read_all = || -> std::io::Result<Vec<Vec<T>>> {
            sizes
                .iter()
                .map(|&n| {
                    let mut v = vec![T::zero(); n];
                    get_tensor(&mut r, &mut v).map(|_| v)
                })
                .collect()
        };
        let ms = read_all()?;
        let vs = read_all()?;
        Some((step, ms, vs))
    } else {
        None
    };
    Ok((params, opt))
}

pub fn save<T: Scalar>(
    params: &BackboneParams<T>,
    optimizer: Option<&Adam<T>>,
    path: &Path,
) -> Result<(), CheckpointError> {
    write_checkpoint(params, optimizer, BufWriter::new(File::create(path)?))
}

pub fn load<T: Scalar>(path: &Path) -> Result<BackboneParams<T>, CheckpointError> {
    Ok(read_checkpoint(BufReader::new(File::open(path)?))?.0)
}
