//! Binary checkpoint: magic, length-prefixed key-value header, then
//! parameters and batch-norm buffers as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use cine_core::kv::KeyValues;

use crate::tensor::Real;
use crate::unet::{UNet, UNetConfig};
use crate::NnError;

const MAGIC: &[u8; 8] = b"CUNET001";

/// A network plus free-form metadata (training domain, target, step, ...).
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub net: UNet<T>,
    pub meta: KeyValues,
}

fn config_kv(c: &UNetConfig) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("net.stages", c.stages);
    kv.set("net.convs_per_stage", c.convs_per_stage);
    kv.set("net.base_features", c.base_features);
    kv.set("net.pool_h", c.pool.0);
    kv.set("net.pool_w", c.pool.1);
    kv.set("net.in_channels", c.in_channels);
    kv.set("net.out_channels", c.out_channels);
    kv.set("net.residual", c.residual);
    kv
}

fn config_from_kv(kv: &KeyValues) -> Result<UNetConfig, NnError> {
    let get = |k: &str| kv.require::<usize>(k).map_err(|e| NnError::Checkpoint(e.to_string()));
    Ok(UNetConfig {
        stages: get("net.stages")?,
        convs_per_stage: get("net.convs_per_stage")?,
        base_features: get("net.base_features")?,
        pool: (get("net.pool_h")?, get("net.pool_w")?),
        in_channels: get("net.in_channels")?,
        out_channels: get("net.out_channels")?,
        residual: kv.require::<bool>("net.residual").map_err(|e| NnError::Checkpoint(e.to_string()))?,
    })
}

fn write_values<W: Write, T: Real>(w: &mut W, values: &[T]) -> Result<(), NnError> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_values<R: Read, T: Real>(r: &mut R, expected: usize, what: &str) -> Result<Vec<T>, NnError> {
    let n = read_u64(r)? as usize;
    if n != expected {
        return Err(NnError::Checkpoint(format!("{n} {what} stored, network has {expected}")));
    }
    (0..n).map(|_| Ok(T::from_f64(f64::from_bits(read_u64(r)?)))).collect()
}

pub fn save_checkpoint<T: Real>(path: &Path, net: &mut UNet<T>, meta: &KeyValues) -> Result<(), NnError> {
    let mut header = config_kv(net.config());
    header.merge(meta);
    let text = header.to_string();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(text.len() as u64).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    write_values(&mut w, &net.param_vec())?;
    write_values(&mut w, &net.buffer_vec())?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>, NnError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint(format!("{} is not a network checkpoint", path.display())));
    }
    let len = read_u64(&mut r)? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let meta = KeyValues::parse(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let mut net = UNet::new(config_from_kv(&meta)?, 0)?;
    let params = read_values(&mut r, net.param_count(), "parameters")?;
    let n_buf = net.buffer_vec().len();
    let buffers = read_values(&mut r, n_buf, "buffers")?;
    net.set_param_vec(&params)?;
    net.set_buffer_vec(&buffers)?;
    Ok(Checkpoint { net, meta })
}
