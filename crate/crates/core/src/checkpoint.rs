//! Model checkpoints: a JSON header carrying the architecture, grid, seed
//! and an array manifest, followed by the named parameter groups as raw
//! little-endian 64-bit floats in manifest order.

use crate::data::Grid;
use crate::error::{Error, Result};
use crate::svgp::{GpModel, ModelConfig};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"LGPO\0CK\x01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    grid: Grid,
    seed: u64,
    /// (name, length) of each float array, in file order
    arrays: Vec<(String, usize)>,
}

fn group_arrays(model: &GpModel, params: &[f64]) -> Vec<(&'static str, std::ops::Range<usize>)> {
    vec![
        ("wno_mean", model.layout.theta_mean.clone()),
        ("wno_embedding", model.layout.theta_emb.clone()),
        ("inducing_inputs", model.layout.z.clone()),
        ("variational_mean_whitened", model.layout.w_mean.clone()),
        ("variational_chol_whitened", model.layout.s_tril.clone()),
        ("hyperparameters", model.layout.hypers.clone()),
    ]
    .into_iter()
    .map(|(n, r)| {
        debug_assert!(r.end <= params.len());
        (n, r)
    })
    .collect()
}

pub fn save_checkpoint(model: &GpModel, params: &[f64], seed: u64, path: &Path) -> Result<()> {
    let groups = group_arrays(model, params);
    let header = Header {
        version: CHECKPOINT_VERSION,
        model: model.config.clone(),
        grid: (*model.grid).clone(),
        seed,
        arrays: groups.iter().map(|(n, r)| (n.to_string(), r.len())).collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&CHECKPOINT_MAGIC)?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for (_, r) in groups {
        for v in &params[r] {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(GpModel, Vec<f64>, u64)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|_| Error::CorruptHeader("short checkpoint".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::CorruptHeader(format!("bad checkpoint magic {magic:02x?}")));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)
        .map_err(|_| Error::CorruptHeader("missing header length".into()))?;
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let mut hbytes = vec![0u8; hlen];
    f.read_exact(&mut hbytes).map_err(|_| Error::CorruptHeader("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&hbytes)
        .map_err(|e| Error::CorruptHeader(format!("unparseable checkpoint header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(header.version));
    }
    let model = GpModel::new(header.model, Arc::new(header.grid))?;
    let expected: usize = header.arrays.iter().map(|(_, l)| l).sum();
    if expected != model.n_params() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint declares {} parameters, architecture needs {}",
            expected,
            model.n_params()
        )));
    }
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() != expected * 8 {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint payload holds {} bytes, header implies {}",
            payload.len(),
            expected * 8
        )));
    }
    let mut params = Vec::with_capacity(expected);
    for chunk in payload.chunks_exact(8) {
        params.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((model, params, header.seed))
}
