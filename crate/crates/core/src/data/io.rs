//! Binary dataset format: 8-byte magic, little-endian header length, JSON
//! header, then raw little-endian 64-bit floats (all inputs, then all
//! outputs; sample-major, row-major within a sample).

use crate::data::grid::Grid;
use crate::data::Dataset;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

pub const DATASET_MAGIC: [u8; 8] = *b"LGPO\0DS\x01";
pub const DATASET_VERSION: u32 = 1;

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    version: u32,
    problem: String,
    n: usize,
    grid: Grid,
    params: serde_json::Value,
    seed: u64,
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    let header = Header {
        version: DATASET_VERSION,
        problem: d.meta.problem.clone(),
        n: d.n,
        grid: (*d.grid).clone(),
        params: d.meta.params.clone(),
        seed: d.meta.seed,
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&DATASET_MAGIC)?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for v in d.inputs.iter().chain(d.outputs.iter()) {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|_| Error::CorruptHeader("file shorter than magic".into()))?;
    if magic != DATASET_MAGIC {
        return Err(Error::CorruptHeader(format!("bad magic {magic:02x?}")));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)
        .map_err(|_| Error::CorruptHeader("missing header length".into()))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)
        .map_err(|_| Error::CorruptHeader("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::CorruptHeader(format!("unparseable header: {e}")))?;
    if header.version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion(header.version));
    }
    let d = header.grid.len();
    let expected = 2 * header.n * d;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    if payload.len() != expected * 8 {
        return Err(Error::ShapeMismatch(format!(
            "payload holds {} bytes, header implies {}",
            payload.len(),
            expected * 8
        )));
    }
    let mut values = Vec::with_capacity(expected);
    for chunk in payload.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let outputs = values.split_off(header.n * d);
    Ok(Dataset {
        grid: Arc::new(header.grid),
        n: header.n,
        inputs: values,
        outputs,
        meta: crate::data::DatasetMeta {
            problem: header.problem,
            params: header.params,
            seed: header.seed,
        },
    })
}
