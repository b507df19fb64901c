//! Binary checkpoint: magic, format version, a JSON header echoing the
//! model configuration, then every parameter tensor as little-endian f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::rngs::mock::StepRng;
use serde::{Deserialize, Serialize};

use super::model::{Dgcnn, DgcnnConfig};
use super::Tensors;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MFGDGCNN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: DgcnnConfig,
    input_width: usize,
    k: usize,
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Dgcnn) -> std::io::Result<()> {
    let header = serde_json::to_vec(&Header {
        config: model.config.clone(),
        input_width: model.input_width,
        k: model.k,
    })
    .expect("header serializes");
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    let tensors = model.params.tensors();
    w.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.len() as u64).to_le_bytes())?;
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Dgcnn> {
    let truncated = |e: std::io::Error| Error::Incompatible(format!("truncated checkpoint: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Incompatible("not a model checkpoint".into()));
    }
    let mut version = [0u8; 4];
    r.read_exact(&mut version).map_err(truncated)?;
    let version = u32::from_le_bytes(version);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let len = read_u64(&mut r).map_err(truncated)? as usize;
    if len > 1 << 20 {
        return Err(Error::Incompatible(format!("checkpoint header of {len} bytes")));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(truncated)?;
    let header: Header =
        serde_json::from_slice(&header).map_err(|e| Error::Incompatible(format!("checkpoint header: {e}")))?;

    // Weights are overwritten below, so the initializer's RNG is irrelevant.
    let mut model = Dgcnn::new(header.config, header.input_width, header.k, &mut StepRng::new(0, 0))
        .map_err(|e| Error::Incompatible(e.to_string()))?;
    let count = read_u64(&mut r).map_err(truncated)? as usize;
    let mut tensors = model.params.tensors_mut();
    if count != tensors.len() {
        return Err(Error::Incompatible(format!(
            "checkpoint has {count} tensors, configuration implies {}",
            tensors.len()
        )));
    }
    for (i, t) in tensors.iter_mut().enumerate() {
        let n = read_u64(&mut r).map_err(truncated)? as usize;
        if n != t.len() {
            return Err(Error::Incompatible(format!("tensor {i} has {n} values, expected {}", t.len())));
        }
        let mut buf = [0u8; 8];
        for v in t.iter_mut() {
            r.read_exact(&mut buf).map_err(truncated)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &Dgcnn) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), model).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Dgcnn> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> Dgcnn {
        let cfg = DgcnnConfig {
            conv_channels: vec![4, 3],
            mlp_hidden: vec![6],
            ..DgcnnConfig::default()
        };
        Dgcnn::new(cfg, 7, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let bits = |m: &Dgcnn| -> Vec<u64> { m.params.tensors().concat().iter().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn version_and_truncation_are_incompatible() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m).unwrap();
        let mut bumped = buf.clone();
        bumped[8] = 2;
        assert!(matches!(read_checkpoint(bumped.as_slice()), Err(Error::Incompatible(_))));
        let cut = &buf[..buf.len() - 3];
        assert!(matches!(read_checkpoint(cut), Err(Error::Incompatible(_))));
        assert!(matches!(read_checkpoint(&b"garbage!"[..]), Err(Error::Incompatible(_))));
    }
}
