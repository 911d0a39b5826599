//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "MFN1" | version u32 | config_len u32 | config JSON
//! | count u32 | count x (name_len u32 | name | rank u32 | rank x dim u32)
//! | payloads: f32 per element, manifest order
//! ```

use std::io::Write;
use std::path::Path;

use super::{Mfnet, ModelConfig, ParamStore};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"MFN1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes to a sibling temp file, then renames, so readers never see a
/// half-written checkpoint.
pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, params: &ParamStore<f32>) -> Result<()> {
    Mfnet::new(cfg.clone())?.check_params(params)?;
    let cfg_json = serde_json::to_vec(cfg).expect("config serializes");
    let mut buf = Vec::with_capacity(64 + 4 * params.numel());
    buf.extend_from_slice(&MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u32(&mut buf, len_u32(cfg_json.len())?);
    buf.extend_from_slice(&cfg_json);
    put_u32(&mut buf, len_u32(params.len())?);
    for (name, t) in params.iter() {
        put_u32(&mut buf, len_u32(name.len())?);
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, len_u32(t.shape().len())?);
        for &d in t.shape() {
            put_u32(&mut buf, len_u32(d)?);
        }
    }
    for (_, t) in params.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Reads a checkpoint and validates every tensor against the architecture
/// its embedded config describes.
pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParamStore<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

/// Like [`load_checkpoint`], but fails unless the embedded config equals
/// `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<ParamStore<f32>> {
    let (cfg, params) = load_checkpoint(path)?;
    if &cfg != expected {
        return Err(CheckpointError::ConfigMismatch {
            expected: serde_json::to_string(expected).expect("config serializes"),
            found: serde_json::to_string(&cfg).expect("config serializes"),
        }
        .into());
    }
    Ok(params)
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::invalid(format!("{n} does not fit the checkpoint format")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            CheckpointError::Corrupt(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

fn decode(bytes: &[u8]) -> Result<(ModelConfig, ParamStore<f32>), CheckpointError> {
    let corrupt = |m: String| CheckpointError::Corrupt(m);
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg: ModelConfig = serde_json::from_slice(r.take(cfg_len, "config")?)
        .map_err(|e| corrupt(format!("config: {e}")))?;
    let net = Mfnet::new(cfg.clone()).map_err(|e| corrupt(format!("config: {e}")))?;
    let specs = net.param_specs();

    let count = r.u32("tensor count")? as usize;
    if count != specs.len() {
        return Err(corrupt(format!(
            "{count} tensors stored, architecture has {}",
            specs.len()
        )));
    }
    let mut manifest = Vec::with_capacity(count);
    for spec in specs {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| corrupt("tensor name is not UTF-8".into()))?
            .to_owned();
        if name != spec.name {
            return Err(corrupt(format!("found tensor {name}, expected {}", spec.name)));
        }
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dim").map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if shape != spec.shape {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected: spec.shape.clone(),
                found: shape,
            });
        }
        manifest.push((name, shape));
    }

    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let raw = r.take(4 * n, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        tensors.push(Tensor::from_vec(shape, data).map_err(|e| corrupt(e.to_string()))?);
        names.push(name);
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let store = ParamStore::from_parts(names, tensors).map_err(|e| corrupt(e.to_string()))?;
    Ok((cfg, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadMode;

    fn tiny() -> ModelConfig {
        ModelConfig::uniform(2, 1, HeadMode::MapReverseNoise)
    }

    fn saved(dir: &tempfile::TempDir) -> (std::path::PathBuf, ParamStore<f32>) {
        let path = dir.path().join("m.ckpt");
        let net = Mfnet::new(tiny()).unwrap();
        let params = net.init_params::<f32>(7);
        save_checkpoint(&path, &tiny(), &params).unwrap();
        (path, params)
    }

    fn code(e: Error) -> u32 {
        match e {
            Error::Checkpoint(c) => c.code(),
            other => panic!("expected checkpoint error, got {other}"),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (path, params) = saved(&dir);
        let (cfg, back) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, tiny());
        for ((n1, a), (n2, b)) in params.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert!(!path.with_file_name("m.ckpt.tmp").exists());
    }

    #[test]
    fn mismatched_width_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = saved(&dir);
        let other = ModelConfig { base_channels: 4, ..tiny() };
        assert_eq!(code(load_checkpoint_for(&path, &other).unwrap_err()), 12);
        assert!(load_checkpoint_for(&path, &tiny()).is_ok());
    }

    #[test]
    fn truncation_is_corrupt_at_every_cut() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = saved(&dir);
        let bytes = std::fs::read(&path).unwrap();
        for cut in [5, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            let p = dir.path().join("cut.ckpt");
            std::fs::write(&p, &bytes[..cut]).unwrap();
            assert_eq!(code(load_checkpoint(&p).unwrap_err()), 14, "cut at {cut}");
        }
        let p = dir.path().join("long.ckpt");
        let mut long = bytes.clone();
        long.push(0);
        std::fs::write(&p, long).unwrap();
        assert_eq!(code(load_checkpoint(&p).unwrap_err()), 14);
    }

    #[test]
    fn magic_and_version_have_own_codes() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = saved(&dir);
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert_eq!(code(load_checkpoint(&path).unwrap_err()), 10);

        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert_eq!(code(load_checkpoint(&path).unwrap_err()), 11);
    }

    #[test]
    fn wrong_tensor_shape_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (path, _) = saved(&dir);
        let mut bytes = std::fs::read(&path).unwrap();
        // first tensor is intro.weight [2,1,3,3]; bump its first dim
        let cfg_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let name_at = 12 + cfg_len + 4;
        let name_len = u32::from_le_bytes(bytes[name_at..name_at + 4].try_into().unwrap()) as usize;
        let dim0 = name_at + 4 + name_len + 4;
        bytes[dim0..dim0 + 4].copy_from_slice(&3u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(code(load_checkpoint(&path).unwrap_err()), 13);
    }
}
