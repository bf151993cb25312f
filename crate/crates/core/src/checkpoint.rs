//! "PSEP-CK1" checkpoints for both prior families.
//!
//! Layout, little endian throughout:
//!
//! ```text
//! magic     8 bytes  "PSEP-CK1"
//! kind      u32      0 = flow, 1 = autoregressive
//! sigma     u32      index into SIGMA_LEVELS, or u32::MAX for any other sigma
//! n_meta    u32      then n_meta (key, value) string pairs, each u32 length + UTF-8
//! n_params  u32      then per parameter: u32 name length, name, u32 rows,
//!                    u32 cols, rows * cols f32 values
//! ```
//!
//! Parameters are stored as f32, so writing a loaded checkpoint reproduces
//! the original file byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::ar::{ArConfig, ArModel};
use crate::density::{DensityModel, ModelFamily};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowModel};
use crate::params::ParamStore;
use crate::signal::SourceKind;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PSEP-CK1";

/// Conditioning noise levels of the reference experiments, index 0 is noise free.
pub const SIGMA_LEVELS: [f64; 6] = [0.0, 0.01, 0.027, 0.077, 0.129, 0.359];

const ANY_SIGMA: u32 = u32::MAX;
const HASH_LEN: usize = 12;

pub fn sigma_level_index(sigma: f64) -> Option<usize> {
    SIGMA_LEVELS.iter().position(|&s| s == sigma)
}

/// A trained prior of either family.
#[derive(Debug)]
pub enum PriorModel {
    Flow(FlowModel),
    Ar(ArModel),
}

impl PriorModel {
    fn kind_tag(&self) -> u32 {
        match self {
            PriorModel::Flow(_) => 0,
            PriorModel::Ar(_) => 1,
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            PriorModel::Flow(m) => m.params(),
            PriorModel::Ar(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            PriorModel::Flow(m) => m.params_mut(),
            PriorModel::Ar(m) => m.params_mut(),
        }
    }

    fn as_density(&self) -> &dyn DensityModel {
        match self {
            PriorModel::Flow(m) => m,
            PriorModel::Ar(m) => m,
        }
    }

    /// Mean loss per sample of one frame and its parameter gradients.
    pub fn nll_and_param_grads(&self, samples: &[f64]) -> Result<(f64, Vec<Tensor>)> {
        match self {
            PriorModel::Flow(m) => m.nll_and_param_grads(samples),
            PriorModel::Ar(m) => m.nll_and_param_grads(samples),
        }
    }

    fn hparams_json(&self) -> String {
        match self {
            PriorModel::Flow(m) => serde_json::to_string(m.config()),
            PriorModel::Ar(m) => serde_json::to_string(m.config()),
        }
        .expect("config serializes")
    }
}

impl DensityModel for PriorModel {
    fn family(&self) -> ModelFamily {
        self.as_density().family()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        self.as_density().check_len(len)
    }

    fn log_density(&self, samples: &[f64]) -> Result<f64> {
        self.as_density().log_density(samples)
    }

    fn is_differentiable(&self) -> bool {
        self.as_density().is_differentiable()
    }

    fn grad_log_density(&self, samples: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.as_density().grad_log_density(samples)
    }

    fn sample(&self, rng: &mut dyn RngCore, n_frames: usize, frame_len: usize) -> Result<Vec<Vec<f64>>> {
        self.as_density().sample(rng, n_frames, frame_len)
    }
}

/// A prior plus the tags that identify it.
#[derive(Debug)]
pub struct Checkpoint {
    pub model: PriorModel,
    pub source: SourceKind,
    pub sigma: f64,
    /// Hash of the checkpoint this one was fine-tuned from.
    pub base_hash: Option<String>,
    pub steps: usize,
}

impl Checkpoint {
    pub fn family(&self) -> ModelFamily {
        self.model.family()
    }

    /// Round every parameter to f32, the stored precision.
    pub fn round_params(&mut self) {
        for t in self.model.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.model.kind_tag().to_le_bytes());
        let idx = sigma_level_index(self.sigma).map(|i| i as u32).unwrap_or(ANY_SIGMA);
        out.extend_from_slice(&idx.to_le_bytes());

        let mut meta = BTreeMap::new();
        meta.insert("hparams", self.model.hparams_json());
        meta.insert("source", self.source.name().to_string());
        meta.insert("sigma", format!("{:?}", self.sigma));
        meta.insert("steps", self.steps.to_string());
        if let Some(h) = &self.base_hash {
            meta.insert("base_hash", h.clone());
        }
        if let PriorModel::Flow(m) = &self.model {
            meta.insert("actnorm_initialized", m.actnorm_initialized().to_string());
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        for (k, v) in &meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }

        let params = self.model.params();
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "bad magic, not a PSEP-CK1 checkpoint"));
        }
        let kind = r.u32()?;
        let sigma_idx = r.u32()?;
        let n_meta = r.u32()? as usize;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let n_params = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| Error::format(path, "parameter too large"))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(path, "parameter too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            store.add(name, Tensor::new(rows, cols, data).map_err(|e| Error::format(path, e.to_string()))?);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
        }

        let get = |k: &str| meta.get(k).ok_or_else(|| Error::format(path, format!("missing metadata '{k}'")));
        let sigma: f64 = get("sigma")?.parse().map_err(|_| Error::format(path, "bad sigma"))?;
        let expected_idx = sigma_level_index(sigma).map(|i| i as u32).unwrap_or(ANY_SIGMA);
        if expected_idx != sigma_idx {
            return Err(Error::format(path, format!("sigma index {sigma_idx} disagrees with sigma {sigma}")));
        }
        let source: SourceKind = get("source")?.parse().map_err(|_| Error::format(path, "bad source"))?;
        let steps: usize = get("steps")?.parse().map_err(|_| Error::format(path, "bad steps"))?;
        let hparams = get("hparams")?;
        let bad = |e: serde_json::Error| Error::format(path, format!("bad hparams: {e}"));
        let model = match kind {
            0 => {
                let config: FlowConfig = serde_json::from_str(hparams).map_err(bad)?;
                let init = get("actnorm_initialized")? == "true";
                PriorModel::Flow(
                    FlowModel::from_params(config, &store, init).map_err(|e| Error::format(path, e.to_string()))?,
                )
            }
            1 => {
                let config: ArConfig = serde_json::from_str(hparams).map_err(bad)?;
                PriorModel::Ar(ArModel::from_params(config, &store).map_err(|e| Error::format(path, e.to_string()))?)
            }
            other => return Err(Error::format(path, format!("unknown model kind {other}"))),
        };
        if model.params().len() != store.len() {
            return Err(Error::format(path, "unexpected extra parameters"));
        }
        Ok(Checkpoint { model, source, sigma, base_hash: meta.get("base_hash").cloned(), steps })
    }

    /// Short content hash of the serialized checkpoint.
    pub fn hash(&self) -> String {
        content_hash(&self.to_bytes())
    }

    /// File name `<family>-<source>-sigma<σ>-<hash>.ck`.
    pub fn file_name(&self) -> String {
        format!("{}-{}.ck", tag_prefix(self.family(), self.source, self.sigma), self.hash())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Store under its content-addressed name in `dir`. An existing file with
    /// the same name already holds identical bytes and is left untouched.
    pub fn store(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file_name());
        if !path.exists() {
            let tmp = dir.join(format!(".{}.tmp", self.file_name()));
            self.write(&tmp)?;
            std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        }
        Ok(path)
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect::<String>()[..HASH_LEN].to_string()
}

/// The part of a checkpoint file name that identifies its tags.
pub fn tag_prefix(family: ModelFamily, source: SourceKind, sigma: f64) -> String {
    format!("{}-{}-sigma{}", family.name(), source.name(), sigma)
}

/// Find the checkpoint for a tag in `dir`. When several hashes share a tag
/// the most recently written one wins.
pub fn find_checkpoint(dir: &Path, family: ModelFamily, source: SourceKind, sigma: f64) -> Option<PathBuf> {
    let prefix = format!("{}-", tag_prefix(family, source, sigma));
    let entries = std::fs::read_dir(dir).ok()?;
    entries
        .filter_map(|e| e.ok())
        .filter(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.starts_with(&prefix)
                && name.ends_with(".ck")
                && name[prefix.len()..name.len() - 3].len() == HASH_LEN
        })
        .max_by_key(|e| (e.metadata().and_then(|m| m.modified()).ok(), e.file_name()))
        .map(|e| e.path())
}

/// Hash recorded in a content-addressed file name.
pub fn hash_from_path(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_string_lossy().into_owned();
    let h = stem.rsplit('-').next()?;
    (h.len() == HASH_LEN).then(|| h.to_string())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8 string"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flow_ck() -> Checkpoint {
        let mut m = FlowModel::new(FlowConfig { blocks: 2, flows: 2, layers: 2, kernel: 3, width: 4 }, 1).unwrap();
        m.perturb(&mut ChaCha8Rng::seed_from_u64(2), 0.1);
        m.set_actnorm_initialized(true);
        Checkpoint { model: PriorModel::Flow(m), source: SourceKind::Sine, sigma: 0.0, base_hash: None, steps: 10 }
    }

    fn ar_ck() -> Checkpoint {
        let m = ArModel::new(ArConfig { blocks: 1, layers: 2, kernel: 2, width: 3 }, 1).unwrap();
        Checkpoint {
            model: PriorModel::Ar(m),
            source: SourceKind::Square,
            sigma: 0.05,
            base_hash: Some("0123456789ab".into()),
            steps: 3,
        }
    }

    #[test]
    fn bit_exact_roundtrip() {
        for ck in [flow_ck(), ar_ck()] {
            let bytes = ck.to_bytes();
            let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
            assert_eq!(back.to_bytes(), bytes);
            assert_eq!(back.source, ck.source);
            assert_eq!(back.sigma, ck.sigma);
            assert_eq!(back.base_hash, ck.base_hash);
            assert_eq!(back.steps, ck.steps);
            for ((_, a), (_, b)) in ck.model.params().iter().zip(back.model.params().iter()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert_eq!(*x as f32, *y as f32);
                }
            }
        }
    }

    #[test]
    fn rounded_model_reloads_identically() {
        let mut ck = flow_ck();
        ck.round_params();
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(ck.model.params(), back.model.params());
        let x: Vec<f64> = (0..16).map(|i| (i as f64 * 0.3).sin()).collect();
        assert_eq!(ck.model.log_density(&x).unwrap(), back.model.log_density(&x).unwrap());
    }

    #[test]
    fn sigma_index_written() {
        let bytes = flow_ck().to_bytes();
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0);
        let bytes = ar_ck().to_bytes();
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), u32::MAX);
        assert_eq!(sigma_level_index(0.359), Some(5));
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = flow_ck().to_bytes();
        let p = Path::new("mem");
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p), Err(Error::Format { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra, p), Err(Error::Format { .. })));
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic, p), Err(Error::Format { .. })));
    }

    #[test]
    fn content_addressed_store_and_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let ck = flow_ck();
        let path = ck.store(dir.path()).unwrap();
        assert_eq!(hash_from_path(&path).unwrap(), ck.hash());
        assert_eq!(ck.store(dir.path()).unwrap(), path);
        let found = find_checkpoint(dir.path(), ModelFamily::Flow, SourceKind::Sine, 0.0).unwrap();
        assert_eq!(found, path);
        assert!(find_checkpoint(dir.path(), ModelFamily::Flow, SourceKind::Sine, 0.359).is_none());
        assert!(find_checkpoint(dir.path(), ModelFamily::Autoregressive, SourceKind::Sine, 0.0).is_none());
        let loaded = Checkpoint::read(&found).unwrap();
        assert_eq!(loaded.hash(), ck.hash());
    }
}
