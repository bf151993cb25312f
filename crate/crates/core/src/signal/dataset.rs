use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{sample_source_params_below_nyquist, synth_waveform, Frame, SourceKind};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"PSEP-DS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub sample_rate: u32,
    pub frame_len: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { n_train: 500, n_test: 200, sample_rate: 4000, frame_len: 2048, seed: 0 }
    }
}

impl DatasetConfig {
    /// 16 kHz, frames of 2^14 samples, 5000/1500 mixes.
    pub fn paper_scale() -> Self {
        DatasetConfig { n_train: 5000, n_test: 1500, sample_rate: 16000, frame_len: 16384, seed: 0 }
    }
}

/// One training example: the four sources in [`SourceKind::ALL`] order and
/// their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct MixRecord {
    pub sources: Vec<Vec<f64>>,
    pub mix: Vec<f64>,
}

impl MixRecord {
    pub fn source(&self, kind: SourceKind) -> &[f64] {
        &self.sources[kind.code() as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub train: Vec<MixRecord>,
    pub test: Vec<MixRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[MixRecord] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn source_frames(&self, split: Split, kind: SourceKind) -> Vec<Frame> {
        self.split(split)
            .iter()
            .map(|r| Frame::new(r.source(kind).to_vec(), self.sample_rate).expect("non-empty frame"))
            .collect()
    }

    pub fn mix_frames(&self, split: Split) -> Vec<Frame> {
        self.split(split).iter().map(|r| Frame::new(r.mix.clone(), self.sample_rate).expect("non-empty frame")).collect()
    }
}

/// Build mix `index` of `split`. Each mix owns the RNG stream
/// `(seed, split, index)`, so records can be generated in any order.
/// Sources are rounded to `f32` so the on-disk record holds them exactly.
pub fn make_mix_record(config: &DatasetConfig, split: Split, index: usize) -> Result<MixRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream((split.stream_tag() << 32) | index as u64);
    let mut sources = Vec::with_capacity(SourceKind::ALL.len());
    for kind in SourceKind::ALL {
        let params = sample_source_params_below_nyquist(&mut rng, config.sample_rate)?;
        let frame = synth_waveform(kind, params, config.sample_rate, config.frame_len)?;
        sources.push(frame.into_samples().into_iter().map(|v| v as f32 as f64).collect::<Vec<f64>>());
    }
    let n = sources.len() as f64;
    let mix = (0..config.frame_len).map(|t| sources.iter().map(|s| s[t]).sum::<f64>() / n).collect();
    Ok(MixRecord { sources, mix })
}

pub fn make_toy_dataset(config: &DatasetConfig) -> Result<Dataset> {
    if config.n_train == 0 || config.n_test == 0 || config.frame_len == 0 {
        return Err(Error::InvalidArgument("dataset counts and frame length must be positive".into()));
    }
    let build = |split: Split, n: usize| -> Result<Vec<MixRecord>> {
        (0..n).into_par_iter().map(|i| make_mix_record(config, split, i)).collect()
    };
    Ok(Dataset {
        sample_rate: config.sample_rate,
        frame_len: config.frame_len,
        train: build(Split::Train, config.n_train)?,
        test: build(Split::Test, config.n_test)?,
    })
}

fn record_path(dir: &Path, split: Split, index: usize) -> PathBuf {
    dir.join(split.dir_name()).join(format!("{index:06}.bin"))
}

/// Write one record: magic, `u32` sample rate, `u32` frame length,
/// `u32` source count, then `f32` sources followed by the `f32` mix.
pub fn write_record(path: &Path, sample_rate: u32, sources: &[Vec<f64>], mix: &[f64]) -> Result<()> {
    let frame_len = mix.len();
    if sources.iter().any(|s| s.len() != frame_len) {
        return Err(Error::Shape("all sources must match the mix length".into()));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(20 + 4 * frame_len * (sources.len() + 1));
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    buf.extend_from_slice(&(frame_len as u32).to_le_bytes());
    buf.extend_from_slice(&(sources.len() as u32).to_le_bytes());
    for v in sources.iter().flatten().chain(mix) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Returns `(sample_rate, sources, mix)`.
pub fn read_record(path: &Path) -> Result<(u32, Vec<Vec<f64>>, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::format(path, "missing PSEP-DS1 magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let (sample_rate, frame_len, n_sources) = (u32_at(8), u32_at(12) as usize, u32_at(16) as usize);
    let expected = 20 + 4 * frame_len * (n_sources + 1);
    if bytes.len() != expected || frame_len == 0 || sample_rate == 0 {
        return Err(Error::format(
            path,
            format!("expected {expected} bytes for {n_sources} sources of {frame_len} samples, found {}", bytes.len()),
        ));
    }
    let mut values = bytes[20..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    let sources = (0..n_sources).map(|_| values.by_ref().take(frame_len).collect()).collect();
    let mix = values.collect();
    Ok((sample_rate, sources, mix))
}

/// Generate and write a dataset record by record, so paper-scale datasets
/// never need to fit in memory. Returns `(n_train, n_test)`.
pub fn write_dataset(config: &DatasetConfig, dir: &Path) -> Result<(usize, usize)> {
    if config.n_train == 0 || config.n_test == 0 || config.frame_len == 0 {
        return Err(Error::InvalidArgument("dataset counts and frame length must be positive".into()));
    }
    const CHUNK: usize = 64;
    for (split, n) in [(Split::Train, config.n_train), (Split::Test, config.n_test)] {
        let sub = dir.join(split.dir_name());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for start in (0..n).step_by(CHUNK) {
            let records: Vec<MixRecord> = (start..(start + CHUNK).min(n))
                .into_par_iter()
                .map(|i| make_mix_record(config, split, i))
                .collect::<Result<_>>()?;
            for (off, rec) in records.iter().enumerate() {
                write_record(&record_path(dir, split, start + off), config.sample_rate, &rec.sources, &rec.mix)?;
            }
        }
    }
    Ok((config.n_train, config.n_test))
}

fn read_split(dir: &Path, split: Split) -> Result<(u32, usize, Vec<MixRecord>)> {
    let sub = dir.join(split.dir_name());
    let mut paths: Vec<PathBuf> = fs::read_dir(&sub)
        .map_err(|e| Error::io(&sub, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Missing(vec![format!("{} records in {}", split.dir_name(), sub.display())]));
    }
    let mut rate_len = None;
    let mut records = Vec::with_capacity(paths.len());
    for p in &paths {
        let (sr, sources, mix) = read_record(p)?;
        let key = (sr, mix.len());
        if *rate_len.get_or_insert(key) != key {
            return Err(Error::format(p, "sample rate or frame length differs from other records"));
        }
        if sources.len() != SourceKind::ALL.len() {
            return Err(Error::format(p, format!("{} sources, expected 4", sources.len())));
        }
        records.push(MixRecord { sources, mix });
    }
    let (sr, len) = rate_len.expect("non-empty");
    Ok((sr, len, records))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let (sr, len, train) = read_split(dir, Split::Train)?;
    let (sr2, len2, test) = read_split(dir, Split::Test)?;
    if (sr, len) != (sr2, len2) {
        return Err(Error::format(dir, "train and test splits disagree on sample rate or frame length"));
    }
    Ok(Dataset { sample_rate: sr, frame_len: len, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig { n_train: 6, n_test: 3, sample_rate: 4000, frame_len: 64, seed: 11 }
    }

    #[test]
    fn sizes_and_mean_mix() {
        let ds = make_toy_dataset(&small()).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (6, 3));
        for rec in ds.train.iter().chain(&ds.test) {
            for t in 0..64 {
                let mean = rec.sources.iter().map(|s| s[t]).sum::<f64>() / 4.0;
                assert_eq!(rec.mix[t], mean);
            }
        }
    }

    #[test]
    fn paper_scale_counts() {
        let c = DatasetConfig::paper_scale();
        assert_eq!((c.n_train, c.n_test, c.sample_rate, c.frame_len), (5000, 1500, 16000, 16384));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = make_toy_dataset(&small()).unwrap();
        let b = make_toy_dataset(&small()).unwrap();
        assert_eq!(a, b);
        let c = make_toy_dataset(&DatasetConfig { seed: 12, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(make_toy_dataset(&DatasetConfig { n_test: 0, ..small() }).is_err());
    }

    #[test]
    fn disk_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&small(), dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        let mem = make_toy_dataset(&small()).unwrap();
        assert_eq!(back.sources_equal(&mem), true);
        for (a, b) in back.train.iter().zip(&mem.train) {
            for (x, y) in a.mix.iter().zip(&b.mix) {
                assert!((x - y).abs() <= f32::EPSILON as f64);
            }
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"PSEP-DS2\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_record(&p), Err(Error::Format { .. })));
    }

    impl Dataset {
        fn sources_equal(&self, other: &Dataset) -> bool {
            self.train.iter().zip(&other.train).all(|(a, b)| a.sources == b.sources)
                && self.test.iter().zip(&other.test).all(|(a, b)| a.sources == b.sources)
        }
    }
}
