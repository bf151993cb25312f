//! Toy waveform synthesis, mixing, µ-law companding, noise and audio I/O.

mod dataset;
mod mulaw;
mod wav;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub use dataset::{
    make_mix_record, make_toy_dataset, read_dataset, read_record, write_dataset, write_record, Dataset,
    DatasetConfig, MixRecord, Split, DATASET_MAGIC,
};
pub use mulaw::{
    mu_law_decode, mu_law_decode_value, mu_law_encode, mu_law_encode_value, MuLawEncoding, MU, N_CLASSES,
};
pub use wav::{read_wav, write_wav};

/// Lowest and highest toy frequencies (piano range, A0 to C8).
pub const FREQ_RANGE: (f64, f64) = (27.0, 4186.0);
pub const AMPLITUDE_RANGE: (f64, f64) = (0.8, 1.0);

/// The four toy source families. Integer codes are stable and used on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceKind {
    Sine = 0,
    Sawtooth = 1,
    Square = 2,
    Triangle = 3,
}

impl SourceKind {
    pub const ALL: [SourceKind; 4] = [SourceKind::Sine, SourceKind::Sawtooth, SourceKind::Square, SourceKind::Triangle];

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceKind::Sine => "sine",
            SourceKind::Sawtooth => "saw",
            SourceKind::Square => "square",
            SourceKind::Triangle => "triangle",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sine" | "sin" => Ok(SourceKind::Sine),
            "saw" | "sawtooth" => Ok(SourceKind::Sawtooth),
            "square" => Ok(SourceKind::Square),
            "triangle" | "tri" => Ok(SourceKind::Triangle),
            other => Err(Error::InvalidArgument(format!("unknown source kind '{other}'"))),
        }
    }
}

/// A fixed-length block of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Frame {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("frame must contain at least one sample".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Frame { samples, sample_rate })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Frame::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceParams {
    /// Hz
    pub frequency: f64,
    pub amplitude: f64,
    /// radians
    pub phase: f64,
}

impl SourceParams {
    /// Whether the parameters fall inside the toy dataset ranges.
    pub fn in_toy_ranges(&self) -> bool {
        (FREQ_RANGE.0..=FREQ_RANGE.1).contains(&self.frequency)
            && (AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1).contains(&self.amplitude)
            && (0.0..2.0 * PI).contains(&self.phase)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    weights: Vec<f64>,
}

impl MixSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidArgument(format!("a mix needs at least 2 sources, got {}", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument("mix weights must be finite".into()));
        }
        Ok(MixSpec { weights })
    }

    /// Equal weights `1/n`.
    pub fn mean(n: usize) -> Result<Self> {
        MixSpec::new(vec![1.0 / n as f64; n])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Deterministic closed-form waveform, evaluated on the reduced phase
/// `u = frac(f t + phase / 2π)` so every waveform is exactly periodic.
pub fn synth_waveform(kind: SourceKind, params: SourceParams, sample_rate: u32, length: usize) -> Result<Frame> {
    let SourceParams { frequency, amplitude, phase } = params;
    if sample_rate == 0 || length == 0 {
        return Err(Error::InvalidArgument("sample rate and length must be positive".into()));
    }
    if !(frequency.is_finite() && frequency > 0.0 && amplitude.is_finite() && amplitude >= 0.0 && phase.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid waveform parameters {params:?}")));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if frequency > nyquist {
        return Err(Error::InvalidArgument(format!(
            "frequency {frequency} Hz exceeds Nyquist {nyquist} Hz"
        )));
    }
    let sr = sample_rate as f64;
    let offset = phase / (2.0 * PI);
    let samples = (0..length)
        .map(|n| {
            let cycles = frequency * n as f64 / sr + offset;
            let u = cycles - cycles.floor();
            let theta = 2.0 * PI * u;
            amplitude
                * match kind {
                    SourceKind::Sine => theta.sin(),
                    // sgn(sin θ) with sgn(0) = +1: positive on [0, ½], negative on (½, 1)
                    SourceKind::Square => {
                        if u <= 0.5 {
                            1.0
                        } else {
                            -1.0
                        }
                    }
                    SourceKind::Sawtooth => 2.0 * u - 1.0,
                    SourceKind::Triangle => (2.0 / PI) * theta.sin().clamp(-1.0, 1.0).asin(),
                }
        })
        .collect();
    Frame::new(samples, sample_rate)
}

/// Uniform draws over the toy ranges.
pub fn sample_source_params<R: Rng + ?Sized>(rng: &mut R) -> SourceParams {
    let frequency = rng.random_range(FREQ_RANGE.0..=FREQ_RANGE.1);
    let amplitude = rng.random_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1);
    let phase = rng.random_range(0.0..2.0 * PI);
    SourceParams { frequency, amplitude, phase }
}

/// Like [`sample_source_params`] but redraws the frequency until it lies
/// strictly below the Nyquist frequency of `sample_rate`.
pub fn sample_source_params_below_nyquist<R: Rng + ?Sized>(rng: &mut R, sample_rate: u32) -> Result<SourceParams> {
    let nyquist = sample_rate as f64 / 2.0;
    if nyquist <= FREQ_RANGE.0 {
        return Err(Error::InvalidArgument(format!(
            "sample rate {sample_rate} Hz cannot represent the lowest toy frequency"
        )));
    }
    let mut frequency = rng.random_range(FREQ_RANGE.0..=FREQ_RANGE.1);
    while frequency >= nyquist {
        frequency = rng.random_range(FREQ_RANGE.0..=FREQ_RANGE.1);
    }
    let amplitude = rng.random_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1);
    let phase = rng.random_range(0.0..2.0 * PI);
    Ok(SourceParams { frequency, amplitude, phase })
}

/// `m = Σ α_k s_k`, elementwise.
pub fn mix(sources: &[Frame], spec: &MixSpec) -> Result<Frame> {
    let weights = spec.weights();
    if sources.len() != weights.len() {
        return Err(Error::Shape(format!("{} sources for {} weights", sources.len(), weights.len())));
    }
    let first = &sources[0];
    if let Some(bad) = sources.iter().find(|s| s.len() != first.len() || s.sample_rate() != first.sample_rate()) {
        return Err(Error::Shape(format!(
            "source ({} samples @ {} Hz) does not match ({} samples @ {} Hz)",
            bad.len(),
            bad.sample_rate(),
            first.len(),
            first.sample_rate()
        )));
    }
    let mut out = vec![0.0; first.len()];
    for (src, &w) in sources.iter().zip(weights) {
        for (o, &s) in out.iter_mut().zip(src.samples()) {
            *o += w * s;
        }
    }
    Frame::new(out, first.sample_rate())
}

/// `x + ε` with `ε ~ N(0, σ²)` i.i.d. per sample. `σ = 0` returns the input.
pub fn add_gaussian_noise<R: Rng + ?Sized>(frame: &Frame, sigma: f64, rng: &mut R) -> Result<Frame> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(frame.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let samples = frame.samples().iter().map(|&x| x + normal.sample(rng)).collect();
    Frame::new(samples, frame.sample_rate())
}
