use crate::error::{Error, Result};

pub const MU: f64 = 255.0;
pub const N_CLASSES: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MuLawEncoding {
    pub classes: Vec<u16>,
    /// Number of inputs outside `[-1, 1]` (or NaN) that were clamped.
    pub clamped: usize,
}

/// Compand one sample to a class in `0..=255`. Inputs are clamped to
/// `[-1, 1]`; NaN maps to the zero class.
pub fn mu_law_encode_value(x: f64) -> u16 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
    let y = x.signum() * (MU * x.abs()).ln_1p() / (1.0 + MU).ln();
    // f64::round rounds half away from zero
    ((y + 1.0) / 2.0 * MU).round() as u16
}

pub fn mu_law_encode(samples: &[f64]) -> MuLawEncoding {
    let clamped = samples.iter().filter(|x| !(-1.0..=1.0).contains(*x)).count();
    MuLawEncoding { classes: samples.iter().map(|&x| mu_law_encode_value(x)).collect(), clamped }
}

/// Inverse companding of a single class.
pub fn mu_law_decode_value(class: u16) -> Result<f64> {
    if class as usize >= N_CLASSES {
        return Err(Error::InvalidArgument(format!("µ-law class {class} out of range 0..=255")));
    }
    let y = 2.0 * class as f64 / MU - 1.0;
    Ok(y.signum() * ((1.0 + MU).powf(y.abs()) - 1.0) / MU)
}

pub fn mu_law_decode(classes: &[u16]) -> Result<Vec<f64>> {
    classes.iter().map(|&c| mu_law_decode_value(c)).collect()
}
