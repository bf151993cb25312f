//! Deep generative priors over raw 1-D signals and Langevin-dynamics source
//! separation built on top of them.
//!
//! * [`signal`]: toy waveforms, mixes, µ-law companding, datasets, WAV I/O.
//! * [`diffcore`]: a small reverse-mode autodiff engine.
//! * [`flow`] and [`ar`]: the two prior families.
//! * [`training`]: Adam, learning-rate schedule, training and fine-tuning loops.
//! * [`separation`]: SGLD posterior sampling and its Gaussian oracle.
//! * [`evaluation`]: cross-likelihood matrices and degenerate-input tables.
//! * [`cli`]: the `psep` command-line front end and its run configuration ([`config`]).

pub mod ar;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod density;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod params;
pub mod separation;
pub mod signal;
pub mod training;

pub use error::{Error, Result};
