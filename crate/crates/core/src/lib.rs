//! Concealed adversarial attacks on radar classifiers that read
//! time-frequency images.
//!
//! The pipeline synthesizes radar pulses ([`waveforms`]), transforms them with
//! an STFT ([`tfa`]), renders parula-colored spectrogram images ([`render`])
//! and classifies them with small CNNs ([`nn`]). [`attacks`] perturbs the
//! images directly; [`stds`] instead perturbs the complex STFT planes through
//! the differentiable renderer and inverts them back to a transmittable
//! waveform. [`eval`] trains the model family and produces transfer
//! matrices.

pub mod attacks;
pub mod error;
pub mod eval;
pub mod image;
pub mod nn;
pub mod render;
pub mod rng;
pub mod stds;
pub mod tfa;
pub mod waveforms;

pub use error::{Error, Result};
pub use image::Image;
