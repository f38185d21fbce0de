//! Time-domain signals, tone synthesis, the transducer model and the
//! 256-point spectral primitives every receiver is built on.
//!
//! All protocol tones sit exactly on the 195.3125 Hz bin grid of a 256-point
//! transform at 50 kS/s, so a tone completes a whole number of cycles in
//! every frame and frames can be synthesized independently.

mod spectral;
mod transducer;
mod wav;

pub use spectral::{goertzel_amp, spectral_frame, SpectralFrame};
pub use transducer::{apply_ring_envelope, RingShaper, TransducerModel};
pub use wav::{read_wav, write_wav};

use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Samples per second for every stream in a simulation.
pub const SAMPLE_RATE: u32 = 50_000;
/// Samples per analysis frame.
pub const FRAME_LEN: usize = 256;
/// Non-redundant bins of a 256-point real transform.
pub const N_BINS: usize = FRAME_LEN / 2 + 1;
/// Width of one transform bin in hertz.
pub const BIN_HZ: f64 = SAMPLE_RATE as f64 / FRAME_LEN as f64;
/// Duration of one frame in seconds (5.12 ms).
pub const FRAME_SECONDS: f64 = FRAME_LEN as f64 / SAMPLE_RATE as f64;

/// Chirp / sensing tone, closest bin to the transducer resonance (~6.05 kHz).
pub const CHIRP_BIN: usize = 31;
/// FSK space tone (0-bit), ~16.99 kHz.
pub const SPACE_BIN: usize = 87;
/// FSK mark tone (1-bit), ~18.95 kHz.
pub const MARK_BIN: usize = 97;

pub fn bin_freq(bin: usize) -> f64 {
    bin as f64 * BIN_HZ
}

/// Value of a unit, zero-phase, bin-aligned sine at absolute sample time `t`.
///
/// Bin-aligned tones are periodic in `FRAME_LEN`, so the phase reference can
/// be taken modulo one frame without any discontinuity.
#[inline]
pub fn unit_tone(bin: usize, t: u64) -> f64 {
    let n = (t % FRAME_LEN as u64) as usize;
    let k = (bin * n) % FRAME_LEN;
    (TAU * k as f64 / FRAME_LEN as f64).sin()
}

/// A block of real samples at `SAMPLE_RATE`, full scale = 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStream {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl SampleStream {
    pub fn new(samples: Vec<f64>) -> Self {
        SampleStream {
            samples,
            rate: SAMPLE_RATE,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    /// Iterates over complete, non-overlapping frames. A trailing partial
    /// frame is dropped.
    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(FRAME_LEN)
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|x| x.is_finite())
    }
}

/// A bin-aligned sinusoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneSpec {
    pub bin: usize,
    pub amplitude: f64,
    pub phase: f64,
}

impl ToneSpec {
    pub fn new(bin: usize, amplitude: f64) -> Self {
        ToneSpec {
            bin,
            amplitude,
            phase: 0.0,
        }
    }

    pub fn freq(&self) -> f64 {
        bin_freq(self.bin)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=FRAME_LEN / 2).contains(&self.bin) {
            return Err(Error::InvalidBin(self.bin));
        }
        Ok(())
    }
}

/// `amplitude * sin(2*pi*f*t/rate + phase)` for `t` in `0..n_samples`.
pub fn synth_tone(spec: ToneSpec, n_samples: usize) -> Result<SampleStream> {
    spec.validate()?;
    if n_samples == 0 {
        return Err(Error::EmptyStream);
    }
    let w = TAU * spec.freq() / SAMPLE_RATE as f64;
    let samples = (0..n_samples)
        .map(|t| spec.amplitude * (w * t as f64 + spec.phase).sin())
        .collect();
    Ok(SampleStream::new(samples))
}
