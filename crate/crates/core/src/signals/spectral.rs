use std::cell::RefCell;
use std::f64::consts::TAU;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{FRAME_LEN, N_BINS};
use crate::error::{Error, Result};

/// Per-bin amplitudes of one non-overlapping 256-sample frame.
///
/// Normalized as `2|X[k]| / 256`, so a unit bin-aligned sine reads 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrame {
    pub amplitudes: Vec<f64>,
    pub frame_index: u64,
}

impl SpectralFrame {
    pub fn amp(&self, bin: usize) -> f64 {
        self.amplitudes[bin]
    }

    /// Time-domain energy implied by the amplitudes (Parseval).
    ///
    /// DC and Nyquist appear once in the full transform, every other bin
    /// twice, which fixes the weights below given the `2/N` normalization.
    pub fn energy(&self) -> f64 {
        let n = FRAME_LEN as f64;
        let edge = self.amplitudes[0].powi(2) + self.amplitudes[N_BINS - 1].powi(2);
        let inner: f64 = self.amplitudes[1..N_BINS - 1].iter().map(|a| a * a).sum();
        n / 4.0 * edge + n / 2.0 * inner
    }
}

fn check_len(frame: &[f64]) -> Result<()> {
    if frame.len() != FRAME_LEN {
        return Err(Error::FrameLength {
            expected: FRAME_LEN,
            got: frame.len(),
        });
    }
    Ok(())
}

/// Single-bin amplitude of a 256-sample frame via the Goertzel recurrence.
pub fn goertzel_amp(frame: &[f64], bin: usize) -> Result<f64> {
    check_len(frame)?;
    if bin >= N_BINS {
        return Err(Error::InvalidBin(bin));
    }
    Ok(goertzel_unchecked(frame, bin))
}

#[inline]
pub(crate) fn goertzel_unchecked(frame: &[f64], bin: usize) -> f64 {
    let w = TAU * bin as f64 / FRAME_LEN as f64;
    let coeff = 2.0 * w.cos();
    let (mut s1, mut s2) = (0.0f64, 0.0f64);
    for &x in frame {
        let s = x + coeff * s1 - s2;
        s2 = s1;
        s1 = s;
    }
    // X[k] = e^{jw} s[N-1] - s[N-2]; use the complex form, the power
    // shortcut loses precision for weak bins.
    let re = s1 * w.cos() - s2;
    let im = s1 * w.sin();
    2.0 * re.hypot(im) / FRAME_LEN as f64
}

thread_local! {
    static PLAN: RefCell<Option<Arc<dyn Fft<f64>>>> = const { RefCell::new(None) };
}

fn plan() -> Arc<dyn Fft<f64>> {
    PLAN.with(|p| {
        p.borrow_mut()
            .get_or_insert_with(|| FftPlanner::new().plan_fft_forward(FRAME_LEN))
            .clone()
    })
}

/// Full 129-bin amplitude spectrum of one frame.
pub fn spectral_frame(frame: &[f64], frame_index: u64) -> Result<SpectralFrame> {
    check_len(frame)?;
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    plan().process(&mut buf);
    let scale = 2.0 / FRAME_LEN as f64;
    let amplitudes = buf[..N_BINS].iter().map(|c| c.norm() * scale).collect();
    Ok(SpectralFrame {
        amplitudes,
        frame_index,
    })
}
