use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{unit_tone, SampleStream, FRAME_LEN, SAMPLE_RATE};

/// Piezo disc plus preamp, reduced to a magnitude response and a first-order
/// ring-up/ring-down time constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransducerModel {
    /// -3 dB corner of the impedance-mismatch high-pass, Hz.
    pub highpass_cutoff: f64,
    /// Butterworth order of the high-pass.
    pub highpass_order: u32,
    pub resonance_freq: f64,
    pub resonance_gain_db: f64,
    /// Half-width at half-maximum of the resonance bump (in dB), Hz.
    pub resonance_half_width: f64,
    /// Seconds.
    pub ring_time_constant: f64,
    /// Electrical power while driven, W.
    pub power_active: f64,
}

impl Default for TransducerModel {
    fn default() -> Self {
        TransducerModel {
            highpass_cutoff: 2_000.0,
            highpass_order: 2,
            resonance_freq: 31.0 * super::BIN_HZ,
            resonance_gain_db: 6.0,
            resonance_half_width: 200.0,
            ring_time_constant: 0.002,
            power_active: 0.060,
        }
    }
}

impl TransducerModel {
    /// Linear transmit gain at `freq` Hz.
    pub fn tx_gain(&self, freq: f64) -> f64 {
        if freq <= 0.0 {
            return 0.0;
        }
        let ratio = (self.highpass_cutoff / freq).powi(2 * self.highpass_order as i32);
        let highpass = 1.0 / (1.0 + ratio).sqrt();
        let hw2 = self.resonance_half_width.powi(2);
        let lorentz = hw2 / ((freq - self.resonance_freq).powi(2) + hw2);
        highpass * 10f64.powf(self.resonance_gain_db * lorentz / 20.0)
    }

    /// Per-sample envelope decay factor `exp(-1 / (tau * rate))`.
    pub fn ring_alpha(&self) -> f64 {
        if self.ring_time_constant <= 0.0 {
            0.0
        } else {
            (-1.0 / (self.ring_time_constant * SAMPLE_RATE as f64)).exp()
        }
    }
}

/// Imposes the transducer ring-up / ring-down on a stream whose driven tone
/// changes at `boundaries`.
///
/// Inside each segment the newly driven signal rises as `1 - e^(-t/tau)` and
/// the previous segment's tone (continued with its own 256-sample period)
/// decays as `e^(-t/tau)` from the level it had reached. Samples before the
/// first boundary are treated as steady state. Only the immediately
/// preceding segment contributes a tail.
pub fn apply_ring_envelope(stream: &SampleStream, model: &TransducerModel, boundaries: &[usize]) -> SampleStream {
    let x = &stream.samples;
    let alpha = model.ring_alpha();
    let mut out = x.clone();
    let mut bounds: Vec<usize> = boundaries.iter().copied().filter(|&b| b < x.len()).collect();
    bounds.dedup();

    // envelope level the previous segment ended at
    let mut prev_level = 1.0;
    let mut prev_start = 0usize;
    for (i, &b) in bounds.iter().enumerate() {
        let end = bounds.get(i + 1).copied().unwrap_or(x.len());
        let prev_len = b - prev_start;
        let period = prev_len.min(FRAME_LEN);
        let mut decay = 1.0;
        for n in b..end {
            let tail = if period > 0 {
                x[b - period + (n - b) % period]
            } else {
                0.0
            };
            out[n] = (1.0 - decay) * x[n] + prev_level * decay * tail;
            decay *= alpha;
        }
        prev_level = 1.0 - alpha.powi((end - b) as i32);
        prev_start = b;
    }
    SampleStream {
        samples: out,
        rate: stream.rate,
    }
}

/// Stateful per-transducer envelope tracker used by the simulation engine.
///
/// Every bin the transducer has been driven at keeps its own envelope, so a
/// bit transition rings the new tone up while the old one rings down.
#[derive(Debug, Clone)]
pub struct RingShaper {
    alpha: f64,
    env: BTreeMap<usize, f64>,
}

impl RingShaper {
    pub fn new(model: &TransducerModel) -> Self {
        RingShaper {
            alpha: model.ring_alpha(),
            env: BTreeMap::new(),
        }
    }

    pub fn is_quiet(&self) -> bool {
        self.env.is_empty()
    }

    /// Renders `n` samples starting at absolute sample time `start`.
    ///
    /// `drive(t)` names the bin and amplitude driven at sample `t`, if any.
    /// Returns one `(bin, samples)` component per bin with non-zero
    /// envelope, ordered by bin.
    pub fn render<F>(&mut self, start: u64, n: usize, drive: F) -> Vec<(usize, Vec<f64>)>
    where
        F: Fn(u64) -> Option<(usize, f64)>,
    {
        let mut comps: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for i in 0..n {
            let t = start + i as u64;
            let driven = drive(t);
            if let Some((bin, _)) = driven {
                self.env.entry(bin).or_insert(0.0);
                comps.entry(bin).or_insert_with(|| vec![0.0; n]);
            }
            for (&bin, level) in self.env.iter_mut() {
                let target = match driven {
                    Some((b, a)) if b == bin => a,
                    _ => 0.0,
                };
                if *level != 0.0 {
                    let buf = comps.entry(bin).or_insert_with(|| vec![0.0; n]);
                    buf[i] = *level * unit_tone(bin, t);
                }
                *level = target + (*level - target) * self.alpha;
            }
            self.env.retain(|_, l| l.abs() > 1e-12);
        }
        comps.into_iter().collect()
    }
}
