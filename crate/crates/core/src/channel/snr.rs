//! Frame-level SNR measurement and the air-coupling calibration.

use std::collections::BTreeMap;

use super::gains::{air_delay_samples, VOLUME_REF};
use super::graph::{AcousticPath, ChannelGraph, ChannelParams, ModuleId, PathParams, TxFrame, TxHistory};
use crate::signals::{spectral_frame, RingShaper, SpectralFrame, TransducerModel, CHIRP_BIN, FRAME_LEN, N_BINS};

/// SNR target for the air link at 1 m, both robots at the reference volume.
pub const AIR_SNR_TARGET_DB: f64 = 7.0;

/// Measured SNR at `bin` over a run of frames.
///
/// Noise power per frame is the mean squared amplitude of all other interior
/// bins (white noise is flat in this normalization); signal power is the
/// excess of the tone bin over that floor.
pub fn frame_snr_db(frames: &[SpectralFrame], bin: usize) -> f64 {
    let mut sig = 0.0;
    let mut noise = 0.0;
    for f in frames {
        let (sum, count) = (1..N_BINS - 1)
            .filter(|k| k.abs_diff(bin) > 1)
            .fold((0.0, 0usize), |(s, c), k| (s + f.amplitudes[k].powi(2), c + 1));
        noise += sum / count as f64;
        sig += f.amplitudes[bin].powi(2);
    }
    let n = frames.len() as f64;
    let (sig, noise) = (sig / n, noise / n);
    let excess = (sig - noise).max(f64::MIN_POSITIVE);
    10.0 * (excess / noise).log10()
}

/// Per-sample noise sigma that puts a steady tone of amplitude `amp` at
/// `snr_db` in the frame-SNR sense above.
pub fn sigma_for_snr(amp: f64, snr_db: f64) -> f64 {
    // E[A^2] of white noise in one bin is 4 sigma^2 / N
    amp * (FRAME_LEN as f64).sqrt() / 2.0 * 10f64.powf(-snr_db / 20.0)
}

/// Two robots 1 m apart at the reference volume, one module each; a steady
/// chirp-bin tone from one to the other. Returns the SNR over `n_frames`
/// frames after the air delay and ring-up have settled.
pub fn measure_air_snr_db(
    params: &ChannelParams,
    transducer: &TransducerModel,
    sigma: f64,
    seed: u64,
    n_frames: usize,
) -> f64 {
    let tx = ModuleId::new(0, 0);
    let rx = ModuleId::new(1, 0);
    let air = PathParams::Air {
        dist_m: 1.0,
        vol_tx: VOLUME_REF,
        vol_rx: VOLUME_REF,
    };
    let graph = ChannelGraph::new(*params, [tx, rx], vec![AcousticPath::new(tx, rx, air)], sigma, seed)
        .expect("two-module air graph is valid");
    let settle = air_delay_samples(1.0).div_ceil(FRAME_LEN) as u64 + 4;
    let mut history = TxHistory::new(graph.max_delay());
    let mut shaper = RingShaper::new(transducer);
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..settle + n_frames as u64 {
        let frame = TxFrame::render(&mut shaper, transducer, f, |_| Some((CHIRP_BIN, 1.0)));
        history.push(f, BTreeMap::from([(tx, frame)]));
        if f >= settle {
            let x = graph.receive(rx, &history, f);
            frames.push(spectral_frame(&x.samples, f).expect("one frame"));
        }
    }
    frame_snr_db(&frames, CHIRP_BIN)
}

/// Bisects `coupling_ref` (in log space) until the measured air SNR hits the
/// 7 dB target.
pub fn calibrate_coupling_ref(
    params: &ChannelParams,
    transducer: &TransducerModel,
    sigma: f64,
    seed: u64,
    n_frames: usize,
) -> f64 {
    let (mut lo, mut hi) = (-8.0f64, 0.0f64);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let mut p = *params;
        p.air.coupling_ref = 10f64.powf(mid);
        let snr = measure_air_snr_db(&p, transducer, sigma, seed, n_frames);
        if snr < AIR_SNR_TARGET_DB {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    10f64.powf(0.5 * (lo + hi))
}
