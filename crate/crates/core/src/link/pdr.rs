//! Packet delivery ratio over a single joint, one attempt per packet.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fsk::{modulate, Demodulator, FskParams, RxEvent, ToneSchedule};
use super::packet::encode_packet;
use crate::channel::{
    sigma_for_snr, AcousticPath, ChannelGraph, ChannelParams, ModuleId, PathParams, TxFrame, TxHistory,
};
use crate::error::{Error, Result};
use crate::signals::{bin_freq, spectral_frame, RingShaper, TransducerModel, FRAME_LEN};

/// Link under test: one sender module, one receiver module, one joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdrChannel {
    pub params: ChannelParams,
    pub transducer: TransducerModel,
    pub n_contacts: u8,
    /// Frame SNR of the received mark tone; `None` is noiseless.
    pub snr_db: Option<f64>,
    pub tx_amplitude: f64,
    /// Draw the transmitter's symbol clock phase at random per attempt;
    /// off means symbols start on receiver frame boundaries.
    pub random_clock_phase: bool,
}

impl Default for PdrChannel {
    fn default() -> Self {
        PdrChannel {
            params: ChannelParams::default(),
            transducer: TransducerModel::default(),
            n_contacts: 3,
            snr_db: Some(40.0),
            tx_amplitude: 1.0,
            random_clock_phase: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdrResult {
    pub k: usize,
    pub bitrate_bps: f64,
    pub snr_db: Option<f64>,
    pub n_packets: usize,
    pub pdr: f64,
    pub seed: u64,
}

const TX: ModuleId = ModuleId::new(0, 0);
const RX: ModuleId = ModuleId::new(1, 0);
/// Silent frames around every attempt; the ring-down dies out well within it.
const GUARD_FRAMES: u64 = 3;

/// Fraction of `n_packets` single attempts with random nibbles and random
/// transmitter clock phase that decode to exactly the sent nibble.
pub fn measure_pdr(k: usize, n_packets: usize, channel: &PdrChannel, seed: u64) -> Result<PdrResult> {
    let fsk = FskParams {
        frames_per_symbol: k,
        tx_amplitude: channel.tx_amplitude,
        ..FskParams::default()
    };
    fsk.validate()?;
    if n_packets == 0 {
        return Err(Error::EmptyStream);
    }
    let mut graph = ChannelGraph::new(
        channel.params,
        [TX, RX],
        vec![AcousticPath::new(
            TX,
            RX,
            PathParams::Joint {
                n_contacts: channel.n_contacts,
            },
        )],
        0.0,
        seed,
    )?;
    if let Some(snr) = channel.snr_db {
        let f = bin_freq(fsk.mark_bin);
        let rx_amp = fsk.tx_amplitude * channel.transducer.tx_gain(f) * graph.effective_gain(TX, RX, f);
        graph.set_noise_sigma(RX, sigma_for_snr(rx_amp, snr));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shaper = RingShaper::new(&channel.transducer);
    let mut history = TxHistory::new(graph.max_delay());
    let mut frame = 0u64;
    let mut delivered = 0usize;
    for _ in 0..n_packets {
        let data: u8 = rng.random_range(0..16);
        let phase: u64 = rng.random_range(0..FRAME_LEN as u64);
        let phase = if channel.random_clock_phase { phase } else { 0 };
        let tones = modulate(&encode_packet(data)?, &fsk)?;
        let sched = ToneSchedule::new((frame + GUARD_FRAMES) * FRAME_LEN as u64 + phase, tones);
        let end = sched.last_frame() + GUARD_FRAMES;
        let mut demod = Demodulator::new(fsk);
        let mut outcome = None;
        while frame <= end {
            let tx = TxFrame::render(&mut shaper, &channel.transducer, frame, |t| sched.drive(t));
            history.push(frame, BTreeMap::from([(TX, tx)]));
            let x = graph.receive(RX, &history, frame);
            let sf = spectral_frame(&x.samples, frame)?;
            for ev in demod.rx_step(&sf) {
                match ev {
                    RxEvent::Packet { data: got } if outcome.is_none() => outcome = Some(got == data),
                    RxEvent::ParityError if outcome.is_none() => outcome = Some(false),
                    _ => {}
                }
            }
            frame += 1;
        }
        delivered += usize::from(outcome == Some(true));
    }
    Ok(PdrResult {
        k,
        bitrate_bps: fsk.bitrate(),
        snr_db: channel.snr_db,
        n_packets,
        pdr: delivered as f64 / n_packets as f64,
        seed,
    })
}

/// One `measure_pdr` per k, in parallel, results in the order of `ks`.
pub fn pdr_sweep(ks: &[usize], n_packets: usize, channel: &PdrChannel, seed: u64) -> Result<Vec<PdrResult>> {
    ks.par_iter()
        .map(|&k| measure_pdr(k, n_packets, channel, seed))
        .collect()
}

pub fn write_pdr_csv<W: Write>(mut w: W, results: &[PdrResult]) -> Result<()> {
    writeln!(w, "k,bitrate_bps,snr_db,n_packets,pdr,seed")?;
    for r in results {
        let snr = r.snr_db.map_or_else(|| "inf".to_string(), |s| s.to_string());
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.k, r.bitrate_bps, snr, r.n_packets, r.pdr, r.seed
        )?;
    }
    Ok(())
}
