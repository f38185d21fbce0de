//! Binary FSK over whole frames: modulation schedules and the
//! start-sequence-locking demodulator.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::packet::{decode_payload, START_SEQUENCE};
use crate::error::{Error, Result};
use crate::signals::{SpectralFrame, ToneSpec, BIN_HZ, FRAME_LEN, MARK_BIN, SPACE_BIN};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FskParams {
    pub space_bin: usize,
    pub mark_bin: usize,
    pub frames_per_symbol: usize,
    pub tx_amplitude: f64,
    /// Carrier threshold as a fraction of `tx_amplitude`.
    pub squelch_ratio: f64,
}

impl Default for FskParams {
    fn default() -> Self {
        FskParams {
            space_bin: SPACE_BIN,
            mark_bin: MARK_BIN,
            frames_per_symbol: 8,
            tx_amplitude: 1.0,
            squelch_ratio: 0.05,
        }
    }
}

impl FskParams {
    pub fn with_k(k: usize) -> Self {
        FskParams {
            frames_per_symbol: k,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_per_symbol == 0 {
            return Err(Error::InvalidSymbolLength);
        }
        for b in [self.space_bin, self.mark_bin] {
            ToneSpec::new(b, 1.0).validate()?;
        }
        Ok(())
    }

    pub fn bitrate(&self) -> f64 {
        BIN_HZ / self.frames_per_symbol as f64
    }

    /// Frames in one packet (t_packet).
    pub fn packet_frames(&self) -> u64 {
        (super::packet::PACKET_BITS * self.frames_per_symbol) as u64
    }

    pub fn squelch(&self) -> f64 {
        self.squelch_ratio * self.tx_amplitude
    }

    pub fn tone_for(&self, bit: u8) -> ToneSpec {
        let bin = if bit == 0 { self.space_bin } else { self.mark_bin };
        ToneSpec::new(bin, self.tx_amplitude)
    }
}

/// One tone per frame: each bit held for `frames_per_symbol` frames.
pub fn modulate(bits: &[u8], params: &FskParams) -> Result<Vec<ToneSpec>> {
    params.validate()?;
    if bits.is_empty() {
        return Err(Error::EmptyStream);
    }
    Ok(bits
        .iter()
        .flat_map(|&b| std::iter::repeat_n(params.tone_for(b), params.frames_per_symbol))
        .collect())
}

/// A per-frame tone list anchored at an absolute sample time. The anchor
/// need not sit on a frame boundary (the transmitter's own clock phase).
#[derive(Debug, Clone, PartialEq)]
pub struct ToneSchedule {
    pub start_sample: u64,
    pub tones: Vec<ToneSpec>,
}

impl ToneSchedule {
    pub fn new(start_sample: u64, tones: Vec<ToneSpec>) -> Self {
        ToneSchedule { start_sample, tones }
    }

    pub fn end_sample(&self) -> u64 {
        self.start_sample + (self.tones.len() * FRAME_LEN) as u64
    }

    pub fn drive(&self, t: u64) -> Option<(usize, f64)> {
        let rel = t.checked_sub(self.start_sample)?;
        self.tones
            .get((rel / FRAME_LEN as u64) as usize)
            .map(|s| (s.bin, s.amplitude))
    }

    /// Index of the last frame touched by the schedule.
    pub fn last_frame(&self) -> u64 {
        (self.end_sample() - 1) / FRAME_LEN as u64
    }
}

/// Space and mark amplitudes of one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftBit {
    pub space: f64,
    pub mark: f64,
}

impl SoftBit {
    /// Mark must strictly exceed space; equality decides 0.
    pub fn hard(&self) -> u8 {
        u8::from(self.mark > self.space)
    }

    pub fn level(&self) -> f64 {
        self.space.max(self.mark)
    }
}

pub fn demod_frame(frame: &SpectralFrame, params: &FskParams) -> SoftBit {
    SoftBit {
        space: frame.amp(params.space_bin),
        mark: frame.amp(params.mark_bin),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum RxEvent {
    StartDetected,
    Bit { bit: u8 },
    Packet { data: u8 },
    ParityError,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum DemodState {
    Searching,
    /// A start matched ending at `first`; the best alignment within the
    /// following k-1 frames wins.
    Aligning {
        first: u64,
        best_end: u64,
        best_score: f64,
    },
    Locked {
        start_end: u64,
    },
}

/// Fraction of a symbol's carried level the soft sum must exceed to break
/// an even vote split.
const TIE_MARGIN: f64 = 0.01;

/// Receiver state machine fed one spectral frame at a time.
#[derive(Debug, Clone)]
pub struct Demodulator {
    params: FskParams,
    squelch: f64,
    buf: VecDeque<SoftBit>,
    /// Frame count of `buf[0]`.
    base: u64,
    n: u64,
    state: DemodState,
}

impl Demodulator {
    pub fn new(params: FskParams) -> Self {
        Demodulator {
            params,
            squelch: params.squelch(),
            buf: VecDeque::new(),
            base: 0,
            n: 0,
            state: DemodState::Searching,
        }
    }

    pub fn params(&self) -> &FskParams {
        &self.params
    }

    pub fn reset(&mut self) {
        self.buf.clear();
        self.base = 0;
        self.n = 0;
        self.state = DemodState::Searching;
    }

    pub fn is_locked(&self) -> bool {
        self.state != DemodState::Searching
    }

    pub fn has_carrier(&self, s: &SoftBit) -> bool {
        s.level() >= self.squelch
    }

    fn at(&self, idx: u64) -> &SoftBit {
        &self.buf[(idx - self.base) as usize]
    }

    /// Hard bit and signed soft sum over the symbol starting at `first`,
    /// or `None` when fewer than half its frames carry signal or the symbol
    /// is undecidable.
    fn symbol(&self, first: u64) -> Option<(u8, f64)> {
        let k = self.params.frames_per_symbol as u64;
        let (mut carried, mut marks, mut soft, mut level) = (0u64, 0u64, 0.0, 0.0);
        for i in first..first + k {
            let s = self.at(i);
            if self.has_carrier(s) {
                carried += 1;
                marks += u64::from(s.hard());
                soft += s.mark - s.space;
                level += s.level();
            }
        }
        if carried * 2 < k {
            return None;
        }
        let bit = match (marks * 2).cmp(&carried) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            // even split: the summed soft evidence decides unless it is
            // negligible, i.e. the window sits astride a bit transition
            std::cmp::Ordering::Equal if soft.abs() > TIE_MARGIN * level => u8::from(soft > 0.0),
            std::cmp::Ordering::Equal => return None,
        };
        Some((bit, soft))
    }

    /// Soft score of a start sequence ending at frame `end`, if it matches.
    fn start_score(&self, end: u64) -> Option<f64> {
        let k = self.params.frames_per_symbol as u64;
        let first = (end + 1).checked_sub(4 * k)?;
        if first < self.base {
            return None;
        }
        let mut score = 0.0;
        for (j, &want) in START_SEQUENCE.iter().enumerate() {
            let (bit, soft) = self.symbol(first + j as u64 * k)?;
            if bit != want {
                return None;
            }
            score += if want == 1 { soft } else { -soft };
        }
        Some(score)
    }

    pub fn rx_step(&mut self, frame: &SpectralFrame) -> Vec<RxEvent> {
        let soft = demod_frame(frame, &self.params);
        self.push_soft(soft)
    }

    pub fn push_soft(&mut self, soft: SoftBit) -> Vec<RxEvent> {
        let k = self.params.frames_per_symbol as u64;
        self.buf.push_back(soft);
        let now = self.n;
        self.n += 1;
        let mut events = Vec::new();
        match self.state {
            DemodState::Searching => {
                while self.buf.len() as u64 > 4 * k {
                    self.buf.pop_front();
                    self.base += 1;
                }
                if let Some(score) = self.start_score(now) {
                    events.push(RxEvent::StartDetected);
                    self.state = DemodState::Aligning {
                        first: now,
                        best_end: now,
                        best_score: score,
                    };
                }
            }
            DemodState::Aligning {
                first,
                best_end,
                best_score,
            } => {
                let (mut be, mut bs) = (best_end, best_score);
                if let Some(score) = self.start_score(now) {
                    if score > bs {
                        be = now;
                        bs = score;
                    }
                }
                self.state = DemodState::Aligning {
                    first,
                    best_end: be,
                    best_score: bs,
                };
            }
            DemodState::Locked { .. } => {}
        }
        if let DemodState::Aligning { first, best_end, .. } = self.state {
            if now + 1 >= first + k {
                // keep the start window so a rejected lock can be replayed
                while self.base + 4 * k < best_end + 1 {
                    self.buf.pop_front();
                    self.base += 1;
                }
                self.state = DemodState::Locked { start_end: best_end };
            }
        }
        if let DemodState::Locked { start_end } = self.state {
            let done = now - start_end;
            if done > 0 && done.is_multiple_of(k) {
                let j = done / k;
                match self.symbol(start_end + 1 + (j - 1) * k) {
                    None => {
                        events.push(RxEvent::ParityError);
                        events.extend(self.resync(start_end));
                    }
                    Some((bit, _)) => {
                        events.push(RxEvent::Bit { bit });
                        if j == 5 {
                            let bits: Vec<u8> = (0..5)
                                .map(|i| self.symbol(start_end + 1 + i * k).map_or(0, |s| s.0))
                                .collect();
                            match decode_payload(&bits) {
                                Some(data) => {
                                    events.push(RxEvent::Packet { data });
                                    self.reset_after_packet();
                                }
                                None => {
                                    events.push(RxEvent::ParityError);
                                    events.extend(self.resync(start_end));
                                }
                            }
                        }
                    }
                }
            }
        }
        events
    }

    /// After a rejected lock, searches again from one frame past the start
    /// of the rejected start window, over the frames already buffered.
    fn resync(&mut self, start_end: u64) -> Vec<RxEvent> {
        let k = self.params.frames_per_symbol as u64;
        let from = start_end + 2 - 4 * k;
        let tail: Vec<SoftBit> = self.buf.iter().skip((from - self.base) as usize).copied().collect();
        self.buf.clear();
        self.base = from;
        self.n = from;
        self.state = DemodState::Searching;
        tail.into_iter().flat_map(|s| self.push_soft(s)).collect()
    }

    fn reset_after_packet(&mut self) {
        self.base += self.buf.len() as u64;
        self.buf.clear();
        self.state = DemodState::Searching;
    }
}
