//! Pulse-coupled oscillator synchronization over audible chirps.
//!
//! Every robot owns a fixed-period cycle `t_a | chirp | t_b`. Cycle starts
//! never move; the chirp slides within the cycle by trading time between
//! `t_a` and `t_b` according to where peers' chirps were heard.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signals::{SpectralFrame, CHIRP_BIN, FRAME_SECONDS, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcoParams {
    pub t_a0: f64,
    pub t_b0: f64,
    pub t_chirp: f64,
    pub t_shift_max: f64,
    pub chirp_bin: usize,
    /// Detection threshold as a multiple of the noise-floor estimate.
    pub detect_threshold: f64,
    /// Lower bound on the noise-floor estimate, so a silent channel does
    /// not flag every frame.
    pub min_noise_floor: f64,
    /// Frames at the start of a run used to estimate the noise floor.
    pub noise_frames: usize,
    /// Detections closer than this many missing frames join one chirp.
    pub merge_gap_frames: u64,
    /// Fraction of the median onset gap applied per update.
    pub gap_gain: f64,
    /// Own-chirp blanking, in frames before the onset and after the end.
    pub blank_before: u64,
    pub blank_after: u64,
    pub chirp_amplitude: f64,
}

impl Default for PcoParams {
    fn default() -> Self {
        PcoParams {
            t_a0: 0.95,
            t_b0: 0.95,
            t_chirp: 0.1,
            t_shift_max: 0.025,
            chirp_bin: CHIRP_BIN,
            detect_threshold: 4.0,
            min_noise_floor: 1e-4,
            noise_frames: 20,
            merge_gap_frames: 2,
            gap_gain: 0.5,
            blank_before: 1,
            blank_after: 2,
            chirp_amplitude: 1.0,
        }
    }
}

impl PcoParams {
    pub fn period(&self) -> f64 {
        self.t_a0 + self.t_chirp + self.t_b0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcoState {
    pub t_a: f64,
    pub t_b: f64,
    /// Seconds into the current cycle.
    pub phase: f64,
    pub tally_a: u32,
    pub tally_b: u32,
    /// Distances between own onset and heard onsets this cycle, in frames.
    pub onset_gaps: Vec<u64>,
    pub cycle_count: u64,
}

impl PcoState {
    pub fn new(params: &PcoParams) -> Self {
        PcoState {
            t_a: params.t_a0,
            t_b: params.t_b0,
            phase: 0.0,
            tally_a: 0,
            tally_b: 0,
            onset_gaps: Vec::new(),
            cycle_count: 0,
        }
    }
}

/// Median of `amps`; the ambient reference for chirp detection.
pub fn noise_floor_estimate(amps: &[f64]) -> f64 {
    if amps.is_empty() {
        return 0.0;
    }
    let mut v = amps.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A run of flagged frames, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChirpGroup {
    pub onset: u64,
    pub end: u64,
    /// Flagged frames in the run.
    pub flagged: u64,
}

/// Merges flagged frame indices (ascending) into chirps.
pub fn group_detections(flagged: &[u64], merge_gap_frames: u64) -> Vec<ChirpGroup> {
    let mut out: Vec<ChirpGroup> = Vec::new();
    for &f in flagged {
        match out.last_mut() {
            Some(g) if f - g.end <= merge_gap_frames + 1 => {
                g.end = f;
                g.flagged += 1;
            }
            _ => out.push(ChirpGroup {
                onset: f,
                end: f,
                flagged: 1,
            }),
        }
    }
    out
}

fn threshold(params: &PcoParams, noise_floor: f64) -> f64 {
    params.detect_threshold * noise_floor.max(params.min_noise_floor)
}

/// Chirps present in a frame sequence, relative to `noise_floor`.
pub fn detect_chirps(frames: &[SpectralFrame], params: &PcoParams, noise_floor: f64) -> Vec<ChirpGroup> {
    let thr = threshold(params, noise_floor);
    let flagged: Vec<u64> = frames
        .iter()
        .filter(|f| f.amp(params.chirp_bin) >= thr)
        .map(|f| f.frame_index)
        .collect();
    group_detections(&flagged, params.merge_gap_frames)
}

/// Shift for the tallies and gaps collected over one cycle; returns the new
/// `(t_a, t_b)`. Their sum is conserved exactly.
pub fn pco_update(state: &PcoState, params: &PcoParams) -> (f64, f64) {
    let shift = shift_magnitude(&state.onset_gaps, params);
    let (t_a, t_b) = (state.t_a, state.t_b);
    match state.tally_a.cmp(&state.tally_b) {
        std::cmp::Ordering::Greater => {
            let s = shift.min(t_a);
            (t_a - s, t_b + s)
        }
        std::cmp::Ordering::Less => {
            let s = shift.min(t_b);
            (t_a + s, t_b - s)
        }
        std::cmp::Ordering::Equal => (t_a, t_b),
    }
}

fn shift_magnitude(gaps: &[u64], params: &PcoParams) -> f64 {
    if gaps.is_empty() {
        return 0.0;
    }
    let g: Vec<f64> = gaps.iter().map(|&g| g as f64).collect();
    let median = noise_floor_estimate(&g);
    // within one frame of overlap: already synchronized to frame resolution
    if median <= 1.0 {
        return 0.0;
    }
    (params.gap_gain * median * FRAME_SECONDS).min(params.t_shift_max)
}

/// Outcome of one completed cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: u64,
    pub onset_s: f64,
    pub tally_a: u32,
    pub tally_b: u32,
    pub gaps: Vec<u64>,
    /// Delays in force for the next cycle.
    pub t_a: f64,
    pub t_b: f64,
    /// No peer chirp was heard outside the own-chirp blank, or every heard
    /// chirp was within one frame of the own onset.
    pub synchronized: bool,
    pub heard: usize,
    /// Flagged frames inside the own-chirp window. Only meaningful while
    /// muted; otherwise the own chirp fills it.
    pub window_hits: u64,
    pub muted: bool,
}

/// One robot's oscillator, fed the chirp-bin amplitude of its listening
/// module once per frame.
#[derive(Debug, Clone)]
pub struct PcoClock {
    pub params: PcoParams,
    pub state: PcoState,
    /// Start of cycle 0, seconds.
    pub epoch: f64,
    /// A muted clock neither chirps nor adjusts its delays; it only listens.
    pub muted: bool,
    noise_amps: Vec<f64>,
    noise_floor: Option<f64>,
    flagged: Vec<u64>,
    current: Option<u64>,
}

impl PcoClock {
    pub fn new(params: PcoParams, epoch: f64) -> Self {
        PcoClock {
            params,
            state: PcoState::new(&params),
            epoch,
            muted: false,
            noise_amps: Vec::new(),
            noise_floor: None,
            flagged: Vec::new(),
            current: None,
        }
    }

    pub fn noise_floor(&self) -> Option<f64> {
        self.noise_floor
    }

    pub fn cycle_of(&self, t: f64) -> Option<u64> {
        (t >= self.epoch).then(|| ((t - self.epoch) / self.params.period()).floor() as u64)
    }

    /// Own chirp onset in `cycle` with the delays currently in force.
    pub fn onset_s(&self, cycle: u64) -> f64 {
        self.epoch + cycle as f64 * self.params.period() + self.state.t_a
    }

    fn onset_sample(&self, cycle: u64) -> u64 {
        (self.onset_s(cycle) * SAMPLE_RATE as f64).round() as u64
    }

    fn chirp_samples(&self) -> u64 {
        (self.params.t_chirp * SAMPLE_RATE as f64).round() as u64
    }

    /// Whether the chirp is being emitted at sample `t`. Chirping waits for
    /// the noise-floor estimate.
    pub fn chirping(&self, t: u64) -> bool {
        if self.muted || self.noise_floor.is_none() {
            return false;
        }
        let ts = t as f64 / SAMPLE_RATE as f64;
        let Some(c) = self.cycle_of(ts) else { return false };
        let on = self.onset_sample(c);
        (on..on + self.chirp_samples()).contains(&t)
    }

    pub fn drive(&self, t: u64) -> Option<(usize, f64)> {
        self.chirping(t)
            .then_some((self.params.chirp_bin, self.params.chirp_amplitude))
    }

    fn own_blank(&self, cycle: u64) -> (u64, u64, u64, u64) {
        let fs = FRAME_SECONDS * SAMPLE_RATE as f64;
        let on = self.onset_sample(cycle);
        let o = (on as f64 / fs).floor() as u64;
        let e = ((on + self.chirp_samples() - 1) as f64 / fs).floor() as u64;
        (
            o,
            e,
            o.saturating_sub(self.params.blank_before),
            e + self.params.blank_after,
        )
    }

    /// Consumes the chirp-bin amplitude of frame `frame_index`; returns the
    /// report of a cycle that has just completed.
    pub fn observe(&mut self, frame_index: u64, amp: f64) -> Option<CycleReport> {
        if self.noise_floor.is_none() {
            self.noise_amps.push(amp);
            if self.noise_amps.len() >= self.params.noise_frames {
                self.noise_floor = Some(noise_floor_estimate(&self.noise_amps));
            }
            return None;
        }
        let t = frame_index as f64 * FRAME_SECONDS;
        let c = self.cycle_of(t)?;
        let mut report = None;
        match self.current {
            None => self.current = Some(c),
            Some(cur) if c > cur => {
                report = Some(self.finish_cycle(cur));
                self.current = Some(c);
            }
            _ => {}
        }
        self.state.phase = t - self.epoch - c as f64 * self.params.period();
        let thr = threshold(&self.params, self.noise_floor.unwrap_or(0.0));
        if amp >= thr {
            self.flagged.push(frame_index);
        }
        report
    }

    fn finish_cycle(&mut self, cycle: u64) -> CycleReport {
        let onset_s = self.onset_s(cycle);
        let (o, e, lo, hi) = self.own_blank(cycle);
        let (visible, window): (Vec<u64>, Vec<u64>) = self.flagged.drain(..).partition(|&f| f < lo || f > hi);
        let groups: Vec<ChirpGroup> = group_detections(&visible, self.params.merge_gap_frames)
            .into_iter()
            .filter(|g| {
                let touches = g.end + 1 == lo || g.onset == hi + 1;
                g.flagged > 1 || touches
            })
            .collect();
        let (mut ta, mut tb) = (0u32, 0u32);
        let mut gaps = Vec::new();
        for g in &groups {
            if g.end < lo {
                ta += g.flagged as u32;
                gaps.push(o - g.onset);
            } else {
                tb += g.flagged as u32;
                // a chirp that began inside the blank shows only its tail
                let gap = if g.onset == hi + 1 {
                    g.end.saturating_sub(e)
                } else {
                    g.onset - o
                };
                gaps.push(gap);
            }
        }
        self.state.tally_a = ta;
        self.state.tally_b = tb;
        self.state.onset_gaps = gaps.clone();
        let (t_a, t_b) = if self.muted {
            (self.state.t_a, self.state.t_b)
        } else {
            pco_update(&self.state, &self.params)
        };
        self.state.t_a = t_a;
        self.state.t_b = t_b;
        self.state.cycle_count = cycle + 1;
        CycleReport {
            cycle,
            onset_s,
            tally_a: ta,
            tally_b: tb,
            synchronized: gaps.iter().all(|&g| g <= 1),
            heard: groups.len(),
            window_hits: window.len() as u64,
            muted: self.muted,
            gaps,
            t_a,
            t_b,
        }
    }
}

fn circular_diff(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Per cycle, the largest circular difference between any two robots'
/// chirp onsets, in ms.
pub fn offset_metric(onsets: &BTreeMap<usize, BTreeMap<u64, f64>>, period: f64) -> BTreeMap<u64, f64> {
    let mut by_cycle: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for per_robot in onsets.values() {
        for (&c, &t) in per_robot {
            by_cycle.entry(c).or_default().push(t);
        }
    }
    by_cycle
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(c, v)| {
            let mut worst: f64 = 0.0;
            for i in 0..v.len() {
                for j in i + 1..v.len() {
                    worst = worst.max(circular_diff(v[i], v[j], period));
                }
            }
            (c, worst * 1e3)
        })
        .collect()
}

/// One row of the sync trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SyncTraceRow {
    pub cycle: u64,
    pub robot_id: usize,
    pub chirp_onset_s: f64,
    pub offset_to_nearest_ms: f64,
    pub t_a_s: f64,
    pub t_b_s: f64,
}

/// Rows for every robot and cycle; `delays[robot][cycle]` are the delays
/// that produced that cycle's onset.
pub fn sync_trace(
    onsets: &BTreeMap<usize, BTreeMap<u64, f64>>,
    delays: &BTreeMap<usize, BTreeMap<u64, (f64, f64)>>,
    period: f64,
) -> Vec<SyncTraceRow> {
    let mut rows = Vec::new();
    for (&r, per_cycle) in onsets {
        for (&c, &t) in per_cycle {
            let nearest = onsets
                .iter()
                .filter(|(&q, _)| q != r)
                .filter_map(|(_, m)| m.get(&c))
                .map(|&u| circular_diff(t, u, period) * 1e3)
                .fold(f64::INFINITY, f64::min);
            let (t_a, t_b) = delays
                .get(&r)
                .and_then(|m| m.get(&c))
                .copied()
                .unwrap_or((f64::NAN, f64::NAN));
            rows.push(SyncTraceRow {
                cycle: c,
                robot_id: r,
                chirp_onset_s: t,
                offset_to_nearest_ms: if nearest.is_finite() { nearest } else { 0.0 },
                t_a_s: t_a,
                t_b_s: t_b,
            });
        }
    }
    rows.sort_by_key(|r| (r.cycle, r.robot_id));
    rows
}

pub fn write_sync_csv<W: Write>(mut w: W, rows: &[SyncTraceRow]) -> Result<()> {
    writeln!(w, "cycle,robot_id,chirp_onset_s,offset_to_nearest_ms,t_a_s,t_b_s")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.3},{:.6},{:.6}",
            r.cycle, r.robot_id, r.chirp_onset_s, r.offset_to_nearest_ms, r.t_a_s, r.t_b_s
        )?;
    }
    Ok(())
}
