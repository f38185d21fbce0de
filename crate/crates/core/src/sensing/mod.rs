//! Contact sensing: ring modules take turns emitting a tone toward a
//! central receiver; a contact shows up as a collapse of that source's mean
//! received amplitude.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{goertzel_amp, CHIRP_BIN, FRAME_LEN, FRAME_SECONDS, SAMPLE_RATE};

/// Face area of a 30 mm diameter module enclosure, m^2.
pub const MODULE_FACE_AREA: f64 = std::f64::consts::PI * 0.015 * 0.015;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitizedRegion {
    pub rx_module: usize,
    pub tx_ring: Vec<usize>,
    #[serde(default = "default_bin")]
    pub tone_bin: usize,
    #[serde(default = "default_dwell")]
    pub dwell_s: f64,
    #[serde(default = "default_update")]
    pub update_period_s: f64,
    #[serde(default = "default_amp")]
    pub tone_amplitude: f64,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default = "default_engage")]
    pub engage_ratio: f64,
    #[serde(default = "default_release")]
    pub release_ratio: f64,
}

fn default_bin() -> usize {
    CHIRP_BIN
}
fn default_dwell() -> f64 {
    0.25
}
fn default_update() -> f64 {
    1.0
}
fn default_amp() -> f64 {
    1.0
}
fn default_engage() -> f64 {
    0.10
}
fn default_release() -> f64 {
    0.5
}

impl SensitizedRegion {
    pub fn new(rx_module: usize, tx_ring: Vec<usize>) -> Self {
        SensitizedRegion {
            rx_module,
            tx_ring,
            tone_bin: default_bin(),
            dwell_s: default_dwell(),
            update_period_s: default_update(),
            tone_amplitude: default_amp(),
            start_s: 0.0,
            engage_ratio: default_engage(),
            release_ratio: default_release(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.tx_ring.is_empty() {
            errs.push("sensing ring has no sources".to_string());
        }
        if self.tx_ring.contains(&self.rx_module) {
            errs.push(format!("receiver module {} is also a source", self.rx_module));
        }
        if self.dwell_s <= 0.0 || self.update_period_s <= 0.0 {
            errs.push("dwell and update period must be positive".to_string());
        }
        if self.dwell_s * self.tx_ring.len() as f64 > self.update_period_s * self.tx_ring.len().max(1) as f64 {
            errs.push("dwell longer than the update period".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Scenario(errs))
        }
    }

    fn dwell_samples(&self) -> u64 {
        (self.dwell_s * SAMPLE_RATE as f64).round() as u64
    }

    fn start_sample(&self) -> u64 {
        (self.start_s * SAMPLE_RATE as f64).round() as u64
    }

    /// Ring module emitting at sample `t`.
    pub fn active_source(&self, t: u64) -> Option<usize> {
        let rel = t.checked_sub(self.start_sample())?;
        let slot = rel / self.dwell_samples();
        Some(self.tx_ring[(slot % self.tx_ring.len() as u64) as usize])
    }

    pub fn drive(&self, module: usize, t: u64) -> Option<(usize, f64)> {
        (self.active_source(t) == Some(module)).then_some((self.tone_bin, self.tone_amplitude))
    }

    /// Source a whole frame is attributed to; frames straddling a dwell
    /// boundary belong to nobody.
    pub fn frame_source(&self, frame_index: u64) -> Option<usize> {
        let a = frame_index * FRAME_LEN as u64;
        let first = self.active_source(a)?;
        let last = self.active_source(a + FRAME_LEN as u64 - 1)?;
        let slot = |t: u64| (t - self.start_sample()) / self.dwell_samples();
        (slot(a) == slot(a + FRAME_LEN as u64 - 1) && first == last).then_some(first)
    }

    pub fn update_index(&self, frame_index: u64) -> Option<u64> {
        let t = frame_index as f64 * FRAME_SECONDS - self.start_s;
        (t >= 0.0).then(|| (t / self.update_period_s).floor() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "contact", rename_all = "kebab-case")]
pub enum ContactReport {
    None,
    AtSources { sources: Vec<usize> },
    AtReceiver,
}

/// Applies the engage/release thresholds to one update's means. `flags`
/// carries the hysteresis state between updates.
pub fn detect_contact(
    means: &BTreeMap<usize, f64>,
    baselines: &BTreeMap<usize, f64>,
    flags: &mut BTreeSet<usize>,
    engage_ratio: f64,
    release_ratio: f64,
) -> ContactReport {
    for (&s, &m) in means {
        let Some(&b) = baselines.get(&s) else { continue };
        if m < engage_ratio * b {
            flags.insert(s);
        } else if m > release_ratio * b {
            flags.remove(&s);
        }
    }
    if flags.is_empty() {
        ContactReport::None
    } else if baselines.keys().all(|s| flags.contains(s)) {
        ContactReport::AtReceiver
    } else {
        ContactReport::AtSources {
            sources: flags.iter().copied().collect(),
        }
    }
}

/// One 1 Hz update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseUpdate {
    /// End of the averaging window, seconds.
    pub t_s: f64,
    pub means: BTreeMap<usize, f64>,
    /// Empty during the warm-up update that establishes them.
    pub baselines: BTreeMap<usize, f64>,
    pub flags: BTreeSet<usize>,
    pub report: ContactReport,
}

#[derive(Debug, Clone)]
pub struct SensingState {
    pub region: SensitizedRegion,
    baselines: BTreeMap<usize, f64>,
    flags: BTreeSet<usize>,
    sums: BTreeMap<usize, (f64, u32)>,
    current: Option<u64>,
}

impl SensingState {
    pub fn new(region: SensitizedRegion) -> Result<Self> {
        region.validate()?;
        Ok(SensingState {
            region,
            baselines: BTreeMap::new(),
            flags: BTreeSet::new(),
            sums: BTreeMap::new(),
            current: None,
        })
    }

    pub fn baselines(&self) -> &BTreeMap<usize, f64> {
        &self.baselines
    }

    /// Consumes the receiver's samples for one frame; returns an update
    /// when an averaging window has just closed.
    pub fn sense_cycle_step(&mut self, frame_index: u64, rx: &[f64]) -> Result<Option<SenseUpdate>> {
        let Some(u) = self.region.update_index(frame_index) else {
            return Ok(None);
        };
        let mut out = None;
        match self.current {
            None => self.current = Some(u),
            Some(cur) if u > cur => {
                out = Some(self.close(cur));
                self.current = Some(u);
            }
            _ => {}
        }
        if let Some(src) = self.region.frame_source(frame_index) {
            let a = goertzel_amp(rx, self.region.tone_bin)?;
            let e = self.sums.entry(src).or_insert((0.0, 0));
            e.0 += a;
            e.1 += 1;
        }
        Ok(out)
    }

    fn close(&mut self, update: u64) -> SenseUpdate {
        let means: BTreeMap<usize, f64> = std::mem::take(&mut self.sums)
            .into_iter()
            .map(|(s, (sum, n))| (s, sum / n as f64))
            .collect();
        let t_s = self.region.start_s + (update + 1) as f64 * self.region.update_period_s;
        if self.baselines.is_empty() {
            self.baselines = means.clone();
            return SenseUpdate {
                t_s,
                means,
                baselines: BTreeMap::new(),
                flags: BTreeSet::new(),
                report: ContactReport::None,
            };
        }
        let report = detect_contact(
            &means,
            &self.baselines,
            &mut self.flags,
            self.region.engage_ratio,
            self.region.release_ratio,
        );
        SenseUpdate {
            t_s,
            means,
            baselines: self.baselines.clone(),
            flags: self.flags.clone(),
            report,
        }
    }
}

pub fn write_sensing_csv<W: Write>(
    mut w: W,
    rx_label: &str,
    label: impl Fn(usize) -> String,
    updates: &[SenseUpdate],
) -> Result<()> {
    writeln!(w, "t_s,rx,tx,mean_amp,baseline,flag")?;
    for u in updates {
        for (&s, &m) in &u.means {
            let b = u.baselines.get(&s).map_or(String::new(), |b| format!("{b:.6e}"));
            writeln!(
                w,
                "{:.3},{},{},{:.6e},{},{}",
                u.t_s,
                rx_label,
                label(s),
                m,
                b,
                u8::from(u.flags.contains(&s))
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sources_alternate_in_quarter_seconds() {
        let r = SensitizedRegion::new(4, vec![0, 2]);
        let frames_per_s = (1.0 / FRAME_SECONDS) as u64;
        let mut dwells: Vec<(usize, u64)> = Vec::new();
        for f in 0..frames_per_s {
            let src = r.frame_source(f);
            if let Some(s) = src {
                match dwells.last_mut() {
                    Some((last, n)) if *last == s => *n += 1,
                    _ => dwells.push((s, 1)),
                }
            }
        }
        assert_eq!(dwells.iter().map(|d| d.0).collect::<Vec<_>>(), [0, 2, 0, 2]);
        assert!(dwells.iter().all(|d| (47..=49).contains(&d.1)), "{dwells:?}");
        assert_eq!(dwells.iter().filter(|d| d.0 == 0).count(), 2);
    }

    #[test]
    fn contact_reports() {
        let base = BTreeMap::from([(0, 1.0), (2, 1.0)]);
        let mut flags = BTreeSet::new();
        assert_eq!(detect_contact(&base, &base, &mut flags, 0.1, 0.5), ContactReport::None);
        let one = BTreeMap::from([(0, 1.0), (2, 0.05)]);
        assert_eq!(
            detect_contact(&one, &base, &mut flags, 0.1, 0.5),
            ContactReport::AtSources { sources: vec![2] }
        );
        // between thresholds: held
        let mid = BTreeMap::from([(0, 1.0), (2, 0.3)]);
        assert_eq!(
            detect_contact(&mid, &base, &mut flags, 0.1, 0.5),
            ContactReport::AtSources { sources: vec![2] }
        );
        assert_eq!(detect_contact(&base, &base, &mut flags, 0.1, 0.5), ContactReport::None);
        let all = BTreeMap::from([(0, 0.02), (2, 0.05)]);
        assert_eq!(
            detect_contact(&all, &base, &mut flags, 0.1, 0.5),
            ContactReport::AtReceiver
        );
    }

    #[test]
    fn rejects_bad_regions() {
        assert!(SensitizedRegion::new(0, vec![]).validate().is_err());
        assert!(SensitizedRegion::new(0, vec![0, 1]).validate().is_err());
        assert!(SensitizedRegion::new(4, vec![0, 1, 2, 3]).validate().is_ok());
        assert!((MODULE_FACE_AREA - 7.0686e-4).abs() < 1e-7);
    }

    #[test]
    fn first_window_sets_baselines() {
        let mut st = SensingState::new(SensitizedRegion::new(4, vec![0, 2])).unwrap();
        let tone: Vec<f64> = (0..FRAME_LEN as u64)
            .map(|t| 0.2 * crate::signals::unit_tone(CHIRP_BIN, t))
            .collect();
        let mut ups = Vec::new();
        for f in 0..(3.0 / FRAME_SECONDS) as u64 {
            if let Some(u) = st.sense_cycle_step(f, &tone).unwrap() {
                ups.push(u);
            }
        }
        assert_eq!(ups.len(), 2);
        assert!(ups[0].baselines.is_empty());
        assert!((st.baselines()[&0] - 0.2).abs() < 1e-9);
        assert_eq!(ups[1].report, ContactReport::None);
    }
}
