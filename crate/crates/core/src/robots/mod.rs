//! Per-robot physical state and the two decentralized behaviours.

mod behavior;

pub use behavior::{
    BehaviorEvent, EventKind, InchwormConfig, InchwormPhase, InchwormState, LiftConfig, LiftPhase, LiftState,
    SendRequest, INFLATE_NIBBLE,
};

use serde::{Deserialize, Serialize};

use crate::channel::{radius_for_volume, VOLUME_MAX, VOLUME_MIN};
use crate::signals::SAMPLE_RATE;

/// Transducer draw at full duty, W.
pub const TRANSDUCER_POWER_W: f64 = 0.060;
pub const DEFAULT_PUMP_RATE: f64 = 0.05;

/// Unit directions of the modules on the robot sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleLayout {
    pub dirs: Vec<[f64; 3]>,
}

impl ModuleLayout {
    /// `n` modules at equal longitudes on the equator, module 0 facing +x.
    pub fn equator(n: usize) -> Self {
        let dirs = (0..n)
            .map(|i| {
                let lon = std::f64::consts::TAU * i as f64 / n as f64;
                [lon.cos(), lon.sin(), 0.0]
            })
            .collect();
        ModuleLayout { dirs }
    }

    /// Equatorial ring plus optional pole modules, appended north then south.
    pub fn with_poles(n_equator: usize, north: bool, south: bool) -> Self {
        let mut l = Self::equator(n_equator);
        if north {
            l.dirs.push([0.0, 0.0, 1.0]);
        }
        if south {
            l.dirs.push([0.0, 0.0, -1.0]);
        }
        l
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn central_angle(&self, a: usize, b: usize) -> f64 {
        let (u, v) = (self.dirs[a], self.dirs[b]);
        let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
        dot.clamp(-1.0, 1.0).acos()
    }

    /// Along-skin distance between two modules at volume `v`.
    pub fn geodesic(&self, a: usize, b: usize, volume: f64) -> f64 {
        radius_for_volume(volume) * self.central_angle(a, b)
    }
}

/// Which function drove a transducer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TxFunction {
    Link,
    Sync,
    Sensing,
}

/// Driven transducer time, in samples, per function.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub link_samples: u64,
    pub sync_samples: u64,
    pub sensing_samples: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total_j: f64,
    pub link_j: f64,
    pub sync_j: f64,
    pub sensing_j: f64,
}

impl EnergyLedger {
    pub fn add(&mut self, f: TxFunction, samples: u64) {
        match f {
            TxFunction::Link => self.link_samples += samples,
            TxFunction::Sync => self.sync_samples += samples,
            TxFunction::Sensing => self.sensing_samples += samples,
        }
    }

    pub fn total_samples(&self) -> u64 {
        self.link_samples + self.sync_samples + self.sensing_samples
    }

    pub fn report(&self) -> EnergyReport {
        let j = |s: u64| TRANSDUCER_POWER_W * s as f64 / SAMPLE_RATE as f64;
        EnergyReport {
            total_j: j(self.total_samples()),
            link_j: j(self.link_samples),
            sync_j: j(self.sync_samples),
            sensing_j: j(self.sensing_samples),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub id: usize,
    pub volume: f64,
    pub pump_on: bool,
    pub valve_open: bool,
    pub pump_rate: f64,
    pub layout: ModuleLayout,
    pub energy: EnergyLedger,
}

impl RobotState {
    pub fn new(id: usize, volume: f64, layout: ModuleLayout) -> Self {
        RobotState {
            id,
            volume: volume.clamp(VOLUME_MIN, VOLUME_MAX),
            pump_on: false,
            valve_open: false,
            pump_rate: DEFAULT_PUMP_RATE,
            layout,
            energy: EnergyLedger::default(),
        }
    }

    /// Integrates pump and valve over `dt`; returns whether the volume moved.
    pub fn volume_step(&mut self, dt: f64) -> bool {
        let before = self.volume;
        if self.pump_on {
            self.volume += self.pump_rate * dt;
        }
        if self.valve_open {
            self.volume -= self.pump_rate * dt;
        }
        self.volume = self.volume.clamp(VOLUME_MIN, VOLUME_MAX);
        self.volume != before
    }

    pub fn radius(&self) -> f64 {
        radius_for_volume(self.volume)
    }

    pub fn energy_report(&self) -> EnergyReport {
        self.energy.report()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::FRAME_SECONDS;
    use proptest::prelude::*;

    #[test]
    fn volume_examples() {
        let mut r = RobotState::new(0, 0.05, ModuleLayout::equator(4));
        r.pump_on = true;
        let steps = (1.0 / FRAME_SECONDS).round() as usize;
        for _ in 0..steps {
            r.volume_step(1.0 / steps as f64);
        }
        assert!((r.volume - 0.10).abs() < 1e-12);
        r.pump_on = false;
        assert!(!r.volume_step(FRAME_SECONDS));
        r.pump_on = true;
        for _ in 0..20 * steps {
            r.volume_step(1.0 / steps as f64);
        }
        assert_eq!(r.volume, VOLUME_MAX);
    }

    #[test]
    fn layout_geometry() {
        let l = ModuleLayout::with_poles(4, true, false);
        assert_eq!(l.len(), 5);
        let quarter = std::f64::consts::FRAC_PI_2;
        assert!((l.central_angle(0, 1) - quarter).abs() < 1e-12);
        assert!((l.central_angle(0, 2) - 2.0 * quarter).abs() < 1e-12);
        assert!((l.central_angle(4, 3) - quarter).abs() < 1e-12);
        assert!((l.geodesic(0, 2, 0.25) - radius_for_volume(0.25) * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn energy_examples() {
        let mut e = EnergyLedger::default();
        assert_eq!(e.report().total_j, 0.0);
        e.add(TxFunction::Sync, 10 * SAMPLE_RATE as u64);
        assert!((e.report().total_j - 0.6).abs() < 1e-12);
        assert!((e.report().sync_j - 0.6).abs() < 1e-12);
        // one packet at k=8 broadcast for 4 packet durations
        let mut p = EnergyLedger::default();
        p.add(TxFunction::Link, 4 * 9 * 8 * 256);
        assert!((p.report().link_j - 0.0885).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn volume_stays_in_range(v0 in 0.0f64..1.0, steps in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..400)) {
            let mut r = RobotState::new(0, v0, ModuleLayout::equator(4));
            for (p, v) in steps {
                r.pump_on = p;
                r.valve_open = v;
                r.volume_step(0.05);
                prop_assert!((VOLUME_MIN..=VOLUME_MAX).contains(&r.volume));
            }
        }

        #[test]
        fn geodesic_scales_with_cube_root(v in VOLUME_MIN..VOLUME_MAX, a in 0usize..6, b in 0usize..6) {
            let l = ModuleLayout::with_poles(4, true, true);
            let ratio = l.geodesic(a, b, v) / l.geodesic(a, b, VOLUME_MIN).max(f64::MIN_POSITIVE);
            if a != b {
                prop_assert!((ratio - (v / VOLUME_MIN).cbrt()).abs() < 1e-9);
            }
        }
    }
}
