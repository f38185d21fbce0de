//! Scenario builders behind the demo commands. Their defaults are the
//! shipped fixtures.

use std::f64::consts::PI;

use super::scenario::{
    Experiment, JointSpec, ModuleRef, NoiseSpec, PdrSpec, RobotSpec, Scenario, ScriptAction, ScriptEvent, SimParams,
    SyncSpec,
};
use crate::channel::VOLUME_REF;
use crate::robots::{InchwormConfig, DEFAULT_PUMP_RATE};
use crate::sensing::SensitizedRegion;
use crate::signals::FRAME_SECONDS;

/// Centre spacing of robots joined face to face at the reference volume.
pub const CHAIN_SPACING_M: f64 = 0.8;
/// Neighbour distance for robots that only talk through the air.
pub const AIR_SPACING_M: f64 = 1.0;

fn robot(id: usize, position: [f64; 3]) -> RobotSpec {
    RobotSpec {
        id,
        n_modules: 4,
        north_pole: false,
        volume: VOLUME_REF,
        pump_rate: DEFAULT_PUMP_RATE,
        position,
        inchworm: None,
        sync: None,
        sensing: None,
    }
}

fn base(experiment: Experiment, seed: u64, duration_s: f64) -> Scenario {
    Scenario {
        experiment,
        seed,
        duration_s,
        noise: NoiseSpec::default(),
        params: SimParams::default(),
        robots: Vec::new(),
        joints: Vec::new(),
        script: Vec::new(),
        taps: Vec::new(),
        stop_when_done: false,
        pdr: None,
    }
}

/// Vertices of a regular polygon with unit-length sides (a segment for two).
pub fn polygon_positions(n: usize, side: f64) -> Vec<[f64; 3]> {
    if n <= 1 {
        return vec![[0.0; 3]; n];
    }
    let r = if n == 2 {
        side / 2.0
    } else {
        side / (2.0 * (PI / n as f64).sin())
    };
    (0..n)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / n as f64;
            [r * a.cos(), r * a.sin(), 0.0]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncDemo {
    pub robots: usize,
    pub offset_ms: f64,
    pub period_ms: f64,
    pub cycles: u64,
    pub seed: u64,
    pub tap: bool,
}

impl Default for SyncDemo {
    fn default() -> Self {
        SyncDemo {
            robots: 2,
            offset_ms: 250.0,
            period_ms: 2000.0,
            cycles: 10,
            seed: 1,
            tap: true,
        }
    }
}

impl SyncDemo {
    /// Robot `i` starts `i / (n - 1)` of the way through the offset; the
    /// run lasts until cycle `cycles` has been reported.
    pub fn scenario(&self) -> Scenario {
        let mut params = SimParams::default();
        let half = (self.period_ms / 1e3 - params.pco.t_chirp) / 2.0;
        params.pco.t_a0 = half;
        params.pco.t_b0 = half;
        let max_offset = self.offset_ms / 1e3;
        let duration = max_offset + (self.cycles + 1) as f64 * params.pco.period() + 2.0 * FRAME_SECONDS;
        let mut s = base(Experiment::Sync, self.seed, duration);
        s.params = params;
        let n = self.robots.max(1);
        for (i, p) in polygon_positions(n, AIR_SPACING_M).into_iter().enumerate() {
            let mut r = robot(i + 1, p);
            let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            r.sync = Some(SyncSpec {
                offset_s: frac * max_offset,
            });
            s.robots.push(r);
        }
        if self.tap {
            s.taps.push(ModuleRef { robot: 1, module: 0 });
        }
        s
    }
}

/// Chain of robots joined front module to rear module, command at robot 1.
pub fn inchworm_scenario(n_robots: usize, seed: u64) -> Scenario {
    let mut s = base(Experiment::Inchworm, seed, 120.0);
    s.stop_when_done = true;
    for i in 0..n_robots {
        let mut r = robot(i + 1, [i as f64 * CHAIN_SPACING_M, 0.0, 0.0]);
        r.inchworm = Some(InchwormConfig::default());
        s.robots.push(r);
    }
    for i in 1..n_robots {
        s.joints.push(JointSpec {
            a: ModuleRef { robot: i, module: 2 },
            b: ModuleRef {
                robot: i + 1,
                module: 0,
            },
            n_contacts: 3,
        });
    }
    if n_robots > 0 {
        s.script.push(ScriptEvent {
            t: 0.5,
            action: ScriptAction::Command {
                robot: 1,
                data: crate::robots::INFLATE_NIBBLE,
            },
        });
    }
    s
}

/// Robots around a load, lift started at t = 0 with seeded offsets.
pub fn lift_scenario(n_robots: usize, max_offset_ms: f64, seed: u64) -> Scenario {
    let max_cycles = SimParams::default().lift.max_cycles as f64;
    let period = SimParams::default().pco.period();
    let duration = max_offset_ms / 1e3 + (max_cycles + 1.0) * period + 10.0;
    let mut s = base(Experiment::Lift, seed, duration);
    s.stop_when_done = true;
    for (i, p) in polygon_positions(n_robots, AIR_SPACING_M).into_iter().enumerate() {
        s.robots.push(robot(i + 1, p));
    }
    s.script.push(ScriptEvent {
        t: 0.0,
        action: ScriptAction::Lift {
            robots: None,
            max_offset_s: max_offset_ms / 1e3,
            offsets_s: None,
        },
    });
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactDemo {
    pub sources: usize,
    /// Contact on source 0; `None` runs contact-free.
    pub contact_s: Option<(f64, f64)>,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for ContactDemo {
    fn default() -> Self {
        ContactDemo {
            sources: 2,
            contact_s: Some((2.0, 6.0)),
            duration_s: 10.0,
            seed: 1,
        }
    }
}

impl ContactDemo {
    /// One robot; the receiver is the north-pole module and the sources are
    /// spread over the equator.
    pub fn scenario(&self) -> Scenario {
        let mut s = base(Experiment::Contact, self.seed, self.duration_s);
        let sources = self.sources.max(1);
        let n_eq = if sources <= 4 { 4 } else { sources };
        let ring: Vec<usize> = (0..sources).map(|i| i * n_eq / sources).collect();
        let first = ring[0];
        let mut r = robot(0, [0.0; 3]);
        r.n_modules = n_eq;
        r.north_pole = true;
        r.sensing = Some(SensitizedRegion::new(n_eq, ring));
        s.robots.push(r);
        if let Some((on, off)) = self.contact_s {
            s.script.push(ScriptEvent {
                t: on,
                action: ScriptAction::Contact {
                    robot: 0,
                    module: first,
                    on: true,
                },
            });
            s.script.push(ScriptEvent {
                t: off,
                action: ScriptAction::Contact {
                    robot: 0,
                    module: first,
                    on: false,
                },
            });
        }
        s
    }
}

pub fn pdr_scenario(seed: u64) -> Scenario {
    let mut s = base(Experiment::Pdr, seed, FRAME_SECONDS);
    s.pdr = Some(PdrSpec::default());
    s
}

/// Two robots and one joint, nothing scripted.
pub fn minimal_scenario() -> Scenario {
    let mut s = base(Experiment::Custom, 0, 1.0);
    s.robots.push(robot(0, [0.0; 3]));
    s.robots.push(robot(1, [CHAIN_SPACING_M, 0.0, 0.0]));
    s.joints.push(JointSpec {
        a: ModuleRef { robot: 0, module: 0 },
        b: ModuleRef { robot: 1, module: 2 },
        n_contacts: 3,
    });
    s
}

/// Every shipped fixture by file stem.
pub fn fixtures() -> Vec<(&'static str, Scenario)> {
    vec![
        ("minimal", minimal_scenario()),
        ("sync", SyncDemo::default().scenario()),
        ("inchworm", inchworm_scenario(3, 1)),
        ("lift", lift_scenario(3, 300.0, 1)),
        ("contact", ContactDemo::default().scenario()),
        ("pdr", pdr_scenario(1)),
    ]
}
