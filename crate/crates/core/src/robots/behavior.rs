use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::RobotState;
use crate::link::MacEvent;
use crate::signals::{FRAME_LEN, FRAME_SECONDS, SAMPLE_RATE};
use crate::sync::{CycleReport, PcoClock};

/// Application nibble that tells a robot to run one inflation step.
pub const INFLATE_NIBBLE: u8 = 0x1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    InflateStart,
    InflateTargetReached,
    DeflateStart,
    PacketForwarded,
    LiftStart,
    SyncPeriod,
    LiftReady,
    Stall,
    LiftAbort,
}

/// One behaviour log line. `t` is always the start of a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub t: f64,
    pub robot: usize,
    pub kind: EventKind,
    pub detail: Value,
}

impl BehaviorEvent {
    pub fn at_frame(frame_index: u64, robot: usize, kind: EventKind, detail: Value) -> Self {
        BehaviorEvent {
            t: frame_index as f64 * FRAME_SECONDS,
            robot,
            kind,
            detail,
        }
    }

    pub fn frame_index(&self) -> u64 {
        (self.t / FRAME_SECONDS).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InchwormConfig {
    pub rear_module: usize,
    /// `None` ends the chain: the robot holds without forwarding.
    pub front_module: Option<usize>,
    pub target_volume: f64,
    pub hold_s: f64,
}

impl Default for InchwormConfig {
    fn default() -> Self {
        InchwormConfig {
            rear_module: 0,
            front_module: Some(2),
            target_volume: 0.4,
            hold_s: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "phase")]
pub enum InchwormPhase {
    Idle,
    Inflating,
    Forwarding,
    Holding { until_frame: u64 },
    Deflating { rest_volume: f64 },
    Stalled,
}

/// A request from a behaviour to the robot's MAC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SendRequest {
    pub data: u8,
    pub modules: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InchwormState {
    pub cfg: InchwormConfig,
    pub phase: InchwormPhase,
    /// Full inflate/deflate cycles finished.
    pub completed: u32,
    rest_volume: f64,
}

impl InchwormState {
    pub fn new(cfg: InchwormConfig) -> Self {
        InchwormState {
            cfg,
            phase: InchwormPhase::Idle,
            completed: 0,
            rest_volume: 0.0,
        }
    }

    /// Starts an inflation step if idle; a command arriving mid-cycle is
    /// dropped.
    pub fn command(&mut self, frame_index: u64, robot: &mut RobotState) -> Vec<BehaviorEvent> {
        if self.phase != InchwormPhase::Idle {
            return Vec::new();
        }
        self.rest_volume = robot.volume;
        robot.pump_on = true;
        robot.valve_open = false;
        self.phase = InchwormPhase::Inflating;
        vec![BehaviorEvent::at_frame(
            frame_index,
            robot.id,
            EventKind::InflateStart,
            json!({ "volume": robot.volume }),
        )]
    }

    /// Advances one frame after the MAC and the volume integrator have run.
    pub fn step(
        &mut self,
        frame_index: u64,
        robot: &mut RobotState,
        mac_events: &[MacEvent],
        send: &mut Vec<SendRequest>,
    ) -> Vec<BehaviorEvent> {
        let mut out = Vec::new();
        for ev in mac_events {
            if let MacEvent::PacketReceived { module, data } = *ev {
                if module == self.cfg.rear_module && data == INFLATE_NIBBLE {
                    out.extend(self.command(frame_index, robot));
                }
            }
        }
        let id = robot.id;
        match self.phase {
            InchwormPhase::Inflating if robot.volume >= self.cfg.target_volume => {
                robot.pump_on = false;
                out.push(BehaviorEvent::at_frame(
                    frame_index,
                    id,
                    EventKind::InflateTargetReached,
                    json!({ "volume": robot.volume }),
                ));
                match self.cfg.front_module {
                    Some(m) => {
                        send.push(SendRequest {
                            data: INFLATE_NIBBLE,
                            modules: vec![m],
                        });
                        self.phase = InchwormPhase::Forwarding;
                    }
                    None => self.hold(frame_index),
                }
            }
            InchwormPhase::Forwarding => {
                for ev in mac_events {
                    match *ev {
                        MacEvent::Delivered { data, attempts } if data == INFLATE_NIBBLE => {
                            out.push(BehaviorEvent::at_frame(
                                frame_index,
                                id,
                                EventKind::PacketForwarded,
                                json!({ "module": self.cfg.front_module, "attempts": attempts }),
                            ));
                            self.hold(frame_index);
                        }
                        MacEvent::DeliveryFailed { data, attempts } if data == INFLATE_NIBBLE => {
                            out.push(BehaviorEvent::at_frame(
                                frame_index,
                                id,
                                EventKind::Stall,
                                json!({ "reason": "delivery-failed", "attempts": attempts }),
                            ));
                            self.phase = InchwormPhase::Stalled;
                        }
                        _ => {}
                    }
                }
            }
            InchwormPhase::Holding { until_frame } if frame_index >= until_frame => {
                robot.valve_open = true;
                out.push(BehaviorEvent::at_frame(
                    frame_index,
                    id,
                    EventKind::DeflateStart,
                    json!({ "volume": robot.volume }),
                ));
                self.phase = InchwormPhase::Deflating {
                    rest_volume: self.rest_volume,
                };
            }
            InchwormPhase::Deflating { rest_volume } if robot.volume <= rest_volume => {
                robot.valve_open = false;
                self.completed += 1;
                self.phase = InchwormPhase::Idle;
            }
            _ => {}
        }
        out
    }

    fn hold(&mut self, frame_index: u64) {
        let frames = (self.cfg.hold_s / FRAME_SECONDS).round() as u64;
        self.phase = InchwormPhase::Holding {
            until_frame: frame_index + frames,
        };
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, InchwormPhase::Stalled)
    }

    /// Stalled, or back at rest after at least one cycle.
    pub fn is_done(&self) -> bool {
        self.is_terminal() || (self.phase == InchwormPhase::Idle && self.completed > 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiftConfig {
    pub required_periods: u32,
    pub max_cycles: u64,
    pub target_volume: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            required_periods: 4,
            max_cycles: 30,
            target_volume: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "phase")]
pub enum LiftPhase {
    Syncing {
        streak: u32,
    },
    /// Chirps muted; waiting for a cycle in which no peer chirps either.
    Quiet,
    Armed {
        inflate_frame: u64,
    },
    Inflating,
    Lifted,
    Aborted,
}

/// Synchronized-lift controller for one robot, fed its oscillator's cycle
/// reports.
///
/// After enough consecutive synchronized periods the robot mutes its chirp
/// and listens through its own chirp window. Peers that are still syncing
/// keep chirping there; once a whole window passes in silence every robot
/// has reached the same point, and each inflates at its next chirp onset.
/// Muting matters because a peer in step is hidden by the own-chirp blank:
/// without it, a robot between two slightly split peers can count a period
/// they do not.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftState {
    pub cfg: LiftConfig,
    pub phase: LiftPhase,
    /// Other robots taking part. With none, no period counts as
    /// synchronized: silence alone proves nothing.
    pub peers: usize,
}

impl LiftState {
    pub fn new(cfg: LiftConfig, peers: usize) -> Self {
        LiftState {
            cfg,
            phase: LiftPhase::Syncing { streak: 0 },
            peers,
        }
    }

    /// Consumes a completed cycle of `clock`, which may be muted here.
    pub fn on_cycle(
        &mut self,
        robot: usize,
        frame_index: u64,
        report: &CycleReport,
        clock: &mut PcoClock,
    ) -> Vec<BehaviorEvent> {
        let mut out = Vec::new();
        match self.phase {
            LiftPhase::Syncing { streak } => {
                let synced = self.peers > 0 && report.synchronized;
                let streak = if synced { streak + 1 } else { 0 };
                out.push(BehaviorEvent::at_frame(
                    frame_index,
                    robot,
                    EventKind::SyncPeriod,
                    json!({ "cycle": report.cycle, "synchronized": synced, "streak": streak, "gaps": report.gaps }),
                ));
                if streak >= self.cfg.required_periods {
                    clock.muted = true;
                    self.phase = LiftPhase::Quiet;
                    out.push(BehaviorEvent::at_frame(
                        frame_index,
                        robot,
                        EventKind::LiftReady,
                        json!({ "cycle": report.cycle, "streak": streak }),
                    ));
                } else {
                    self.phase = LiftPhase::Syncing { streak };
                }
            }
            LiftPhase::Quiet if report.muted && report.heard == 0 && report.window_hits == 0 => {
                let onset_sample = (clock.onset_s(report.cycle + 1) * SAMPLE_RATE as f64).round() as u64;
                self.phase = LiftPhase::Armed {
                    inflate_frame: onset_sample / FRAME_LEN as u64,
                };
            }
            _ => {}
        }
        let waiting = matches!(self.phase, LiftPhase::Syncing { .. } | LiftPhase::Quiet);
        if waiting && report.cycle + 1 >= self.cfg.max_cycles {
            out.push(BehaviorEvent::at_frame(
                frame_index,
                robot,
                EventKind::LiftAbort,
                json!({ "cycles": report.cycle + 1 }),
            ));
            self.phase = LiftPhase::Aborted;
        }
        out
    }

    pub fn step(&mut self, frame_index: u64, robot: &mut RobotState) -> Vec<BehaviorEvent> {
        match self.phase {
            LiftPhase::Armed { inflate_frame } if frame_index >= inflate_frame => {
                robot.pump_on = true;
                robot.valve_open = false;
                self.phase = LiftPhase::Inflating;
                vec![BehaviorEvent::at_frame(
                    frame_index,
                    robot.id,
                    EventKind::InflateStart,
                    json!({ "volume": robot.volume }),
                )]
            }
            LiftPhase::Inflating if robot.volume >= self.cfg.target_volume => {
                robot.pump_on = false;
                self.phase = LiftPhase::Lifted;
                vec![BehaviorEvent::at_frame(
                    frame_index,
                    robot.id,
                    EventKind::InflateTargetReached,
                    json!({ "volume": robot.volume }),
                )]
            }
            _ => Vec::new(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self.phase, LiftPhase::Lifted | LiftPhase::Aborted)
    }
}
