use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::scenario::{Scenario, ScriptAction, ScriptEvent};
use crate::channel::{AcousticPath, ChannelGraph, ModuleId, PathParams, TxFrame, TxHistory};
use crate::error::Result;
use crate::link::{Mac, MacEvent};
use crate::robots::{BehaviorEvent, EnergyReport, InchwormState, LiftState, RobotState, SendRequest, TxFunction};
use crate::sensing::{SenseUpdate, SensingState};
use crate::signals::{goertzel_amp, spectral_frame, RingShaper, FRAME_LEN, FRAME_SECONDS, SAMPLE_RATE};
use crate::sync::{sync_trace, CycleReport, PcoClock, SyncTraceRow};

/// Module every oscillator listens on.
pub const SYNC_MODULE: usize = 0;
/// Frames between volume trace samples.
pub const VOLUME_TRACE_STRIDE: u64 = 20;

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    #[serde(skip)]
    pub frame: u64,
    pub t: f64,
    pub robot: usize,
    pub kind: String,
    pub detail: Value,
}

impl LogRecord {
    pub fn new(frame: u64, robot: usize, kind: impl Into<String>, detail: Value) -> Self {
        LogRecord {
            frame,
            t: frame as f64 * FRAME_SECONDS,
            robot,
            kind: kind.into(),
            detail,
        }
    }

    fn from_behavior(e: BehaviorEvent) -> Self {
        let kind = serde_json::to_value(e.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        LogRecord::new(e.frame_index(), e.robot, kind, e.detail)
    }

    fn from_mac(frame: u64, robot: usize, e: &MacEvent) -> Self {
        let mut v = serde_json::to_value(e).unwrap_or(Value::Null);
        let kind = v
            .as_object_mut()
            .and_then(|o| o.remove("kind"))
            .and_then(|k| k.as_str().map(str::to_owned))
            .unwrap_or_default();
        LogRecord::new(frame, robot, kind, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolumeSample {
    pub t_s: f64,
    pub robot_id: usize,
    pub volume: f64,
    pub pump_on: bool,
    pub valve_open: bool,
}

/// Everything a run produces.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub frames: u64,
    pub events: Vec<LogRecord>,
    pub onsets: BTreeMap<usize, BTreeMap<u64, f64>>,
    pub delays: BTreeMap<usize, BTreeMap<u64, (f64, f64)>>,
    pub cycles: BTreeMap<usize, Vec<CycleReport>>,
    pub sensing: BTreeMap<usize, Vec<SenseUpdate>>,
    pub volumes: Vec<VolumeSample>,
    pub taps: BTreeMap<ModuleId, Vec<f64>>,
    pub energy: BTreeMap<usize, EnergyReport>,
}

impl RunOutput {
    pub fn sync_rows(&self, period: f64) -> Vec<SyncTraceRow> {
        sync_trace(&self.onsets, &self.delays, period)
    }

    pub fn events_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a LogRecord> + 'a {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

struct RobotSim {
    state: RobotState,
    mac: Mac,
    clock: Option<PcoClock>,
    delays: (f64, f64),
    lift: Option<LiftState>,
    inchworm: Option<InchwormState>,
    sensing: Option<SensingState>,
    sense_rx: Option<usize>,
}

impl RobotSim {
    fn drive(&self, module: usize, t: u64) -> Option<((usize, f64), TxFunction)> {
        if let Some(d) = self.mac.tx_drive(module, t) {
            return Some((d, TxFunction::Link));
        }
        // chirps go out on every module at once
        if let Some(d) = self.clock.as_ref().and_then(|c| c.drive(t)) {
            return Some((d, TxFunction::Sync));
        }
        self.sensing
            .as_ref()
            .and_then(|s| s.region.drive(module, t))
            .map(|d| (d, TxFunction::Sensing))
    }

    /// Whether anything drives `module` during frame `f`. Chirps and dwells
    /// outlast a frame, so checking the two end samples suffices.
    fn may_drive(&self, module: usize, f: u64) -> bool {
        let a = f * FRAME_LEN as u64;
        let b = a + FRAME_LEN as u64 - 1;
        self.mac.tx_modules(f).contains(&module) || self.drive(module, a).is_some() || self.drive(module, b).is_some()
    }

    fn is_done(&self) -> bool {
        let worm = self.inchworm.as_ref().is_none_or(|w| w.is_done());
        let lift = self.lift.as_ref().is_none_or(|l| l.is_terminal());
        worm && lift && self.mac.is_idle()
    }

    fn has_behavior(&self) -> bool {
        self.inchworm.is_some() || self.lift.is_some()
    }
}

/// Builds the channel graph for the scenario's robots and joints; air paths
/// join every pair of modules on different robots.
pub fn build_graph(s: &Scenario) -> Result<ChannelGraph> {
    let mut modules = Vec::new();
    let mut paths = Vec::new();
    for r in &s.robots {
        let layout = r.layout();
        for a in 0..layout.len() {
            modules.push(ModuleId::new(r.id, a));
            for b in 0..layout.len() {
                if a != b {
                    paths.push(AcousticPath::new(
                        ModuleId::new(r.id, a),
                        ModuleId::new(r.id, b),
                        PathParams::Membrane {
                            geodesic_m: layout.geodesic(a, b, r.volume),
                        },
                    ));
                }
            }
        }
    }
    for j in &s.joints {
        let params = PathParams::Joint {
            n_contacts: j.n_contacts,
        };
        paths.push(AcousticPath::new(j.a.into(), j.b.into(), params));
        paths.push(AcousticPath::new(j.b.into(), j.a.into(), params));
    }
    for p in &s.robots {
        for q in &s.robots {
            if p.id == q.id {
                continue;
            }
            let d = distance(p.position, q.position);
            for a in 0..p.module_count() {
                for b in 0..q.module_count() {
                    paths.push(AcousticPath::new(
                        ModuleId::new(p.id, a),
                        ModuleId::new(q.id, b),
                        PathParams::Air {
                            dist_m: d,
                            vol_tx: p.volume,
                            vol_rx: q.volume,
                        },
                    ));
                }
            }
        }
    }
    ChannelGraph::new(s.params.channel, modules, paths, s.noise.sigma, s.seed)
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Frame-major simulation of one scenario.
pub struct Engine {
    scenario: Scenario,
    graph: ChannelGraph,
    history: TxHistory,
    shapers: BTreeMap<ModuleId, RingShaper>,
    robots: BTreeMap<usize, RobotSim>,
    script: Vec<(u64, ScriptEvent)>,
    next_script: usize,
    rng: ChaCha8Rng,
    frame: u64,
    out: RunOutput,
}

const LIFT_RNG_STREAM: u64 = 0x4c49_4654;

impl Engine {
    /// Expects a validated scenario.
    pub fn new(scenario: Scenario) -> Result<Self> {
        let graph = build_graph(&scenario)?;
        let history = TxHistory::new(graph.max_delay());
        let p = &scenario.params;
        let shapers = graph.modules().map(|m| (m, RingShaper::new(&p.transducer))).collect();
        let mut robots = BTreeMap::new();
        for r in &scenario.robots {
            let mut state = RobotState::new(r.id, r.volume, r.layout());
            state.pump_rate = r.pump_rate;
            let mac = Mac::new(r.module_count(), p.fsk, p.mac, scenario.seed, r.id)?;
            let clock = r.sync.map(|s| PcoClock::new(p.pco, s.offset_s));
            let sensing = r.sensing.clone().map(SensingState::new).transpose()?;
            robots.insert(
                r.id,
                RobotSim {
                    state,
                    mac,
                    clock,
                    delays: (p.pco.t_a0, p.pco.t_b0),
                    lift: None,
                    inchworm: r.inchworm.map(InchwormState::new),
                    sense_rx: r.sensing.as_ref().map(|s| s.rx_module),
                    sensing,
                },
            );
        }
        let mut script: Vec<(u64, ScriptEvent)> = scenario
            .script
            .iter()
            .map(|e| {
                (
                    ((e.t * SAMPLE_RATE as f64).round() as u64).div_ceil(FRAME_LEN as u64),
                    e.clone(),
                )
            })
            .collect();
        script.sort_by_key(|(f, _)| *f);
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        rng.set_stream(LIFT_RNG_STREAM);
        Ok(Engine {
            graph,
            history,
            shapers,
            robots,
            script,
            next_script: 0,
            rng,
            frame: 0,
            out: RunOutput::default(),
            scenario,
        })
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    /// Runs to the scenario's end (or until every behaviour is done, if
    /// asked to) and returns the collected outputs.
    pub fn run(mut self) -> Result<RunOutput> {
        let n = self.scenario.n_frames();
        while self.frame < n {
            self.step()?;
            if self.scenario.stop_when_done && self.all_done() {
                break;
            }
        }
        Ok(self.finish())
    }

    fn all_done(&self) -> bool {
        self.next_script >= self.script.len()
            && self.robots.values().any(RobotSim::has_behavior)
            && self.robots.values().all(RobotSim::is_done)
    }

    fn finish(mut self) -> RunOutput {
        let last = self.frame.saturating_sub(1);
        for (&id, r) in &self.robots {
            let rep = r.state.energy_report();
            self.out.energy.insert(id, rep);
            self.out.events.push(LogRecord::new(last, id, "energy", json!(rep)));
        }
        let from = self.out.events.partition_point(|e| e.frame < last);
        self.out.events[from..].sort_by(|a, b| (a.robot, &a.kind).cmp(&(b.robot, &b.kind)));
        self.out.frames = self.frame;
        self.out
    }

    fn apply_script(&mut self, f: u64, records: &mut Vec<LogRecord>) -> Result<()> {
        while let Some((at, ev)) = self.script.get(self.next_script) {
            if *at > f {
                break;
            }
            let ev = ev.clone();
            self.next_script += 1;
            match ev.action {
                ScriptAction::Command { robot, data } => {
                    records.push(LogRecord::new(f, robot, "script-command", json!({ "data": data })));
                    let r = self.robots.get_mut(&robot).expect("validated robot");
                    if let Some(w) = r.inchworm.as_mut() {
                        if data == crate::robots::INFLATE_NIBBLE {
                            records.extend(w.command(f, &mut r.state).into_iter().map(LogRecord::from_behavior));
                        }
                    }
                }
                ScriptAction::Send { robot, data, modules } => {
                    records.push(LogRecord::new(
                        f,
                        robot,
                        "script-send",
                        json!({ "data": data, "modules": modules }),
                    ));
                    let r = self.robots.get_mut(&robot).expect("validated robot");
                    r.mac.send(data, &modules)?;
                }
                ScriptAction::Contact { robot, module, on } => {
                    records.push(LogRecord::new(
                        f,
                        robot,
                        "script-contact",
                        json!({ "module": module, "on": on }),
                    ));
                    self.graph.set_contact(ModuleId::new(robot, module), on)?;
                }
                ScriptAction::Lift {
                    robots,
                    max_offset_s,
                    offsets_s,
                } => {
                    let ids: Vec<usize> = robots.unwrap_or_else(|| self.robots.keys().copied().collect());
                    let t0 = f as f64 * FRAME_SECONDS;
                    for (i, id) in ids.iter().enumerate() {
                        let offset = match &offsets_s {
                            Some(o) => o[i],
                            None => self.rng.random_range(0.0..=max_offset_s),
                        };
                        let p = self.scenario.params;
                        let r = self.robots.get_mut(id).expect("validated robot");
                        r.clock = Some(PcoClock::new(p.pco, t0 + offset));
                        r.delays = (p.pco.t_a0, p.pco.t_b0);
                        r.lift = Some(LiftState::new(p.lift, ids.len() - 1));
                        records.push(LogRecord::new(
                            f,
                            *id,
                            "lift-start",
                            json!({ "offset_s": offset, "epoch_s": t0 + offset }),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Advances one frame.
    pub fn step(&mut self) -> Result<()> {
        let f = self.frame;
        let mut records = Vec::new();
        self.apply_script(f, &mut records)?;

        for (&id, r) in self.robots.iter_mut() {
            for e in r.mac.begin_frame(f) {
                records.push(LogRecord::from_mac(f, id, &e));
            }
        }

        let mut tx = BTreeMap::new();
        let transducer = self.scenario.params.transducer;
        for (&m, shaper) in self.shapers.iter_mut() {
            let r = &self.robots[&m.robot];
            if shaper.is_quiet() && !r.may_drive(m.module, f) {
                continue;
            }
            let counts: [Cell<u64>; 3] = Default::default();
            let frame = TxFrame::render(shaper, &transducer, f, |t| {
                r.drive(m.module, t).map(|(d, func)| {
                    let c = &counts[func as usize];
                    c.set(c.get() + 1);
                    d
                })
            });
            let r = self.robots.get_mut(&m.robot).expect("robot of module");
            for (func, c) in [TxFunction::Link, TxFunction::Sync, TxFunction::Sensing]
                .into_iter()
                .zip(&counts)
            {
                if c.get() > 0 {
                    r.state.energy.add(func, c.get());
                }
            }
            if !frame.is_silent() {
                tx.insert(m, frame);
            }
        }
        self.history.push(f, tx);

        let mut needed: BTreeSet<ModuleId> = self.scenario.taps.iter().map(|&t| t.into()).collect();
        for (&id, r) in &self.robots {
            if let Some(m) = r.mac.listening(f) {
                needed.insert(ModuleId::new(id, m));
            }
            if r.clock.is_some() {
                needed.insert(ModuleId::new(id, SYNC_MODULE));
            }
            if let Some(m) = r.sense_rx {
                needed.insert(ModuleId::new(id, m));
            }
        }
        let rx: BTreeMap<ModuleId, Vec<f64>> = needed
            .into_iter()
            .map(|m| (m, self.graph.receive(m, &self.history, f).samples))
            .collect();

        let mut volume_changed = false;
        for (&id, r) in self.robots.iter_mut() {
            let mut mac_events = Vec::new();
            if let Some(m) = r.mac.listening(f) {
                let sf = spectral_frame(&rx[&ModuleId::new(id, m)], f)?;
                mac_events = r.mac.end_frame(f, Some(&sf));
            } else {
                mac_events.extend(r.mac.end_frame(f, None));
            }
            records.extend(mac_events.iter().map(|e| LogRecord::from_mac(f, id, e)));

            if let Some(clock) = r.clock.as_mut() {
                let chirp_bin = clock.params.chirp_bin;
                let amp = goertzel_amp(&rx[&ModuleId::new(id, SYNC_MODULE)], chirp_bin)?;
                if let Some(rep) = clock.observe(f, amp) {
                    self.out.onsets.entry(id).or_default().insert(rep.cycle, rep.onset_s);
                    self.out.delays.entry(id).or_default().insert(rep.cycle, r.delays);
                    r.delays = (rep.t_a, rep.t_b);
                    records.push(LogRecord::new(f, id, "sync-cycle", json!(rep)));
                    if let Some(l) = r.lift.as_mut() {
                        records.extend(l.on_cycle(id, f, &rep, clock).into_iter().map(LogRecord::from_behavior));
                    }
                    self.out.cycles.entry(id).or_default().push(rep);
                }
            }

            if let (Some(s), Some(m)) = (r.sensing.as_mut(), r.sense_rx) {
                if let Some(u) = s.sense_cycle_step(f, &rx[&ModuleId::new(id, m)])? {
                    records.push(LogRecord::new(f, id, "sense-update", json!(u)));
                    self.out.sensing.entry(id).or_default().push(u);
                }
            }

            let mut sends: Vec<SendRequest> = Vec::new();
            if let Some(w) = r.inchworm.as_mut() {
                let ev = w.step(f, &mut r.state, &mac_events, &mut sends);
                records.extend(ev.into_iter().map(LogRecord::from_behavior));
            }
            if let Some(l) = r.lift.as_mut() {
                records.extend(l.step(f, &mut r.state).into_iter().map(LogRecord::from_behavior));
            }
            for s in sends {
                r.mac.send(s.data, &s.modules)?;
            }
            volume_changed |= r.state.volume_step(FRAME_SECONDS);
        }
        if volume_changed {
            self.refresh_geometry();
        }

        if f.is_multiple_of(VOLUME_TRACE_STRIDE) {
            for (&id, r) in &self.robots {
                self.out.volumes.push(VolumeSample {
                    t_s: f as f64 * FRAME_SECONDS,
                    robot_id: id,
                    volume: r.state.volume,
                    pump_on: r.state.pump_on,
                    valve_open: r.state.valve_open,
                });
            }
        }
        for t in &self.scenario.taps {
            let m: ModuleId = (*t).into();
            self.out.taps.entry(m).or_default().extend_from_slice(&rx[&m]);
        }

        records.sort_by(|a, b| (a.robot, &a.kind).cmp(&(b.robot, &b.kind)));
        self.out.events.extend(records);
        self.frame += 1;
        Ok(())
    }

    fn refresh_geometry(&mut self) {
        let robots = &self.robots;
        self.graph.refresh(|p| match p.params {
            PathParams::Membrane { .. } => {
                let s = &robots[&p.src.robot].state;
                PathParams::Membrane {
                    geodesic_m: s.layout.geodesic(p.src.module, p.dst.module, s.volume),
                }
            }
            PathParams::Air { dist_m, .. } => PathParams::Air {
                dist_m,
                vol_tx: robots[&p.src.robot].state.volume,
                vol_rx: robots[&p.dst.robot].state.volume,
            },
            j @ PathParams::Joint { .. } => j,
        });
    }
}

/// Loads nothing, validates, runs.
pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    scenario.validate()?;
    Engine::new(scenario.clone())?.run()
}
