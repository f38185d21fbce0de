use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelParams, ModuleId, DEFAULT_NOISE_SIGMA, VOLUME_REF};
use crate::error::{Error, Result};
use crate::link::{FskParams, MacConfig, PdrChannel};
use crate::robots::{InchwormConfig, LiftConfig, ModuleLayout, DEFAULT_PUMP_RATE};
use crate::sensing::SensitizedRegion;
use crate::signals::{TransducerModel, FRAME_LEN, SAMPLE_RATE};
use crate::sync::PcoParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    #[default]
    Custom,
    Pdr,
    Sync,
    Contact,
    Inchworm,
    Lift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleRef {
    pub robot: usize,
    pub module: usize,
}

impl From<ModuleRef> for ModuleId {
    fn from(m: ModuleRef) -> Self {
        ModuleId::new(m.robot, m.module)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub a: ModuleRef,
    pub b: ModuleRef,
    #[serde(default = "default_contacts")]
    pub n_contacts: u8,
}

fn default_contacts() -> u8 {
    3
}

/// Free-running oscillator from t = 0, cycle 0 starting at `offset_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncSpec {
    #[serde(default)]
    pub offset_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub id: usize,
    #[serde(default = "default_modules")]
    pub n_modules: usize,
    #[serde(default)]
    pub north_pole: bool,
    #[serde(default = "default_volume")]
    pub volume: f64,
    #[serde(default = "default_pump")]
    pub pump_rate: f64,
    /// Centre position, m.
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default)]
    pub inchworm: Option<InchwormConfig>,
    #[serde(default)]
    pub sync: Option<SyncSpec>,
    #[serde(default)]
    pub sensing: Option<SensitizedRegion>,
}

fn default_modules() -> usize {
    4
}
fn default_volume() -> f64 {
    VOLUME_REF
}
fn default_pump() -> f64 {
    DEFAULT_PUMP_RATE
}

impl RobotSpec {
    pub fn layout(&self) -> ModuleLayout {
        ModuleLayout::with_poles(self.n_modules, self.north_pole, false)
    }

    pub fn module_count(&self) -> usize {
        self.n_modules + usize::from(self.north_pole)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScriptAction {
    /// Hands a command nibble to the robot's behaviour as if received on
    /// its rear module.
    Command {
        robot: usize,
        data: u8,
    },
    /// Queues a packet on the robot's MAC.
    Send {
        robot: usize,
        data: u8,
        modules: Vec<usize>,
    },
    Contact {
        robot: usize,
        module: usize,
        on: bool,
    },
    /// Starts a synchronized lift. Offsets are drawn uniformly from
    /// `[0, max_offset_s]` unless given per robot.
    Lift {
        #[serde(default)]
        robots: Option<Vec<usize>>,
        #[serde(default = "default_max_offset")]
        max_offset_s: f64,
        #[serde(default)]
        offsets_s: Option<Vec<f64>>,
    },
}

fn default_max_offset() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    pub t: f64,
    #[serde(flatten)]
    pub action: ScriptAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    DEFAULT_NOISE_SIGMA
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma: DEFAULT_NOISE_SIGMA,
        }
    }
}

/// Every tunable constant, each with its documented default.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub channel: ChannelParams,
    pub transducer: TransducerModel,
    pub fsk: FskParams,
    pub mac: MacConfig,
    pub pco: PcoParams,
    pub lift: LiftConfig,
}

/// Settings for the `pdr` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdrSpec {
    pub k_list: Vec<usize>,
    pub packets: usize,
    pub channel: PdrChannel,
}

impl Default for PdrSpec {
    fn default() -> Self {
        PdrSpec {
            k_list: vec![32, 16, 8, 4, 2, 1],
            packets: 1000,
            channel: PdrChannel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub params: SimParams,
    #[serde(default)]
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub script: Vec<ScriptEvent>,
    /// Modules whose received signal is written to WAV.
    #[serde(default)]
    pub taps: Vec<ModuleRef>,
    /// End the run once every behaviour has finished.
    #[serde(default)]
    pub stop_when_done: bool,
    #[serde(default)]
    pub pdr: Option<PdrSpec>,
}

impl Scenario {
    /// Frames covering `duration_s`, rounded up.
    pub fn n_frames(&self) -> u64 {
        let samples = (self.duration_s * SAMPLE_RATE as f64).round() as u64;
        samples.div_ceil(FRAME_LEN as u64)
    }

    pub fn robot(&self, id: usize) -> Option<&RobotSpec> {
        self.robots.iter().find(|r| r.id == id)
    }

    /// Every problem found, each prefixed with the path of the offending field.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(positive(self.duration_s) && self.duration_s.is_finite()) {
            errs.push(format!("duration_s: must be positive, got {}", self.duration_s));
        }
        if !non_negative(self.noise.sigma) {
            errs.push("noise.sigma: must be non-negative".to_string());
        }
        if let Err(e) = self.params.fsk.validate() {
            errs.push(format!("params.fsk: {e}"));
        }
        let mut modules: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, r) in self.robots.iter().enumerate() {
            if modules.insert(r.id, r.module_count()).is_some() {
                errs.push(format!("robots[{i}].id: duplicate robot id {}", r.id));
            }
            if r.n_modules == 0 {
                errs.push(format!("robots[{i}].n_modules: must be at least 1"));
            }
            if !(0.05..=0.5).contains(&r.volume) {
                errs.push(format!("robots[{i}].volume: {} outside [0.05, 0.5]", r.volume));
            }
            if !non_negative(r.pump_rate) {
                errs.push(format!("robots[{i}].pump_rate: must be non-negative"));
            }
            for (j, q) in self.robots[..i].iter().enumerate() {
                if q.position == r.position {
                    errs.push(format!("robots[{i}].position: coincides with robots[{j}]"));
                }
            }
            let n = r.module_count();
            if let Some(w) = &r.inchworm {
                if w.rear_module >= n {
                    errs.push(format!("robots[{i}].inchworm.rear_module: no module {}", w.rear_module));
                }
                if w.front_module.is_some_and(|m| m >= n) {
                    errs.push(format!(
                        "robots[{i}].inchworm.front_module: no module {}",
                        w.front_module.unwrap_or(0)
                    ));
                }
            }
            if let Some(s) = &r.sensing {
                if let Err(e) = s.validate() {
                    errs.push(format!("robots[{i}].sensing: {e}"));
                }
                for &m in s.tx_ring.iter().chain([&s.rx_module]) {
                    if m >= n {
                        errs.push(format!("robots[{i}].sensing: no module {m}"));
                    }
                }
            }
        }
        let exists = |m: &ModuleRef| modules.get(&m.robot).is_some_and(|&n| m.module < n);
        let mut used: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (i, j) in self.joints.iter().enumerate() {
            for (side, m) in [("a", &j.a), ("b", &j.b)] {
                if !exists(m) {
                    errs.push(format!(
                        "joints[{i}].{side}: module r{}m{} does not exist",
                        m.robot, m.module
                    ));
                } else if let Some(prev) = used.insert((m.robot, m.module), i) {
                    errs.push(format!(
                        "joints[{i}].{side}: module r{}m{} already joined by joints[{prev}]",
                        m.robot, m.module
                    ));
                }
            }
            if j.a.robot == j.b.robot {
                errs.push(format!("joints[{i}]: joins robot {} to itself", j.a.robot));
            }
            if j.n_contacts > 3 {
                errs.push(format!("joints[{i}].n_contacts: {} outside 0..=3", j.n_contacts));
            }
        }
        for (i, t) in self.taps.iter().enumerate() {
            if !exists(t) {
                errs.push(format!("taps[{i}]: module r{}m{} does not exist", t.robot, t.module));
            }
        }
        for (i, ev) in self.script.iter().enumerate() {
            if !non_negative(ev.t) {
                errs.push(format!("script[{i}].t: must be non-negative"));
            }
            let robot_ok = |id: usize| modules.contains_key(&id);
            match &ev.action {
                ScriptAction::Command { robot, data } => {
                    if !robot_ok(*robot) {
                        errs.push(format!("script[{i}].robot: unknown robot {robot}"));
                    } else if self.robot(*robot).is_some_and(|r| r.inchworm.is_none()) {
                        errs.push(format!("script[{i}].robot: robot {robot} has no inchworm behaviour"));
                    }
                    if *data > 0xF {
                        errs.push(format!("script[{i}].data: {data} does not fit in four bits"));
                    }
                }
                ScriptAction::Send {
                    robot,
                    data,
                    modules: ms,
                } => {
                    if !robot_ok(*robot) {
                        errs.push(format!("script[{i}].robot: unknown robot {robot}"));
                    }
                    if *data >= 0xF {
                        errs.push(format!("script[{i}].data: {data} is not an application nibble"));
                    }
                    let n = modules.get(robot).copied().unwrap_or(0);
                    if ms.is_empty() || ms.iter().any(|&m| m >= n) {
                        errs.push(format!("script[{i}].modules: must name existing modules"));
                    }
                }
                ScriptAction::Contact { robot, module, .. } => {
                    if !exists(&ModuleRef {
                        robot: *robot,
                        module: *module,
                    }) {
                        errs.push(format!("script[{i}]: module r{robot}m{module} does not exist"));
                    }
                }
                ScriptAction::Lift {
                    robots,
                    max_offset_s,
                    offsets_s,
                } => {
                    let ids: Vec<usize> = robots.clone().unwrap_or_else(|| modules.keys().copied().collect());
                    for id in &ids {
                        if !robot_ok(*id) {
                            errs.push(format!("script[{i}].robots: unknown robot {id}"));
                        }
                    }
                    if !non_negative(*max_offset_s) {
                        errs.push(format!("script[{i}].max_offset_s: must be non-negative"));
                    }
                    if let Some(o) = offsets_s {
                        if o.len() != ids.len() {
                            errs.push(format!("script[{i}].offsets_s: expected {} offsets", ids.len()));
                        }
                        if o.iter().any(|x| !non_negative(*x)) {
                            errs.push(format!("script[{i}].offsets_s: offsets must be non-negative"));
                        }
                    }
                    if BTreeSet::from_iter(&ids).len() != ids.len() {
                        errs.push(format!("script[{i}].robots: duplicate robot"));
                    }
                }
            }
        }
        if self.experiment == Experiment::Pdr && self.pdr.as_ref().is_some_and(|p| p.k_list.contains(&0)) {
            errs.push("pdr.k_list: frames per symbol must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Scenario(errs))
        }
    }
}

// NaN fails both
fn positive(x: f64) -> bool {
    x > 0.0
}

fn non_negative(x: f64) -> bool {
    x >= 0.0
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let s: Scenario = serde_json::from_str(text)?;
    s.validate()?;
    Ok(s)
}
