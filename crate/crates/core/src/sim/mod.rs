//! Deterministic frame-major engine: scenario files in, event log and
//! traces out.

pub mod demos;
mod engine;
mod output;
mod scenario;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

pub use engine::{build_graph, run, Engine, LogRecord, RunOutput, VolumeSample, SYNC_MODULE, VOLUME_TRACE_STRIDE};
pub use output::{write_events_jsonl, write_outputs, OutputFiles};
pub use scenario::{
    load_scenario, Experiment, JointSpec, ModuleRef, NoiseSpec, PdrSpec, RobotSpec, Scenario, ScriptAction,
    ScriptEvent, SimParams, SyncSpec,
};

use crate::error::Result;
use crate::link::{pdr_sweep, write_pdr_csv, PdrResult};
use crate::signals::FRAME_SECONDS;
use crate::sync::offset_metric;

/// Result of [`execute`]: the engine output, or the sweep for PDR runs.
#[derive(Debug, Clone)]
pub enum Outcome {
    Run(Box<RunOutput>),
    Pdr(Vec<PdrResult>),
}

/// Runs a validated scenario and writes its outputs under `dir`.
pub fn execute(scenario: &Scenario, dir: &Path) -> Result<Outcome> {
    scenario.validate()?;
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("scenario.json"))?);
    serde_json::to_writer_pretty(&mut w, scenario)?;
    w.write_all(b"\n")?;
    w.flush()?;
    if scenario.experiment == Experiment::Pdr {
        let spec = scenario.pdr.clone().unwrap_or_default();
        let rows = pdr_sweep(&spec.k_list, spec.packets, &spec.channel, scenario.seed)?;
        let mut w = BufWriter::new(File::create(dir.join("trace.csv"))?);
        write_pdr_csv(&mut w, &rows)?;
        w.flush()?;
        let records: Vec<LogRecord> = rows
            .iter()
            .map(|r| LogRecord::new(0, 0, "pdr-result", serde_json::json!(r)))
            .collect();
        let mut w = BufWriter::new(File::create(dir.join("events.jsonl"))?);
        write_events_jsonl(&mut w, &records)?;
        w.flush()?;
        return Ok(Outcome::Pdr(rows));
    }
    let out = run(scenario)?;
    write_outputs(dir, scenario, &out)?;
    Ok(Outcome::Run(Box::new(out)))
}

/// Experiment-level problems in a finished run; empty means success.
pub fn experiment_failures(scenario: &Scenario, out: &RunOutput) -> Vec<String> {
    let mut fails = Vec::new();
    match scenario.experiment {
        Experiment::Lift => {
            for e in out.events_of("lift-abort") {
                fails.push(format!("robot {} aborted the lift at t={:.3}", e.robot, e.t));
            }
            let starts: Vec<&LogRecord> = out.events_of("inflate-start").collect();
            let lifting = scenario
                .script
                .iter()
                .any(|s| matches!(s.action, ScriptAction::Lift { .. }));
            if lifting && fails.is_empty() && starts.len() < scenario.robots.len() {
                fails.push(format!(
                    "only {} of {} robots inflated",
                    starts.len(),
                    scenario.robots.len()
                ));
            }
            if let (Some(a), Some(b)) = (
                starts.iter().map(|e| e.frame).min(),
                starts.iter().map(|e| e.frame).max(),
            ) {
                if b - a > 1 {
                    fails.push(format!("inflation spread over {} frames", b - a));
                }
            }
        }
        Experiment::Inchworm => {
            let first = |kind: &str, robot: usize| out.events_of(kind).find(|e| e.robot == robot).map(|e| e.frame);
            let ids: Vec<usize> = scenario.robots.iter().map(|r| r.id).collect();
            for w in ids.windows(2) {
                match (first("inflate-target-reached", w[0]), first("inflate-start", w[1])) {
                    (Some(a), Some(b)) if b > a => {}
                    (_, None) => fails.push(format!("robot {} never inflated", w[1])),
                    _ => fails.push(format!(
                        "robot {} inflated before robot {} reached its target",
                        w[1], w[0]
                    )),
                }
            }
        }
        Experiment::Sync => {
            if scenario.robots.len() < 2 {
                fails.push("a lone robot has no peer to synchronize with".into());
            }
            let metric = offset_metric(&out.onsets, scenario.params.pco.period());
            if let Some((c, ms)) = metric.last_key_value() {
                if *ms >= FRAME_SECONDS * 1e3 {
                    fails.push(format!("not synchronized by cycle {c}: offset {ms:.3} ms"));
                }
            }
        }
        _ => {}
    }
    fails
}
