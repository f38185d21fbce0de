use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::engine::{LogRecord, RunOutput};
use super::scenario::{Experiment, Scenario};
use crate::channel::ModuleId;
use crate::error::Result;
use crate::sensing::write_sensing_csv;
use crate::signals::{write_wav, SampleStream};
use crate::sync::write_sync_csv;

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputFiles {
    pub events: PathBuf,
    pub trace: Option<PathBuf>,
    pub audio: Vec<PathBuf>,
}

pub fn write_events_jsonl<W: Write>(mut w: W, events: &[LogRecord]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn write_volume_csv<W: Write>(mut w: W, out: &RunOutput) -> Result<()> {
    writeln!(w, "t_s,robot_id,volume_m3,pump_on,valve_open")?;
    for v in &out.volumes {
        writeln!(
            w,
            "{:.4},{},{:.6},{},{}",
            v.t_s,
            v.robot_id,
            v.volume,
            u8::from(v.pump_on),
            u8::from(v.valve_open)
        )?;
    }
    Ok(())
}

/// Writes `events.jsonl`, `trace.csv` and `audio/<module>.wav` under `dir`.
///
/// The trace is the sync trace for sync and lift runs, the sensing trace for
/// contact runs and a volume trace otherwise.
pub fn write_outputs(dir: &Path, scenario: &Scenario, out: &RunOutput) -> Result<OutputFiles> {
    fs::create_dir_all(dir)?;
    let events = dir.join("events.jsonl");
    let mut w = BufWriter::new(File::create(&events)?);
    write_events_jsonl(&mut w, &out.events)?;
    w.flush()?;

    let trace = dir.join("trace.csv");
    let mut w = BufWriter::new(File::create(&trace)?);
    match scenario.experiment {
        Experiment::Sync | Experiment::Lift => {
            write_sync_csv(&mut w, &out.sync_rows(scenario.params.pco.period()))?;
        }
        Experiment::Contact => {
            writeln!(w, "t_s,rx,tx,mean_amp,baseline,flag")?;
            for (&robot, updates) in &out.sensing {
                let rx = scenario
                    .robot(robot)
                    .and_then(|r| r.sensing.as_ref())
                    .map_or(0, |s| s.rx_module);
                let mut buf = Vec::new();
                write_sensing_csv(
                    &mut buf,
                    &ModuleId::new(robot, rx).to_string(),
                    |m| ModuleId::new(robot, m).to_string(),
                    updates,
                )?;
                // the header is written once for all robots
                let body = buf.splitn(2, |&b| b == b'\n').nth(1).unwrap_or(&[]);
                w.write_all(body)?;
            }
        }
        _ => write_volume_csv(&mut w, out)?,
    }
    w.flush()?;

    let mut audio = Vec::new();
    if !out.taps.is_empty() {
        let adir = dir.join("audio");
        fs::create_dir_all(&adir)?;
        for (m, samples) in &out.taps {
            let p = adir.join(format!("{m}.wav"));
            write_wav(BufWriter::new(File::create(&p)?), &SampleStream::new(samples.clone()))?;
            audio.push(p);
        }
    }
    Ok(OutputFiles {
        events,
        trace: Some(trace),
        audio,
    })
}
