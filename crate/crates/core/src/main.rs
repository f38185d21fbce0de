use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use acoustic_swarm::channel::{calibrate_coupling_ref, measure_air_snr_db, ChannelParams, DEFAULT_NOISE_SIGMA};
use acoustic_swarm::link::PdrChannel;
use acoustic_swarm::signals::TransducerModel;
use acoustic_swarm::sim::demos::{inchworm_scenario, lift_scenario, pdr_scenario, ContactDemo, SyncDemo};
use acoustic_swarm::sim::{execute, experiment_failures, load_scenario, Outcome, PdrSpec, Scenario};
use acoustic_swarm::Error;

#[derive(Parser)]
#[command(
    name = "acoustic-swarm",
    version,
    about = "Acoustic link, sync and sensing simulator for inflatable modular robots"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Seed for every random draw in the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn seed(&self, default: u64) -> u64 {
        self.seed.unwrap_or(default)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Packet delivery ratio against frames per symbol over one joint.
    PdrSweep {
        #[arg(long, value_delimiter = ',', default_value = "32,16,8,4,2,1",
              value_parser = clap::value_parser!(u64).range(1..))]
        k_list: Vec<u64>,
        #[arg(long, default_value_t = 1000)]
        packets: usize,
        /// Receiver SNR in dB; `inf` for a noiseless channel.
        #[arg(long, default_value_t = 40.0)]
        snr_db: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Chirp synchronization of robots one metre apart through the air.
    SyncDemo {
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        robots: u64,
        #[arg(long, default_value_t = 250.0)]
        offset_ms: f64,
        #[arg(long, default_value_t = 2000.0)]
        period_ms: f64,
        #[arg(long, default_value_t = 10)]
        cycles: u64,
        /// Skip the WAV tap of robot 1.
        #[arg(long)]
        no_wav: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Sensitized region with a contact on one source.
    ContactDemo {
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
        sources: u64,
        #[arg(long, default_value_t = 2.0)]
        contact_at: f64,
        #[arg(long, default_value_t = 6.0)]
        release_at: f64,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Inflation wave along a chain of joined robots.
    Inchworm {
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
        robots: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Synchronized inflation after chirp synchronization.
    Lift {
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
        robots: u64,
        #[arg(long, default_value_t = 300.0)]
        max_offset_ms: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Bisects the air coupling constant to the 7 dB SNR target.
    CalibrateAir {
        #[arg(long, default_value_t = 1000)]
        frames: usize,
        #[arg(long, default_value_t = DEFAULT_NOISE_SIGMA)]
        sigma: f64,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Usage(String),
    Experiment(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Scenario(_) | Error::Parse(_) | Error::InvalidSymbolLength => Failure::Usage(e.to_string()),
            other => Failure::Experiment(other.to_string()),
        }
    }
}

fn run_scenario(s: &Scenario, out: &Path) -> Result<(), Failure> {
    match execute(s, out)? {
        Outcome::Pdr(rows) => {
            for r in rows {
                println!("k={:<2} bitrate={:>8.3} bps pdr={:.3}", r.k, r.bitrate_bps, r.pdr);
            }
        }
        Outcome::Run(o) => {
            println!("{} frames, {} events", o.frames, o.events.len());
            let fails = experiment_failures(s, &o);
            if !fails.is_empty() {
                return Err(Failure::Experiment(fails.join("\n")));
            }
        }
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { scenario, common } => {
            let text =
                fs::read_to_string(&scenario).map_err(|e| Failure::Usage(format!("{}: {e}", scenario.display())))?;
            let mut s = load_scenario(&text)?;
            if let Some(seed) = common.seed {
                s.seed = seed;
            }
            run_scenario(&s, &common.out("run"))
        }
        Command::PdrSweep {
            k_list,
            packets,
            snr_db,
            common,
        } => {
            let mut s = pdr_scenario(common.seed(1));
            s.pdr = Some(PdrSpec {
                k_list: k_list.into_iter().map(|k| k as usize).collect(),
                packets,
                channel: PdrChannel {
                    snr_db: snr_db.is_finite().then_some(snr_db),
                    ..Default::default()
                },
            });
            run_scenario(&s, &common.out("pdr-sweep"))
        }
        Command::SyncDemo {
            robots,
            offset_ms,
            period_ms,
            cycles,
            no_wav,
            common,
        } => {
            if period_ms <= 100.0 || offset_ms < 0.0 {
                return Err(Failure::Usage(
                    "period must exceed the 100 ms chirp and offset be non-negative".into(),
                ));
            }
            let s = SyncDemo {
                robots: robots as usize,
                offset_ms,
                period_ms,
                cycles,
                seed: common.seed(1),
                tap: !no_wav,
            }
            .scenario();
            run_scenario(&s, &common.out("sync-demo"))
        }
        Command::ContactDemo {
            sources,
            contact_at,
            release_at,
            duration,
            common,
        } => {
            let s = ContactDemo {
                sources: sources as usize,
                contact_s: Some((contact_at, release_at)),
                duration_s: duration,
                seed: common.seed(1),
            }
            .scenario();
            run_scenario(&s, &common.out("contact-demo"))
        }
        Command::Inchworm { robots, common } => {
            let s = inchworm_scenario(robots as usize, common.seed(1));
            run_scenario(&s, &common.out("inchworm"))
        }
        Command::Lift {
            robots,
            max_offset_ms,
            common,
        } => {
            let s = lift_scenario(robots as usize, max_offset_ms, common.seed(1));
            run_scenario(&s, &common.out("lift"))
        }
        Command::CalibrateAir { frames, sigma, common } => {
            let seed = common.seed(0);
            let params = ChannelParams::default();
            let t = TransducerModel::default();
            let c = calibrate_coupling_ref(&params, &t, sigma, seed, frames);
            let mut p = params;
            p.air.coupling_ref = c;
            let snr = measure_air_snr_db(&p, &t, sigma, seed, frames);
            println!("coupling_ref = {c:.4e} (measured {snr:.3} dB over {frames} frames)");
            let out = common.out("calibrate-air");
            fs::create_dir_all(&out).map_err(Error::from)?;
            let doc =
                serde_json::json!({ "coupling_ref": c, "snr_db": snr, "frames": frames, "sigma": sigma, "seed": seed });
            fs::write(out.join("calibration.json"), format!("{doc:#}\n")).map_err(Error::from)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Experiment(m)) => {
            eprintln!("experiment failed:\n{m}");
            ExitCode::from(1)
        }
    }
}
