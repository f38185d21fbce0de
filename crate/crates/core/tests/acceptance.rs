//! Acceptance suite. Runs without the test harness so every criterion prints
//! exactly one line; the process fails if any criterion fails or overruns
//! its time budget.
//!
//! `cargo test --test acceptance -- 5 9` runs only criteria 5 and 9.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use acoustic_swarm::channel::{
    frame_snr_db, measure_air_snr_db, AcousticPath, ChannelGraph, ChannelParams, ModuleId, PathParams, TxFrame,
    TxHistory, DEFAULT_NOISE_SIGMA,
};
use acoustic_swarm::link::{encode_packet, modulate, pdr_sweep, Demodulator, FskParams, PdrChannel, RxEvent};
use acoustic_swarm::signals::{
    goertzel_amp, spectral_frame, unit_tone, RingShaper, TransducerModel, CHIRP_BIN, FRAME_LEN, FRAME_SECONDS,
    MARK_BIN, N_BINS,
};
use acoustic_swarm::sim::demos::{inchworm_scenario, lift_scenario, ContactDemo, SyncDemo};
use acoustic_swarm::sim::{execute, load_scenario, run, LogRecord, RunOutput};
use acoustic_swarm::sync::offset_metric;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1 ------------------------------------------------------------------------

/// Noiseless loopback of a bit train with silent frames on both sides.
/// Bin-aligned tones repeat exactly every frame, so each distinct frame is
/// analysed once.
fn loopback(bits: &[u8], k: usize) -> Vec<RxEvent> {
    let params = FskParams::with_k(k);
    let tones = modulate(bits, &params).expect("valid bits");
    let analyse = |bin: Option<usize>| {
        let x: Vec<f64> = (0..FRAME_LEN as u64)
            .map(|n| bin.map_or(0.0, |b| unit_tone(b, n)))
            .collect();
        spectral_frame(&x, 0).unwrap()
    };
    let silent = analyse(None);
    let space = analyse(Some(params.space_bin));
    let mark = analyse(Some(params.mark_bin));
    let guard = 2 * k + 2;
    let mut demod = Demodulator::new(params);
    let mut events = Vec::new();
    for f in 0..tones.len() + 2 * guard {
        let frame = match f.checked_sub(guard).and_then(|i| tones.get(i)) {
            Some(t) if t.bin == params.mark_bin => &mark,
            Some(_) => &space,
            None => &silent,
        };
        events.extend(demod.rx_step(frame));
    }
    events
}

fn packets(events: &[RxEvent]) -> Vec<u8> {
    events
        .iter()
        .filter_map(|e| match e {
            RxEvent::Packet { data } => Some(*data),
            _ => None,
        })
        .collect()
}

fn codec_exhaustive() -> Outcome {
    let mut flips = 0;
    for k in [32, 16, 8, 4, 2, 1] {
        for data in 0u8..16 {
            let bits = encode_packet(data).map_err(|e| e.to_string())?;
            let got = packets(&loopback(&bits, k));
            ensure(got == vec![data], || format!("k={k} nibble {data:#x}: decoded {got:?}"))?;
            for i in 0..bits.len() {
                let mut bad = bits;
                bad[i] ^= 1;
                let got = packets(&loopback(&bad, k));
                ensure(got.is_empty(), || {
                    format!("k={k} nibble {data:#x} bit {i} flipped: accepted {got:?}")
                })?;
                flips += 1;
            }
        }
    }
    Ok(format!("96 round trips, {flips} flipped frames rejected"))
}

// 2 ------------------------------------------------------------------------

/// Steady mark tone from robot 0 across a joint to robot 1: mean bin
/// amplitude and the worst single-frame SNR.
fn joint_tone(n_contacts: u8, seed: u64, n_frames: u64) -> (f64, f64) {
    let tx = ModuleId::new(0, 0);
    let rx = ModuleId::new(1, 0);
    let paths = vec![AcousticPath::new(tx, rx, PathParams::Joint { n_contacts })];
    let graph = ChannelGraph::new(ChannelParams::default(), [tx, rx], paths, DEFAULT_NOISE_SIGMA, seed).unwrap();
    let model = TransducerModel::default();
    let mut shaper = RingShaper::new(&model);
    let mut history = TxHistory::new(0);
    let settle = 4;
    let (mut sum, mut worst) = (0.0, f64::INFINITY);
    for f in 0..settle + n_frames {
        let frame = TxFrame::render(&mut shaper, &model, f, |_| Some((MARK_BIN, 1.0)));
        history.push(f, BTreeMap::from([(tx, frame)]));
        if f >= settle {
            let s = spectral_frame(&graph.receive(rx, &history, f).samples, f).unwrap();
            sum += s.amp(MARK_BIN);
            worst = worst.min(frame_snr_db(std::slice::from_ref(&s), MARK_BIN));
        }
    }
    (sum / n_frames as f64, worst)
}

fn joint_attenuation() -> Outcome {
    let frames = 200;
    let (full, snr3) = joint_tone(3, 1, frames);
    let mut detail = Vec::new();
    let mut worst = snr3;
    for (n, want) in [(2u8, 0.65), (1u8, 0.55)] {
        let (amp, snr) = joint_tone(n, 1, frames);
        let ratio = amp / full;
        ensure((ratio - want).abs() <= 0.01, || {
            format!("n={n}: ratio {ratio:.4}, want {want}")
        })?;
        worst = worst.min(snr);
        detail.push(format!("n={n} {:.2}%", 100.0 * ratio));
    }
    ensure(worst >= 40.0, || format!("frame SNR fell to {worst:.1} dB"))?;
    Ok(format!("{}, worst frame SNR {worst:.1} dB", detail.join(", ")))
}

// 3 ------------------------------------------------------------------------

fn pdr_trend() -> Outcome {
    let ks = [32, 16, 8, 4, 2, 1];
    let channel = PdrChannel::default();
    let rows = pdr_sweep(&ks, 1000, &channel, 1).map_err(|e| e.to_string())?;
    let pdr: BTreeMap<usize, f64> = rows.iter().map(|r| (r.k, r.pdr)).collect();
    ensure(pdr[&8] >= 0.99, || format!("k=8 PDR {}", pdr[&8]))?;
    // ks run from low to high bitrate
    for w in ks.windows(2) {
        let (slow, fast) = (pdr[&w[0]], pdr[&w[1]]);
        ensure(fast <= slow + 0.005, || {
            format!("PDR rises from k={} ({slow}) to k={} ({fast})", w[0], w[1])
        })?;
    }
    ensure(pdr[&8] - pdr[&1] >= 0.02, || {
        format!("k=1 {} not 0.02 below k=8 {}", pdr[&1], pdr[&8])
    })?;
    let list: Vec<String> = ks.iter().map(|k| format!("k={k}:{:.3}", pdr[k])).collect();
    Ok(list.join(" "))
}

// 4 ------------------------------------------------------------------------

/// Receiver-to-neighbour amplitude ratio for a tone at `bin`: the sender's
/// neighbour sits 0.15 m away on the same membrane, the receiver across a
/// full joint.
fn crosstalk_ratio(bin: usize, seed: u64) -> f64 {
    let sender = ModuleId::new(0, 0);
    let neighbour = ModuleId::new(0, 1);
    let receiver = ModuleId::new(1, 0);
    let paths = vec![
        AcousticPath::new(sender, neighbour, PathParams::Membrane { geodesic_m: 0.15 }),
        AcousticPath::new(sender, receiver, PathParams::Joint { n_contacts: 3 }),
    ];
    let graph = ChannelGraph::new(
        ChannelParams::default(),
        [sender, neighbour, receiver],
        paths,
        DEFAULT_NOISE_SIGMA,
        seed,
    )
    .unwrap();
    let x: Vec<f64> = (0..FRAME_LEN as u64).map(|n| unit_tone(bin, n)).collect();
    let mut history = TxHistory::new(0);
    history.push(0, BTreeMap::from([(sender, TxFrame::tone(bin, x))]));
    let amp = |m| goertzel_amp(&graph.receive(m, &history, 0).samples, bin).unwrap();
    amp(receiver) / amp(neighbour)
}

fn crosstalk_ordering() -> Outcome {
    let trials = 20;
    let mean = |bin| (0..trials).map(|s| crosstalk_ratio(bin, s)).sum::<f64>() / trials as f64;
    let (mark, chirp) = (mean(MARK_BIN), mean(CHIRP_BIN));
    ensure(mark > chirp, || {
        format!("ratio at bin 97 {mark:.3} not above bin 31 {chirp:.3}")
    })?;
    Ok(format!("mean ratio bin 97 {mark:.3} > bin 31 {chirp:.3}"))
}

// 5 ------------------------------------------------------------------------

fn sync_convergence() -> Outcome {
    let demo = SyncDemo {
        tap: false,
        ..SyncDemo::default()
    };
    let s = demo.scenario();
    let out = run(&s).map_err(|e| e.to_string())?;
    let metric = offset_metric(&out.onsets, s.params.pco.period());
    let frame_ms = FRAME_SECONDS * 1e3;
    for c in 5..=10 {
        let ms = metric
            .get(&c)
            .copied()
            .ok_or_else(|| format!("no onsets for cycle {c}"))?;
        ensure(ms < frame_ms, || format!("cycle {c}: offset {ms:.3} ms"))?;
    }
    let trail: Vec<String> = (0..=10)
        .filter_map(|c| metric.get(&c))
        .map(|ms| format!("{ms:.1}"))
        .collect();
    Ok(format!("offsets ms by cycle: {}", trail.join(" ")))
}

// 6 ------------------------------------------------------------------------

fn air_snr() -> Outcome {
    let params = ChannelParams::default();
    let model = TransducerModel::default();
    let mut seen = Vec::new();
    for seed in 1..=5 {
        let snr = measure_air_snr_db(&params, &model, DEFAULT_NOISE_SIGMA, seed, 100);
        ensure((snr - 7.0).abs() <= 0.5, || format!("seed {seed}: {snr:.2} dB"))?;
        seen.push(format!("{snr:.2}"));
    }
    Ok(format!("SNR dB over 100 frames, seeds 1-5: {}", seen.join(" ")))
}

// 7 ------------------------------------------------------------------------

fn contact_sensing() -> Outcome {
    let demo = ContactDemo::default();
    let (on, off) = demo.contact_s.unwrap();
    let s = demo.scenario();
    let region = s.robots[0].sensing.clone().unwrap();
    let (touched, other) = (region.tx_ring[0], region.tx_ring[1]);
    let out = run(&s).map_err(|e| e.to_string())?;
    let ups = out.sensing.values().next().ok_or("no sensing updates")?;
    let after = |t: f64| ups.iter().filter(move |u| u.t_s > t + 1e-9).take(2);

    let hit = after(on)
        .find(|u| u.means[&touched] < 0.1 * u.baselines[&touched] && u.flags.contains(&touched))
        .ok_or_else(|| format!("source {touched} not below 10% within 2 updates of t={on}"))?;
    let dropped = hit.means[&touched] / hit.baselines[&touched];
    after(off)
        .find(|u| u.flags.is_empty())
        .ok_or_else(|| format!("no recovery within 2 updates of t={off}"))?;
    ensure(ups.iter().all(|u| !u.flags.contains(&other)), || {
        format!("source {other} falsely flagged")
    })?;

    let quiet = ContactDemo {
        contact_s: None,
        duration_s: 62.0,
        ..demo
    };
    let out = run(&quiet.scenario()).map_err(|e| e.to_string())?;
    let ups = out.sensing.values().next().ok_or("no sensing updates")?;
    let checked = ups.iter().filter(|u| !u.baselines.is_empty()).count();
    ensure(checked >= 60, || format!("only {checked} contact-free updates"))?;
    let false_flags = ups.iter().filter(|u| !u.flags.is_empty()).count();
    ensure(false_flags == 0, || format!("{false_flags} false flags in 60 s"))?;
    Ok(format!(
        "drop to {:.1}% at t={:.0} s, recovered, 0 false flags over {checked} updates",
        100.0 * dropped,
        hit.t_s
    ))
}

// 8 ------------------------------------------------------------------------

fn first(out: &RunOutput, kind: &str, robot: usize) -> Option<u64> {
    out.events_of(kind).find(|e| e.robot == robot).map(|e| e.frame)
}

fn inchworm_ordering() -> Outcome {
    for seed in 1..=10 {
        let out = run(&inchworm_scenario(3, seed)).map_err(|e| e.to_string())?;
        for pair in [(1, 2), (2, 3)] {
            let start_a = first(&out, "inflate-start", pair.0).ok_or(format!("seed {seed}: robot {} idle", pair.0))?;
            let start_b = first(&out, "inflate-start", pair.1).ok_or(format!("seed {seed}: robot {} idle", pair.1))?;
            let reached_a = first(&out, "inflate-target-reached", pair.0)
                .ok_or(format!("seed {seed}: robot {} never reached target", pair.0))?;
            ensure(start_a < start_b, || {
                format!("seed {seed}: robot {} started after {}", pair.0, pair.1)
            })?;
            ensure(reached_a < start_b, || {
                format!(
                    "seed {seed}: robot {} started before robot {} reached target",
                    pair.1, pair.0
                )
            })?;
        }
    }
    Ok("10 seeds ordered 1<2<3, each after its predecessor reached target".into())
}

// 9 ------------------------------------------------------------------------

fn lift_simultaneity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 1..=10 {
        let out = run(&lift_scenario(3, 300.0, seed)).map_err(|e| e.to_string())?;
        for e in out.events_of("lift-start") {
            let off = e.detail["offset_s"].as_f64().unwrap_or(f64::NAN);
            ensure((0.0..=0.3).contains(&off), || format!("seed {seed}: offset {off}"))?;
        }
        let starts: Vec<&LogRecord> = out.events_of("inflate-start").collect();
        ensure(starts.len() == 3, || {
            format!("seed {seed}: {} robots inflated", starts.len())
        })?;
        for st in &starts {
            let streak = out
                .events_of("sync-period")
                .filter(|e| e.robot == st.robot && e.frame <= st.frame)
                .filter_map(|e| e.detail["streak"].as_u64())
                .max()
                .unwrap_or(0);
            ensure(streak >= 4, || {
                format!("seed {seed}: robot {} inflated after streak {streak}", st.robot)
            })?;
        }
        let ts: Vec<f64> = starts.iter().map(|e| e.t).collect();
        let gap = ts.iter().cloned().fold(f64::MIN, f64::max) - ts.iter().cloned().fold(f64::MAX, f64::min);
        ensure(gap <= FRAME_SECONDS + 1e-9, || {
            format!("seed {seed}: inflate-start gap {:.3} ms", gap * 1e3)
        })?;
        worst = worst.max(gap);
    }
    Ok(format!("10 seeds, max inflate-start gap {:.2} ms", worst * 1e3))
}

// 10 -----------------------------------------------------------------------

fn direct_dft_amp(x: &[f64], bin: usize) -> f64 {
    let n = x.len() as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let ph = TAU * ((bin * i) % x.len()) as f64 / n;
        re += v * ph.cos();
        im -= v * ph.sin();
    }
    2.0 * re.hypot(im) / n
}

fn dsp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst_bin, mut worst_parseval): (f64, f64) = (0.0, 0.0);
    for s in 0..100 {
        let x: Vec<f64> = (0..FRAME_LEN).map(|_| StandardNormal.sample(&mut rng)).collect();
        for bin in 0..N_BINS {
            let want = direct_dft_amp(&x, bin);
            let got = goertzel_amp(&x, bin).map_err(|e| e.to_string())?;
            let rel = (got - want).abs() / want;
            ensure(rel < 1e-9, || format!("stream {s} bin {bin}: goertzel {got} vs {want}"))?;
            worst_bin = worst_bin.max(rel);
        }
        let time: f64 = x.iter().map(|v| v * v).sum();
        let spec = spectral_frame(&x, s).map_err(|e| e.to_string())?.energy();
        let rel = (spec - time).abs() / time;
        ensure(rel < 1e-9, || format!("stream {s}: Parseval {spec} vs {time}"))?;
        worst_parseval = worst_parseval.max(rel);
    }
    Ok(format!(
        "max rel error goertzel {worst_bin:.1e}, Parseval {worst_parseval:.1e}"
    ))
}

// 11 -----------------------------------------------------------------------

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn determinism() -> Outcome {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut names: Vec<_> = fs::read_dir(&fixtures)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    ensure(!names.is_empty(), || "no fixtures".into())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut total = 0;
    for path in &names {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let s = load_scenario(&fs::read_to_string(path).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let runs: Vec<_> = (0..2)
            .map(|i| {
                let dir = tmp.path().join(format!("{stem}-{i}"));
                execute(&s, &dir).map(|_| dir_bytes(&dir))
            })
            .collect::<Result<_, _>>()
            .map_err(|e| format!("{stem}: {e}"))?;
        ensure(runs[0].len() >= 2, || {
            format!("{stem}: only {} output files", runs[0].len())
        })?;
        ensure(runs[0] == runs[1], || format!("{stem}: outputs differ between runs"))?;
        total += runs[0].len();
    }
    Ok(format!(
        "{} fixtures, {total} files byte-identical across two runs",
        names.len()
    ))
}

// ---------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

const fn crit(id: u32, name: &'static str, limit_s: u64, check: fn() -> Outcome) -> Criterion {
    Criterion {
        id,
        name,
        limit: Duration::from_secs(limit_s),
        check,
    }
}

const CRITERIA: [Criterion; 11] = [
    crit(1, "packet codec exhaustive", 1, codec_exhaustive),
    crit(2, "joint attenuation", 5, joint_attenuation),
    crit(3, "PDR trend", 120, pdr_trend),
    crit(4, "crosstalk ordering", 10, crosstalk_ordering),
    crit(5, "sync convergence", 30, sync_convergence),
    crit(6, "air SNR calibration", 5, air_snr),
    crit(7, "contact sensing", 30, contact_sensing),
    crit(8, "inchworm ordering", 60, inchworm_ordering),
    crit(9, "lift simultaneity", 120, lift_simultaneity),
    crit(10, "DSP oracle equivalence", 5, dsp_oracle),
    crit(11, "determinism", 120, determinism),
];

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t0 = Instant::now();
        let result = (c.check)();
        let took = t0.elapsed();
        let (verdict, detail) = match result {
            Ok(d) if took <= c.limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("over time budget; {d}")),
            Err(e) => ("FAIL", e),
        };
        if verdict == "FAIL" {
            failed += 1;
        }
        println!(
            "criterion {:>2} {verdict} {:<24} {:>7.2}s / {:>3}s  {detail}",
            c.id,
            c.name,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
