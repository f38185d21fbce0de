use std::fs;
use std::path::Path;
use std::time::Instant;

use acoustic_swarm::link::measure_pdr;
use acoustic_swarm::sim::demos::{fixtures, inchworm_scenario, minimal_scenario, pdr_scenario, SyncDemo};
use acoustic_swarm::sim::{execute, load_scenario, run, Experiment, PdrSpec, Scenario};
use acoustic_swarm::Error;

fn fixture_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}

fn errors(text: &str) -> Vec<String> {
    match load_scenario(text) {
        Err(Error::Scenario(e)) => e,
        other => panic!("expected validation errors, got {other:?}"),
    }
}

#[test]
fn shipped_fixtures_match_the_builders() {
    for (name, built) in fixtures() {
        let text = fs::read_to_string(fixture_dir().join(format!("{name}.json"))).unwrap();
        assert_eq!(load_scenario(&text).unwrap(), built, "fixtures/{name}.json is stale");
    }
}

#[test]
fn minimal_document_fills_defaults() {
    let text = r#"{
        "duration_s": 1.0,
        "robots": [{ "id": 0 }, { "id": 1, "position": [0.8, 0, 0] }],
        "joints": [{ "a": { "robot": 0, "module": 0 }, "b": { "robot": 1, "module": 2 } }]
    }"#;
    let s = load_scenario(text).unwrap();
    assert_eq!(s, minimal_scenario());
    assert_eq!(s.experiment, Experiment::Custom);
    assert_eq!(s.robots[0].n_modules, 4);
    assert_eq!(s.joints[0].n_contacts, 3);
}

#[test]
fn validation_names_the_offending_fields() {
    let e = errors(
        r#"{ "duration_s": 1, "robots": [{ "id": 0 }, { "id": 1, "position": [1, 0, 0] }],
        "joints": [{ "a": { "robot": 0, "module": 0 }, "b": { "robot": 1, "module": 9 } }] }"#,
    );
    assert_eq!(e.len(), 1);
    assert!(e[0].starts_with("joints[0].b"), "{e:?}");

    let e = errors(
        r#"{ "duration_s": 1, "robots": [{ "id": 0 }, { "id": 1, "position": [1, 0, 0] },
        { "id": 2, "position": [2, 0, 0] }],
        "joints": [{ "a": { "robot": 0, "module": 0 }, "b": { "robot": 1, "module": 0 } },
                   { "a": { "robot": 2, "module": 0 }, "b": { "robot": 0, "module": 0 } }] }"#,
    );
    assert!(
        e.iter()
            .any(|m| m.starts_with("joints[1].b") && m.contains("already joined by joints[0]")),
        "{e:?}"
    );

    // every problem is reported, not just the first
    let e = errors(
        r#"{ "duration_s": 0, "robots": [{ "id": 0, "volume": 0.9 }, { "id": 0 }],
        "script": [{ "t": 1, "action": "contact", "robot": 3, "module": 0, "on": true }] }"#,
    );
    for field in [
        "duration_s",
        "robots[0].volume",
        "robots[1].id",
        "robots[1].position",
        "script[0]",
    ] {
        assert!(e.iter().any(|m| m.starts_with(field)), "missing {field}: {e:?}");
    }
}

#[test]
fn malformed_documents_are_parse_errors() {
    assert!(matches!(load_scenario("{"), Err(Error::Parse(_))));
    assert!(matches!(
        load_scenario(r#"{ "duration_s": 1, "robot": [] }"#),
        Err(Error::Parse(_))
    ));
}

#[test]
fn empty_scenario_frame_count_and_log() {
    let mut s = minimal_scenario();
    s.robots.clear();
    s.joints.clear();
    let out = run(&s).unwrap();
    assert_eq!(out.frames, 196);
    assert!(out.events.is_empty());
    s.duration_s = 50.0;
    assert_eq!(s.n_frames(), 9766);
}

#[test]
fn idle_robots_log_only_their_energy() {
    let out = run(&minimal_scenario()).unwrap();
    assert_eq!(out.frames, 196);
    assert_eq!(out.events.len(), 2);
    for e in &out.events {
        assert_eq!(e.kind, "energy");
        assert_eq!(e.detail["total_j"], 0.0);
    }
}

#[test]
fn event_log_is_ordered_and_independent_of_robot_order() {
    let s = inchworm_scenario(3, 4);
    let mut shuffled = s.clone();
    shuffled.robots.reverse();
    let a = run(&s).unwrap();
    let b = run(&shuffled).unwrap();
    assert_eq!(a.events, b.events);
    for w in a.events.windows(2) {
        let key = |e: &acoustic_swarm::sim::LogRecord| (e.frame, e.robot, e.kind.clone());
        assert!(key(&w[0]) <= key(&w[1]), "{:?} before {:?}", w[0], w[1]);
    }
}

#[test]
fn pdr_scenario_matches_standalone_measurement() {
    let mut s = pdr_scenario(7);
    s.pdr = Some(PdrSpec {
        k_list: vec![4, 1],
        packets: 200,
        ..Default::default()
    });
    let dir = tempfile::tempdir().unwrap();
    execute(&s, dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    let spec = s.pdr.unwrap();
    for (line, k) in csv.lines().skip(1).zip([4, 1]) {
        let r = measure_pdr(k, 200, &spec.channel, 7).unwrap();
        let pdr: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(pdr, r.pdr, "k={k}");
    }
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let s = SyncDemo {
        cycles: 2,
        ..SyncDemo::default()
    }
    .scenario();
    execute(&s, dir.path()).unwrap();
    for f in ["events.jsonl", "trace.csv", "scenario.json", "audio/r1m0.wav"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(
        trace.lines().next(),
        Some("cycle,robot_id,chirp_onset_s,offset_to_nearest_ms,t_a_s,t_b_s")
    );
    let replay: Scenario = load_scenario(&fs::read_to_string(dir.path().join("scenario.json")).unwrap()).unwrap();
    assert_eq!(replay, s);
    for line in fs::read_to_string(dir.path().join("events.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["detail", "kind", "robot", "t"]);
    }
}

#[test]
fn three_robots_for_a_minute_within_budget() {
    let mut s = inchworm_scenario(3, 1);
    s.duration_s = 60.0;
    s.stop_when_done = false;
    let t0 = Instant::now();
    let out = run(&s).unwrap();
    assert_eq!(out.frames, s.n_frames());
    assert!(t0.elapsed().as_secs_f64() < 30.0, "{:?}", t0.elapsed());
}
