use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use gridspace_core::ingestion::{parse_grid_frame, split_frames, SourceConfig, SourceKind};
use gridspace_core::rules::{load_rules_dir, Trigger};
use gridspace_core::serialization::{parse_json, parse_xml};
use gridspace_core::Invariant;
use gridspace_service::{FrameOutcome, Service, ServiceParts};
use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture(rel: &str) -> String {
    fixtures().join(rel).display().to_string()
}

fn gridspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridspace")).args(args).output().unwrap()
}

fn stdout_lines(out: &Output) -> Vec<Value> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn triggers(out: &Output) -> Vec<Trigger> {
    stdout_lines(out).into_iter().map(|v| serde_json::from_value(v).unwrap()).collect()
}

#[test]
fn convert_of_the_clear_frame_is_true() {
    let out = gridspace(&["convert", "--frame", &fixture("demo/clear.txt"), "--json"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(serde_json::from_str::<Value>(&text).unwrap(), serde_json::json!({"op": "TRUE"}));
    assert_eq!(text, "{\"op\": \"TRUE\"}\n");
}

#[test]
fn convert_formats_agree() {
    let frame = fixture("demo/frame.txt");
    let json = gridspace(&["convert", "--frame", &frame, "--json"]);
    let xml = gridspace(&["convert", "--frame", &frame, "--xml"]);
    let from_json = parse_json(std::str::from_utf8(&json.stdout).unwrap().trim_end()).unwrap();
    let from_xml = parse_xml(std::str::from_utf8(&xml.stdout).unwrap().trim_end()).unwrap();
    assert_eq!(from_json, from_xml);
    assert_ne!(from_json, Invariant::True);
    // The checked-in model is this conversion.
    let saved = std::fs::read_to_string(fixtures().join("demo/model.json")).unwrap();
    assert_eq!(saved.as_bytes(), json.stdout.as_slice());

    let back = gridspace(&["convert", "--model", &fixture("demo/model.json"), "--xml"]);
    assert_eq!(back.stdout, xml.stdout);
}

#[test]
fn eval_matches_the_service_frame_by_frame() {
    let rules_dir = fixtures().join("demo/rules");
    let service = Service::new(ServiceParts {
        rules: load_rules_dir(&rules_dir).unwrap(),
        ..ServiceParts::default()
    });
    let cloud = SourceConfig::new(SourceKind::FileReplay, "mem", 0, "cloud", 1);
    let replay = fixture("demo/replay.frames");
    let mut fired = 0;
    for text in split_frames(&std::fs::read_to_string(&replay).unwrap()) {
        let frame = parse_grid_frame(&text).unwrap();
        let FrameOutcome::Accepted { triggers: want, .. } = service.handle_frame(&frame, &cloud).unwrap() else {
            panic!("duplicate frame in replay");
        };
        let at = frame.timestamp().to_string();
        let out = gridspace(&["eval", "--model", &replay, "--rules", rules_dir.to_str().unwrap(), "--at", &at]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(triggers(&out), want, "at {at}");
        fired += want.len();
    }
    assert_eq!(fired, 2);
}

#[test]
fn eval_of_the_demo_prints_one_trigger() {
    let rules = fixture("demo/rules");
    for model in ["demo/frame.txt", "demo/model.json"] {
        let out = gridspace(&["eval", "--model", &fixture(model), "--rules", &rules, "--at", "100"]);
        assert!(out.status.success());
        let got = triggers(&out);
        assert_eq!(got.len(), 1, "{model}");
        assert_eq!(got[0].severity_label, "critical solar energy level");
        let measured: Vec<f64> = got[0].per_area.iter().map(|m| m.measured).collect();
        assert_eq!(measured, vec![0.6, 0.7]);
    }
}

#[test]
fn validate_rules_reports_files_and_rejects_bad_thresholds() {
    let ok = gridspace(&["validate-rules", &fixture("demo/rules")]);
    assert!(ok.status.success());
    assert_eq!(stdout_lines(&ok)[0]["rules"], serde_json::json!(["solar-cloud-cover"]));

    let bad = gridspace(&["validate-rules", &fixture("bad_rules")]);
    assert_eq!(bad.status.code(), Some(2));
    let err = stderr_json(&bad);
    assert_eq!(err["kind"], "invalid");
    assert!(err["error"].as_str().unwrap().contains("threshold"), "{err}");
}

#[test]
fn duplicate_ids_across_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixtures().join("demo/rules/cloud.json"), dir.path().join("a.json")).unwrap();
    std::fs::copy(fixtures().join("demo/rules/cloud.json"), dir.path().join("b.json")).unwrap();
    let out = gridspace(&["validate-rules", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fdir_sim_prints_steps_then_reliability() {
    let out = gridspace(&[
        "fdir-sim",
        "--topology",
        &fixture("two_feeder.json"),
        "--scenario",
        &fixture("fdir_scenario.json"),
    ]);
    assert!(out.status.success());
    let lines = stdout_lines(&out);
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[1]["opened"], serde_json::json!(["SW1", "SW2"]));
    let last = &lines[4];
    assert_eq!(last["reliability"]["saidiMinutes"], 15.0);
    assert_eq!(last["reliability"]["caidiMinutes"], 30.0);
    assert_eq!(last["finalSwitchStates"], serde_json::json!({"SW1": "closed", "SW2": "closed", "TIE": "open"}));

    // Deterministic output.
    let again = gridspace(&[
        "fdir-sim",
        "--topology",
        &fixture("two_feeder.json"),
        "--scenario",
        &fixture("fdir_scenario.json"),
    ]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn estimate_reads_a_profile() {
    let out = gridspace(&["estimate", "--profile", &fixture("estimate.toml")]);
    assert!(out.status.success());
    let v = &stdout_lines(&out)[0];
    assert_eq!((v["annualKwh"].as_f64(), v["annualNet"].as_f64(), v["pbpYears"].as_f64()), (Some(28800.0), Some(6000.0), Some(5.0)));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, std::fs::read_to_string(fixtures().join("estimate.toml")).unwrap().replace("efficiency = 0.2", "efficiency = 0")).unwrap();
    assert_eq!(gridspace(&["estimate", "--profile", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn heatmap_writes_json_and_pgm() {
    let dir = tempfile::tempdir().unwrap();
    let pgm = dir.path().join("map.pgm");
    let out = gridspace(&[
        "heatmap",
        "--model",
        &fixture("loads.csv"),
        "--region",
        "0,0,9,9",
        "--t1",
        "0",
        "--t2",
        "10",
        "--cell",
        "5",
        "--pgm",
        pgm.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let map = &stdout_lines(&out)[0];
    assert_eq!(map["raw"], serde_json::json!([100.0, -80.0, 0.0, 40.0]));
    assert_eq!(map["scores"], serde_json::json!([1.0, 0.0, 0.0, 0.4]));
    assert_eq!(std::fs::read_to_string(pgm).unwrap(), "P2\n2 2\n255\n0 102\n255 0\n");
}

#[test]
fn exit_codes() {
    let usage = gridspace(&["eval", "--model", "x"]);
    assert_eq!(usage.status.code(), Some(1));
    assert_eq!(stderr_json(&usage)["kind"], "usage");
    assert_eq!(gridspace(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(gridspace(&["convert", "--frame", "a", "--json", "--xml"]).status.code(), Some(1));
    assert_eq!(gridspace(&["--help"]).status.code(), Some(0));

    let missing = gridspace(&["convert", "--frame", "/nonexistent/frame.txt"]);
    assert_eq!(missing.status.code(), Some(3));
    assert_eq!(stderr_json(&missing)["kind"], "runtime");

    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("frame.txt");
    std::fs::write(&garbage, "GRIDFRAME 1\nt=oops\n").unwrap();
    assert_eq!(gridspace(&["convert", "--frame", garbage.to_str().unwrap()]).status.code(), Some(2));

    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "listen = \"nowhere\"\n").unwrap();
    assert_eq!(gridspace(&["serve", "--config", bad_cfg.to_str().unwrap()]).status.code(), Some(2));
}

/// Kills the child on drop so a failed assertion does not leak a server.
struct Running(std::process::Child);

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_answers_health_checks() {
    use std::io::{Read, Write};

    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gridspace.toml");
    std::fs::write(&cfg, format!("listen = \"127.0.0.1:{port}\"\n")).unwrap();
    let _server = Running(
        Command::new(env!("CARGO_BIN_EXE_gridspace"))
            .env("GRIDSPACE_CONFIG", &cfg)
            .arg("serve")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        if let Ok(mut stream) = std::net::TcpStream::connect(("127.0.0.1", port)) {
            stream
                .write_all(b"GET /healthz HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
                .unwrap();
            let mut raw = String::new();
            stream.read_to_string(&mut raw).unwrap();
            assert!(raw.starts_with("HTTP/1.1 200"), "{raw}");
            assert!(dir.path().join("rules").is_dir());
            return;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    }
}
