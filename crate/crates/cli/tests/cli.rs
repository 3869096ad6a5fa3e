use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn fabloop() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fabloop"));
    c.env_remove("FABLOOP_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    fabloop().args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn fk_reports_position() {
    let v = json(&run(&["fk", "--joints", "0,0,0,0,0"]));
    let p: Vec<f64> = serde_json::from_value(v["position_mm"].clone()).unwrap();
    assert_eq!(p, vec![600.0, 0.0, 36.0]);
}

#[test]
fn ik_round_trips_and_reports_unreachable() {
    let v = json(&run(&["ik", "--target=-120,450,80", "--pitch", "0.3", "--elbow", "down"]));
    let q: Vec<f64> = serde_json::from_value(v["joints_rad"].clone()).unwrap();
    let arg = format!("--joints={}", q.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
    let p: Vec<f64> = serde_json::from_value(json(&run(&["fk", &arg]))["position_mm"].clone()).unwrap();
    for (a, b) in p.iter().zip([-120.0, 450.0, 80.0]) {
        assert!((a - b).abs() < 1e-9, "{p:?}");
    }
    let out = run(&["ik", "--target", "10000,0,0"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out of reach"));
}

#[test]
fn config_errors_exit_2_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", r#"{"arm": {"a2_mm": -300}}"#);
    let out = run(&["simulate", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("arm.a2_mm"));

    let unknown = write(dir.path(), "unknown.json", r#"{"arm": {"a9_mm": 1}}"#);
    let out = run(&["fk", "--config", &unknown, "--joints", "0,0,0,0,0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    let out = run(&["fk", "--joints", "1,2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = fabloop().args(["simulate"]).env("FABLOOP_SEED", "x").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thermal_timeout_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "weak.json", r#"{"plant": {"power_w": 5}, "cycle": {"heat_timeout_s": 30}}"#);
    let out = run(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn calibrate_maps_corners_to_frame() {
    let dir = tempfile::tempdir().unwrap();
    let quad = write(dir.path(), "quad.json", "[[118,42],[522,58],[548,452],[96,438]]");
    let v = json(&run(&["calibrate", "--quad", &quad]));
    let h: [[f64; 3]; 3] = serde_json::from_value(v["homography"].clone()).unwrap();
    let map = |u: f64, v: f64| {
        let w = h[2][0] * u + h[2][1] * v + h[2][2];
        ((h[0][0] * u + h[0][1] * v + h[0][2]) / w, (h[1][0] * u + h[1][1] * v + h[1][2]) / w)
    };
    for ((u, v), (x, y)) in [(118.0, 42.0), (522.0, 58.0), (548.0, 452.0), (96.0, 438.0)]
        .into_iter()
        .zip([(0.0, 0.0), (399.0, 0.0), (399.0, 399.0), (0.0, 399.0)])
    {
        let (a, b) = map(u, v);
        assert!((a - x).abs() < 1e-9 && (b - y).abs() < 1e-9);
    }
    let bad = write(dir.path(), "line.json", "[[0,0],[1,0],[2,0],[3,0]]");
    assert_eq!(run(&["calibrate", "--quad", &bad]).status.code(), Some(2));
}

#[test]
fn simulate_dumps_are_reproducible_and_detectable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ra = run(&["simulate", "--dump-dir", a.to_str().unwrap()]);
    let rb = run(&["simulate", "--dump-dir", b.to_str().unwrap()]);
    assert_eq!(ra.stdout, rb.stdout);
    let report = json(&ra);
    assert_eq!(report["detected"], 49);
    assert_eq!(report["repaired"], 49);
    assert_eq!(report["residual_after_verify"], 0);
    for phase in ["capture", "verify"] {
        for stage in ["raw", "rectified", "mask", "overlay"] {
            let name = format!("{phase}_{stage}.pgm");
            let (x, y) = (std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
            assert!(x.starts_with(b"P5\n"), "{name}");
            assert_eq!(x, y, "{name}");
        }
    }

    let overlay = dir.path().join("overlay.pgm");
    let raw = a.join("capture_raw.pgm");
    let found = json(&run(&["detect", raw.to_str().unwrap(), "--overlay", overlay.to_str().unwrap()]));
    let regions = found.as_array().unwrap();
    assert_eq!(regions.len(), 49);
    for key in ["centroid_px", "centroid_mm", "area_px", "equivalent_diameter_mm", "bbox"] {
        assert!(regions[0].get(key).is_some(), "{key}");
    }
    assert!(std::fs::read(&overlay).unwrap().starts_with(b"P5\n400 400\n255\n"));
    let clean = json(&run(&["detect", a.join("verify_raw.pgm").to_str().unwrap()]));
    assert_eq!(clean.as_array().unwrap().len(), 0);
}

#[test]
fn seed_override_changes_noise_only() {
    let dir = tempfile::tempdir().unwrap();
    let dump = |seed: &str, sub: &str| {
        let path = dir.path().join(sub);
        let out = fabloop().args(["simulate", "--dump-dir", path.to_str().unwrap()]).env("FABLOOP_SEED", seed).output().unwrap();
        assert!(out.status.success());
        (json(&out), std::fs::read(path.join("capture_raw.pgm")).unwrap())
    };
    let (r1, i1) = dump("17", "s1");
    let (r2, i2) = dump("17", "s2");
    let (r3, i3) = dump("18", "s3");
    assert_eq!((r1.clone(), i1.clone()), (r2, i2));
    assert_ne!(i1, i3);
    assert_eq!(r3["residual_after_verify"], 0);
    assert_eq!(r1["detected"], r3["detected"]);
}

#[test]
fn thermal_emits_csv() {
    let out = run(&["thermal", "--duration", "1", "--dt", "0.01", "--setpoint", "210"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time_s,temp_c,heater_on"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 101);
    assert!(rows[1].ends_with(",1"));
    assert_eq!(run(&["thermal", "--dt", "100"]).status.code(), Some(2));
}

fn http_get(port: u16, path: &str) -> Option<(u16, String)> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(2))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    let code = buf.split_whitespace().nth(1)?.parse().ok()?;
    let body = buf.split("\r\n\r\n").nth(1).unwrap_or("").to_owned();
    Some((code, body))
}

#[test]
fn simulate_serves_telemetry() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "slow.json", r#"{"cycle": {"throttle_ms": 10}}"#);
    let mut child = fabloop()
        .args(["simulate", "--config", &cfg, "--serve", &port.to_string(), "--hold", "1"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let mut snapshots = Vec::new();
    while Instant::now() < deadline {
        if let Some((200, body)) = http_get(port, "/status") {
            let v: serde_json::Value = serde_json::from_str(&body).unwrap();
            let done = v["phase"] == "idle" && v["layer"] == 1;
            snapshots.push(v);
            if done {
                break;
            }
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    assert_eq!(http_get(port, "/healthz").map(|r| r.0), Some(200));
    assert_eq!(http_get(port, "/missing").map(|r| r.0), Some(404));
    let last = snapshots.last().expect("polled at least once");
    assert_eq!(last["phase"], "idle");
    assert_eq!(last["defects_open"], 0);
    assert!(snapshots.iter().any(|s| s["phase"] == "repairing"));
    let status = child.wait().unwrap();
    assert!(status.success());
}
