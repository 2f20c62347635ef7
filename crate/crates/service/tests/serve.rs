use std::path::Path;
use std::time::{Duration, Instant};

use gridspace_service::{serve_until, ServiceConfig};
use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures");

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// One request over a fresh connection; returns status and body.
async fn http(port: u16, method: &str, path: &str, token: Option<&str>) -> Option<(u16, String)> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).await.ok()?;
    let auth = token.map(|t| format!("Authorization: Bearer {t}\r\n")).unwrap_or_default();
    let request = format!("{method} {path} HTTP/1.1\r\nHost: localhost\r\n{auth}Content-Length: 0\r\nConnection: close\r\n\r\n");
    stream.write_all(request.as_bytes()).await.ok()?;
    let mut raw = String::new();
    stream.read_to_string(&mut raw).await.ok()?;
    let status = raw.split(' ').nth(1)?.parse().ok()?;
    let body = raw.split_once("\r\n\r\n")?.1.to_string();
    Some((status, body))
}

async fn json_until(port: u16, path: &str, token: &str, done: impl Fn(&Value) -> bool) -> Value {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        if let Some((200, body)) = http(port, "GET", path, Some(token)).await {
            let value: Value = serde_json::from_str(&body).unwrap();
            if done(&value) {
                return value;
            }
        }
        assert!(Instant::now() < deadline, "timed out waiting on {path}");
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
}

fn copy(from: &str, to: &Path) {
    std::fs::copy(Path::new(FIXTURES).join(from), to).unwrap();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn replay_source_and_hot_reloaded_rules() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("rules")).unwrap();
    copy("demo/rules/cloud.json", &dir.path().join("rules/cloud.json"));
    copy("demo/replay.frames", &dir.path().join("replay.frames"));
    copy("two_feeder.json", &dir.path().join("feeder.json"));
    let port = free_port();
    let toml = format!(
        r#"
listen = "127.0.0.1:{port}"
rules_dir = "rules"
rules_poll_ms = 50
token = "t0ken"
topology = "feeder.json"

[[sources]]
kind = "file-replay"
uri = "replay.frames"
poll_seconds = 0
owner = "cloud"
threshold = 1
"#
    );
    let path = dir.path().join("gridspace.toml");
    std::fs::write(&path, toml).unwrap();
    let cfg = ServiceConfig::load(&path).unwrap();

    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve_until(cfg, async {
        let _ = stopped.await;
    }));

    let alerts = json_until(port, "/alerts", "t0ken", |v| v.as_array().is_some_and(|a| a.len() == 2)).await;
    let fired: Vec<i64> = alerts.as_array().unwrap().iter().map(|a| a["trigger"]["firedAt"].as_i64().unwrap()).collect();
    assert_eq!(fired, vec![160, 220]);
    assert_eq!(http(port, "GET", "/alerts", None).await.unwrap().0, 401);
    assert_eq!(http(port, "GET", "/healthz", None).await.unwrap().0, 200);
    assert_eq!(http(port, "GET", "/fdir/state", Some("t0ken")).await.unwrap().0, 200);

    let mut extra: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("rules/cloud.json")).unwrap()).unwrap();
    extra["id"] = "smoke-watch".into();
    extra["owner"] = "smoke".into();
    std::fs::write(dir.path().join("rules/smoke.json"), extra.to_string()).unwrap();
    json_until(port, "/rules", "t0ken", |v| v.as_array().is_some_and(|a| a.len() == 2)).await;

    // A broken file leaves the current rules in place.
    std::fs::write(dir.path().join("rules/broken.json"), "{").unwrap();
    tokio::time::sleep(Duration::from_millis(200)).await;
    let (_, rules) = http(port, "GET", "/rules", Some("t0ken")).await.unwrap();
    assert_eq!(serde_json::from_str::<Value>(&rules).unwrap().as_array().unwrap().len(), 2);

    std::fs::remove_file(dir.path().join("rules/broken.json")).unwrap();
    std::fs::remove_file(dir.path().join("rules/smoke.json")).unwrap();
    let rules = json_until(port, "/rules", "t0ken", |v| v.as_array().is_some_and(|a| a.len() == 1)).await;
    assert_eq!(rules[0]["id"], "solar-cloud-cover");

    stop.send(()).unwrap();
    tokio::time::timeout(Duration::from_secs(10), server).await.unwrap().unwrap().unwrap();
}

#[tokio::test]
async fn bad_listen_address_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let cfg = ServiceConfig {
        listen: taken.local_addr().unwrap().to_string(),
        rules_dir: dir.path().join("rules"),
        ..ServiceConfig::default()
    };
    let err = serve_until(cfg, async {}).await.unwrap_err();
    assert!(err.to_string().starts_with("listen on"), "{err}");
}
