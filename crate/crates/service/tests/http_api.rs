use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use gridspace_core::fdir::Topology;
use gridspace_core::reaction::Transport;
use gridspace_core::rules::{parse_rule, Rule, RuleSet};
use gridspace_core::serialization::{parse_json, parse_xml};
use gridspace_service::api::{router, REVISION_HEADER};
use gridspace_service::{Service, ServiceParts};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const RULE: &str = include_str!("../../../fixtures/demo/rules/cloud.json");
const FRAME: &str = include_str!("../../../fixtures/demo/frame.txt");
const REPLAY: &str = include_str!("../../../fixtures/demo/replay.frames");
const TOPOLOGY: &str = include_str!("../../../fixtures/two_feeder.json");
const SCENARIO: &str = include_str!("../../../fixtures/fdir_scenario.json");

struct Accept;

impl Transport for Accept {
    fn post(&self, _: &str, _: &str, _: &str) -> Result<u16, String> {
        Ok(200)
    }
}

fn parts() -> ServiceParts {
    ServiceParts {
        transport: Arc::new(Accept),
        ..ServiceParts::default()
    }
}

fn app_with(parts: ServiceParts) -> (Router, Arc<Service>) {
    let svc = Arc::new(Service::new(parts));
    (router(svc.clone(), None, None), svc)
}

async fn call(app: &Router, method: Method, uri: &str, body: &str) -> (StatusCode, Value, axum::http::HeaderMap) {
    let request = Request::builder().method(method).uri(uri).body(Body::from(body.to_string())).unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let headers = response.headers().clone();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into_owned()))
    };
    (status, value, headers)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, v, _) = call(app, Method::GET, uri, "").await;
    (s, v)
}

fn replay_frames() -> Vec<String> {
    gridspace_core::ingestion::split_frames(REPLAY)
}

#[tokio::test]
async fn rules_crud_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app_with(ServiceParts {
        rules_dir: Some(dir.path().to_path_buf()),
        ..parts()
    });
    assert_eq!(get(&app, "/rules").await, (StatusCode::OK, json!([])));
    assert_eq!(get(&app, "/rules/solar-cloud-cover").await.0, StatusCode::NOT_FOUND);

    let (status, body, _) = call(&app, Method::PUT, "/rules/solar-cloud-cover", RULE).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, fetched) = get(&app, "/rules/solar-cloud-cover").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fetched, body);
    let back: Rule = serde_json::from_value(fetched).unwrap();
    assert_eq!(back, parse_rule(RULE).unwrap());
    let on_disk = std::fs::read_to_string(dir.path().join("solar-cloud-cover.json")).unwrap();
    assert_eq!(parse_rule(&on_disk).unwrap(), back);

    let mut changed: Value = serde_json::from_str(RULE).unwrap();
    changed["threshold"] = json!(0.8);
    let (status, _, _) = call(&app, Method::PUT, "/rules/solar-cloud-cover", &changed.to_string()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(get(&app, "/rules").await.1[0]["threshold"], json!(0.8));

    assert_eq!(call(&app, Method::DELETE, "/rules/solar-cloud-cover", "").await.0, StatusCode::NO_CONTENT);
    assert!(!dir.path().join("solar-cloud-cover.json").exists());
    assert_eq!(call(&app, Method::DELETE, "/rules/solar-cloud-cover", "").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn rule_validation_errors_are_400() {
    let (app, _) = app_with(parts());
    let mut bad: Value = serde_json::from_str(RULE).unwrap();
    bad["threshold"] = json!(1.5);
    let (status, body, _) = call(&app, Method::PUT, "/rules/solar-cloud-cover", &bad.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("threshold"));
    assert_eq!(call(&app, Method::PUT, "/rules/other-id", RULE).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, Method::PUT, "/rules/x", "{not json").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn frames_feed_alerts() {
    let (app, _) = app_with(ServiceParts {
        rules: RuleSet::from_rules(vec![parse_rule(RULE).unwrap()]).unwrap(),
        ..parts()
    });
    let (status, body, _) = call(&app, Method::POST, "/frames", FRAME).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "accepted");
    assert_eq!(body["revision"], 1);
    assert_eq!(body["triggers"].as_array().unwrap().len(), 1);
    assert_eq!(body["triggers"][0]["severityLabel"], "critical solar energy level");

    assert_eq!(call(&app, Method::POST, "/frames", FRAME).await.0, StatusCode::CONFLICT);
    assert_eq!(call(&app, Method::POST, "/frames", "GRIDFRAME 2\n").await.0, StatusCode::BAD_REQUEST);

    let (_, alerts) = get(&app, "/alerts").await;
    assert_eq!(alerts.as_array().unwrap().len(), 1);
    assert_eq!(alerts[0]["trigger"]["firedAt"], 100);
    assert_eq!(alerts[0]["delivery"]["entries"][1]["status"], "unmapped");
    assert!(alerts[0]["reaction"]["xml"].as_str().unwrap().starts_with("<reaction"));
}

#[tokio::test]
async fn alerts_since_filters_by_fired_at() {
    let (app, _) = app_with(ServiceParts {
        rules: RuleSet::from_rules(vec![parse_rule(RULE).unwrap()]).unwrap(),
        ..parts()
    });
    for frame in replay_frames() {
        assert_eq!(call(&app, Method::POST, "/frames", &frame).await.0, StatusCode::OK);
    }
    let (_, all) = get(&app, "/alerts").await;
    let fired: Vec<i64> = all.as_array().unwrap().iter().map(|a| a["trigger"]["firedAt"].as_i64().unwrap()).collect();
    assert_eq!(fired, vec![160, 220]);
    for since in [0, 159, 160, 161, 220, 221] {
        let (_, got) = get(&app, &format!("/alerts?since={since}")).await;
        let got: Vec<i64> = got.as_array().unwrap().iter().map(|a| a["trigger"]["firedAt"].as_i64().unwrap()).collect();
        let want: Vec<i64> = fired.iter().copied().filter(|f| *f >= since).collect();
        assert_eq!(got, want, "since={since}");
    }
    assert_eq!(get(&app, "/alerts?since=soon").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn alert_stream_long_polls() {
    let (app, _) = app_with(ServiceParts {
        rules: RuleSet::from_rules(vec![parse_rule(RULE).unwrap()]).unwrap(),
        ..parts()
    });
    let (_, empty) = get(&app, "/alerts/stream?after=0&timeout_ms=50").await;
    assert_eq!(empty, json!({"lastSeq": 0, "alerts": []}));

    let waiter = {
        let app = app.clone();
        tokio::spawn(async move { get(&app, "/alerts/stream?after=0&timeout_ms=5000").await })
    };
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert!(!waiter.is_finished());
    for frame in replay_frames().into_iter().take(2) {
        call(&app, Method::POST, "/frames", &frame).await;
    }
    let (status, got) = tokio::time::timeout(Duration::from_secs(5), waiter).await.unwrap().unwrap();
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got["lastSeq"], 1);
    assert_eq!(got["alerts"][0]["trigger"]["firedAt"], 160);

    let (_, none_after) = get(&app, "/alerts/stream?after=1&timeout_ms=20").await;
    assert_eq!(none_after["alerts"], json!([]));
}

#[tokio::test]
async fn model_snapshot_in_both_formats() {
    let (app, svc) = app_with(parts());
    call(&app, Method::POST, "/frames", FRAME).await;
    let expected = svc.snapshot().unwrap().store.to_invariant();
    let (status, body, headers) = call(&app, Method::GET, "/model?format=json", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[REVISION_HEADER], "1");
    assert_eq!(parse_json(&body.to_string()).unwrap(), expected);
    let (status, xml, headers) = call(&app, Method::GET, "/model?format=xml", "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_TYPE], "application/xml");
    assert_eq!(parse_xml(xml.as_str().unwrap()).unwrap(), expected);
    assert_eq!(get(&app, "/model?format=yaml").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn heatmap_over_posted_quantities() {
    let (app, svc) = app_with(parts());
    let model = gridspace_core::ingestion::parse_quantity_csv(
        "x,y,t1,t2,kind,value,unit\n0,0,0,10,load_kw,50,kW\n0,0,0,10,generation_kw,20,kW\n5,5,0,10,load_kw,10,kW\n",
    )
    .unwrap();
    svc.insert_model(&model).unwrap();
    let (status, map) = get(&app, "/heatmap?region=0,0,9,9&t1=0&t2=10&cell=5").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(map["raw"], json!([30.0, 0.0, 0.0, 10.0]));
    assert_eq!(map["scores"], json!([1.0, 0.0, 0.0, 1.0 / 3.0]));
    assert_eq!(get(&app, "/heatmap?region=0,0,9&t1=0&t2=10").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/heatmap?region=0,0,9,9&t1=10&t2=0").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(get(&app, "/heatmap?region=0,0,9,9&t1=0&t2=10&cell=0").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn fdir_endpoints() {
    let (no_topology, _) = app_with(parts());
    assert_eq!(get(&no_topology, "/fdir/state").await.0, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(
        call(&no_topology, Method::POST, "/fdir/scenario", SCENARIO).await.0,
        StatusCode::SERVICE_UNAVAILABLE
    );

    let (app, _) = app_with(ServiceParts {
        topology: Some(Topology::from_json(TOPOLOGY).unwrap()),
        ..parts()
    });
    let (status, state) = get(&app, "/fdir/state").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["energizedLoads"], json!(["L1", "L2"]));
    let (status, report, _) = call(&app, Method::POST, "/fdir/scenario", SCENARIO).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["reliability"]["saidiMinutes"], json!(15.0));
    assert_eq!(report["reliability"]["caidiMinutes"], json!(30.0));
    let (_, after) = get(&app, "/fdir/state").await;
    assert_eq!(after["lastReport"]["reliability"], report["reliability"]);
    assert_eq!(call(&app, Method::POST, "/fdir/scenario", "{\"events\": 3}").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn bearer_token_guards_the_api() {
    let svc = Arc::new(Service::new(parts()));
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<h1>console</h1>").unwrap();
    let app = router(svc, Some("s3cret".into()), Some(ui.path().to_path_buf()));

    assert_eq!(get(&app, "/rules").await.0, StatusCode::UNAUTHORIZED);
    let request = |auth: &str| {
        Request::builder()
            .uri("/rules")
            .header(header::AUTHORIZATION, auth)
            .body(Body::empty())
            .unwrap()
    };
    assert_eq!(app.clone().oneshot(request("Bearer wrong")).await.unwrap().status(), StatusCode::UNAUTHORIZED);
    assert_eq!(app.clone().oneshot(request("Bearer s3cret")).await.unwrap().status(), StatusCode::OK);

    let (status, health) = get(&app, "/healthz").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["status"], "ok");
    let (status, page) = get(&app, "/ui/index.html").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(page, json!("<h1>console</h1>"));
    assert_eq!(get(&app, "/ui/").await.0, StatusCode::OK);
}
