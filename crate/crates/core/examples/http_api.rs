//! Drives the `/api/v1` router in-process: login, open a session on a seed
//! case, take two turns and hit an endpoint the role may not use.
//!
//! `psysim serve` exposes the same router over TCP.

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use psysim::platform::{api, PlatformService, Role};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, path: &str, token: Option<&str>, body: Value) -> (StatusCode, Value) {
    let mut req = Request::builder()
        .method(method)
        .uri(format!("{}{path}", api::API_PREFIX))
        .header("content-type", "application/json");
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = req.body(Body::from(body.to_string())).expect("valid request");
    let resp = app.clone().oneshot(req).await.expect("router is infallible");
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.expect("body");
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let service = Arc::new(PlatformService::scripted(42));
    service.bootstrap_user("resident", "resident-pass", Role::Trainee)?;
    let app = api::router(service);

    let (status, body) = call(&app, "POST", "/auth/login", None, json!({"login": "resident", "credential": "resident-pass"})).await;
    println!("login: {status}");
    let token = body["token"].as_str().expect("token").to_string();

    let (status, session) = call(&app, "POST", "/sessions", Some(&token), json!({"case_id": "seed-mdd-001"})).await;
    println!("open session: {status} {}", session["id"]);
    let sid = session["id"].as_str().expect("session id");
    for text in ["Hello, what brings you in today?", "How have you been sleeping?"] {
        let (status, turn) = call(&app, "POST", &format!("/sessions/{sid}/turns"), Some(&token), json!({ "text": text })).await;
        println!("turn {status}: {} -> {}", turn["doctor"]["text"], turn["patient"]["text"]);
    }

    let (status, err) = call(&app, "GET", "/admin/audit", Some(&token), Value::Null).await;
    println!("trainee audit read: {status} {}", err["error"]["code"]);
    let (status, err) = call(&app, "GET", "/cases/seed-mdd-001", None, Value::Null).await;
    println!("no token: {status} {}", err["error"]["code"]);
    let (status, _) = call(&app, "GET", "/nowhere", Some(&token), Value::Null).await;
    println!("unknown route: {status}");
    Ok(())
}
