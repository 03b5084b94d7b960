//! Serves the HTTP API on an ephemeral port, submits an order over a plain
//! socket and polls for its outcome.
//!
//! cargo run --example http_serve

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use frm::receiver::load_mappings;
use frm::service::{http, load_rules, Engine, EngineSetup};

fn call(addr: SocketAddr, method: &str, path: &str, body: &str) -> std::io::Result<String> {
    let mut s = TcpStream::connect(addr)?;
    let req = format!(
        "{method} {path} HTTP/1.1\r\nhost: localhost\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    s.write_all(req.as_bytes())?;
    let mut out = String::new();
    s.read_to_string(&mut out)?;
    let status = out.lines().next().unwrap_or_default().to_string();
    let payload = out.split("\r\n\r\n").nth(1).unwrap_or_default();
    Ok(format!("{status}  {payload}"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut setup = EngineSetup::new(load_rules(&dir.join("golden.frm"))?);
    setup.mappings = load_mappings(&dir.join("mappings.json"))?;
    let engine = Arc::new(Engine::in_memory(setup)?);

    let listener = TcpListener::bind("127.0.0.1:0")?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.spawn(async move {
        let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
        axum::serve(listener, http::router(engine)).await
    });
    println!("listening on {addr}");

    let order = r#"{"kind": "order", "source": "external", "origin": "web", "idempotency_key": "demo-1",
                    "payload": {"customer": {"id": "C1", "name": "Ada"}, "product": "ADSL"}}"#;
    let created = call(addr, "POST", "/requests", order)?;
    println!("POST /requests -> {created}");
    let id = created
        .split("\"id\":\"")
        .nth(1)
        .and_then(|s| s.split('"').next())
        .ok_or("no id")?
        .to_string();
    println!(
        "POST again     -> {}",
        call(addr, "POST", "/requests", order)?
    );

    let path = format!("/requests/{id}/outcome");
    for _ in 0..50 {
        let r = call(addr, "GET", &path, "")?;
        if r.starts_with("HTTP/1.1 200") {
            println!("GET {path} -> {}", &r[..r.len().min(160)]);
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    println!(
        "GET /reports/kpi -> {}",
        call(addr, "GET", "/reports/kpi?from=0&to=9999999999999", "")?
    );
    rt.shutdown_background();
    Ok(())
}
