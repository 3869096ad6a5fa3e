//! Live status publishing and the polling HTTP endpoint that serves it.
//!
//! The simulation publishes whole [`StatusSnapshot`] values; readers load the
//! latest one without locking, so a slow poller never stalls the loop and
//! never sees a half-written snapshot.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use arc_swap::ArcSwap;
use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Response, Server};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Idle,
    Printing,
    Capturing,
    Detecting,
    Repairing,
    Verifying,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub time_s: f64,
    pub temp_c: f64,
    pub heater_on: bool,
    pub setpoint_c: f64,
    pub extruder_steps_per_s: f64,
    pub phase: Phase,
    pub layer: u32,
    pub defects_open: usize,
}

impl StatusSnapshot {
    pub fn idle(setpoint_c: f64, ambient_c: f64) -> Self {
        Self {
            time_s: 0.0,
            temp_c: ambient_c,
            heater_on: false,
            setpoint_c,
            extruder_steps_per_s: 0.0,
            phase: Phase::Idle,
            layer: 0,
            defects_open: 0,
        }
    }
}

/// Shared handle to the latest published snapshot. Cloning shares the slot.
#[derive(Debug, Clone)]
pub struct Telemetry {
    slot: Arc<ArcSwap<StatusSnapshot>>,
}

impl Telemetry {
    pub fn new(initial: StatusSnapshot) -> Self {
        Self { slot: Arc::new(ArcSwap::from_pointee(initial)) }
    }

    pub fn publish(&self, snapshot: StatusSnapshot) {
        self.slot.store(Arc::new(snapshot));
    }

    pub fn status_snapshot(&self) -> StatusSnapshot {
        **self.slot.load()
    }
}

/// Background HTTP server exposing `GET /status` and `GET /healthz`.
pub struct TelemetryServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl TelemetryServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving on a thread.
    pub fn start(addr: &str, telemetry: Telemetry) -> io::Result<Self> {
        let server = Server::http(addr).map_err(io::Error::other)?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("telemetry server is not bound to an IP socket"))?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = std::thread::Builder::new()
            .name("telemetry".into())
            .spawn(move || {
                while !flag.load(Ordering::Relaxed) {
                    match server.recv_timeout(Duration::from_millis(50)) {
                        Ok(Some(request)) => {
                            let _ = request_response(&telemetry, request);
                        }
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
            })?;
        Ok(Self { addr: local, stop, handle: Some(handle) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TelemetryServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn request_response(telemetry: &Telemetry, request: tiny_http::Request) -> io::Result<()> {
    let json = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let path = request.url().split('?').next().unwrap_or("");
    match (request.method(), path) {
        (Method::Get, "/status") => {
            let body = serde_json::to_string(&telemetry.status_snapshot()).map_err(io::Error::other)?;
            request.respond(Response::from_string(body).with_header(json))
        }
        (Method::Get, "/healthz") => {
            request.respond(Response::from_string(r#"{"ok":true}"#).with_header(json))
        }
        _ => request.respond(Response::from_string("not found").with_status_code(404)),
    }
}
