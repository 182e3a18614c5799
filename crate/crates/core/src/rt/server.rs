//! HTTP endpoints for the live pipeline, served straight off a
//! `TcpListener` (GET-only JSON API, no framework):
//!
//! - `GET /latest`  - newest prediction record
//! - `GET /history?from=T1&to=T2&limit=N` - chronological records from the store
//! - `GET /metrics` - running per-appliance MAE/F1 (or prediction stats when
//!   the stream carries no ground truth)
//! - `GET /health`  - source state, ingest counters, store lag

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::Serialize;

use crate::rt::source::SourceState;
use crate::rt::store::{read_store, PredictionRecord, StoreConfig};
use crate::rt::StopHandle;

const HISTORY_LIMIT_MAX: usize = 10_000;

#[derive(Debug, Default)]
pub struct RunningMetrics {
    pub predicted_samples: usize,
    pub has_truth: bool,
    pub abs_err_sum: Vec<f64>,
    pub power_sum: Vec<f64>,
    pub true_positive: Vec<usize>,
    pub false_positive: Vec<usize>,
    pub false_negative: Vec<usize>,
}

impl RunningMetrics {
    pub fn new(n_appliances: usize) -> Self {
        RunningMetrics {
            predicted_samples: 0,
            has_truth: false,
            abs_err_sum: vec![0.0; n_appliances],
            power_sum: vec![0.0; n_appliances],
            true_positive: vec![0; n_appliances],
            false_positive: vec![0; n_appliances],
            false_negative: vec![0; n_appliances],
        }
    }

    pub fn update(&mut self, record: &PredictionRecord, truth: Option<&[f64]>, on_threshold: f64) {
        self.predicted_samples += 1;
        for (a, p) in record.power.iter().enumerate() {
            self.power_sum[a] += p;
        }
        if let Some(truth) = truth {
            self.has_truth = true;
            for a in 0..truth.len().min(record.power.len()) {
                self.abs_err_sum[a] += (record.power[a] - truth[a]).abs();
                let actual_on = truth[a] > on_threshold;
                let predicted_on = record.power[a] > on_threshold;
                match (actual_on, predicted_on) {
                    (true, true) => self.true_positive[a] += 1,
                    (false, true) => self.false_positive[a] += 1,
                    (true, false) => self.false_negative[a] += 1,
                    (false, false) => {}
                }
            }
        }
    }

    pub fn mae(&self) -> Vec<f64> {
        let n = self.predicted_samples.max(1) as f64;
        self.abs_err_sum.iter().map(|s| s / n).collect()
    }

    pub fn f1(&self) -> Vec<f64> {
        (0..self.abs_err_sum.len())
            .map(|a| {
                let tp = self.true_positive[a] as f64;
                let p_den = tp + self.false_positive[a] as f64;
                let r_den = tp + self.false_negative[a] as f64;
                if p_den == 0.0 || r_den == 0.0 {
                    return 0.0;
                }
                let precision = tp / p_den;
                let recall = tp / r_den;
                if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub status: String,
    pub source_state: SourceState,
    pub source: String,
    pub ingested: usize,
    pub predicted: usize,
    pub dropped_spurious: usize,
    pub store_lag: usize,
}

pub struct ServerState {
    pub latest: RwLock<Option<PredictionRecord>>,
    pub running: RwLock<RunningMetrics>,
    pub health: RwLock<Health>,
    pub store: StoreConfig,
    pub appliance_names: Vec<String>,
    pub on_threshold: f64,
}

impl ServerState {
    pub fn new(
        store: StoreConfig,
        appliance_names: Vec<String>,
        on_threshold: f64,
        source: String,
    ) -> Self {
        let n = appliance_names.len();
        ServerState {
            latest: RwLock::new(None),
            running: RwLock::new(RunningMetrics::new(n)),
            health: RwLock::new(Health {
                status: "ok".to_string(),
                source_state: SourceState::Ok,
                source,
                ingested: 0,
                predicted: 0,
                dropped_spurious: 0,
                store_lag: 0,
            }),
            store,
            appliance_names,
            on_threshold,
        }
    }
}

/// Accept loop; polls the stop flag between non-blocking accepts so shutdown
/// does not hang on a quiet socket.
pub fn serve(listener: TcpListener, state: Arc<ServerState>, stop: StopHandle) {
    listener
        .set_nonblocking(true)
        .expect("nonblocking listener");
    while !stop.is_set() {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
                let _ = handle_request(stream, &state);
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(20));
            }
            Err(_) => std::thread::sleep(Duration::from_millis(20)),
        }
    }
}

fn handle_request(stream: TcpStream, state: &ServerState) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let parts: Vec<&str> = request_line.split_whitespace().collect();
    if parts.len() < 2 {
        return respond(reader.into_inner(), 400, Some(r#"{"error":"bad request"}"#));
    }
    let method = parts[0];
    let (path, query) = match parts[1].split_once('?') {
        Some((p, q)) => (p, q),
        None => (parts[1], ""),
    };
    // Drain headers.
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line.trim().is_empty() {
            break;
        }
    }
    let stream = reader.into_inner();
    if method != "GET" {
        return respond(stream, 405, Some(r#"{"error":"method not allowed"}"#));
    }
    match path {
        "/latest" => handle_latest(stream, state),
        "/history" => handle_history(stream, state, query),
        "/metrics" => handle_metrics(stream, state),
        "/health" => handle_health(stream, state),
        _ => respond(stream, 404, Some(r#"{"error":"not found"}"#)),
    }
}

fn handle_latest(stream: TcpStream, state: &ServerState) -> std::io::Result<()> {
    let latest = state.latest.read().unwrap().clone();
    match latest {
        Some(record) => respond(
            stream,
            200,
            Some(&serde_json::to_string(&record).unwrap()),
        ),
        None => respond(stream, 204, None),
    }
}

fn parse_query(query: &str) -> HashMap<String, String> {
    query
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn handle_history(stream: TcpStream, state: &ServerState, query: &str) -> std::io::Result<()> {
    let params = parse_query(query);
    let parse_f64 = |key: &str| -> Result<Option<f64>, String> {
        match params.get(key) {
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| format!("`{key}` must be a number, got `{v}`")),
            None => Ok(None),
        }
    };
    let from = match parse_f64("from") {
        Ok(v) => v.unwrap_or(f64::NEG_INFINITY),
        Err(msg) => return respond(stream, 400, Some(&error_json(&msg))),
    };
    let to = match parse_f64("to") {
        Ok(v) => v.unwrap_or(f64::INFINITY),
        Err(msg) => return respond(stream, 400, Some(&error_json(&msg))),
    };
    if from > to {
        return respond(stream, 400, Some(&error_json("`from` is after `to`")));
    }
    let limit = match params.get("limit") {
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => n.min(HISTORY_LIMIT_MAX),
            _ => {
                return respond(
                    stream,
                    400,
                    Some(&error_json("`limit` must be a positive integer")),
                )
            }
        },
        None => HISTORY_LIMIT_MAX,
    };
    let records = match read_store(&state.store.path) {
        Ok(all) => all,
        Err(_) => Vec::new(),
    };
    let selected: Vec<&PredictionRecord> = records
        .iter()
        .filter(|r| r.timestamp >= from && r.timestamp <= to)
        .take(limit)
        .collect();
    if records.is_empty() {
        return respond(stream, 204, None);
    }
    respond(stream, 200, Some(&serde_json::to_string(&selected).unwrap()))
}

fn handle_metrics(stream: TcpStream, state: &ServerState) -> std::io::Result<()> {
    let running = state.running.read().unwrap();
    if running.predicted_samples == 0 {
        return respond(stream, 204, None);
    }
    #[derive(Serialize)]
    struct ApplianceRow<'a> {
        name: &'a str,
        mean_power: f64,
        mae: Option<f64>,
        f1: Option<f64>,
    }
    #[derive(Serialize)]
    struct Payload<'a> {
        samples: usize,
        ground_truth: bool,
        appliances: Vec<ApplianceRow<'a>>,
    }
    let mae = running.mae();
    let f1 = running.f1();
    let n = running.predicted_samples as f64;
    let payload = Payload {
        samples: running.predicted_samples,
        ground_truth: running.has_truth,
        appliances: state
            .appliance_names
            .iter()
            .enumerate()
            .map(|(a, name)| ApplianceRow {
                name,
                mean_power: running.power_sum[a] / n,
                mae: running.has_truth.then(|| mae[a]),
                f1: running.has_truth.then(|| f1[a]),
            })
            .collect(),
    };
    respond(stream, 200, Some(&serde_json::to_string(&payload).unwrap()))
}

fn handle_health(stream: TcpStream, state: &ServerState) -> std::io::Result<()> {
    let health = state.health.read().unwrap().clone();
    respond(stream, 200, Some(&serde_json::to_string(&health).unwrap()))
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn respond(mut stream: TcpStream, status: u16, body: Option<&str>) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        204 => "No Content",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        _ => "Internal Server Error",
    };
    let response = match body {
        Some(body) => format!(
            "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        ),
        None => format!("HTTP/1.1 {status} {reason}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"),
    };
    stream.write_all(response.as_bytes())
}
