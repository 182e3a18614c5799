//! Real-time pipeline: poll a sample source, maintain a sliding window, run
//! disaggregation on every new sample, append records to a local store, and
//! expose live results plus running metrics over HTTP.
//!
//! Concurrency: the ingest/inference loop owns the window buffer and is the
//! only store writer; the HTTP server runs on its own thread and reads
//! lock-protected snapshots plus the on-disk store. A shared [`StopHandle`]
//! shuts both down cooperatively.

pub mod server;
pub mod source;
pub mod store;

use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::dataio::{Dataset, LineReading, Sample};
use crate::error::{Error, Result};
use crate::metrics::{MetricReport, SubHorizonSpec};
use crate::net::model::{forward_on_tape, window_features};
use crate::net::tape::Tape;
use crate::net::ModelParams;
use crate::rt::server::{serve, ServerState};
use crate::rt::source::{open_source, IngestSample, SourceConfig, SourcePoll};
use crate::rt::store::{PredictionRecord, PredictionStore, StoreConfig};

pub use crate::rt::source::Pace;
pub use crate::rt::store::{FsyncPolicy, StoreFormat};

/// Cooperative stop flag shared by the ingest loop and the HTTP server.
#[derive(Debug, Clone, Default)]
pub struct StopHandle(Arc<AtomicBool>);

impl StopHandle {
    pub fn new() -> Self {
        StopHandle::default()
    }

    pub fn stop(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_set(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// FIFO ring of the most recent `capacity` aligned samples; yields a full
/// window only once the fill count reaches capacity.
pub struct WindowBuffer {
    capacity: usize,
    samples: Vec<Sample>,
}

impl WindowBuffer {
    pub fn new(capacity: usize) -> Self {
        WindowBuffer {
            capacity,
            samples: Vec::with_capacity(capacity),
        }
    }

    pub fn fill_count(&self) -> usize {
        self.samples.len()
    }

    pub fn push(&mut self, sample: Sample) -> Option<&[Sample]> {
        if self.samples.len() == self.capacity {
            self.samples.remove(0);
        }
        self.samples.push(sample);
        (self.samples.len() == self.capacity).then_some(&self.samples[..])
    }
}

/// Streaming zero-order-hold alignment onto a uniform grid anchored at the
/// first accepted sample. Produces exactly what offline grid alignment
/// produces for the same input.
struct StreamAligner {
    interval: f64,
    anchor: Option<f64>,
    emitted: usize,
    last: Option<IngestSample>,
}

impl StreamAligner {
    fn new(interval: f64) -> Self {
        StreamAligner {
            interval,
            anchor: None,
            emitted: 0,
            last: None,
        }
    }

    /// Returns (grid timestamp, source sample) pairs now determined.
    fn push(&mut self, sample: IngestSample) -> Vec<(f64, IngestSample)> {
        if let Some(last) = &self.last {
            if sample.timestamp <= last.timestamp {
                return Vec::new();
            }
        }
        let anchor = *self.anchor.get_or_insert(sample.timestamp);
        let mut out = Vec::new();
        loop {
            let grid_t = anchor + self.emitted as f64 * self.interval;
            if grid_t > sample.timestamp {
                break;
            }
            let src = if sample.timestamp <= grid_t {
                sample.clone()
            } else {
                self.last.clone().unwrap_or_else(|| sample.clone())
            };
            out.push((grid_t, src));
            self.emitted += 1;
        }
        self.last = Some(sample);
        out
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Grid interval for streaming alignment, seconds.
    pub grid_interval: f64,
    /// Samples whose main power exceeds this are dropped as spurious.
    pub max_power: f64,
    /// Labels for /metrics; defaults to M1..Mn.
    pub appliance_names: Option<Vec<String>>,
    /// Keep serving after a replay source is exhausted, until stopped.
    pub linger: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            grid_interval: 5.0,
            max_power: 10_000.0,
            appliance_names: None,
            linger: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSummary {
    pub ingested: usize,
    pub predicted: usize,
    pub dropped_spurious: usize,
    pub p50_latency_ms: f64,
    pub p99_latency_ms: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Binds the server and runs the session; see [`run_with_listener`].
pub fn run(
    source_cfg: &SourceConfig,
    params: &ModelParams,
    store_cfg: &StoreConfig,
    port: u16,
    opts: &RunOptions,
    stop: &StopHandle,
) -> Result<SessionSummary> {
    let listener = TcpListener::bind(("127.0.0.1", port))
        .map_err(|e| Error::Http(format!("bind port {port}: {e}")))?;
    run_with_listener(listener, source_cfg, params, store_cfg, opts, stop)
}

/// Full session: ingest -> clean-check -> align -> window -> inference ->
/// store append -> snapshot update, until the source is exhausted or the
/// stop handle fires. The first `seq_len - 1` aligned samples are warmup and
/// produce no records. A store write failure halts the session.
pub fn run_with_listener(
    listener: TcpListener,
    source_cfg: &SourceConfig,
    params: &ModelParams,
    store_cfg: &StoreConfig,
    opts: &RunOptions,
    stop: &StopHandle,
) -> Result<SessionSummary> {
    let n_app = params.config.n_appliances;
    let seq_len = params.config.seq_len;
    let mut source = open_source(source_cfg)?;
    let mut store = PredictionStore::open(store_cfg, n_app)?;
    let digest = params.payload_digest();
    let names = opts
        .appliance_names
        .clone()
        .unwrap_or_else(|| (1..=n_app).map(|k| format!("M{k}")).collect());

    let state = Arc::new(ServerState::new(
        store_cfg.clone(),
        names,
        params.config.on_threshold,
        source.describe(),
    ));
    let server_state = Arc::clone(&state);
    let server_stop = stop.clone();
    let server = std::thread::spawn(move || serve(listener, server_state, server_stop));

    let mut aligner = StreamAligner::new(opts.grid_interval);
    let mut buffer = WindowBuffer::new(seq_len);
    let mut tape = Tape::new(false);
    // Warm the tape arena on a dummy window so the first real prediction does
    // not pay the one-time allocation cost.
    {
        let zeros = vec![0.0; seq_len * params.config.input_size];
        let _ = forward_on_tape(&mut tape, params, &zeros, None);
        tape.recycle();
    }
    let mut truth_window: Vec<Option<Vec<f64>>> = Vec::new();
    let mut latencies: Vec<f64> = Vec::new();
    let mut ingested = 0usize;
    let mut predicted = 0usize;
    let mut dropped = 0usize;

    let result = (|| -> Result<()> {
        while !stop.is_set() {
            let raw = match source.next_sample(stop)? {
                SourcePoll::Sample(raw) => raw,
                SourcePoll::Idle => {
                    state.health.write().unwrap().source_state = source.state();
                    continue;
                }
                SourcePoll::Exhausted => break,
            };
            ingested += 1;
            let finite = raw.timestamp.is_finite()
                && raw.main_p.is_finite()
                && raw.main_v.is_finite()
                && raw.main_i.is_finite();
            let bad = !finite
                || raw.spurious
                || raw.main_p < 0.0
                || raw.main_v < 0.0
                || raw.main_i < 0.0
                || raw.main_p > opts.max_power;
            {
                let mut health = state.health.write().unwrap();
                health.ingested = ingested;
                health.source_state = source.state();
                if bad {
                    health.dropped_spurious = dropped + 1;
                }
            }
            if bad {
                dropped += 1;
                continue;
            }
            for (grid_t, src) in aligner.push(raw) {
                let t_start = Instant::now();
                let truth = src.line_p.clone();
                let sample = Sample {
                    timestamp: grid_t,
                    main_v: src.main_v,
                    main_i: src.main_i,
                    main_p: src.main_p,
                    lines: truth
                        .as_deref()
                        .unwrap_or(&[])
                        .iter()
                        .map(|&p| LineReading { v: 0.0, i: 0.0, p })
                        .collect(),
                    spurious: false,
                };
                truth_window.push(truth);
                if truth_window.len() > seq_len {
                    truth_window.remove(0);
                }
                let Some(window) = buffer.push(sample) else {
                    continue;
                };
                let raw_feats = window_features(window);
                tape.recycle();
                let nodes = forward_on_tape(&mut tape, params, &raw_feats, None);
                let power_flat = tape.value(nodes.power);
                let prob_flat = tape.value(nodes.prob);
                let last = seq_len - 1;
                let power = power_flat[last * n_app..(last + 1) * n_app].to_vec();
                let on: Vec<bool> = prob_flat[last * n_app..(last + 1) * n_app]
                    .iter()
                    .map(|&p| p > 0.5)
                    .collect();
                let record = PredictionRecord {
                    timestamp: grid_t,
                    power,
                    on,
                    model_digest: digest.clone(),
                    latency_ms: t_start.elapsed().as_secs_f64() * 1e3,
                };
                store.append(&record)?;
                latencies.push(t_start.elapsed().as_secs_f64() * 1e3);
                predicted += 1;

                let truth_last = truth_window.last().and_then(|t| t.clone());
                {
                    let mut running = state.running.write().unwrap();
                    running.update(&record, truth_last.as_deref(), params.config.on_threshold);
                }
                *state.latest.write().unwrap() = Some(record);
                state.health.write().unwrap().predicted = predicted;
            }
        }
        Ok(())
    })();

    store.sync()?;
    {
        let mut health = state.health.write().unwrap();
        health.source_state = source.state();
        health.ingested = ingested;
        health.predicted = predicted;
        health.dropped_spurious = dropped;
    }
    if result.is_ok() && opts.linger {
        while !stop.is_set() {
            std::thread::sleep(Duration::from_millis(50));
        }
    }
    stop.stop();
    let _ = server.join();
    result?;

    latencies.sort_by(f64::total_cmp);
    Ok(SessionSummary {
        ingested,
        predicted,
        dropped_spurious: dropped,
        p50_latency_ms: percentile(&latencies, 0.50),
        p99_latency_ms: percentile(&latencies, 0.99),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct JoinStats {
    pub records: usize,
    pub matched: usize,
    pub unmatched: usize,
}

/// Joins stored predictions to ground truth on exact (grid-aligned)
/// timestamps and evaluates them with the standard report. Coverage below
/// 50% is treated as clock misalignment.
pub fn evaluate_live(
    records: &[PredictionRecord],
    truth: &Dataset,
    spec: &SubHorizonSpec,
    on_threshold: f64,
) -> Result<(MetricReport, JoinStats)> {
    if records.is_empty() {
        return Err(Error::Validation("no prediction records to evaluate".to_string()));
    }
    let n_app = truth.n_channels();
    if records[0].power.len() != n_app {
        return Err(Error::Shape(format!(
            "records carry {} appliances but ground truth has {n_app}",
            records[0].power.len()
        )));
    }
    let mut index = std::collections::HashMap::with_capacity(truth.len());
    for (i, s) in truth.samples.iter().enumerate() {
        index.insert(s.timestamp.to_bits(), i);
    }
    let mut actual: Vec<Vec<f64>> = vec![Vec::new(); n_app];
    let mut predicted: Vec<Vec<f64>> = vec![Vec::new(); n_app];
    let mut matched = 0usize;
    for r in records {
        if let Some(&i) = index.get(&r.timestamp.to_bits()) {
            matched += 1;
            for a in 0..n_app {
                actual[a].push(truth.samples[i].lines[a].p);
                predicted[a].push(r.power[a]);
            }
        }
    }
    let stats = JoinStats {
        records: records.len(),
        matched,
        unmatched: records.len() - matched,
    };
    if (matched as f64) < 0.5 * records.len() as f64 {
        return Err(Error::Validation(format!(
            "only {matched} of {} records matched ground truth timestamps; \
             clock misalignment suspected",
            records.len()
        )));
    }
    let bucket_spec = SubHorizonSpec {
        m: spec.m.min(matched),
    };
    let report = MetricReport::compute(
        &truth.meta.channel_names,
        &actual,
        &predicted,
        &bucket_spec,
        on_threshold,
    )?;
    Ok((report, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{align_to_grid, write_csv, DatasetMeta};
    use crate::net::{init_model, AugmentationConfig, TrainConfig};
    use crate::rng::Rng;
    use crate::rt::source::http_get;
    use crate::rt::store::read_store;

    fn tiny_params(seq_len: usize) -> ModelParams {
        let cfg = TrainConfig {
            hidden_size: 8,
            n_heads: 2,
            seq_len,
            n_appliances: 2,
            dropout: 0.0,
            seed: 5,
            augmentation: AugmentationConfig::disabled(),
            ..TrainConfig::default()
        };
        init_model(&cfg).unwrap()
    }

    #[test]
    fn window_buffer_warmup_arithmetic() {
        let mut buf = WindowBuffer::new(4);
        let mut emitted = 0;
        for k in 0..10 {
            let s = Sample {
                timestamp: k as f64,
                main_v: 220.0,
                main_i: 0.0,
                main_p: 0.0,
                lines: vec![],
                spurious: false,
            };
            if buf.push(s).is_some() {
                emitted += 1;
            }
        }
        assert_eq!(emitted, 10 - (4 - 1));
    }

    #[test]
    fn stream_aligner_matches_offline_alignment() {
        let mut rng = Rng::new(3);
        let mut t = 100.0;
        let samples: Vec<Sample> = (0..200)
            .map(|k| {
                t += rng.range(3.5, 6.5);
                Sample {
                    timestamp: t,
                    main_v: 220.0,
                    main_i: k as f64 * 0.01,
                    main_p: k as f64,
                    lines: vec![],
                    spurious: false,
                }
            })
            .collect();
        let ds = Dataset {
            samples: samples.clone(),
            meta: DatasetMeta::unnamed(0),
        };
        let offline = align_to_grid(&ds, 5.0).unwrap();

        let mut aligner = StreamAligner::new(5.0);
        let mut streamed: Vec<(f64, f64)> = Vec::new();
        for s in &samples {
            for (grid_t, src) in aligner.push(IngestSample::from(s)) {
                streamed.push((grid_t, src.main_p));
            }
        }
        assert_eq!(streamed.len(), offline.len());
        for (k, s) in offline.samples.iter().enumerate() {
            assert_eq!(streamed[k].0, s.timestamp, "grid point {k}");
            assert_eq!(streamed[k].1, s.main_p, "value at grid point {k}");
        }
    }

    #[test]
    fn replay_session_matches_batch_inference_bitwise() {
        let seq = 16;
        let params = tiny_params(seq);
        let ds = crate::sim::tests_support::tiny_two_channel_dataset(60, 7);
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("test.csv");
        write_csv(&ds, &csv).unwrap();
        let store_path = dir.path().join("pred.jsonl");

        let source = SourceConfig::Replay {
            path: csv.clone(),
            pace: Pace::MaxSpeed,
        };
        let store_cfg = StoreConfig::for_path(&store_path);
        let stop = StopHandle::new();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let summary = run_with_listener(
            listener,
            &source,
            &params,
            &store_cfg,
            &RunOptions::default(),
            &stop,
        )
        .unwrap();

        assert_eq!(summary.ingested, 60);
        assert_eq!(summary.predicted, 60 - (seq - 1));
        assert_eq!(summary.dropped_spurious, 0);

        let records = read_store(&store_path).unwrap();
        let batch = crate::net::batch_infer(&params, &ds).unwrap();
        assert_eq!(records.len(), batch.len());
        for (r, b) in records.iter().zip(&batch) {
            assert_eq!(r.timestamp, b.timestamp);
            assert_eq!(r.power, b.power, "bitwise power mismatch at {}", r.timestamp);
            let on: Vec<bool> = b.on_prob.iter().map(|&p| p > 0.5).collect();
            assert_eq!(r.on, on);
        }
    }

    #[test]
    fn spurious_rows_are_dropped_not_predicted() {
        let seq = 8;
        let params = tiny_params(seq);
        let mut ds = crate::sim::tests_support::tiny_two_channel_dataset(30, 9);
        ds.samples[10].spurious = true;
        ds.samples[20].main_p = 1e9;
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("test.csv");
        write_csv(&ds, &csv).unwrap();
        let store_path = dir.path().join("pred.jsonl");
        let stop = StopHandle::new();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let summary = run_with_listener(
            listener,
            &SourceConfig::Replay {
                path: csv,
                pace: Pace::MaxSpeed,
            },
            &params,
            &StoreConfig::for_path(&store_path),
            &RunOptions::default(),
            &stop,
        )
        .unwrap();
        assert_eq!(summary.dropped_spurious, 2);
        // Dropped rows leave grid gaps that zero-order hold fills, so the
        // aligned count (and records) stays the same.
        assert_eq!(summary.predicted, 30 - (seq - 1));
    }

    #[test]
    fn http_endpoints_serve_live_state() {
        let seq = 8;
        let params = tiny_params(seq);
        let ds = crate::sim::tests_support::tiny_two_channel_dataset(40, 11);
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("test.csv");
        write_csv(&ds, &csv).unwrap();
        let store_path = dir.path().join("pred.jsonl");

        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let stop = StopHandle::new();
        let stop_run = stop.clone();
        let store_cfg = StoreConfig::for_path(&store_path);
        let source = SourceConfig::Replay {
            path: csv,
            pace: Pace::MaxSpeed,
        };
        let params_clone = params.clone();
        let handle = std::thread::spawn(move || {
            let opts = RunOptions {
                linger: true,
                ..RunOptions::default()
            };
            run_with_listener(listener, &source, &params_clone, &store_cfg, &opts, &stop_run)
        });

        // Wait until the replay finished and the server is lingering.
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            if Instant::now() > deadline {
                panic!("replay did not complete in time");
            }
            if let Ok(body) = http_get(&format!("http://{addr}/health"), Duration::from_secs(2)) {
                let health: serde_json::Value = serde_json::from_str(&body).unwrap();
                if health["source_state"] == "exhausted" {
                    break;
                }
            }
            std::thread::sleep(Duration::from_millis(30));
        }

        let latest = http_get(&format!("http://{addr}/latest"), Duration::from_secs(2)).unwrap();
        let latest: serde_json::Value = serde_json::from_str(&latest).unwrap();
        assert_eq!(latest["power"].as_array().unwrap().len(), 2);

        let history =
            http_get(&format!("http://{addr}/history?limit=5"), Duration::from_secs(2)).unwrap();
        let history: serde_json::Value = serde_json::from_str(&history).unwrap();
        assert_eq!(history.as_array().unwrap().len(), 5);

        // Malformed query -> 400.
        let err = http_get(
            &format!("http://{addr}/history?from=9&to=1"),
            Duration::from_secs(2),
        );
        match err {
            Err(Error::Http(msg)) => assert!(msg.contains("400"), "{msg}"),
            other => panic!("expected 400, got {other:?}"),
        }

        let metrics =
            http_get(&format!("http://{addr}/metrics"), Duration::from_secs(2)).unwrap();
        let metrics: serde_json::Value = serde_json::from_str(&metrics).unwrap();
        assert_eq!(metrics["ground_truth"], true);
        assert!(metrics["appliances"][0]["mae"].is_number());

        stop.stop();
        let summary = handle.join().unwrap().unwrap();
        let records = read_store(&store_path).unwrap();
        assert_eq!(records.len(), summary.predicted);

        // Running MAE equals offline evaluation over the same span.
        let aligned = align_to_grid(&ds, 5.0).unwrap();
        let (report, stats) = evaluate_live(
            &records,
            &aligned,
            &SubHorizonSpec::new(8).unwrap(),
            params.config.on_threshold,
        )
        .unwrap();
        assert_eq!(stats.unmatched, 0);
        let mae_0 = metrics["appliances"][0]["mae"].as_f64().unwrap();
        assert!((mae_0 - report.appliances[0].mae).abs() < 1e-9);
    }

    #[test]
    fn latest_is_204_before_warmup() {
        let seq = 64; // larger than the replay, so warmup never completes
        let params = tiny_params(seq);
        let ds = crate::sim::tests_support::tiny_two_channel_dataset(10, 13);
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("test.csv");
        write_csv(&ds, &csv).unwrap();
        let store_path = dir.path().join("pred.jsonl");
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let stop = StopHandle::new();
        let stop_run = stop.clone();
        let store_cfg = StoreConfig::for_path(&store_path);
        let source = SourceConfig::Replay {
            path: csv,
            pace: Pace::MaxSpeed,
        };
        let params_clone = params.clone();
        let handle = std::thread::spawn(move || {
            let opts = RunOptions {
                linger: true,
                ..RunOptions::default()
            };
            run_with_listener(listener, &source, &params_clone, &store_cfg, &opts, &stop_run)
        });
        // /latest responds 204 (http_get reports it as a non-2xx-free body
        // with no content -> status 204 is in the 2xx range, empty body).
        let deadline = Instant::now() + Duration::from_secs(10);
        let mut body = None;
        while Instant::now() < deadline {
            if let Ok(b) = http_get(&format!("http://{addr}/latest"), Duration::from_secs(2)) {
                body = Some(b);
                break;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
        assert_eq!(body.as_deref(), Some(""));
        stop.stop();
        let summary = handle.join().unwrap().unwrap();
        assert_eq!(summary.predicted, 0);
    }

    #[test]
    fn unreachable_http_source_degrades_health_and_survives() {
        let params = tiny_params(8);
        let dir = tempfile::tempdir().unwrap();
        let store_path = dir.path().join("pred.jsonl");
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let stop = StopHandle::new();
        let stop_run = stop.clone();
        let store_cfg = StoreConfig::for_path(&store_path);
        // Nothing listens on this port.
        let source = SourceConfig::HttpPoll {
            url: "http://127.0.0.1:9".to_string(),
            poll_interval: 0.05,
        };
        let params_clone = params.clone();
        let handle = std::thread::spawn(move || {
            run_with_listener(
                listener,
                &source,
                &params_clone,
                &store_cfg,
                &RunOptions::default(),
                &stop_run,
            )
        });
        let deadline = Instant::now() + Duration::from_secs(20);
        let mut degraded = false;
        while Instant::now() < deadline {
            if let Ok(body) = http_get(&format!("http://{addr}/health"), Duration::from_secs(2)) {
                let health: serde_json::Value = serde_json::from_str(&body).unwrap();
                if health["source_state"] == "degraded" {
                    degraded = true;
                    break;
                }
            }
            std::thread::sleep(Duration::from_millis(25));
        }
        assert!(degraded, "/health never reported a degraded source");
        stop.stop();
        let summary = handle.join().unwrap().unwrap();
        assert_eq!(summary.predicted, 0);
    }

    #[test]
    fn evaluate_live_perfect_oracle_is_zero_error() {
        let ds = crate::sim::tests_support::tiny_two_channel_dataset(50, 17);
        let records: Vec<PredictionRecord> = ds
            .samples
            .iter()
            .map(|s| PredictionRecord {
                timestamp: s.timestamp,
                power: s.lines.iter().map(|l| l.p).collect(),
                on: s.lines.iter().map(|l| l.p > 5.0).collect(),
                model_digest: "oracle".to_string(),
                latency_ms: 0.0,
            })
            .collect();
        let (report, stats) =
            evaluate_live(&records, &ds, &SubHorizonSpec::new(10).unwrap(), 5.0).unwrap();
        assert_eq!(stats.matched, 50);
        assert_eq!(report.avg_mae, 0.0);
        assert_eq!(report.avg_f1, 1.0);
    }

    #[test]
    fn evaluate_live_disjoint_ranges_is_coverage_error() {
        let ds = crate::sim::tests_support::tiny_two_channel_dataset(50, 19);
        let records: Vec<PredictionRecord> = (0..20)
            .map(|k| PredictionRecord {
                timestamp: 1e9 + k as f64,
                power: vec![0.0, 0.0],
                on: vec![false, false],
                model_digest: "oracle".to_string(),
                latency_ms: 0.0,
            })
            .collect();
        match evaluate_live(&records, &ds, &SubHorizonSpec::new(10).unwrap(), 5.0) {
            Err(Error::Validation(msg)) => assert!(msg.contains("misalignment"), "{msg}"),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }
}
