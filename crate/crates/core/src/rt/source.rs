//! Sample sources for the real-time loop: CSV replay with pacing, or polling
//! an HTTP endpoint that serves one JSON sample per request.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataio::{read_csv, Sample};
use crate::error::{Error, Result};
use crate::rt::StopHandle;

/// Replay pacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Pace {
    /// Honor the original inter-sample gaps.
    Realtime,
    /// Fixed delay between samples, seconds.
    Fixed(f64),
    /// No delay.
    MaxSpeed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SourceConfig {
    Replay { path: PathBuf, pace: Pace },
    HttpPoll { url: String, poll_interval: f64 },
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            SourceConfig::Replay { path, .. } => {
                if !path.is_file() {
                    return Err(Error::Validation(format!(
                        "replay source {} is not a readable file",
                        path.display()
                    )));
                }
                Ok(())
            }
            SourceConfig::HttpPoll { poll_interval, url } => {
                if *poll_interval <= 0.0 {
                    return Err(Error::Validation(
                        "poll_interval must be > 0 in http mode".to_string(),
                    ));
                }
                parse_url(url).map(|_| ())
            }
        }
    }
}

/// One ingested reading: the aggregate features the model consumes plus
/// optional per-line ground truth when the stream carries it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSample {
    pub timestamp: f64,
    pub main_v: f64,
    pub main_i: f64,
    pub main_p: f64,
    #[serde(default)]
    pub line_p: Option<Vec<f64>>,
    #[serde(default)]
    pub spurious: bool,
}

impl From<&Sample> for IngestSample {
    fn from(s: &Sample) -> Self {
        IngestSample {
            timestamp: s.timestamp,
            main_v: s.main_v,
            main_i: s.main_i,
            main_p: s.main_p,
            line_p: Some(s.lines.iter().map(|l| l.p).collect()),
            spurious: s.spurious,
        }
    }
}

/// Connection state surfaced through /health.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceState {
    Ok,
    Degraded,
    Exhausted,
}

/// One poll of a source. `Idle` means no sample was available this round
/// (for example a retry wait); the caller should publish health and poll
/// again.
#[derive(Debug, Clone, PartialEq)]
pub enum SourcePoll {
    Sample(IngestSample),
    Idle,
    Exhausted,
}

pub trait SampleSource {
    /// Blocks per pacing policy.
    fn next_sample(&mut self, stop: &StopHandle) -> Result<SourcePoll>;
    fn state(&self) -> SourceState;
    fn describe(&self) -> String;
}

pub fn open_source(config: &SourceConfig) -> Result<Box<dyn SampleSource>> {
    config.validate()?;
    match config {
        SourceConfig::Replay { path, pace } => Ok(Box::new(ReplaySource::open(path, *pace)?)),
        SourceConfig::HttpPoll { url, poll_interval } => Ok(Box::new(HttpPollSource::new(
            url.clone(),
            *poll_interval,
        ))),
    }
}

/// Sleeps in short slices so a stop request interrupts pacing promptly.
fn interruptible_sleep(total: Duration, stop: &StopHandle) {
    let deadline = Instant::now() + total;
    while !stop.is_set() {
        let now = Instant::now();
        if now >= deadline {
            break;
        }
        std::thread::sleep((deadline - now).min(Duration::from_millis(50)));
    }
}

pub struct ReplaySource {
    samples: Vec<Sample>,
    cursor: usize,
    pace: Pace,
    path: PathBuf,
}

impl ReplaySource {
    pub fn open(path: &Path, pace: Pace) -> Result<Self> {
        let (dataset, _) = read_csv(path)?;
        Ok(ReplaySource {
            samples: dataset.samples,
            cursor: 0,
            pace,
            path: path.to_path_buf(),
        })
    }
}

impl SampleSource for ReplaySource {
    fn next_sample(&mut self, stop: &StopHandle) -> Result<SourcePoll> {
        if self.cursor >= self.samples.len() || stop.is_set() {
            return Ok(SourcePoll::Exhausted);
        }
        let delay = match self.pace {
            Pace::MaxSpeed => 0.0,
            Pace::Fixed(dt) => {
                if self.cursor == 0 {
                    0.0
                } else {
                    dt
                }
            }
            Pace::Realtime => {
                if self.cursor == 0 {
                    0.0
                } else {
                    self.samples[self.cursor].timestamp - self.samples[self.cursor - 1].timestamp
                }
            }
        };
        if delay > 0.0 {
            interruptible_sleep(Duration::from_secs_f64(delay), stop);
            if stop.is_set() {
                return Ok(SourcePoll::Exhausted);
            }
        }
        let out = IngestSample::from(&self.samples[self.cursor]);
        self.cursor += 1;
        Ok(SourcePoll::Sample(out))
    }

    fn state(&self) -> SourceState {
        if self.cursor >= self.samples.len() {
            SourceState::Exhausted
        } else {
            SourceState::Ok
        }
    }

    fn describe(&self) -> String {
        format!("replay:{}", self.path.display())
    }
}

pub struct HttpPollSource {
    url: String,
    poll_interval: f64,
    backoff: f64,
    degraded: bool,
    first: bool,
}

impl HttpPollSource {
    pub fn new(url: String, poll_interval: f64) -> Self {
        HttpPollSource {
            url,
            poll_interval,
            backoff: 1.0,
            degraded: false,
            first: true,
        }
    }
}

impl SampleSource for HttpPollSource {
    fn next_sample(&mut self, stop: &StopHandle) -> Result<SourcePoll> {
        if stop.is_set() {
            return Ok(SourcePoll::Exhausted);
        }
        if !self.first {
            let wait = if self.degraded {
                self.backoff
            } else {
                self.poll_interval
            };
            interruptible_sleep(Duration::from_secs_f64(wait), stop);
            if stop.is_set() {
                return Ok(SourcePoll::Exhausted);
            }
        }
        self.first = false;
        match http_get(&self.url, Duration::from_secs(5))
            .and_then(|body| serde_json::from_str::<IngestSample>(&body).map_err(Error::from))
        {
            Ok(sample) => {
                self.degraded = false;
                self.backoff = 1.0;
                Ok(SourcePoll::Sample(sample))
            }
            Err(_) => {
                // Retry with exponential backoff, capped at 60 s; returning
                // Idle lets the caller surface the degraded state via /health
                // between attempts.
                self.degraded = true;
                self.backoff = (self.backoff * 2.0).min(60.0);
                Ok(SourcePoll::Idle)
            }
        }
    }

    fn state(&self) -> SourceState {
        if self.degraded {
            SourceState::Degraded
        } else {
            SourceState::Ok
        }
    }

    fn describe(&self) -> String {
        format!("http:{}", self.url)
    }
}

fn parse_url(url: &str) -> Result<(String, String)> {
    let rest = url
        .strip_prefix("http://")
        .ok_or_else(|| Error::Http(format!("only http:// URLs are supported, got {url}")))?;
    let (authority, path) = match rest.split_once('/') {
        Some((a, p)) => (a.to_string(), format!("/{p}")),
        None => (rest.to_string(), "/".to_string()),
    };
    let authority = if authority.contains(':') {
        authority
    } else {
        format!("{authority}:80")
    };
    Ok((authority, path))
}

/// Minimal HTTP/1.1 GET returning the response body; errors on non-2xx.
pub fn http_get(url: &str, timeout: Duration) -> Result<String> {
    let (authority, path) = parse_url(url)?;
    let addr = authority
        .parse()
        .map_err(|_| Error::Http(format!("bad address {authority}")))?;
    let mut stream = TcpStream::connect_timeout(&addr, timeout)
        .map_err(|e| Error::Http(format!("connect {authority}: {e}")))?;
    stream
        .set_read_timeout(Some(timeout))
        .map_err(|e| Error::Http(format!("set timeout: {e}")))?;
    let host = authority.split(':').next().unwrap_or("localhost");
    let request = format!("GET {path} HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\n\r\n");
    stream
        .write_all(request.as_bytes())
        .map_err(|e| Error::Http(format!("send: {e}")))?;
    let mut response = String::new();
    stream
        .read_to_string(&mut response)
        .map_err(|e| Error::Http(format!("read: {e}")))?;
    let (head, body) = response
        .split_once("\r\n\r\n")
        .ok_or_else(|| Error::Http("malformed response".to_string()))?;
    let status: u16 = head
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Http("missing status line".to_string()))?;
    if !(200..300).contains(&status) {
        return Err(Error::Http(format!("status {status}: {body}")));
    }
    Ok(body.to_string())
}
