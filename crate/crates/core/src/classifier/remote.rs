//! HTTP client for an external pair-scoring service.
//!
//! Wire protocol:
//!
//! * `POST /score` with `{"task": str, "pairs": [[claim, text], ...]}`,
//!   answered by `{"probs": [float, ...]}`, order-aligned, each in `[0, 1]`.
//!   For the `threeway` task the reply carries three probabilities per pair,
//!   row-major in (CONTRADICT, NOT_ENOUGH_INFO, SUPPORT) order.
//! * `GET /healthz` answered by `{"status": "ok", "model": str}`.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{check_scores, Capabilities, ClassScores, ScoreBackend, TaskTag, TextPair, ThreeWayBackend};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub max_in_flight: usize,
    pub max_retries: usize,
    pub retry_backoff_ms: u64,
    pub max_batch: usize,
    pub timeout_secs: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8000".into(),
            max_in_flight: 4,
            max_retries: 3,
            retry_backoff_ms: 200,
            max_batch: 64,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreRequest {
    pub task: String,
    pub pairs: Vec<[String; 2]>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Health {
    pub status: String,
    pub model: String,
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct RemoteScorer {
    task: TaskTag,
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    permits: Permits,
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl RemoteScorer {
    pub fn new(task: TaskTag, config: RemoteConfig) -> Result<Self> {
        if config.max_in_flight == 0 || config.max_batch == 0 {
            return Err(Error::InvalidArgument(
                "max_in_flight and max_batch must be at least 1".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Transport {
                endpoint: config.endpoint.clone(),
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(RemoteScorer {
            task,
            permits: Permits {
                free: Mutex::new(config.max_in_flight),
                cv: Condvar::new(),
            },
            config,
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    pub fn health(&self) -> Result<Health> {
        let _permit = self.permits.acquire();
        let resp = self
            .client
            .get(self.url("/healthz"))
            .send()
            .map_err(|e| Error::Transport {
                endpoint: self.config.endpoint.clone(),
                attempts: 1,
                message: e.to_string(),
            })?;
        resp.json().map_err(|e| self.protocol(format!("bad health reply: {e}")))
    }

    fn protocol(&self, message: String) -> Error {
        Error::Protocol {
            endpoint: self.config.endpoint.clone(),
            message,
        }
    }

    fn post_once(&self, body: &ScoreRequest) -> std::result::Result<Vec<f64>, Attempt> {
        let resp = self
            .client
            .post(self.url("/score"))
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Attempt::Retry(format!("server returned {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(
                self.protocol(format!("server returned {status}: {text}")),
            ));
        }
        let parsed: ScoreResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(self.protocol(format!("malformed reply: {e}"))))?;
        Ok(parsed.probs)
    }

    /// Posts one chunk, retrying transport failures and 5xx replies with
    /// linear backoff. `per_pair` is the number of probabilities expected for
    /// each pair.
    fn post_chunk(&self, pairs: &[TextPair<'_>], per_pair: usize) -> Result<Vec<f64>> {
        let body = ScoreRequest {
            task: self.task.as_str().to_string(),
            pairs: pairs
                .iter()
                .map(|p| [p.claim.to_string(), p.text.to_string()])
                .collect(),
        };
        let _permit = self.permits.acquire();
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.post_once(&body) {
                Ok(probs) => {
                    check_scores(pairs.len() * per_pair, &probs).map_err(|m| self.protocol(m))?;
                    return Ok(probs);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("scorer {} attempt {attempt} failed: {msg}", self.config.endpoint);
                    last = msg;
                    if attempt < attempts {
                        thread::sleep(Duration::from_millis(self.config.retry_backoff_ms * attempt as u64));
                    }
                }
            }
        }
        Err(Error::Transport {
            endpoint: self.config.endpoint.clone(),
            attempts,
            message: last,
        })
    }

    fn score_flat(&self, pairs: &[TextPair<'_>], per_pair: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len() * per_pair);
        for chunk in pairs.chunks(self.config.max_batch) {
            out.extend(self.post_chunk(chunk, per_pair)?);
        }
        Ok(out)
    }
}

impl ScoreBackend for RemoteScorer {
    fn task(&self) -> TaskTag {
        self.task
    }

    fn score(&self, pairs: &[TextPair<'_>]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        self.score_flat(pairs, 1)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            concurrent_safe: true,
            trainable: false,
        }
    }
}

impl ThreeWayBackend for RemoteScorer {
    fn score_classes(&self, pairs: &[TextPair<'_>]) -> Result<Vec<ClassScores>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let flat = self.score_flat(pairs, 3)?;
        Ok(flat
            .chunks_exact(3)
            .map(|c| ClassScores {
                contradict: c[0],
                nei: c[1],
                support: c[2],
            })
            .collect())
    }
}
