//! HTTP client for the model sidecar.
//!
//! Routes (all JSON bodies, images as base64 PNG):
//! `GET /health` -> `{dim, models}`,
//! `POST /generate {prompt}` -> `{image}`,
//! `POST /scene_embed {image}` -> `{vector}`,
//! `POST /detect {image}` -> `{detections: [{label, score, box}]}`,
//! `POST /vl_score {image, text}` -> `{score}`.
//! The sidecar returns every detection; the score floor is applied here.

use std::cell::Cell;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::codec;
use super::{
    check_floor, check_prompt, finalize_detections, BackendKind, Detection, ModelBackend,
    SceneFeature,
};
use crate::error::{Error, Result};
use crate::geometry::Image;

thread_local! {
    static REQUESTS: Cell<u64> = const { Cell::new(0) };
}

/// Number of HTTP requests issued by the remote client on this thread.
pub fn remote_request_count() -> u64 {
    REQUESTS.with(Cell::get)
}

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        RemoteOptions {
            max_in_flight: 4,
            max_retries: 2,
            backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(120),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub dim: usize,
    #[serde(default)]
    pub models: serde_json::Value,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    image: String,
}

#[derive(Serialize)]
struct ImageRequest {
    image: String,
}

#[derive(Deserialize)]
struct SceneResponse {
    vector: Vec<f64>,
}

#[derive(Deserialize)]
struct DetectResponse {
    detections: Vec<Detection>,
}

#[derive(Serialize)]
struct VlRequest<'a> {
    image: String,
    text: &'a str,
}

#[derive(Deserialize)]
struct VlResponse {
    score: f64,
}

struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    max: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    base: String,
    agent: ureq::Agent,
    options: RemoteOptions,
    limiter: Limiter,
    dim: usize,
}

impl RemoteBackend {
    /// Connects and reads the feature dimension from `/health`.
    pub fn connect(endpoint: &str, options: RemoteOptions) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(options.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut backend = RemoteBackend {
            base: endpoint.trim_end_matches('/').to_string(),
            agent,
            limiter: Limiter {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                max: options.max_in_flight.max(1),
            },
            options,
            dim: 0,
        };
        let health: HealthResponse = backend.call("/health", None::<&()>)?;
        backend.dim = health.dim;
        Ok(backend)
    }

    fn call<B: Serialize, T: DeserializeOwned>(&self, route: &str, body: Option<&B>) -> Result<T> {
        let url = format!("{}{}", self.base, route);
        let _permit = self.limiter.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            REQUESTS.with(|c| c.set(c.get() + 1));
            let outcome = match body {
                Some(b) => self.agent.post(&url).send_json(b),
                None => self.agent.get(&url).call(),
            };
            let (retryable, message) = match outcome {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp.body_mut().read_json::<T>().map_err(|e| Error::Transport {
                            endpoint: url.clone(),
                            attempts,
                            retryable: false,
                            message: format!("malformed response body: {e}"),
                        });
                    }
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    (status >= 500, format!("status {status}: {text}"))
                }
                Err(e) => (true, e.to_string()),
            };
            if !retryable || attempts > self.options.max_retries {
                return Err(Error::Transport {
                    endpoint: url,
                    attempts,
                    retryable,
                    message,
                });
            }
            std::thread::sleep(self.options.backoff * attempts);
        }
    }
}

impl ModelBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn generate_image(&self, prompt: &str) -> Result<Image> {
        check_prompt(prompt)?;
        let resp: GenerateResponse = self.call("/generate", Some(&GenerateRequest { prompt }))?;
        codec::from_base64_png(&resp.image)
    }

    fn scene_embed(&self, img: &Image) -> Result<SceneFeature> {
        let req = ImageRequest {
            image: codec::to_base64_png(img)?,
        };
        let resp: SceneResponse = self.call("/scene_embed", Some(&req))?;
        if resp.vector.len() != self.dim {
            return Err(Error::InvalidFeature(format!(
                "sidecar returned dimension {} but announced {}",
                resp.vector.len(),
                self.dim
            )));
        }
        SceneFeature::new(resp.vector)
    }

    fn detect(&self, img: &Image, score_floor: f64) -> Result<Vec<Detection>> {
        check_floor(score_floor)?;
        let req = ImageRequest {
            image: codec::to_base64_png(img)?,
        };
        let resp: DetectResponse = self.call("/detect", Some(&req))?;
        Ok(finalize_detections(resp.detections, score_floor))
    }

    fn vl_score(&self, img: &Image, text: &str) -> Result<f64> {
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("empty caption".into()));
        }
        let req = VlRequest {
            image: codec::to_base64_png(img)?,
            text,
        };
        let resp: VlResponse = self.call("/vl_score", Some(&req))?;
        if !(0.0..=1.0).contains(&resp.score) {
            return Err(Error::InvalidFeature(format!(
                "vision-language score {} outside [0, 1]",
                resp.score
            )));
        }
        Ok(resp.score)
    }
}
