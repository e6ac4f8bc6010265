//! Blocking JSON-over-HTTP client with timeout, bounded retries with
//! exponential backoff, bearer auth and an in-flight request cap.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable holding the bearer token for remote backends.
pub const TOKEN_ENV: &str = "SYNTHRANK_LLM_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            initial_backoff_ms: 250,
            max_in_flight: 8,
        }
    }
}

struct InFlight {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("semaphore poisoned") += 1;
        self.0.freed.notify_one();
    }
}

pub(crate) struct JsonClient {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
    in_flight: InFlight,
}

impl JsonClient {
    pub(crate) fn new(config: HttpConfig, token: Option<String>) -> Result<Self> {
        if !config.timeout_secs.is_finite() || config.timeout_secs <= 0.0 {
            return Err(Error::Config("http timeout_secs must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("cannot build http client: {e}")))?;
        let in_flight = InFlight::new(config.max_in_flight);
        Ok(Self { config, client, token, in_flight })
    }

    /// POST with retries. `capability` names the feature an endpoint provides;
    /// when set, HTTP 404/501 become [`Error::Capability`].
    pub(crate) fn post<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
        capability: Option<&str>,
    ) -> Result<R> {
        let mut attempt = 0;
        loop {
            match self.post_once(path, body, capability) {
                Err(e) if e.is_retryable() && attempt < self.config.max_retries => {
                    let wait = self.config.initial_backoff_ms.saturating_mul(1 << attempt.min(16));
                    tracing::warn!(attempt, wait_ms = wait, error = %e, "retrying request");
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn post_once<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
        capability: Option<&str>,
    ) -> Result<R> {
        let _permit = self.in_flight.acquire();
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), path);
        let mut req = self.client.post(url).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Error::Gateway { message: format!("POST {path}: {e}"), retryable: true })?;
        let status = resp.status();
        if status.is_success() {
            return resp.json::<R>().map_err(|e| Error::Gateway {
                message: format!("POST {path}: malformed response: {e}"),
                retryable: false,
            });
        }
        let code = status.as_u16();
        if let Some(what) = capability {
            if code == 404 || code == 501 {
                return Err(Error::Capability(format!("backend does not support {what} (HTTP {code})")));
            }
        }
        Err(Error::Gateway {
            message: format!("POST {path}: HTTP {code}"),
            retryable: code == 429 || status.is_server_error(),
        })
    }
}
