//! Fill-mask backends: the HTTP client for real models, a disk-backed
//! response cache, and deterministic stubs used for testing and for
//! validating the causal estimator.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::masking::{Arm, MaskedSample};

pub const BACKEND_URL_ENV: &str = "SYNTAXEVAL_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FillRequest {
    pub text: String,
    #[serde(rename = "mask_token")]
    pub mask_sentinel: String,
    pub top_k: usize,
}

impl FillRequest {
    pub fn new(text: impl Into<String>, mask_sentinel: impl Into<String>) -> Self {
        FillRequest {
            text: text.into(),
            mask_sentinel: mask_sentinel.into(),
            top_k: 1,
        }
    }

    pub fn for_sample(sample: &MaskedSample, mask_sentinel: &str, top_k: usize) -> Self {
        FillRequest {
            text: sample.masked_text.clone(),
            mask_sentinel: mask_sentinel.to_owned(),
            top_k: top_k.max(1),
        }
    }

    pub fn sentinel_count(&self) -> usize {
        if self.mask_sentinel.is_empty() {
            return 0;
        }
        self.text.matches(self.mask_sentinel.as_str()).count()
    }

    fn cache_key(&self, backend_id: &str) -> String {
        let mut h = Sha256::new();
        h.update(backend_id.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(self).expect("request serializes"));
        hex_digest(&h.finalize())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub token: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillResponse {
    pub predictions: Vec<Vec<Candidate>>,
}

impl FillResponse {
    fn single(tokens: impl IntoIterator<Item = String>) -> Self {
        FillResponse {
            predictions: tokens
                .into_iter()
                .map(|token| vec![Candidate { token, score: 1.0 }])
                .collect(),
        }
    }

    /// Top-1 token per sentinel.
    pub fn top_tokens(&self) -> Vec<Option<&str>> {
        self.predictions
            .iter()
            .map(|c| c.first().map(|c| c.token.as_str()))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("HTTP status {status} after {attempts} attempt(s)")]
    Status { attempts: u32, status: u16 },

    #[error("malformed response body after {attempts} attempt(s): {message}")]
    MalformedBody { attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("backend {backend} cannot answer without the masked sample")]
    NeedsSample { backend: String },

    #[error("unknown backend spec {0:?} (expected http, oracle, constant:<tok>, random:<seed> or corruptor)")]
    UnknownSpec(String),

    #[error("response cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

impl BackendError {
    /// Whether the failure means the model server could not be reached.
    pub fn is_unreachable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport { .. } | BackendError::Status { .. }
        )
    }
}

/// Checks the response against the request: one candidate list per
/// sentinel, scores in `[0, 1]` and non-increasing.
pub fn validate_response(
    request: &FillRequest,
    response: &FillResponse,
) -> Result<(), BackendError> {
    let expected = request.sentinel_count();
    if response.predictions.len() != expected {
        return Err(BackendError::Protocol(format!(
            "expected {expected} prediction list(s), got {}",
            response.predictions.len()
        )));
    }
    for (i, list) in response.predictions.iter().enumerate() {
        if list.is_empty() {
            return Err(BackendError::Protocol(format!(
                "prediction list {i} is empty"
            )));
        }
        if list.iter().any(|c| !(0.0..=1.0).contains(&c.score)) {
            return Err(BackendError::Protocol(format!(
                "prediction list {i} has a score outside [0, 1]"
            )));
        }
        if list.windows(2).any(|w| w[1].score > w[0].score) {
            return Err(BackendError::Protocol(format!(
                "prediction list {i} is not sorted by score"
            )));
        }
    }
    Ok(())
}

fn check_request(request: &FillRequest) -> Result<usize, BackendError> {
    let n = request.sentinel_count();
    if n == 0 {
        return Err(BackendError::InvalidRequest(format!(
            "text contains no {:?} sentinel",
            request.mask_sentinel
        )));
    }
    Ok(n)
}

pub trait FillMaskBackend: Send + Sync {
    /// Stable identifier; part of the response cache key.
    fn id(&self) -> String;

    fn fill_masks(&self, request: &FillRequest) -> Result<FillResponse, BackendError>;

    /// Fills a request built from `sample`. Stubs that need the ground truth
    /// or the arm override this; everything else ignores the sample.
    fn fill_sample(
        &self,
        sample: &MaskedSample,
        request: &FillRequest,
    ) -> Result<FillResponse, BackendError> {
        let _ = sample;
        self.fill_masks(request)
    }
}

/// Answers every sentinel with the ground-truth token.
#[derive(Debug, Default, Clone)]
pub struct OracleBackend;

impl FillMaskBackend for OracleBackend {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn fill_masks(&self, _request: &FillRequest) -> Result<FillResponse, BackendError> {
        Err(BackendError::NeedsSample { backend: self.id() })
    }

    fn fill_sample(
        &self,
        sample: &MaskedSample,
        request: &FillRequest,
    ) -> Result<FillResponse, BackendError> {
        check_request(request)?;
        Ok(FillResponse::single(
            sample.ground_truth_tokens.iter().cloned(),
        ))
    }
}

#[derive(Debug, Clone)]
pub struct ConstantBackend {
    pub token: String,
}

impl ConstantBackend {
    pub fn new(token: impl Into<String>) -> Self {
        ConstantBackend {
            token: token.into(),
        }
    }
}

impl FillMaskBackend for ConstantBackend {
    fn id(&self) -> String {
        format!("constant:{}", self.token)
    }

    fn fill_masks(&self, request: &FillRequest) -> Result<FillResponse, BackendError> {
        let n = check_request(request)?;
        Ok(FillResponse::single(std::iter::repeat_n(
            self.token.clone(),
            n,
        )))
    }
}

/// Small Python vocabulary for the random stub.
const RANDOM_VOCAB: [&str; 24] = [
    "x", "i", "self", "data", "0", "1", "None", "True", "=", "(", ")", ":", ",", ".", "+", "==",
    "if", "for", "in", "return", "def", "not", "and", "'s'",
];

/// Draws tokens from a fixed vocabulary; a pure function of (seed, request).
#[derive(Debug, Clone)]
pub struct RandomBackend {
    pub seed: u64,
}

impl FillMaskBackend for RandomBackend {
    fn id(&self) -> String {
        format!("random:{}", self.seed)
    }

    fn fill_masks(&self, request: &FillRequest) -> Result<FillResponse, BackendError> {
        let n = check_request(request)?;
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(request.text.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let k = request.top_k.clamp(1, RANDOM_VOCAB.len());
        let predictions = (0..n)
            .map(|_| {
                let mut scores: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                scores.sort_by(|a, b| b.total_cmp(a));
                rand::seq::index::sample(&mut rng, RANDOM_VOCAB.len(), k)
                    .into_iter()
                    .zip(scores)
                    .map(|(i, score)| Candidate {
                        token: RANDOM_VOCAB[i].to_owned(),
                        score,
                    })
                    .collect()
            })
            .collect();
        Ok(FillResponse { predictions })
    }
}

pub const DEFAULT_JUNK_TOKEN: &str = "$";

/// Answers controls with the ground truth and treatments with a junk token,
/// which plants a negative effect of syntax-guided masking.
#[derive(Debug, Clone)]
pub struct CorruptorBackend {
    pub junk: String,
}

impl Default for CorruptorBackend {
    fn default() -> Self {
        CorruptorBackend {
            junk: DEFAULT_JUNK_TOKEN.to_owned(),
        }
    }
}

impl FillMaskBackend for CorruptorBackend {
    fn id(&self) -> String {
        "corruptor".into()
    }

    fn fill_masks(&self, _request: &FillRequest) -> Result<FillResponse, BackendError> {
        Err(BackendError::NeedsSample { backend: self.id() })
    }

    fn fill_sample(
        &self,
        sample: &MaskedSample,
        request: &FillRequest,
    ) -> Result<FillResponse, BackendError> {
        let n = check_request(request)?;
        Ok(match sample.arm {
            Arm::Control => FillResponse::single(sample.ground_truth_tokens.iter().cloned()),
            Arm::Treatment => FillResponse::single(std::iter::repeat_n(self.junk.clone(), n)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub base_url: String,
    pub retries: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        HttpConfig {
            base_url: base_url.into(),
            retries: 3,
            backoff_base: Duration::from_millis(250),
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore capping in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePass<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Client for `POST {base_url}/fill-mask`.
pub struct HttpBackend {
    config: HttpConfig,
    endpoint: String,
    client: reqwest::blocking::Client,
    gate: Gate,
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        let endpoint = format!("{}/fill-mask", config.base_url.trim_end_matches('/'));
        Ok(HttpBackend {
            gate: Gate::new(config.max_in_flight),
            config,
            endpoint,
            client,
        })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    fn attempt(&self, request: &FillRequest, attempts: u32) -> Result<FillResponse, Attempt> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(request)
            .send()
            .map_err(|e| {
                Attempt::Retry(BackendError::Transport {
                    attempts,
                    message: e.to_string(),
                })
            })?;
        let status = response.status();
        if !status.is_success() {
            let err = BackendError::Status {
                attempts,
                status: status.as_u16(),
            };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        let body = response.bytes().map_err(|e| {
            Attempt::Retry(BackendError::Transport {
                attempts,
                message: e.to_string(),
            })
        })?;
        serde_json::from_slice(&body).map_err(|e| {
            Attempt::Fatal(BackendError::MalformedBody {
                attempts,
                message: e.to_string(),
            })
        })
    }
}

impl FillMaskBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.base_url)
    }

    fn fill_masks(&self, request: &FillRequest) -> Result<FillResponse, BackendError> {
        check_request(request)?;
        let _pass = self.gate.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request, attempts) {
                Ok(response) => {
                    validate_response(request, &response)?;
                    return Ok(response);
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempts > self.config.retries {
                        return Err(e);
                    }
                    let wait = self.config.backoff_base * 2u32.pow(attempts - 1);
                    debug!("{}: {e}; retrying in {wait:?}", self.endpoint);
                    std::thread::sleep(wait);
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    response: FillResponse,
}

/// Append-only JSONL store of responses keyed by (backend id, request hash).
/// A truncated trailing line from an interrupted run is ignored on load.
pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, FillResponse>>,
    writer: Mutex<BufWriter<File>>,
}

impl ResponseCache {
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let cache_err = |e: std::io::Error| BackendError::Cache {
            path: path.to_owned(),
            message: e.to_string(),
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(cache_err)?;
            }
        }
        let mut entries = HashMap::new();
        let mut needs_newline = false;
        if path.exists() {
            let content = std::fs::read(path).map_err(cache_err)?;
            needs_newline = content.last().is_some_and(|&b| b != b'\n');
            for line in BufReader::new(content.as_slice()).lines() {
                let line = line.map_err(cache_err)?;
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, entry.response);
                    }
                    Err(e) => warn!("{}: ignoring unreadable cache line: {e}", path.display()),
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(cache_err)?;
        let mut writer = BufWriter::new(file);
        if needs_newline {
            writer
                .write_all(b"\n")
                .and_then(|_| writer.flush())
                .map_err(cache_err)?;
        }
        Ok(ResponseCache {
            path: path.to_owned(),
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &str) -> Option<FillResponse> {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(key)
            .cloned()
    }

    fn put(&self, key: String, response: &FillResponse) -> Result<(), BackendError> {
        let line = serde_json::to_string(&CacheLine {
            key: key.clone(),
            response: response.clone(),
        })
        .expect("response serializes");
        {
            let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| BackendError::Cache {
                    path: self.path.clone(),
                    message: e.to_string(),
                })?;
        }
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, response.clone());
        Ok(())
    }
}

/// Wraps a backend with the on-disk response cache.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
}

impl<B: FillMaskBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        CachedBackend { inner, cache }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

impl<B: FillMaskBackend> FillMaskBackend for CachedBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn fill_masks(&self, request: &FillRequest) -> Result<FillResponse, BackendError> {
        let key = request.cache_key(&self.inner.id());
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let response = self.inner.fill_masks(request)?;
        self.cache.put(key, &response)?;
        Ok(response)
    }
}

/// Parsed `--backend` value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendSpec {
    Http,
    Oracle,
    Constant(String),
    Random(u64),
    Corruptor,
}

impl std::str::FromStr for BackendSpec {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendSpec::Http),
            "oracle" => Ok(BackendSpec::Oracle),
            "corruptor" => Ok(BackendSpec::Corruptor),
            _ => {
                if let Some(tok) = s.strip_prefix("constant:") {
                    Ok(BackendSpec::Constant(tok.to_owned()))
                } else if let Some(seed) = s.strip_prefix("random:") {
                    seed.parse()
                        .map(BackendSpec::Random)
                        .map_err(|_| BackendError::UnknownSpec(s.to_owned()))
                } else {
                    Err(BackendError::UnknownSpec(s.to_owned()))
                }
            }
        }
    }
}

impl TryFrom<String> for BackendSpec {
    type Error = BackendError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl std::fmt::Display for BackendSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendSpec::Http => f.write_str("http"),
            BackendSpec::Oracle => f.write_str("oracle"),
            BackendSpec::Constant(t) => write!(f, "constant:{t}"),
            BackendSpec::Random(s) => write!(f, "random:{s}"),
            BackendSpec::Corruptor => f.write_str("corruptor"),
        }
    }
}

impl From<BackendSpec> for String {
    fn from(s: BackendSpec) -> Self {
        s.to_string()
    }
}

impl BackendSpec {
    /// Instantiates the backend. Only the HTTP backend uses the cache and
    /// the URL; stubs are cheap and deterministic.
    pub fn build(
        &self,
        http: Option<HttpConfig>,
        cache_path: Option<&Path>,
    ) -> Result<Box<dyn FillMaskBackend>, BackendError> {
        Ok(match self {
            BackendSpec::Oracle => Box::new(OracleBackend),
            BackendSpec::Constant(t) => Box::new(ConstantBackend::new(t.clone())),
            BackendSpec::Random(seed) => Box::new(RandomBackend { seed: *seed }),
            BackendSpec::Corruptor => Box::new(CorruptorBackend::default()),
            BackendSpec::Http => {
                let config = match http {
                    Some(c) => c,
                    None => HttpConfig::new(std::env::var(BACKEND_URL_ENV).map_err(|_| {
                        BackendError::InvalidRequest(format!("{BACKEND_URL_ENV} is not set"))
                    })?),
                };
                let backend = HttpBackend::new(config)?;
                match cache_path {
                    Some(p) => Box::new(CachedBackend::new(backend, ResponseCache::open(p)?)),
                    None => Box::new(backend),
                }
            }
        })
    }
}

#[derive(Debug, Error)]
#[error("sample has {expected} mask(s) but the response has {got} prediction list(s)")]
pub struct ReconstructError {
    pub expected: usize,
    pub got: usize,
}

/// Substitutes the top-1 prediction for each sentinel, in order. Sentinel
/// positions come from the sample's spans.
pub fn reconstruct(
    sample: &MaskedSample,
    response: &FillResponse,
    mask_sentinel: &str,
) -> Result<String, ReconstructError> {
    if response.predictions.len() != sample.mask_count {
        return Err(ReconstructError {
            expected: sample.mask_count,
            got: response.predictions.len(),
        });
    }
    let offsets = sample.sentinel_offsets(mask_sentinel.len());
    let text = &sample.masked_text;
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for (at, token) in offsets.into_iter().zip(response.top_tokens()) {
        out.push_str(&text[cursor..at]);
        out.push_str(token.unwrap_or(""));
        cursor = at + mask_sentinel.len();
    }
    out.push_str(&text[cursor..]);
    Ok(out)
}
