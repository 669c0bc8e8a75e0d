//! Paginated client for an Etherscan-style `tokentx` endpoint.
//!
//! Every fetched page is cached as its own file under a content-addressed
//! path (`pages/<2 hex>/<sha256>.json`), and `index.json` records each page
//! plus which queries were fetched to exhaustion. A repeated query that is
//! marked complete is served from disk without any HTTP traffic.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{sort_by_block, IngestError};
use crate::model::{Address, Transfer};

pub const API_KEY_ENV: &str = "ELL_EXPLORER_API_KEY";

#[derive(Debug, Clone)]
pub struct ExplorerConfig {
    pub endpoint: String,
    pub token: String,
    pub page_size: usize,
    pub cache_dir: PathBuf,
    pub max_requests_per_second: f64,
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub timeout: Duration,
}

impl ExplorerConfig {
    pub fn new(endpoint: impl Into<String>, token: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        ExplorerConfig {
            endpoint: endpoint.into(),
            token: token.into(),
            page_size: 1000,
            cache_dir: cache_dir.into(),
            max_requests_per_second: 5.0,
            max_retries: 5,
            initial_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(30),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CacheIndex {
    pages: BTreeMap<String, PageEntry>,
    /// Query key -> number of non-empty pages, for queries fetched to the end.
    complete: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PageEntry {
    endpoint: String,
    token: String,
    page: u32,
    page_size: usize,
    rows: usize,
    file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ExplorerRow {
    hash: String,
    block_number: String,
    time_stamp: String,
    from: String,
    to: String,
    value: String,
    #[serde(default)]
    gas_price: Option<String>,
    #[serde(default)]
    gas_used: Option<String>,
    #[serde(default)]
    usd_value: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ExplorerResponse {
    #[serde(default)]
    status: String,
    #[serde(default)]
    message: String,
    result: serde_json::Value,
}

pub struct ExplorerClient {
    config: ExplorerConfig,
    api_key: String,
    agent: ureq::Agent,
    last_request: Option<Instant>,
    http_requests: usize,
}

impl ExplorerClient {
    pub fn new(config: ExplorerConfig, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(config.timeout))
                .build(),
        );
        ExplorerClient {
            config,
            api_key: api_key.into(),
            agent,
            last_request: None,
            http_requests: 0,
        }
    }

    /// Reads the API key from `ELL_EXPLORER_API_KEY`.
    pub fn from_env(config: ExplorerConfig) -> Result<Self, IngestError> {
        let key = std::env::var(API_KEY_ENV).map_err(|_| IngestError::MissingApiKey(API_KEY_ENV))?;
        Ok(Self::new(config, key))
    }

    /// HTTP requests issued by this client so far (retries included).
    pub fn http_request_count(&self) -> usize {
        self.http_requests
    }

    /// Fetches every page of the configured token, using the cache where
    /// possible.
    pub fn fetch_transfers(&mut self) -> Result<Vec<Transfer>, IngestError> {
        if self.config.page_size == 0 {
            return Err(IngestError::Transport("page_size must be positive".into()));
        }
        std::fs::create_dir_all(&self.config.cache_dir).map_err(|e| IngestError::io(&self.config.cache_dir, e))?;
        let mut index = self.load_index()?;
        let query = self.query_key();

        let mut rows: Vec<ExplorerRow> = Vec::new();
        if let Some(&pages) = index.complete.get(&query) {
            for page in 1..=pages {
                let cached = self
                    .read_cached_page(&index, page)?
                    .ok_or_else(|| IngestError::CacheCorrupt(format!("page {page} missing for a completed query")))?;
                rows.extend(cached);
            }
        } else {
            let mut page = 1u32;
            loop {
                let page_rows = match self.read_cached_page(&index, page)? {
                    Some(r) => r,
                    None => {
                        let fetched = self.request_page(page)?;
                        if !fetched.is_empty() {
                            self.write_page(&mut index, page, &fetched)?;
                        }
                        fetched
                    }
                };
                let n = page_rows.len();
                rows.extend(page_rows);
                if n < self.config.page_size {
                    let full_pages = if n == 0 { page - 1 } else { page };
                    index.complete.insert(query.clone(), full_pages);
                    break;
                }
                page += 1;
            }
            self.save_index(&index)?;
        }

        let mut transfers = rows
            .iter()
            .enumerate()
            .map(|(i, r)| self.to_transfer(i, r))
            .collect::<Result<Vec<_>, _>>()?;
        sort_by_block(&mut transfers)?;
        Ok(transfers)
    }

    fn query_key(&self) -> String {
        hex_digest(&[
            self.config.endpoint.as_bytes(),
            self.config.token.as_bytes(),
            self.config.page_size.to_string().as_bytes(),
        ])
    }

    fn page_key(&self, page: u32) -> String {
        hex_digest(&[
            self.config.endpoint.as_bytes(),
            self.config.token.as_bytes(),
            self.config.page_size.to_string().as_bytes(),
            page.to_string().as_bytes(),
        ])
    }

    fn index_path(&self) -> PathBuf {
        self.config.cache_dir.join("index.json")
    }

    fn load_index(&self) -> Result<CacheIndex, IngestError> {
        let path = self.index_path();
        if !path.exists() {
            return Ok(CacheIndex::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| IngestError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| IngestError::CacheCorrupt(format!("index.json: {e}")))
    }

    fn save_index(&self, index: &CacheIndex) -> Result<(), IngestError> {
        let path = self.index_path();
        let text = serde_json::to_string_pretty(index).expect("index serializes");
        std::fs::write(&path, text).map_err(|e| IngestError::io(&path, e))
    }

    fn read_cached_page(&self, index: &CacheIndex, page: u32) -> Result<Option<Vec<ExplorerRow>>, IngestError> {
        let key = self.page_key(page);
        let Some(entry) = index.pages.get(&key) else {
            return Ok(None);
        };
        let path = self.config.cache_dir.join(&entry.file);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| IngestError::CacheCorrupt(format!("{}: {e}", path.display())))?;
        let rows: Vec<ExplorerRow> =
            serde_json::from_str(&text).map_err(|e| IngestError::CacheCorrupt(format!("{}: {e}", path.display())))?;
        if rows.len() != entry.rows {
            return Err(IngestError::CacheCorrupt(format!(
                "{}: expected {} rows, found {}",
                path.display(),
                entry.rows,
                rows.len()
            )));
        }
        Ok(Some(rows))
    }

    fn write_page(&self, index: &mut CacheIndex, page: u32, rows: &[ExplorerRow]) -> Result<(), IngestError> {
        let key = self.page_key(page);
        let rel = Path::new("pages").join(&key[..2]).join(format!("{key}.json"));
        let path = self.config.cache_dir.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| IngestError::io(parent, e))?;
        }
        let text = serde_json::to_string(rows).expect("rows serialize");
        std::fs::write(&path, text).map_err(|e| IngestError::io(&path, e))?;
        index.pages.insert(
            key,
            PageEntry {
                endpoint: self.config.endpoint.clone(),
                token: self.config.token.clone(),
                page,
                page_size: self.config.page_size,
                rows: rows.len(),
                file: rel.to_string_lossy().replace('\\', "/"),
            },
        );
        // Persist after each page so an interrupted run resumes.
        self.save_index(index)
    }

    fn throttle(&mut self) {
        if self.config.max_requests_per_second > 0.0 {
            let interval = Duration::from_secs_f64(1.0 / self.config.max_requests_per_second);
            if let Some(last) = self.last_request {
                let elapsed = last.elapsed();
                if elapsed < interval {
                    thread::sleep(interval - elapsed);
                }
            }
        }
        self.last_request = Some(Instant::now());
    }

    fn request_page(&mut self, page: u32) -> Result<Vec<ExplorerRow>, IngestError> {
        let mut backoff = self.config.initial_backoff;
        let mut attempts = 0u32;
        loop {
            self.throttle();
            attempts += 1;
            self.http_requests += 1;
            let mut response = self
                .agent
                .get(&self.config.endpoint)
                .query("module", "account")
                .query("action", "tokentx")
                .query("contractaddress", &self.config.token)
                .query("page", page.to_string())
                .query("offset", self.config.page_size.to_string())
                .query("sort", "asc")
                .query("apikey", &self.api_key)
                .call()
                .map_err(|e| IngestError::Transport(e.to_string()))?;
            let status = response.status().as_u16();
            let body = response
                .body_mut()
                .read_to_string()
                .map_err(|e| IngestError::Transport(e.to_string()))?;

            let rate_limited = status == 429 || (status == 200 && body_signals_rate_limit(&body));
            if rate_limited {
                if attempts > self.config.max_retries {
                    return Err(IngestError::RateLimited { attempts });
                }
                log::warn!("rate limited on page {page}, backing off {backoff:?}");
                thread::sleep(backoff);
                backoff = (backoff * 2).min(self.config.max_backoff);
                continue;
            }
            if !(200..300).contains(&status) {
                return Err(IngestError::HttpError {
                    status,
                    body: body.chars().take(200).collect(),
                });
            }
            return parse_page(&body);
        }
    }

    fn to_transfer(&self, i: usize, r: &ExplorerRow) -> Result<Transfer, IngestError> {
        let bad = |reason: String| IngestError::MalformedRow { row: i, reason };
        let gas_fee = match (&r.gas_price, &r.gas_used) {
            (Some(p), Some(u)) => {
                let p: f64 = p.parse().map_err(|_| bad(format!("gasPrice {p:?}")))?;
                let u: f64 = u.parse().map_err(|_| bad(format!("gasUsed {u:?}")))?;
                p * u / 1e18
            }
            _ => 0.0,
        };
        let usd_value = match &r.usd_value {
            Some(v) if !v.is_empty() => crate::model::decimal::parse_non_negative(v).map_err(bad)?,
            _ => 0.0,
        };
        Ok(Transfer {
            tx_hash: r.hash.clone(),
            block_number: r
                .block_number
                .parse()
                .map_err(|_| bad(format!("blockNumber {:?}", r.block_number)))?,
            timestamp: super::parse_timestamp(&r.time_stamp).map_err(bad)?,
            from: Address::new(&r.from).map_err(|e| bad(e.to_string()))?,
            to: Address::new(&r.to).map_err(|e| bad(e.to_string()))?,
            token: self.config.token.clone(),
            raw_amount: r.value.parse().map_err(|_| bad(format!("value {:?}", r.value)))?,
            usd_value,
            gas_fee,
        })
    }
}

fn body_signals_rate_limit(body: &str) -> bool {
    serde_json::from_str::<ExplorerResponse>(body)
        .ok()
        .and_then(|r| r.result.as_str().map(|s| s.to_ascii_lowercase().contains("rate limit")))
        .unwrap_or(false)
}

fn parse_page(body: &str) -> Result<Vec<ExplorerRow>, IngestError> {
    let resp: ExplorerResponse = serde_json::from_str(body).map_err(|e| IngestError::HttpError {
        status: 200,
        body: format!("unparseable body ({e}): {}", body.chars().take(200).collect::<String>()),
    })?;
    match resp.result {
        serde_json::Value::Array(items) => items
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::from_value(v).map_err(|e| IngestError::MalformedRow {
                    row: i,
                    reason: e.to_string(),
                })
            })
            .collect(),
        _ if resp.status == "0" && resp.message.to_ascii_lowercase().contains("no transactions") => Ok(Vec::new()),
        other => Err(IngestError::HttpError {
            status: 200,
            body: format!("{}: {}", resp.message, other).chars().take(200).collect(),
        }),
    }
}

fn hex_digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// One-shot fetch with a caller-supplied API key.
pub fn fetch_explorer(config: &ExplorerConfig, api_key: &str) -> Result<Vec<Transfer>, IngestError> {
    ExplorerClient::new(config.clone(), api_key).fetch_transfers()
}
