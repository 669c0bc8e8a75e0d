//! Loading and writing transfer dumps, label files and snapshots, plus an
//! explorer-API client with an on-disk page cache.

mod explorer;

pub use explorer::{fetch_explorer, ExplorerClient, ExplorerConfig, API_KEY_ENV};

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Address, AddressLabel, LabelCategory, LiquiditySnapshot, MarketSnapshot, Transfer};

/// Column order of the canonical transfer CSV.
pub const TRANSFER_COLUMNS: [&str; 9] = [
    "tx_hash",
    "block_number",
    "timestamp",
    "from",
    "to",
    "token",
    "raw_amount",
    "usd_value",
    "gas_fee",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch: missing column {0:?}")]
    SchemaMismatch(String),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("dataset contains no transfers")]
    EmptyDataset,
    #[error("entry {index}: unknown label category {category:?}")]
    UnknownCategory { index: usize, category: String },
    #[error("{path}: invalid JSON: {reason}")]
    Json { path: PathBuf, reason: String },
    #[error("no transfers.csv or transfers.jsonl in {0}")]
    MissingTransfers(PathBuf),
    #[error("environment variable {0} is not set")]
    MissingApiKey(&'static str),
    #[error("HTTP {status}: {body}")]
    HttpError { status: u16, body: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cache corrupt: {0}")]
    CacheCorrupt(String),
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferFormat {
    Csv,
    Jsonl,
}

impl TransferFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => TransferFormat::Jsonl,
            _ => TransferFormat::Csv,
        }
    }
}

/// Everything loaded for one token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetBundle {
    pub transfers: Vec<Transfer>,
    pub labels: Vec<AddressLabel>,
    pub pool: Option<LiquiditySnapshot>,
    pub market: Option<MarketSnapshot>,
}

impl DatasetBundle {
    /// Loads `transfers.csv` (or `transfers.jsonl`) and, when present,
    /// `labels.json`, `pool.json` and `market.json` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, IngestError> {
        let csv = dir.join("transfers.csv");
        let jsonl = dir.join("transfers.jsonl");
        let transfers = if csv.exists() {
            parse_transfers(&csv, TransferFormat::Csv)?
        } else if jsonl.exists() {
            parse_transfers(&jsonl, TransferFormat::Jsonl)?
        } else {
            return Err(IngestError::MissingTransfers(dir.to_path_buf()));
        };
        let labels_path = dir.join("labels.json");
        let labels = if labels_path.exists() {
            parse_labels(&labels_path)?
        } else {
            Vec::new()
        };
        let pool = optional_json(&dir.join("pool.json"))?;
        let market = optional_json(&dir.join("market.json"))?;
        Ok(DatasetBundle {
            transfers,
            labels,
            pool,
            market,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), IngestError> {
        std::fs::create_dir_all(dir).map_err(|e| IngestError::io(dir, e))?;
        write_transfers(&dir.join("transfers.csv"), &self.transfers, TransferFormat::Csv)?;
        write_json(&dir.join("labels.json"), &self.labels)?;
        if let Some(pool) = &self.pool {
            write_json(&dir.join("pool.json"), pool)?;
        }
        if let Some(market) = &self.market {
            write_json(&dir.join("market.json"), market)?;
        }
        Ok(())
    }
}

/// Reads a transfer dump. Rows come back sorted by block number, ties kept
/// in file order.
pub fn parse_transfers(path: &Path, format: TransferFormat) -> Result<Vec<Transfer>, IngestError> {
    let file = File::open(path).map_err(|e| IngestError::io(path, e))?;
    let mut transfers = match format {
        TransferFormat::Csv => read_csv(BufReader::new(file))?,
        TransferFormat::Jsonl => read_jsonl(BufReader::new(file), path)?,
    };
    if transfers.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    sort_by_block(&mut transfers)?;
    Ok(transfers)
}

/// Stable sort by block number; rejects timestamps that go backwards
/// across blocks.
pub(crate) fn sort_by_block(transfers: &mut [Transfer]) -> Result<(), IngestError> {
    transfers.sort_by_key(|t| t.block_number);
    let mut block_max_ts: Option<(u64, i64)> = None;
    let mut prev_max = i64::MIN;
    for (row, t) in transfers.iter().enumerate() {
        match block_max_ts {
            Some((b, ts)) if b == t.block_number => {
                block_max_ts = Some((b, ts.max(t.timestamp)));
            }
            _ => {
                if let Some((_, ts)) = block_max_ts {
                    prev_max = prev_max.max(ts);
                }
                block_max_ts = Some((t.block_number, t.timestamp));
            }
        }
        if t.timestamp < prev_max {
            return Err(IngestError::MalformedRow {
                row,
                reason: format!(
                    "timestamp {} in block {} precedes an earlier block's timestamp {}",
                    t.timestamp, t.block_number, prev_max
                ),
            });
        }
    }
    Ok(())
}

fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<Transfer>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            row: 0,
            reason: e.to_string(),
        })?
        .clone();
    let columns = column_positions(headers.iter())?;
    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| IngestError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        let field = |i: usize| record.get(columns[i]).unwrap_or("");
        out.push(parse_row(row, field)?);
    }
    Ok(out)
}

fn read_jsonl<R: BufRead>(reader: R, path: &Path) -> Result<Vec<Transfer>, IngestError> {
    let mut out = Vec::new();
    let mut row = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| IngestError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedRow {
                row,
                reason: e.to_string(),
            })?;
        if row == 0 {
            column_positions(value.keys().map(String::as_str))?;
        }
        let text: Vec<String> = TRANSFER_COLUMNS
            .iter()
            .map(|c| match value.get(*c) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(serde_json::Value::Null) | None => String::new(),
                Some(other) => other.to_string(),
            })
            .collect();
        out.push(parse_row(row, |i| text[i].as_str())?);
        row += 1;
    }
    Ok(out)
}

fn column_positions<'a>(headers: impl Iterator<Item = &'a str>) -> Result<[usize; 9], IngestError> {
    let by_name: HashMap<&str, usize> = headers.enumerate().map(|(i, h)| (h, i)).collect();
    let mut pos = [0usize; 9];
    for (i, col) in TRANSFER_COLUMNS.iter().enumerate() {
        pos[i] = *by_name
            .get(col)
            .ok_or_else(|| IngestError::SchemaMismatch(col.to_string()))?;
    }
    Ok(pos)
}

fn parse_row<'a>(row: usize, field: impl Fn(usize) -> &'a str) -> Result<Transfer, IngestError> {
    let bad = |reason: String| IngestError::MalformedRow { row, reason };
    let tx_hash = field(0).to_string();
    if tx_hash.is_empty() {
        return Err(bad("empty tx_hash".into()));
    }
    let block_number: u64 = field(1)
        .parse()
        .map_err(|_| bad(format!("invalid block_number {:?}", field(1))))?;
    let timestamp = parse_timestamp(field(2)).map_err(bad)?;
    let from = Address::new(field(3)).map_err(|e| bad(format!("from: {e}")))?;
    let to = Address::new(field(4)).map_err(|e| bad(format!("to: {e}")))?;
    let token = field(5).to_string();
    if token.is_empty() {
        return Err(bad("empty token".into()));
    }
    let raw = field(6);
    if raw.starts_with('-') {
        return Err(bad(format!("negative raw_amount {raw}")));
    }
    let raw_amount: u128 = raw.parse().map_err(|_| bad(format!("invalid raw_amount {raw:?}")))?;
    let usd_value = optional_decimal(field(7)).map_err(|r| bad(format!("usd_value: {r}")))?;
    let gas_fee = optional_decimal(field(8)).map_err(|r| bad(format!("gas_fee: {r}")))?;
    Ok(Transfer {
        tx_hash,
        block_number,
        timestamp,
        from,
        to,
        token,
        raw_amount,
        usd_value,
        gas_fee,
    })
}

/// Missing valuations are treated as 0.
fn optional_decimal(s: &str) -> Result<f64, String> {
    if s.is_empty() {
        return Ok(0.0);
    }
    crate::model::decimal::parse_non_negative(s)
}

/// Unix seconds, or an RFC 3339 timestamp normalised to UTC seconds.
pub fn parse_timestamp(s: &str) -> Result<i64, String> {
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    chrono::DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.timestamp())
        .map_err(|_| format!("invalid timestamp {s:?}"))
}

pub fn write_transfers(path: &Path, transfers: &[Transfer], format: TransferFormat) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| IngestError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| IngestError::io(path, e);
    match format {
        TransferFormat::Csv => {
            writeln!(w, "{}", TRANSFER_COLUMNS.join(",")).map_err(io)?;
            for t in transfers {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    csv_field(&t.tx_hash),
                    t.block_number,
                    t.timestamp,
                    t.from,
                    t.to,
                    csv_field(&t.token),
                    t.raw_amount,
                    t.usd_value,
                    t.gas_fee
                )
                .map_err(io)?;
            }
        }
        TransferFormat::Jsonl => {
            for t in transfers {
                let line = serde_json::json!({
                    "tx_hash": t.tx_hash,
                    "block_number": t.block_number,
                    "timestamp": t.timestamp,
                    "from": t.from,
                    "to": t.to,
                    "token": t.token,
                    "raw_amount": t.raw_amount.to_string(),
                    "usd_value": t.usd_value.to_string(),
                    "gas_fee": t.gas_fee.to_string(),
                });
                writeln!(w, "{line}").map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Deserialize)]
struct RawLabel {
    address: String,
    category: String,
    #[serde(default)]
    source: String,
}

pub fn parse_labels(path: &Path) -> Result<Vec<AddressLabel>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let raw: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|e| IngestError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    raw.into_iter()
        .enumerate()
        .map(|(index, v)| {
            let entry: RawLabel = serde_json::from_value(v).map_err(|e| IngestError::MalformedRow {
                row: index,
                reason: e.to_string(),
            })?;
            let category: LabelCategory = entry.category.parse().map_err(|_| IngestError::UnknownCategory {
                index,
                category: entry.category.clone(),
            })?;
            let address = Address::new(&entry.address).map_err(|e| IngestError::MalformedRow {
                row: index,
                reason: e.to_string(),
            })?;
            Ok(AddressLabel {
                address,
                category,
                source: entry.source,
            })
        })
        .collect()
}

pub fn parse_pool(path: &Path) -> Result<LiquiditySnapshot, IngestError> {
    read_json(path)
}

pub fn parse_market(path: &Path) -> Result<MarketSnapshot, IngestError> {
    read_json(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IngestError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn optional_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, IngestError> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IngestError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| IngestError::Json {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| IngestError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const HEADER: &str = "tx_hash,block_number,timestamp,from,to,token,raw_amount,usd_value,gas_fee";

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_three_rows_in_block_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "t.csv",
            &format!(
                "{HEADER}\n0x3,12,1700000120,0xA,0xB,tok,5,1.5,0.001\n\
                 0x1,10,1700000000,0xa,0xc,tok,7,2,0.001\n\
                 0x2,11,1700000060,0xc,0xb,tok,9,,\n"
            ),
        );
        let ts = parse_transfers(&p, TransferFormat::Csv).unwrap();
        assert_eq!(ts.len(), 3);
        assert_eq!(ts.iter().map(|t| t.block_number).collect::<Vec<_>>(), vec![10, 11, 12]);
        assert_eq!(ts[2].from.as_str(), "0xa");
        assert_eq!(ts[1].usd_value, 0.0);
    }

    #[test]
    fn negative_amount_is_malformed_at_its_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "t.csv",
            &format!("{HEADER}\n0x1,1,1,0xa,0xb,tok,5,1,0\n0x2,2,2,0xa,0xb,tok,-5,1,0\n"),
        );
        match parse_transfers(&p, TransferFormat::Csv) {
            Err(IngestError::MalformedRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "a.csv", "tx_hash,block_number\n0x1,1\n");
        assert!(matches!(
            parse_transfers(&p, TransferFormat::Csv),
            Err(IngestError::SchemaMismatch(c)) if c == "timestamp"
        ));
        let p = write_tmp(&dir, "b.csv", &format!("{HEADER}\n"));
        assert!(matches!(
            parse_transfers(&p, TransferFormat::Csv),
            Err(IngestError::EmptyDataset)
        ));
    }

    #[test]
    fn rfc3339_timestamps_normalise_to_utc() {
        assert_eq!(parse_timestamp("1970-01-01T01:00:00+01:00").unwrap(), 0);
        assert_eq!(parse_timestamp("1700000000").unwrap(), 1_700_000_000);
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn backwards_timestamp_across_blocks_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "t.csv",
            &format!("{HEADER}\n0x1,1,100,0xa,0xb,tok,5,1,0\n0x2,2,50,0xa,0xb,tok,5,1,0\n"),
        );
        assert!(matches!(
            parse_transfers(&p, TransferFormat::Csv),
            Err(IngestError::MalformedRow { row: 1, .. })
        ));
    }

    #[test]
    fn jsonl_accepts_numbers_and_strings() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "t.jsonl",
            "{\"tx_hash\":\"0x1\",\"block_number\":1,\"timestamp\":5,\"from\":\"0xa\",\"to\":\"0xb\",\
             \"token\":\"tok\",\"raw_amount\":\"100000000000000000000000\",\"usd_value\":2.5,\"gas_fee\":\"0.1\"}\n\n",
        );
        let ts = parse_transfers(&p, TransferFormat::Jsonl).unwrap();
        assert_eq!(ts[0].raw_amount, 100_000_000_000_000_000_000_000);
        assert_eq!(ts[0].usd_value, 2.5);
    }

    #[test]
    fn labels_parse_and_reject_unknown_category() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(
            &dir,
            "l.json",
            r#"[{"address":"0xAA","category":"hot_wallet","source":"arkham"}]"#,
        );
        let labels = parse_labels(&p).unwrap();
        assert_eq!(labels.len(), 1);
        assert_eq!(labels[0].category, LabelCategory::HotWallet);
        assert_eq!(labels[0].address.as_str(), "0xaa");

        let p = write_tmp(
            &dir,
            "bad.json",
            r#"[{"address":"0xa","category":"hot_wallet","source":"s"},
                {"address":"0xb","category":"bridge","source":"s"}]"#,
        );
        assert!(matches!(
            parse_labels(&p),
            Err(IngestError::UnknownCategory { index: 1, .. })
        ));
    }

    #[test]
    fn label_file_with_53_public_entries() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for i in 0..43 {
            entries.push(format!(
                r#"{{"address":"0xc{i:039x}","category":"smart_contract","source":"arkham"}}"#
            ));
        }
        for i in 0..10 {
            entries.push(format!(
                r#"{{"address":"0xd{i:039x}","category":"hot_wallet","source":"arkham"}}"#
            ));
        }
        let p = write_tmp(&dir, "l.json", &format!("[{}]", entries.join(",")));
        let labels = parse_labels(&p).unwrap();
        assert_eq!(labels.len(), 53);
        assert_eq!(
            labels.iter().filter(|l| l.category == LabelCategory::HotWallet).count(),
            10
        );
    }
}
