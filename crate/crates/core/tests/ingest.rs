use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use ell_core::ingest::{parse_transfers, write_transfers, ExplorerClient, ExplorerConfig, IngestError, TransferFormat};
use ell_core::{Address, Transfer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Responder = dyn Fn(u32, usize) -> (u16, String) + Send + Sync;

struct MockServer {
    url: String,
    hits: Arc<AtomicUsize>,
}

/// Serves each request with `respond(page, hit_index)`, one connection per request.
fn mock_server(respond: Box<Responder>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/api", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            if reader.read_line(&mut request_line).is_err() {
                continue;
            }
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) if line == "\r\n" || line == "\n" => break,
                    Ok(_) => {}
                    Err(_) => break,
                }
            }
            let page = request_line
                .split_whitespace()
                .nth(1)
                .and_then(|target| target.split_once('?'))
                .and_then(|(_, q)| q.split('&').find_map(|kv| kv.strip_prefix("page=")))
                .and_then(|p| p.parse().ok())
                .unwrap_or(0);
            let hit = counter.fetch_add(1, Ordering::SeqCst);
            let (status, body) = respond(page, hit);
            let reason = if status == 200 { "OK" } else { "Too Many Requests" };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.flush();
        }
    });
    MockServer { url, hits }
}

fn page_body(page: u32, rows: usize) -> String {
    let result: Vec<serde_json::Value> = (0..rows)
        .map(|i| {
            let n = (page as usize - 1) * 1000 + i;
            serde_json::json!({
                "hash": format!("0x{n:064x}"),
                "blockNumber": (1000 + n).to_string(),
                "timeStamp": (1_700_000_000 + n as i64 * 3).to_string(),
                "from": format!("0x{:040x}", n % 17),
                "to": format!("0x{:040x}", 100 + n % 23),
                "value": format!("{}", (n as u128 + 1) * 1_000_000_000_000_000_000),
                "gasPrice": "5000000000",
                "gasUsed": "21000",
                "usdValue": format!("{}", n as f64 * 0.5),
            })
        })
        .collect();
    serde_json::json!({"status": "1", "message": "OK", "result": result}).to_string()
}

fn config(url: &str, cache: &std::path::Path) -> ExplorerConfig {
    let mut c = ExplorerConfig::new(url, "0xtoken", cache);
    c.page_size = 100;
    c.max_requests_per_second = 1000.0;
    c.initial_backoff = Duration::from_millis(5);
    c.max_backoff = Duration::from_millis(20);
    c.timeout = Duration::from_secs(10);
    c
}

fn cache_files(dir: &std::path::Path) -> usize {
    let pages = dir.join("pages");
    walk(&pages)
}

fn walk(dir: &std::path::Path) -> usize {
    let Ok(entries) = std::fs::read_dir(dir) else { return 0 };
    entries
        .flatten()
        .map(|e| {
            let p = e.path();
            if p.is_dir() {
                walk(&p)
            } else {
                1
            }
        })
        .sum()
}

#[test]
fn explorer_paginates_and_caches() {
    let server = mock_server(Box::new(|page, _| match page {
        1 => (200, page_body(1, 100)),
        2 => (200, page_body(2, 100)),
        _ => (200, page_body(page, 0)),
    }));
    let cache = tempfile::tempdir().unwrap();

    let mut client = ExplorerClient::new(config(&server.url, cache.path()), "key");
    let first = client.fetch_transfers().unwrap();
    assert_eq!(first.len(), 200);
    assert_eq!(client.http_request_count(), 3);
    assert_eq!(cache_files(cache.path()), 2);
    assert!(first.windows(2).all(|w| w[0].block_number <= w[1].block_number));
    assert_eq!(
        first[0].from,
        Address::new("0x0000000000000000000000000000000000000000").unwrap()
    );
    assert!((first[0].gas_fee - 5e9 * 21000.0 / 1e18).abs() < 1e-15);

    let hits_before = server.hits.load(Ordering::SeqCst);
    let mut again = ExplorerClient::new(config(&server.url, cache.path()), "key");
    let second = again.fetch_transfers().unwrap();
    assert_eq!(again.http_request_count(), 0);
    assert_eq!(server.hits.load(Ordering::SeqCst), hits_before);
    assert_eq!(first, second);
}

#[test]
fn explorer_retries_after_rate_limit() {
    let server = mock_server(Box::new(|page, hit| {
        if hit < 3 {
            (429, "{\"message\":\"slow down\"}".into())
        } else {
            (200, page_body(page, 40))
        }
    }));
    let cache = tempfile::tempdir().unwrap();
    let mut client = ExplorerClient::new(config(&server.url, cache.path()), "key");
    let rows = client.fetch_transfers().unwrap();
    assert_eq!(rows.len(), 40);
    assert_eq!(client.http_request_count(), 4);
}

#[test]
fn explorer_rate_limit_in_body_is_retried() {
    let server = mock_server(Box::new(|page, hit| {
        if hit == 0 {
            (
                200,
                "{\"status\":\"0\",\"message\":\"NOTOK\",\"result\":\"Max rate limit reached\"}".into(),
            )
        } else {
            (200, page_body(page, 10))
        }
    }));
    let cache = tempfile::tempdir().unwrap();
    let mut client = ExplorerClient::new(config(&server.url, cache.path()), "key");
    assert_eq!(client.fetch_transfers().unwrap().len(), 10);
    assert_eq!(client.http_request_count(), 2);
}

#[test]
fn explorer_surfaces_persistent_rate_limit() {
    let server = mock_server(Box::new(|_, _| (429, "{}".into())));
    let cache = tempfile::tempdir().unwrap();
    let mut cfg = config(&server.url, cache.path());
    cfg.max_retries = 2;
    let err = ExplorerClient::new(cfg, "key").fetch_transfers().unwrap_err();
    assert!(matches!(err, IngestError::RateLimited { attempts: 3 }), "{err}");
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn explorer_http_error_carries_status() {
    let server = mock_server(Box::new(|_, _| (503, "backend down".into())));
    let cache = tempfile::tempdir().unwrap();
    let err = ExplorerClient::new(config(&server.url, cache.path()), "key")
        .fetch_transfers()
        .unwrap_err();
    match err {
        IngestError::HttpError { status, body } => {
            assert_eq!(status, 503);
            assert!(body.contains("backend down"));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn explorer_detects_corrupt_cache() {
    let server = mock_server(Box::new(|page, _| (200, page_body(page, 5))));
    let cache = tempfile::tempdir().unwrap();
    ExplorerClient::new(config(&server.url, cache.path()), "key")
        .fetch_transfers()
        .unwrap();
    let pages = cache.path().join("pages");
    let sub = std::fs::read_dir(&pages).unwrap().next().unwrap().unwrap().path();
    let file = std::fs::read_dir(sub).unwrap().next().unwrap().unwrap().path();
    std::fs::write(file, "not json").unwrap();
    let err = ExplorerClient::new(config(&server.url, cache.path()), "key")
        .fetch_transfers()
        .unwrap_err();
    assert!(matches!(err, IngestError::CacheCorrupt(_)), "{err}");
}

fn random_transfers(n: usize, seed: u64) -> Vec<Transfer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let addresses: Vec<Address> = (0..5000)
        .map(|i| Address::new(&format!("0x{:040x}", i * 7919 + 1)).unwrap())
        .collect();
    let mut block = 30_000_000u64;
    let mut ts = 1_700_000_000i64;
    (0..n)
        .map(|i| {
            if rng.random_bool(0.3) {
                block += rng.random_range(1..4);
                ts += rng.random_range(3..10);
            }
            Transfer {
                tx_hash: format!("0x{i:064x}"),
                block_number: block,
                timestamp: ts,
                from: addresses[rng.random_range(0..addresses.len())].clone(),
                to: addresses[rng.random_range(0..addresses.len())].clone(),
                token: "BABY".into(),
                raw_amount: rng.random_range(0..u128::MAX / 4),
                usd_value: rng.random_range(0.0..50_000.0),
                gas_fee: rng.random_range(0.0..0.01),
            }
        })
        .collect()
}

#[test]
fn large_csv_round_trip() {
    let transfers = random_transfers(275_956, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transfers.csv");
    write_transfers(&path, &transfers, TransferFormat::Csv).unwrap();
    let back = parse_transfers(&path, TransferFormat::Csv).unwrap();
    assert_eq!(back.len(), 275_956);
    assert!(back == transfers);
}

#[test]
fn jsonl_round_trip() {
    let transfers = random_transfers(5000, 11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("transfers.jsonl");
    write_transfers(&path, &transfers, TransferFormat::Jsonl).unwrap();
    assert!(parse_transfers(&path, TransferFormat::Jsonl).unwrap() == transfers);
}
