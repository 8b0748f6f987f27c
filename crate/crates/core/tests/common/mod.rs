#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use bl_engine::marketdata::synthetic::{generate_market, MarketParams};
use bl_engine::marketdata::{write_price_table, PriceFiles, PriceTable};

/// Minimal chat-completions stand-in; `reply(i)` gives the message content
/// for the i-th request.
pub struct FakeServer {
    pub base_url: String,
    pub hits: Arc<AtomicUsize>,
}

impl FakeServer {
    pub fn start<F>(reply: F) -> Self
    where
        F: Fn(usize) -> String + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let reply = Arc::new(reply);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let counter = counter.clone();
                let reply = reply.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut len = 0usize;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 {
                            return;
                        }
                        let lower = line.to_ascii_lowercase();
                        if let Some(v) = lower.strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                        if line == "\r\n" {
                            break;
                        }
                    }
                    let mut body = vec![0u8; len];
                    let _ = reader.read_exact(&mut body);
                    let i = counter.fetch_add(1, Ordering::SeqCst);
                    let content = reply(i);
                    let payload = serde_json::json!({
                        "choices": [{"message": {"role": "assistant", "content": content}}]
                    })
                    .to_string();
                    let resp = format!(
                        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                        payload.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                });
            }
        });
        Self {
            base_url: format!("http://{addr}/v1"),
            hits,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

pub fn market(n_assets: usize, n_days: usize, seed: u64) -> PriceTable {
    generate_market(&MarketParams {
        n_assets,
        n_days,
        seed,
        ..MarketParams::default()
    })
}

pub fn write_market(dir: &Path, table: &PriceTable) -> PriceFiles {
    let files = PriceFiles {
        prices: dir.join("prices.csv"),
        sectors: dir.join("sectors.csv"),
        market: dir.join("market.csv"),
        metadata: dir.join("metadata.csv"),
    };
    write_price_table(table, &files).unwrap();
    files
}

/// A config file naming `files`, a cache in `dir`, and the extra lines.
pub fn write_config(dir: &Path, files: &PriceFiles, extra: &str) -> PathBuf {
    let text = format!(
        "prices = {}\nsectors = {}\nmarket = {}\nmetadata = {}\ncache = {}\n{extra}",
        files.prices.display(),
        files.sectors.display(),
        files.market.display(),
        files.metadata.display(),
        dir.join("views.jsonl").display(),
    );
    let path = dir.join("run.conf");
    std::fs::write(&path, text).unwrap();
    path
}

/// Invoke the CLI in-process and return its exit code.
pub fn run_cli(args: &[&str]) -> i32 {
    let mut argv = vec!["bl-engine"];
    argv.extend_from_slice(args);
    bl_engine::cli::main_with_args(argv)
}
