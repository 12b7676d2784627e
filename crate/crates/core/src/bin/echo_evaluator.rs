//! Test child for the external evaluator protocol.
//!
//! Replies with the first `--specs` design entries (zero-padded). The fault
//! flags count requests per process, starting at 1.

use std::io::{self, BufRead, Write};
use std::thread;
use std::time::Duration;

use clap::Parser;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(about = "Echo evaluator for protocol tests")]
struct Args {
    /// Number of spec values per reply.
    #[arg(long)]
    specs: usize,
    /// Exit without replying to this request.
    #[arg(long)]
    crash_at: Option<u64>,
    /// Reply with a line that is not JSON.
    #[arg(long)]
    malformed_at: Option<u64>,
    /// Never reply to this request.
    #[arg(long)]
    hang_at: Option<u64>,
    /// Reply with a different id.
    #[arg(long)]
    wrong_id_at: Option<u64>,
    /// Always reply with a different id.
    #[arg(long)]
    wrong_id_always: bool,
    /// Reply with a different id to every request whose id is at least this
    /// (ids survive restarts, so this is unrecoverable).
    #[arg(long)]
    wrong_id_from_id: Option<u64>,
    /// Reply with an error object.
    #[arg(long)]
    error_at: Option<u64>,
}

fn main() {
    let args = Args::parse();
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut count = 0u64;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        count += 1;
        let req: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let id = req["id"].as_u64().unwrap_or(0);
        let design: Vec<f64> = req["design"]
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_f64).collect())
            .unwrap_or_default();
        let at = |flag: Option<u64>| flag == Some(count);
        if at(args.crash_at) {
            std::process::exit(3);
        }
        if at(args.hang_at) {
            loop {
                thread::sleep(Duration::from_secs(3600));
            }
        }
        let reply = if at(args.malformed_at) {
            "{\"id\": oops".to_string()
        } else if at(args.error_at) {
            json!({"id": id, "error": "requested failure"}).to_string()
        } else {
            let wrong = args.wrong_id_always
                || at(args.wrong_id_at)
                || args.wrong_id_from_id.is_some_and(|k| id >= k);
            let reply_id = if wrong { id + 1000 } else { id };
            let specs: Vec<f64> = (0..args.specs).map(|k| design.get(k).copied().unwrap_or(0.0)).collect();
            json!({"id": reply_id, "specs": specs}).to_string()
        };
        if writeln!(out, "{reply}").and_then(|_| out.flush()).is_err() {
            break;
        }
    }
}
