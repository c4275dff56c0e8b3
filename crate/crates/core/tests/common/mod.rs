//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use fedstream::featurizer::Binning;
use fedstream::{ClassLabel, LogRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const HOSTS: [&str; 8] = [
    "www.example.com",
    "cdn.example.net",
    "api.shop.example.org",
    "login.example.com",
    "static.news.example.co.uk",
    "x9f3kq2z7.example.biz",
    "10.0.4.17",
    "update.vendor.example.io",
];
const PATHS: [&str; 6] = ["/", "/index.html", "/api/v1/items", "/login.php", "/wp-admin/setup.php", "/download/payload.exe"];
const AGENTS: [&str; 4] = [
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 Chrome/120.0 Safari/537.36",
    "curl/8.4.0",
    "python-requests/2.31",
    "Mozilla/5.0 (X11; Linux x86_64; rv:121.0) Gecko/20100101 Firefox/121.0",
];

/// Plausible HTTP proxy log record; roughly one in four is malicious-looking.
pub fn http_record<R: Rng>(rng: &mut R, i: usize, labeled: bool) -> LogRecord {
    let bad = rng.random::<f64>() < 0.25;
    let host = if bad { HOSTS[5 + rng.random_range(0..3)] } else { HOSTS[rng.random_range(0..5)] };
    let path = if bad { PATHS[3 + rng.random_range(0..3)] } else { PATHS[rng.random_range(0..3)] };
    let query = if rng.random::<bool>() { format!("?id={}&q=a{}", rng.random_range(0..100_000), rng.random_range(0..999)) } else { String::new() };
    let mut r = LogRecord::new(format!("rec-{i:08}"), 1_700_000_000 + i as i64 * 7)
        .with_field("url", format!("http://{host}{path}{query}"))
        .with_field("host", host)
        .with_field("method", if rng.random::<f64>() < 0.8 { "GET" } else { "POST" })
        .with_field("status", ["200", "200", "304", "404", "500"][rng.random_range(0..5)])
        .with_field("bytes_in", rng.random_range(100..5_000).to_string())
        .with_field("bytes_out", rng.random_range(200..2_000_000).to_string())
        .with_field("content_type", ["text/html", "application/json", "image/png", "application/octet-stream"][rng.random_range(0..4)])
        .with_field("user_agent", AGENTS[if bad { 1 + rng.random_range(0..2) } else { rng.random_range(0..4) }])
        .with_field("referrer", if bad { String::new() } else { format!("http://{}/", HOSTS[0]) })
        .with_field("dst_port", if bad { "8080" } else { "443" })
        .with_field("duration_ms", rng.random_range(1..3_000).to_string());
    if labeled {
        r = r.with_label(if bad { ClassLabel::Malicious } else { ClassLabel::Benign }, "fixture");
    }
    r
}

/// A value inside (or slightly outside, to exercise clamping) a feature's
/// domain.
pub fn random_value<R: Rng>(rng: &mut R, b: &Binning) -> f64 {
    match *b {
        Binning::Numeric { lo, hi, .. } => {
            let w = hi - lo;
            rng.random_range(lo - 0.1 * w..hi + 0.1 * w)
        }
        Binning::Categorical { count } => rng.random_range(0..count) as f64,
    }
}

/// Bin index by the equal-width rule, written independently of the library.
pub fn oracle_bin(b: &Binning, x: f64) -> usize {
    match *b {
        Binning::Numeric { lo, hi, bins } => {
            let width = (hi - lo) / bins as f64;
            let raw = ((x - lo) / width).floor();
            if raw.is_nan() || raw < 0.0 {
                0
            } else {
                (raw as usize).min(bins as usize - 1)
            }
        }
        Binning::Categorical { count } => (x.max(0.0) as usize).min(count as usize - 1),
    }
}

/// Largest-remainder apportionment, written independently of the library.
pub fn oracle_apportion(weights: &[f64], m: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w * m as f64 / total).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| *q as usize).collect();
    let mut left = m - seats.iter().sum::<usize>();
    let mut taken = vec![false; weights.len()];
    while left > 0 {
        let mut best: Option<usize> = None;
        for i in 0..weights.len() {
            if taken[i] {
                continue;
            }
            let r = quotas[i] - quotas[i].floor();
            match best {
                Some(b) if quotas[b] - quotas[b].floor() >= r => {}
                _ => best = Some(i),
            }
        }
        let b = best.expect("a remaining index");
        taken[b] = true;
        seats[b] += 1;
        left -= 1;
    }
    seats
}

/// Relative difference with an exact-zero guard.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
