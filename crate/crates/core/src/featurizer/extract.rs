//! Raw-field extractors behind the schema's `extract` key.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extract {
    /// Numeric: parse as a number. Categorical: the raw string.
    #[default]
    Value,
    Log1p,
    Length,
    Entropy,
    DigitRatio,
    UpperRatio,
    LetterRatio,
    VowelRatio,
    SpecialRatio,
    CharCount,
    TokenCount,
    MaxTokenLength,
    DigitRun,
    PathDepth,
    PathLength,
    QueryParams,
    QueryLength,
    IsIp,
    HourOfDay,
    DayOfWeek,
    // categorical
    StatusClass,
    UaFamily,
    Tld,
    FileExtension,
    MimeType,
}

impl Extract {
    pub fn is_categorical(self) -> bool {
        matches!(self, Extract::StatusClass | Extract::UaFamily | Extract::Tld | Extract::FileExtension | Extract::MimeType)
    }

    /// Numeric value of `raw`, or `None` when it cannot be computed.
    pub fn numeric(self, raw: &str, chars: Option<&str>) -> Option<f64> {
        let v = match self {
            Extract::Value => raw.trim().parse::<f64>().ok()?,
            Extract::Log1p => {
                let v = raw.trim().parse::<f64>().ok()?;
                if v < 0.0 {
                    return None;
                }
                v.ln_1p()
            }
            Extract::Length => raw.chars().count() as f64,
            Extract::Entropy => shannon_entropy(raw),
            Extract::DigitRatio => ratio(raw, |c| c.is_ascii_digit()),
            Extract::UpperRatio => ratio(raw, |c| c.is_uppercase()),
            Extract::LetterRatio => ratio(raw, |c| c.is_alphabetic()),
            Extract::VowelRatio => ratio(raw, |c| "aeiouAEIOU".contains(c)),
            Extract::SpecialRatio => ratio(raw, |c| !c.is_alphanumeric()),
            Extract::CharCount => {
                let set = chars?;
                raw.chars().filter(|c| set.contains(*c)).count() as f64
            }
            Extract::TokenCount => tokens(raw).count() as f64,
            Extract::MaxTokenLength => tokens(raw).map(|t| t.chars().count()).max().unwrap_or(0) as f64,
            Extract::DigitRun => longest_run(raw, |c| c.is_ascii_digit()) as f64,
            Extract::PathDepth => url_path(raw).split('/').filter(|s| !s.is_empty()).count() as f64,
            Extract::PathLength => url_path(raw).chars().count() as f64,
            Extract::QueryParams => url_query(raw).map_or(0, |q| q.split('&').filter(|p| !p.is_empty()).count()) as f64,
            Extract::QueryLength => url_query(raw).map_or(0, |q| q.chars().count()) as f64,
            Extract::IsIp => {
                let host = url_host(raw);
                if host.parse::<std::net::IpAddr>().is_ok() {
                    1.0
                } else {
                    0.0
                }
            }
            Extract::HourOfDay => {
                let ms = raw.trim().parse::<i64>().ok()?;
                ((ms.div_euclid(3_600_000)) % 24) as f64
            }
            Extract::DayOfWeek => {
                // 1970-01-01 was a Thursday; Monday = 0.
                let ms = raw.trim().parse::<i64>().ok()?;
                ((ms.div_euclid(86_400_000) + 3) % 7) as f64
            }
            _ => return None,
        };
        Some(v)
    }

    /// Category string of `raw` for categorical extractors.
    pub fn category(self, raw: &str) -> Option<String> {
        let c = match self {
            Extract::Value => raw.trim().to_string(),
            Extract::StatusClass => {
                let code = raw.trim().parse::<u16>().ok()?;
                if !(100..600).contains(&code) {
                    return None;
                }
                format!("{}xx", code / 100)
            }
            Extract::UaFamily => ua_family(raw).to_string(),
            Extract::Tld => {
                let host = url_host(raw);
                if host.parse::<std::net::IpAddr>().is_ok() {
                    return None;
                }
                host.rsplit('.').next()?.to_ascii_lowercase()
            }
            Extract::FileExtension => {
                let last = url_path(raw).rsplit('/').next()?;
                let (_, ext) = last.rsplit_once('.')?;
                ext.to_ascii_lowercase()
            }
            Extract::MimeType => raw.split(';').next()?.trim().to_ascii_lowercase(),
            _ => return None,
        };
        if c.is_empty() {
            None
        } else {
            Some(c)
        }
    }
}

fn ratio(s: &str, pred: impl Fn(char) -> bool) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for c in s.chars() {
        total += 1;
        if pred(c) {
            hit += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}

fn shannon_entropy(s: &str) -> f64 {
    let mut counts: HashMap<char, usize> = HashMap::new();
    let mut total = 0usize;
    for c in s.chars() {
        *counts.entry(c).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return 0.0;
    }
    let mut freqs: Vec<usize> = counts.into_values().collect();
    freqs.sort_unstable();
    let n = total as f64;
    freqs
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn tokens(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty())
}

fn longest_run(s: &str, pred: impl Fn(char) -> bool) -> usize {
    let (mut best, mut cur) = (0, 0);
    for c in s.chars() {
        if pred(c) {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best
}

fn strip_scheme(url: &str) -> (&str, &str) {
    match url.find("://") {
        Some(i) => {
            let rest = &url[i + 3..];
            let end = rest.find(['/', '?']).unwrap_or(rest.len());
            (&rest[..end], &rest[end..])
        }
        None => ("", url),
    }
}

fn url_host(raw: &str) -> &str {
    let raw = raw.trim();
    let host = if raw.contains("://") { strip_scheme(raw).0 } else { raw };
    // strip port, but not inside a bracketed IPv6 literal
    if let Some(inner) = host.strip_prefix('[') {
        return inner.split(']').next().unwrap_or(inner);
    }
    match host.rsplit_once(':') {
        Some((h, port)) if !h.contains(':') && port.chars().all(|c| c.is_ascii_digit()) => h,
        _ => host,
    }
}

fn url_path(raw: &str) -> &str {
    let rest = strip_scheme(raw.trim()).1;
    rest.split(['?', '#']).next().unwrap_or("")
}

fn url_query(raw: &str) -> Option<&str> {
    let rest = strip_scheme(raw.trim()).1;
    let (_, q) = rest.split_once('?')?;
    Some(q.split('#').next().unwrap_or(""))
}

fn ua_family(ua: &str) -> &'static str {
    let ua = ua.to_ascii_lowercase();
    const RULES: &[(&str, &str)] = &[
        ("bot", "bot"),
        ("spider", "bot"),
        ("crawl", "bot"),
        ("curl", "curl"),
        ("wget", "wget"),
        ("python", "python"),
        ("java/", "java"),
        ("go-http", "go"),
        ("powershell", "powershell"),
        ("edg/", "edge"),
        ("opr/", "opera"),
        ("firefox", "firefox"),
        ("chrome", "chrome"),
        ("msie", "ie"),
        ("trident", "ie"),
        ("mobile", "mobile"),
        ("safari", "safari"),
    ];
    RULES.iter().find(|(needle, _)| ua.contains(needle)).map_or("other", |(_, fam)| fam)
}
