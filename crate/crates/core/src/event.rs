//! Raw event records and the plain-text event stream format.
//!
//! ```text
//! # evtr-events v1 width=320 height=180
//! 1000,12,40,1
//! 1032,13,40,-1
//! ```

use std::io::{BufRead, Write};

use thiserror::Error;

/// A single brightness-change report from one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    /// Timestamp in microseconds.
    pub t: u64,
    /// Column.
    pub u: u32,
    /// Row.
    pub v: u32,
    /// Polarity, `-1` or `+1`.
    pub p: i8,
}

impl Event {
    pub fn new(t: u64, u: u32, v: u32, p: i8) -> Self {
        debug_assert!(p == 1 || p == -1, "polarity must be +1 or -1");
        Self { t, u, v, p }
    }
}

#[derive(Debug, Error)]
pub enum EventIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing or malformed header (expected `# evtr-events v1 width=<w> height=<h>`)")]
    BadHeader,
    #[error("line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
}

/// An event stream together with the sensor geometry it was recorded at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub width: u32,
    pub height: u32,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# evtr-events v1 width={} height={}",
            self.width, self.height
        )?;
        for e in &self.events {
            writeln!(out, "{},{},{},{}", e.t, e.u, e.v, e.p)?;
        }
        Ok(())
    }

    /// Parses a stream; events are checked against the header geometry and
    /// must be sorted by time.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self, EventIoError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(EventIoError::BadHeader)??;
        let (width, height) = parse_header(&header).ok_or(EventIoError::BadHeader)?;

        let mut events = Vec::new();
        let mut last_t = 0u64;
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| EventIoError::BadRecord {
                line: lineno,
                reason: reason.to_string(),
            };
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(bad("expected `t_us,u,v,p`"));
            }
            let t: u64 = fields[0].parse().map_err(|_| bad("bad timestamp"))?;
            let u: u32 = fields[1].parse().map_err(|_| bad("bad column"))?;
            let v: u32 = fields[2].parse().map_err(|_| bad("bad row"))?;
            let p: i8 = match fields[3] {
                "1" | "+1" => 1,
                "-1" => -1,
                _ => return Err(bad("polarity must be -1 or 1")),
            };
            if u >= width || v >= height {
                return Err(bad("pixel outside sensor geometry"));
            }
            if t < last_t {
                return Err(bad("events not sorted by time"));
            }
            last_t = t;
            events.push(Event { t, u, v, p });
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }
}

fn parse_header(line: &str) -> Option<(u32, u32)> {
    let rest = line.trim().strip_prefix('#')?.trim();
    let mut parts = rest.split_whitespace();
    if parts.next()? != "evtr-events" || parts.next()? != "v1" {
        return None;
    }
    let mut width = None;
    let mut height = None;
    for kv in parts {
        let (k, v) = kv.split_once('=')?;
        match k {
            "width" => width = v.parse().ok(),
            "height" => height = v.parse().ok(),
            _ => {}
        }
    }
    match (width?, height?) {
        (w, h) if w > 0 && h > 0 => Some((w, h)),
        _ => None,
    }
}
