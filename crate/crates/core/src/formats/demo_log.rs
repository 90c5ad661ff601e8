//! Text demonstration log.
//!
//! ```text
//! csa-demo-log 1
//! task surface cleaning, top pass
//! capture_rate_hz 100
//! channel x m position-cartesian 1 x
//! channel f_n N force-normal 20 -
//! columns demo t x f_n
//! 0 0 0.1 0
//! 0 0.01 0.1 0.2
//! 1 0 0.1 0
//! ```
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`, so writing and re-reading a log is lossless.

use std::fmt::Write as _;
use std::path::Path;

use super::{ChannelSchema, Demo, DemoSet, Schema};
use crate::error::{Error, Result};

pub const DEMO_LOG_MAGIC: &str = "csa-demo-log";
const DEMO_LOG_VERSION: &str = "1";

pub fn load_demo_set(path: impl AsRef<Path>) -> Result<DemoSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_demo_log(&text)
}

pub fn save_demo_set(set: &DemoSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    set.validate()?;
    std::fs::write(path, write_demo_log(set)).map_err(|e| Error::io(path, e))
}

pub fn write_demo_log(set: &DemoSet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{DEMO_LOG_MAGIC} {DEMO_LOG_VERSION}");
    let _ = writeln!(out, "task {}", set.task.replace('\n', " "));
    let _ = writeln!(out, "capture_rate_hz {}", set.capture_rate_hz);
    for ch in &set.schema.channels {
        let _ = writeln!(
            out,
            "channel {} {} {} {} {}",
            ch.name,
            ch.unit,
            ch.kind,
            ch.normalization_range,
            ch.spatial_axis.map_or("-", |a| a.as_str())
        );
    }
    out.push_str("columns demo t");
    for ch in &set.schema.channels {
        out.push(' ');
        out.push_str(&ch.name);
    }
    out.push('\n');
    for (d, demo) in set.demos.iter().enumerate() {
        for (t, sample) in demo.timestamps.iter().zip(&demo.samples) {
            let _ = write!(out, "{d} {t}");
            for v in sample {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
    }
    out
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| perr(line, format!("invalid {what} `{tok}`")))
}

pub fn parse_demo_log(text: &str) -> Result<DemoSet> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (ln, header) = lines.next().ok_or_else(|| perr(1, "empty file"))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(DEMO_LOG_MAGIC) {
        return Err(perr(ln, format!("expected `{DEMO_LOG_MAGIC}` header")));
    }
    match parts.next() {
        Some(DEMO_LOG_VERSION) => {}
        Some(v) => {
            return Err(Error::Version {
                what: "demo log",
                found: v.to_string(),
                supported: DEMO_LOG_VERSION.to_string(),
            })
        }
        None => return Err(perr(ln, "missing format version")),
    }

    let mut task = None;
    let mut rate = None;
    let mut channels = Vec::new();
    let mut columns_seen = false;
    let mut demos: Vec<Demo> = Vec::new();

    for (ln, line) in lines {
        if !columns_seen {
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match key {
                "task" => task = Some(rest.to_string()),
                "capture_rate_hz" => rate = Some(parse_f64(rest, ln, "capture rate")?),
                "channel" => {
                    let toks: Vec<&str> = rest.split_whitespace().collect();
                    if toks.len() != 5 {
                        return Err(perr(
                            ln,
                            "channel line needs: name unit kind range axis",
                        ));
                    }
                    let kind = toks[2].parse().map_err(|e: String| perr(ln, e))?;
                    let range = parse_f64(toks[3], ln, "normalization range")?;
                    let axis = match toks[4] {
                        "-" => None,
                        a => Some(a.parse().map_err(|e: String| perr(ln, e))?),
                    };
                    channels.push(ChannelSchema {
                        name: toks[0].to_string(),
                        unit: toks[1].to_string(),
                        kind,
                        normalization_range: range,
                        spatial_axis: axis,
                    });
                }
                "columns" => {
                    let toks: Vec<&str> = rest.split_whitespace().collect();
                    let expected: Vec<&str> = ["demo", "t"]
                        .into_iter()
                        .chain(channels.iter().map(|c| c.name.as_str()))
                        .collect();
                    if toks != expected {
                        return Err(perr(
                            ln,
                            format!("columns line must be `{}`", expected.join(" ")),
                        ));
                    }
                    columns_seen = true;
                }
                other => return Err(perr(ln, format!("unknown header key `{other}`"))),
            }
            continue;
        }

        let mut toks = line.split_whitespace();
        let demo_tok = toks.next().unwrap_or_default();
        let demo_idx: usize = demo_tok
            .parse()
            .map_err(|_| perr(ln, format!("invalid demo index `{demo_tok}`")))?;
        if demo_idx == demos.len() {
            demos.push(Demo {
                timestamps: Vec::new(),
                samples: Vec::new(),
            });
        } else if demo_idx + 1 != demos.len() {
            return Err(perr(
                ln,
                format!("demo index {demo_idx} out of order (rows must be grouped by demo)"),
            ));
        }
        let t = parse_f64(toks.next().ok_or_else(|| perr(ln, "missing timestamp"))?, ln, "timestamp")?;
        let values = toks
            .map(|tok| parse_f64(tok, ln, "value"))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != channels.len() {
            return Err(perr(
                ln,
                format!("row has {} values, schema has {} channels", values.len(), channels.len()),
            ));
        }
        let demo = demos.last_mut().expect("pushed above");
        demo.timestamps.push(t);
        demo.samples.push(values);
    }

    if !columns_seen {
        return Err(perr(0, "missing `columns` line"));
    }
    let set = DemoSet {
        task: task.ok_or_else(|| perr(0, "missing `task` line"))?,
        capture_rate_hz: rate.ok_or_else(|| perr(0, "missing `capture_rate_hz` line"))?,
        schema: Schema { channels },
        demos,
    };
    set.validate()?;
    Ok(set)
}
