//! Line-oriented episode traces.
//!
//! ```text
//! # tripnet-trace v1
//! # truncated false
//! # step action start end iou reward
//! 0 INIT 0 160 -0.5833333333333334 0
//! 1 FWD_J 200 360 0.1 0.6733333333333333
//! ```
//!
//! Fields are separated by single spaces. `INIT` marks the starting
//! window. Reals use the shortest representation that parses back to the
//! same `f64`.

use std::fmt::Write as _;

use super::{ActionKind, Window};
use crate::error::{Error, Result};

pub const TRACE_MAGIC: &str = "# tripnet-trace v1";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    /// `None` for the initial window.
    pub action: Option<ActionKind>,
    pub window: Window,
    /// Signed IoU of `window` against the ground truth.
    pub iou: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub truncated: bool,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    /// Number of actions taken (Terminate included).
    pub fn num_actions(&self) -> usize {
        self.records.iter().filter(|r| r.action.is_some()).count()
    }

    pub fn final_window(&self) -> Option<Window> {
        self.records.last().map(|r| r.window)
    }

    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{TRACE_MAGIC}").unwrap();
        writeln!(s, "# truncated {}", self.truncated).unwrap();
        writeln!(s, "# step action start end iou reward").unwrap();
        for r in &self.records {
            let name = r.action.map_or("INIT", ActionKind::name);
            writeln!(
                s,
                "{} {} {} {} {:?} {:?}",
                r.step,
                name,
                r.window.start(),
                r.window.end(),
                r.iou,
                r.reward
            )
            .unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Parse {
            path: "<trace>".into(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == TRACE_MAGIC => {}
            _ => return Err(bad(1, "missing trace header".into())),
        }
        let mut trace = Trace::default();
        for (i, line) in lines {
            let n = i + 1;
            if let Some(rest) = line.strip_prefix("# truncated ") {
                trace.truncated = rest
                    .trim()
                    .parse()
                    .map_err(|_| bad(n, format!("bad truncated flag {rest:?}")))?;
                continue;
            }
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(' ').collect();
            if f.len() != 6 {
                return Err(bad(n, format!("expected 6 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(n, format!("bad integer {s:?}")));
            let real = |s: &str| s.parse::<f64>().map_err(|_| bad(n, format!("bad number {s:?}")));
            let action = match f[1] {
                "INIT" => None,
                name => Some(
                    ActionKind::from_name(name).ok_or_else(|| bad(n, format!("unknown action {name:?}")))?,
                ),
            };
            let window = Window::new(num(f[2])?, num(f[3])?).map_err(|e| bad(n, e.to_string()))?;
            trace.records.push(TraceRecord {
                step: num(f[0])?,
                action,
                window,
                iou: real(f[4])?,
                reward: real(f[5])?,
            });
        }
        Ok(trace)
    }
}
