//! Trajectory output and its file formats.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::DetectionRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
    /// Per-channel detection probability of the step ending at `t`.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutput {
    pub labels: Vec<String>,
    pub dt: f64,
    pub t_m: f64,
    pub seed: u64,
    /// Simulated time.
    pub duration: f64,
    pub steps: u64,
    pub settle_events: u64,
    /// Time-averaged population of the highest retained Fock level (cascaded runs).
    #[serde(default)]
    pub truncation_leakage: Option<f64>,
    pub detections: Vec<DetectionRecord>,
    pub trace: Vec<TraceRow>,
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord<'a> {
    t: f64,
    channel: std::borrow::Cow<'a, str>,
}

impl TrajectoryOutput {
    pub fn new(labels: Vec<String>, dt: f64, t_m: f64, seed: u64) -> Self {
        Self {
            labels,
            dt,
            t_m,
            seed,
            duration: 0.0,
            steps: 0,
            settle_events: 0,
            truncation_leakage: None,
            detections: Vec::new(),
            trace: Vec::new(),
        }
    }

    pub fn label(&self, channel: usize) -> &str {
        self.labels.get(channel).map(String::as_str).unwrap_or("?")
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// One `{"t": .., "channel": ..}` object per line.
    pub fn detections_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.detections {
            let rec = JsonlRecord { t: d.time, channel: self.label(d.channel).into() };
            out.push_str(&serde_json::to_string(&rec).expect("plain record"));
            out.push('\n');
        }
        out
    }

    /// Reads detection records back; channel labels are resolved against `labels`.
    pub fn parse_jsonl(text: &str, labels: &[String], dt: f64) -> Result<Vec<DetectionRecord>> {
        let mut recs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: JsonlRecord = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            let channel = labels
                .iter()
                .position(|l| *l == r.channel)
                .ok_or_else(|| Error::Parse(format!("line {}: unknown channel '{}'", i + 1, r.channel)))?;
            recs.push(DetectionRecord { time: r.t, step: (r.t / dt).round() as u64, channel });
        }
        Ok(recs)
    }

    /// Bloch trace as CSV, preceded by `#`-prefixed header lines (e.g. the config echo).
    pub fn trace_csv(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("t,sx,sy,sz");
        for l in &self.labels {
            let _ = write!(out, ",P_{l}");
        }
        out.push('\n');
        for r in &self.trace {
            let _ = write!(out, "{},{:e},{:e},{:e}", r.t, r.sx, r.sy, r.sz);
            for p in &r.probs {
                let _ = write!(out, ",{p:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.detections_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn write_trace_csv(&self, path: &Path, header: &str) -> Result<()> {
        std::fs::write(path, self.trace_csv(header))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TrajectoryOutput {
        let mut o = TrajectoryOutput::new(vec!["T".into(), "R".into()], 0.5, 1.0, 7);
        o.detections = vec![
            DetectionRecord { time: 1.0, step: 2, channel: 1 },
            DetectionRecord { time: 2.5, step: 5, channel: 0 },
        ];
        o.trace = vec![TraceRow { t: 0.0, sx: 0.0, sy: 0.1, sz: -1.0, probs: vec![0.0, 0.25] }];
        o
    }

    #[test]
    fn jsonl_round_trip() {
        let o = sample();
        let text = o.detections_jsonl();
        assert_eq!(text.lines().next().unwrap(), r#"{"t":1.0,"channel":"R"}"#);
        let back = TrajectoryOutput::parse_jsonl(&text, &o.labels, o.dt).unwrap();
        assert_eq!(back, o.detections);
        assert!(TrajectoryOutput::parse_jsonl(r#"{"t":1.0,"channel":"X"}"#, &o.labels, 0.5).is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let csv = sample().trace_csv("seed = 7");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# seed = 7");
        assert_eq!(lines[1], "t,sx,sy,sz,P_T,P_R");
        assert_eq!(lines[2].split(',').count(), 6);
    }
}
