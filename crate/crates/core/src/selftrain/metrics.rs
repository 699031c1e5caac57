//! Newline-delimited JSON metrics.
//!
//! One JSON object per line:
//!
//! ```text
//! {"event":"config","step":0,"config":{...effective settings...}}
//! {"event":"step","step":1,"values":{"confident_fraction":0.0,"loss":5.2,"lr":0.03,"pseudo_label_accuracy":0.25}}
//! {"event":"eval","step":500,"values":{"accuracy":0.97}}
//! ```
//!
//! `values` keys are sorted. `wall_time_s` is added to step records only
//! when the writer is asked to, since it makes files non-reproducible.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SscError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Config,
    Step,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub event: EventKind,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, f64>,
}

impl MetricRecord {
    pub fn config(config: serde_json::Value) -> Self {
        Self {
            event: EventKind::Config,
            step: 0,
            config: Some(config),
            values: BTreeMap::new(),
        }
    }

    pub fn eval(step: usize, accuracy: f64) -> Self {
        Self {
            event: EventKind::Eval,
            step,
            config: None,
            values: BTreeMap::from([("accuracy".to_string(), accuracy)]),
        }
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

/// Per-step training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    /// Share of unlabeled examples above the confidence threshold.
    pub confident_fraction: f64,
    /// Agreement of the head's argmax with the hidden unlabeled labels.
    pub pseudo_label_accuracy: f64,
    pub lr: f64,
    pub wall_time_s: f64,
}

impl StepMetrics {
    pub fn to_record(&self, with_wall_time: bool) -> MetricRecord {
        let mut values = BTreeMap::from([
            ("loss".to_string(), self.loss),
            ("confident_fraction".to_string(), self.confident_fraction),
            (
                "pseudo_label_accuracy".to_string(),
                self.pseudo_label_accuracy,
            ),
            ("lr".to_string(), self.lr),
        ]);
        if with_wall_time {
            values.insert("wall_time_s".to_string(), self.wall_time_s);
        }
        MetricRecord {
            event: EventKind::Step,
            step: self.step,
            config: None,
            values,
        }
    }
}

pub trait MetricsSink {
    fn record(&mut self, record: MetricRecord) -> Result<()>;

    fn flush(&mut self) -> Result<()> {
        Ok(())
    }

    /// Whether step records should carry wall-clock time.
    fn wants_wall_time(&self) -> bool {
        false
    }
}

impl MetricsSink for Vec<MetricRecord> {
    fn record(&mut self, record: MetricRecord) -> Result<()> {
        self.push(record);
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _record: MetricRecord) -> Result<()> {
        Ok(())
    }
}

/// Writes one JSON line per record.
pub struct NdjsonWriter<W: Write> {
    out: W,
    with_wall_time: bool,
}

impl<W: Write> NdjsonWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            with_wall_time: false,
        }
    }

    pub fn with_wall_time(mut self, enabled: bool) -> Self {
        self.with_wall_time = enabled;
        self
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> MetricsSink for NdjsonWriter<W> {
    fn record(&mut self, record: MetricRecord) -> Result<()> {
        let line = serde_json::to_string(&record)
            .map_err(|e| SscError::Config(format!("cannot encode metrics record: {e}")))?;
        writeln!(self.out, "{line}").map_err(|e| SscError::io("<metrics>", e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| SscError::io("<metrics>", e))
    }

    fn wants_wall_time(&self) -> bool {
        self.with_wall_time
    }
}

/// Parses a metrics stream back into records.
pub fn read_ndjson(text: &str) -> Result<Vec<MetricRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| SscError::Config(format!("metrics line {}: {e}", i + 1)))
        })
        .collect()
}
