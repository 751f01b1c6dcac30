//! CSV output and run manifests.
//!
//! Every run directory holds a `manifest.toml` (configuration snapshot, seed,
//! verb, code version). Each CSV written next to it starts with a comment
//! line carrying the manifest's sha256, followed by a header row.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::LabConfig;
use crate::error::{LabError, Result};
use crate::orchestrator::{DecisionLog, MetricsRow, SegmentSummary, StrategyBin};

pub const MANIFEST_FILE: &str = "manifest.toml";

pub const METRICS_HEADER: [&str; 7] =
    ["mode", "seed", "index", "vehicle_count", "v2i_sum_rate_bps", "v2v_success_rate", "decision_latency_us"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub verb: String,
    pub seed: u64,
    pub code_version: String,
    /// Extra verb arguments (policy, vehicle counts, checkpoint dir).
    pub arguments: BTreeMap<String, String>,
    pub config: LabConfig,
}

impl Manifest {
    pub fn new(verb: &str, cfg: &LabConfig) -> Self {
        Self {
            verb: verb.to_string(),
            seed: cfg.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            arguments: BTreeMap::new(),
            config: cfg.clone(),
        }
    }

    pub fn with_argument(mut self, key: &str, value: impl ToString) -> Self {
        self.arguments.insert(key.to_string(), value.to_string());
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always serializable")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Writes `manifest.toml` into `dir` and returns its hash.
    pub fn write(&self, dir: &Path) -> Result<String> {
        fs::create_dir_all(dir)?;
        let text = self.to_toml();
        fs::write(dir.join(MANIFEST_FILE), &text)?;
        Ok(sha256_hex(text.as_bytes()))
    }
}

/// Recovers the configuration embedded in a manifest file.
pub fn config_from_manifest(path: &Path) -> Result<LabConfig> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => LabError::MissingArtifact(path.to_path_buf()),
        _ => LabError::Io(e),
    })?;
    let value: toml::Value = toml::from_str(&text).map_err(|e| LabError::config(e.to_string()))?;
    let config = value.get("config").cloned().ok_or_else(|| LabError::config("manifest has no [config] table"))?;
    let cfg: LabConfig = config.try_into().map_err(|e: toml::de::Error| LabError::config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Renders a CSV with the manifest comment line.
pub fn render_table<S: AsRef<str>>(manifest_hash: &str, header: &[&str], rows: &[Vec<S>]) -> Result<Vec<u8>> {
    let mut out = format!("# manifest sha256={manifest_hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header).map_err(csv_error)?;
        for row in rows {
            if row.len() != header.len() {
                return Err(LabError::structural(format!("row has {} fields, header {}", row.len(), header.len())));
            }
            w.write_record(row.iter().map(|s| s.as_ref())).map_err(csv_error)?;
        }
        w.flush()?;
    }
    Ok(out)
}

pub fn write_table<S: AsRef<str>>(path: &Path, manifest_hash: &str, header: &[&str], rows: &[Vec<S>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, render_table(manifest_hash, header, rows)?)?;
    Ok(())
}

fn csv_error(e: csv::Error) -> LabError {
    LabError::Io(std::io::Error::other(e.to_string()))
}

pub fn metrics_records(rows: &[MetricsRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                format!("{}-{}", r.mode, r.policy.label()),
                r.seed.to_string(),
                r.index.to_string(),
                r.vehicle_count.to_string(),
                r.v2i_sum_rate_bps.to_string(),
                r.v2v_success_rate.to_string(),
                r.decision_latency_us.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect()
}

pub fn write_metrics(path: &Path, manifest_hash: &str, rows: &[MetricsRow]) -> Result<()> {
    write_table(path, manifest_hash, &METRICS_HEADER, &metrics_records(rows))
}

pub const DECISION_HEADER: [&str; 7] =
    ["slot", "link_tx", "link_rx", "subchannel", "power_level", "remaining_slots", "reward"];

pub fn write_decisions(path: &Path, manifest_hash: &str, logs: &[DecisionLog]) -> Result<()> {
    let rows: Vec<Vec<String>> = logs
        .iter()
        .map(|d| {
            vec![
                d.slot.to_string(),
                d.link.tx.to_string(),
                d.link.rx.to_string(),
                d.subchannel.to_string(),
                d.power_level.to_string(),
                d.remaining_slots.to_string(),
                d.reward.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    write_table(path, manifest_hash, &DECISION_HEADER, &rows)
}

/// Reads a decision log written by [`write_decisions`].
pub fn read_decisions(path: &Path) -> Result<Vec<DecisionLog>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => LabError::MissingArtifact(path.to_path_buf()),
        _ => LabError::Io(e),
    })?;
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let bad = |line: usize, what: &str| LabError::config(format!("{}: record {line}: bad {what}", path.display()));
    let mut out = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let field = |i: usize, what: &str| rec.get(i).ok_or_else(|| bad(k + 1, what));
        let num = |i: usize, what: &str| field(i, what)?.parse::<u64>().map_err(|_| bad(k + 1, what));
        let reward = field(6, "reward")?;
        out.push(DecisionLog {
            slot: num(0, "slot")?,
            link: crate::graph::LinkLabel::new(num(1, "link_tx")? as usize, num(2, "link_rx")? as usize),
            subchannel: num(3, "subchannel")? as usize,
            power_level: num(4, "power_level")? as usize,
            remaining_slots: num(5, "remaining_slots")? as usize,
            reward: if reward.is_empty() { None } else { Some(reward.parse().map_err(|_| bad(k + 1, "reward"))?) },
        });
    }
    Ok(out)
}

pub fn strategy_records(bins: &[StrategyBin], power_levels_dbm: &[f64]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["remaining_lower_s".to_string(), "remaining_upper_s".to_string(), "decisions".to_string()];
    header.extend(power_levels_dbm.iter().map(|p| format!("share_{p}dbm")));
    let rows = bins
        .iter()
        .map(|b| {
            let mut r = vec![b.lower_s.to_string(), b.upper_s.to_string(), b.decisions.to_string()];
            r.extend(b.shares.iter().map(|s| s.to_string()));
            r
        })
        .collect();
    (header, rows)
}

pub const SEGMENT_HEADER: [&str; 6] = ["segment", "first_sample", "samples", "metric", "statistic", "value"];

/// Long-format box-plot data: one row per segment, metric and statistic.
pub fn segment_records(segments: &[SegmentSummary]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for s in segments {
        for (metric, b) in [
            ("vehicle_count", &s.vehicle_count),
            ("v2i_sum_rate_bps", &s.v2i_sum_rate_bps),
            ("v2v_success_rate", &s.v2v_success_rate),
        ] {
            for (stat, v) in
                [("min", b.min), ("q1", b.q1), ("median", b.median), ("q3", b.q3), ("max", b.max), ("mean", b.mean)]
            {
                rows.push(vec![
                    s.segment.to_string(),
                    s.first_sample.to_string(),
                    s.samples.to_string(),
                    metric.to_string(),
                    stat.to_string(),
                    v.to_string(),
                ]);
            }
        }
    }
    rows
}
