//! Evaluation quantities: data extraction rate, energy per payload byte,
//! collision ratio and ACK starvation, per node, per run and across replications.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyLedger, EnergyState};
use crate::error::{Error, Result};
use crate::gateway::GatewayCounters;

/// Uniquely received over uniquely transmitted bytes. Nothing sent counts as full success.
pub fn der(unique_rx_bytes: u64, unique_tx_bytes: u64) -> Result<f64> {
    if unique_rx_bytes > unique_tx_bytes {
        return Err(Error::invariant(format!(
            "{unique_rx_bytes} bytes received but only {unique_tx_bytes} sent"
        )));
    }
    if unique_tx_bytes == 0 {
        return Ok(1.0);
    }
    Ok(unique_rx_bytes as f64 / unique_tx_bytes as f64)
}

/// Energy (mJ) per unique application byte transmitted; absent when nothing was sent.
pub fn energy_per_payload_byte(energy_mj: f64, unique_tx_bytes: u64) -> Option<f64> {
    (unique_tx_bytes > 0).then(|| energy_mj / unique_tx_bytes as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node_id: usize,
    pub distance_m: f64,
    pub final_sf: u8,
    pub final_tx_power_dbm: i8,
    pub unique_frames_tx: u64,
    pub unique_bytes_tx: u64,
    pub unique_bytes_rx: u64,
    pub frames_tx: u64,
    pub frames_received: u64,
    pub frames_collided: u64,
    pub frames_under_sensitivity: u64,
    pub retransmissions: u64,
    pub frames_unacked: u64,
    pub acks_dropped: u64,
    pub downlinks_rx: u64,
    pub adr_commands_applied: u64,
    pub adr_backoffs: u64,
    /// Length of the energy accounting window, s.
    pub window_s: f64,
    pub energy: EnergyLedger,
}

impl NodeMetrics {
    pub fn der(&self) -> Result<f64> {
        der(self.unique_bytes_rx, self.unique_bytes_tx)
    }

    /// Energy spent outside sleep per unique payload byte.
    pub fn energy_per_byte_mj(&self) -> Option<f64> {
        energy_per_payload_byte(self.energy.active_energy_mj(), self.unique_bytes_tx)
    }

    pub fn energy_per_byte_incl_sleep_mj(&self) -> Option<f64> {
        energy_per_payload_byte(self.energy.total_energy_mj(), self.unique_bytes_tx)
    }

    pub fn validate(&self) -> Result<()> {
        self.der()?;
        let arbitrated =
            self.frames_received + self.frames_collided + self.frames_under_sensitivity;
        if arbitrated != self.frames_tx {
            return Err(Error::invariant(format!(
                "node {}: {arbitrated} frames arbitrated, {} sent",
                self.node_id, self.frames_tx
            )));
        }
        Ok(())
    }
}

/// Cumulative counters at one measurement instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time_s: f64,
    pub unique_bytes_tx: u64,
    pub unique_bytes_rx: u64,
    pub active_energy_mj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub replication: u64,
    pub seed: u64,
    pub horizon_s: f64,
    pub nodes: Vec<NodeMetrics>,
    pub gateway: GatewayCounters,
    pub snapshots: Vec<Snapshot>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn population_std(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt())
}

impl RunMetrics {
    fn sum(&self, f: impl Fn(&NodeMetrics) -> u64) -> u64 {
        self.nodes.iter().map(f).sum()
    }

    pub fn unique_bytes_tx(&self) -> u64 {
        self.sum(|n| n.unique_bytes_tx)
    }

    pub fn unique_bytes_rx(&self) -> u64 {
        self.sum(|n| n.unique_bytes_rx)
    }

    pub fn frames_tx(&self) -> u64 {
        self.sum(|n| n.frames_tx)
    }

    pub fn frames_received(&self) -> u64 {
        self.sum(|n| n.frames_received)
    }

    pub fn frames_collided(&self) -> u64 {
        self.sum(|n| n.frames_collided)
    }

    pub fn frames_under_sensitivity(&self) -> u64 {
        self.sum(|n| n.frames_under_sensitivity)
    }

    pub fn retransmissions(&self) -> u64 {
        self.sum(|n| n.retransmissions)
    }

    pub fn acks_dropped(&self) -> u64 {
        self.sum(|n| n.acks_dropped)
    }

    /// Mean of the per-node DERs; an empty cell scores 1.
    pub fn der(&self) -> Result<f64> {
        let ders = self
            .nodes
            .iter()
            .map(NodeMetrics::der)
            .collect::<Result<Vec<_>>>()?;
        Ok(mean(&ders).unwrap_or(1.0))
    }

    /// DER over the bytes of all nodes pooled together.
    pub fn der_pooled(&self) -> Result<f64> {
        der(self.unique_bytes_rx(), self.unique_bytes_tx())
    }

    pub fn collision_ratio(&self) -> f64 {
        match self.frames_tx() {
            0 => 0.0,
            n => self.frames_collided() as f64 / n as f64,
        }
    }

    pub fn energy_per_byte_samples(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(NodeMetrics::energy_per_byte_mj)
            .collect()
    }

    pub fn energy_per_byte_mean(&self) -> Option<f64> {
        mean(&self.energy_per_byte_samples())
    }

    pub fn energy_per_byte_std(&self) -> Option<f64> {
        population_std(&self.energy_per_byte_samples())
    }

    pub fn energy_per_byte_incl_sleep_mean(&self) -> Option<f64> {
        let xs: Vec<f64> = self
            .nodes
            .iter()
            .filter_map(NodeMetrics::energy_per_byte_incl_sleep_mj)
            .collect();
        mean(&xs)
    }

    /// Sum of all node ledgers.
    pub fn energy(&self) -> EnergyLedger {
        let mut total = EnergyLedger::default();
        for n in &self.nodes {
            total.merge(&n.energy);
        }
        total
    }

    pub fn energy_mj(&self, state: EnergyState) -> f64 {
        self.nodes.iter().map(|n| n.energy.energy_mj(state)).sum()
    }

    /// Checks the accounting invariants of every node.
    pub fn validate(&self) -> Result<()> {
        self.nodes.iter().try_for_each(NodeMetrics::validate)
    }
}

/// Distribution summary of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Stats {
    /// Population statistics with linearly interpolated percentiles. None for no samples.
    pub fn from_samples(samples: &[f64]) -> Option<Stats> {
        let mut xs = samples.to_vec();
        xs.sort_by(f64::total_cmp);
        let pct = |p: f64| {
            let pos = p * (xs.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
        };
        Some(Stats {
            n: xs.len(),
            mean: mean(&xs)?,
            std: population_std(&xs)?,
            min: xs[0],
            p5: pct(0.05),
            p50: pct(0.5),
            p95: pct(0.95),
            max: xs[xs.len() - 1],
        })
    }
}

type Extractor = fn(&RunMetrics) -> Option<f64>;

/// Per-run scalars summarised across replications.
pub const RUN_METRICS: &[(&str, Extractor)] = &[
    ("der", |r| r.der().ok()),
    ("der_pooled", |r| r.der_pooled().ok()),
    ("energy_per_byte_mean", RunMetrics::energy_per_byte_mean),
    ("energy_per_byte_std", RunMetrics::energy_per_byte_std),
    (
        "energy_per_byte_incl_sleep_mean",
        RunMetrics::energy_per_byte_incl_sleep_mean,
    ),
    ("collision_ratio", |r| Some(r.collision_ratio())),
    ("acks_dropped", |r| Some(r.acks_dropped() as f64)),
    ("retransmissions", |r| Some(r.retransmissions() as f64)),
    ("frames_tx", |r| Some(r.frames_tx() as f64)),
    ("unique_bytes_tx", |r| Some(r.unique_bytes_tx() as f64)),
    ("unique_bytes_rx", |r| Some(r.unique_bytes_rx() as f64)),
    ("energy_total_mj", |r| Some(r.energy().total_energy_mj())),
];

/// Aggregates of one sweep cell over its replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub replications: usize,
    pub metrics: BTreeMap<String, Stats>,
    /// Energy per byte pooled over every node of every replication.
    pub energy_per_byte_nodes: Option<Stats>,
}

impl Summary {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).map(|s| s.mean)
    }
}

pub fn summarize(runs: &[RunMetrics]) -> Summary {
    let metrics = RUN_METRICS
        .iter()
        .filter_map(|(name, f)| {
            let xs: Vec<f64> = runs.iter().filter_map(f).collect();
            Stats::from_samples(&xs).map(|s| (name.to_string(), s))
        })
        .collect();
    let pooled: Vec<f64> = runs
        .iter()
        .flat_map(RunMetrics::energy_per_byte_samples)
        .collect();
    Summary {
        replications: runs.len(),
        metrics,
        energy_per_byte_nodes: Stats::from_samples(&pooled),
    }
}
