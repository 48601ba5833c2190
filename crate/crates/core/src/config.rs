//! Simulation and experiment configuration.
//!
//! Experiments are described in TOML. Every field is optional and falls back
//! to the reference scenario (100 nodes in a 1 km cell, 0.02 bps, 14 dBm,
//! three uplink channels, RX2 on 868.525 MHz at DR3). Unknown keys are
//! rejected so that typos in sweep definitions fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::air::PropagationConfig;
use crate::energy::EnergyProfile;
use crate::error::{Error, Result};
use crate::gateway::GatewayConfig;
use crate::node::MacConfig;
use crate::phy::{DataRate, ReceiverTables, MAC_OVERHEAD, MAX_PHY_PAYLOAD, TX_POWER_LEVELS};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub num_nodes: usize,
    pub cell_radius_m: f64,
    pub horizon_days: f64,
    pub lambda_bps: f64,
    /// Application payload per frame, bytes.
    pub payload_len: usize,
    pub channels_hz: Vec<u32>,
    pub node_duty_cycle: f64,
    pub rx2_freq_hz: u32,
    pub rx2_dr: DataRate,
    pub initial_tx_power_dbm: i8,
    /// Fixed starting SF for every node; drawn uniformly from 7..=12 per node when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_sf: Option<u8>,
    pub adr_enabled: bool,
    pub confirmed: bool,
    /// Fixed node coordinates (m, gateway at the origin) instead of random placement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    /// Draw a fresh placement for every replication rather than one per experiment.
    pub redraw_placement: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement_interval_s: Option<f64>,
    pub seed: u64,
    pub replications: usize,
    pub propagation: PropagationConfig<f64>,
    pub receiver: ReceiverTables,
    pub energy: EnergyProfile,
    pub mac: MacConfig,
    pub gateway: GatewayConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            num_nodes: 100,
            cell_radius_m: 1000.0,
            horizon_days: 30.0,
            lambda_bps: 0.02,
            payload_len: 9,
            channels_hz: vec![868_100_000, 868_300_000, 868_500_000],
            node_duty_cycle: 0.01,
            rx2_freq_hz: 868_525_000,
            rx2_dr: DataRate::new(3).expect("DR3"),
            initial_tx_power_dbm: 14,
            initial_sf: None,
            adr_enabled: true,
            confirmed: false,
            positions: None,
            redraw_placement: true,
            measurement_interval_s: None,
            seed: 1,
            replications: 1000,
            propagation: PropagationConfig::default(),
            receiver: ReceiverTables::default(),
            energy: EnergyProfile::default(),
            mac: MacConfig::default(),
            gateway: GatewayConfig::default(),
        }
    }
}

impl SimulationConfig {
    pub fn horizon_s(&self) -> f64 {
        self.horizon_days * SECONDS_PER_DAY
    }

    /// Checks everything the engine relies on. A cell with zero nodes is valid here.
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_radius_m > 0.0) {
            return Err(Error::config("cell_radius_m", "must be positive"));
        }
        if !(self.horizon_days >= 0.0 && self.horizon_days.is_finite()) {
            return Err(Error::config(
                "horizon_days",
                "must be finite and non-negative",
            ));
        }
        if !(self.lambda_bps > 0.0) {
            return Err(Error::config("lambda_bps", "must be positive"));
        }
        if self.payload_len == 0 || self.payload_len + MAC_OVERHEAD > MAX_PHY_PAYLOAD {
            return Err(Error::config(
                "payload_len",
                format!("must lie in 1..={}", MAX_PHY_PAYLOAD - MAC_OVERHEAD),
            ));
        }
        if self.channels_hz.is_empty() {
            return Err(Error::config(
                "channels_hz",
                "at least one channel is required",
            ));
        }
        let mut sorted = self.channels_hz.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.channels_hz.len() {
            return Err(Error::config("channels_hz", "channels must be distinct"));
        }
        if self.channels_hz.contains(&self.rx2_freq_hz) {
            return Err(Error::config(
                "rx2_freq_hz",
                "must differ from the uplink channels",
            ));
        }
        if !(self.node_duty_cycle > 0.0 && self.node_duty_cycle <= 1.0) {
            return Err(Error::config("node_duty_cycle", "must lie in (0, 1]"));
        }
        if !TX_POWER_LEVELS.contains(&self.initial_tx_power_dbm) {
            return Err(Error::config(
                "initial_tx_power_dbm",
                format!("must be one of {TX_POWER_LEVELS:?}"),
            ));
        }
        if let Some(sf) = self.initial_sf {
            DataRate::from_sf(sf).map_err(|e| Error::config("initial_sf", e.to_string()))?;
        }
        if let Some(pos) = &self.positions {
            if pos.len() != self.num_nodes {
                return Err(Error::config(
                    "positions",
                    format!("{} positions given for {} nodes", pos.len(), self.num_nodes),
                ));
            }
            if pos
                .iter()
                .any(|p| p[0].hypot(p[1]) == 0.0 || !p[0].is_finite() || !p[1].is_finite())
            {
                return Err(Error::config(
                    "positions",
                    "nodes may not sit on the gateway",
                ));
            }
        }
        if let Some(dt) = self.measurement_interval_s {
            if !(dt > 0.0) {
                return Err(Error::config("measurement_interval_s", "must be positive"));
            }
        }
        if self.replications == 0 {
            return Err(Error::config("replications", "must be at least 1"));
        }
        self.propagation.validate()?;
        self.receiver.validate()?;
        self.energy.validate()?;
        self.mac.validate()?;
        self.gateway.validate()?;
        Ok(())
    }
}

/// ADR / confirmed-traffic combination used as one sweep coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacMode {
    pub adr: bool,
    pub confirmed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub payload_len: Vec<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sigma: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub adr: Vec<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub confirmed: Vec<bool>,
    /// Explicit (adr, confirmed) pairs; replaces the `adr` x `confirmed` product.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<MacMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("results"),
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub simulation: SimulationConfig,
    pub sweep: SweepAxes,
    pub output: OutputConfig,
}

/// Sweep coordinates of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellCoords {
    pub payload_len: usize,
    pub sigma: f64,
    pub adr: bool,
    pub confirmed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub coords: CellCoords,
    pub config: SimulationConfig,
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| {
            let key = e.message().to_string();
            Error::Parse {
                path: PathBuf::from("<inline>"),
                message: key,
            }
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment spec is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.simulation.num_nodes == 0 {
            return Err(Error::config(
                "simulation.num_nodes",
                "an experiment needs at least one node",
            ));
        }
        self.simulation.validate()?;
        let s = &self.sweep;
        if !s.modes.is_empty() && (!s.adr.is_empty() || !s.confirmed.is_empty()) {
            return Err(Error::config(
                "sweep.modes",
                "cannot be combined with sweep.adr or sweep.confirmed",
            ));
        }
        for &p in &s.payload_len {
            if p == 0 || p + MAC_OVERHEAD > MAX_PHY_PAYLOAD {
                return Err(Error::config(
                    "sweep.payload_len",
                    format!("{p} outside 1..={}", MAX_PHY_PAYLOAD - MAC_OVERHEAD),
                ));
            }
        }
        if s.sigma.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::config("sweep.sigma", "values must be non-negative"));
        }
        if self.output.formats.is_empty() {
            return Err(Error::config(
                "output.formats",
                "at least one format is required",
            ));
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes; empty axes take the base value.
    pub fn cells(&self) -> Vec<Cell> {
        let base = &self.simulation;
        let payloads = or_base(&self.sweep.payload_len, base.payload_len);
        let sigmas = or_base(&self.sweep.sigma, base.propagation.sigma);
        let modes: Vec<MacMode> = if self.sweep.modes.is_empty() {
            let adrs = or_base(&self.sweep.adr, base.adr_enabled);
            let confs = or_base(&self.sweep.confirmed, base.confirmed);
            adrs.iter()
                .flat_map(|&adr| {
                    confs
                        .iter()
                        .map(move |&confirmed| MacMode { adr, confirmed })
                })
                .collect()
        } else {
            self.sweep.modes.clone()
        };

        let mut cells = Vec::new();
        for mode in &modes {
            for &sigma in &sigmas {
                for &payload_len in &payloads {
                    let mut config = base.clone();
                    config.payload_len = payload_len;
                    config.propagation.sigma = sigma;
                    config.adr_enabled = mode.adr;
                    config.confirmed = mode.confirmed;
                    cells.push(Cell {
                        index: cells.len(),
                        coords: CellCoords {
                            payload_len,
                            sigma,
                            adr: mode.adr,
                            confirmed: mode.confirmed,
                        },
                        config,
                    });
                }
            }
        }
        cells
    }
}

fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

/// Reads and validates an experiment file.
pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec: ExperimentSpec = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}
