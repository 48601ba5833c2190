//! Discrete-event simulator of a single-gateway LoRaWAN cell.
//!
//! The closed-form PHY and channel models ([`phy`], [`air`]) are generic over
//! the float type through [`Real`]; the event engine and its bookkeeping run
//! in `f64`. The aliases below fix the generic types to `f64`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod air;
pub mod config;
pub mod energy;
pub mod engine;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod node;
pub mod output;
pub mod phy;
pub mod scalar;

pub use air::{arbitrate_collisions, Direction, Outcome, Packet};
pub use config::{load_config, Cell, CellCoords, ExperimentSpec, MacMode, SimulationConfig};
pub use energy::{EnergyLedger, EnergyProfile, EnergyState, Slot};
pub use engine::{monte_carlo, run, run_experiment, run_traced, CellResult, MonteCarlo, Trace};
pub use error::{Error, Result};
pub use gateway::{Gateway, GatewayConfig};
pub use metrics::{der, energy_per_payload_byte, RunMetrics, Stats, Summary};
pub use node::{MacConfig, Node};
pub use output::emit_results;
pub use phy::{Band, DataRate, LoRaParams, ReceiverTables};
pub use scalar::Real;

pub type Propagation = air::PropagationConfig<f64>;

/// Airtime in seconds of a PHY payload of `phy_payload` bytes.
pub fn airtime(params: &LoRaParams, phy_payload: usize) -> Result<f64> {
    phy::airtime(params, phy_payload)
}

/// Airtime in seconds of a data frame carrying `app_payload` application bytes.
pub fn frame_airtime(params: &LoRaParams, app_payload: usize) -> Result<f64> {
    phy::frame_airtime(params, app_payload)
}

pub fn time_off(airtime: f64, duty_cycle_limit: f64) -> Result<f64> {
    phy::time_off(airtime, duty_cycle_limit)
}

pub fn symbol_time(sf: u8, bw_hz: f64) -> Result<f64> {
    phy::symbol_time(sf, bw_hz)
}
